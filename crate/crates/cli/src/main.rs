//! `ukt`: compile-stage tuning, runtime planning, loop-nest emission and
//! shape sweeps from the command line.
//!
//! Every flag can also be set through an environment variable named
//! `UKT_<FLAG>` (upper case, dashes as underscores), e.g. `UKT_HARDWARE`.
//! Exit codes: 0 success, 1 empty result, 2 input error, 3 invariant
//! violation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use ukt_core::filter::{compile_shape, shape_bindings, DEFAULT_MAX_FINAL};
use ukt_core::metrics::{DEFAULT_PSI, DEFAULT_REST_REGS};
use ukt_core::oracle::verify_pool;
use ukt_core::report::{
    emit_loopnest, sweep_csv, write_file, CandidateCache, PlanReport, SweepRow, KIND_CACHE,
    KIND_PLAN,
};
use ukt_core::sia::DEFAULT_TOP_K;
use ukt_core::ukernel::DEFAULT_CANDIDATE_CAP;
use ukt_core::{
    compile_stage, plan_shape, Error, HardwareDescriptor, MetricConfig, OperatorSpec, PlanOptions,
    Result, ShapeCandidates, ShapeSelection, SiaCoeffs, SiaMode, SweepParams, TuneParams,
};

#[derive(Parser)]
#[command(
    name = "ukt",
    version,
    about = "Micro-kernel composition tuner for dynamic shapes"
)]
struct Cli {
    /// Worker threads for per-shape parallelism (0 uses every core).
    #[arg(long, global = true, env = "UKT_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile stage: filtered uKernel candidates for every shape in range.
    Tune(TuneCmd),
    /// Runtime stage: rank the program pool of one shape.
    Plan(PlanCmd),
    /// Tiled loop nest of a ranked plan from a plan file.
    Loopnest(LoopnestCmd),
    /// Best plan per shape over a range, as CSV.
    Sweep(SweepCmd),
}

#[derive(Args)]
struct Inputs {
    /// Hardware descriptor (JSON).
    #[arg(long, env = "UKT_HARDWARE")]
    hardware: PathBuf,
    /// Workload description (JSON).
    #[arg(long, env = "UKT_WORKLOAD")]
    workload: PathBuf,
}

impl Inputs {
    fn load(&self) -> Result<(HardwareDescriptor, Arc<OperatorSpec>)> {
        let hw = HardwareDescriptor::load(&self.hardware)?;
        let spec = Arc::new(OperatorSpec::load(&self.workload)?);
        Ok((hw, spec))
    }
}

#[derive(Args)]
struct TuneOpts {
    /// Compute-to-memory threshold ψ.
    #[arg(long, env = "UKT_PSI", default_value_t = DEFAULT_PSI)]
    psi: f64,
    /// Registers per thread outside the register tile.
    #[arg(long, env = "UKT_REST_REGS", default_value_t = DEFAULT_REST_REGS)]
    rest_regs: u64,
    /// Per-shape candidate cap; excess candidates are dropped in canonical order.
    #[arg(long, env = "UKT_CAP", default_value_t = DEFAULT_CANDIDATE_CAP)]
    cap: usize,
    /// Ceiling on each shape's final candidate set.
    #[arg(long, env = "UKT_MAX_FINAL", default_value_t = DEFAULT_MAX_FINAL)]
    max_final: usize,
    /// Sweep as eps_min,eps_max,lam_min,lam_max,eps_step,lam_step.
    #[arg(long, env = "UKT_SWEEP", value_parser = parse_sweep)]
    sweep: Option<SweepParams>,
}

impl TuneOpts {
    fn params(&self) -> TuneParams {
        TuneParams {
            sweep: self.sweep.clone().unwrap_or_default(),
            metrics: MetricConfig {
                rest_regs: self.rest_regs,
                psi: self.psi,
            },
            candidate_cap: self.cap,
            max_final: self.max_final,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Raw,
    MinMax,
}

#[derive(Args)]
struct RankOpts {
    /// SIA coefficients c0,c1,c2 for CMR, Pad and Occ.
    #[arg(long, env = "UKT_COEFFS", value_parser = parse_coeffs, default_value = "1,1,1")]
    coeffs: SiaCoeffs,
    /// Number of ranked plans to keep.
    #[arg(long, env = "UKT_TOPK", default_value_t = DEFAULT_TOP_K)]
    topk: usize,
    /// Raw metrics, or per-pool min-max normalized.
    #[arg(long, env = "UKT_SIA_MODE", value_enum, default_value = "raw")]
    sia_mode: ModeArg,
}

impl RankOpts {
    fn options(&self) -> PlanOptions {
        PlanOptions {
            coeffs: self.coeffs.clone(),
            top_k: self.topk,
            mode: match self.sia_mode {
                ModeArg::Raw => SiaMode::Raw,
                ModeArg::MinMax => SiaMode::MinMax,
            },
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlanEmit {
    /// Plan file (JSON) with the ranking.
    Plan,
    /// Loop nest of the top-ranked plan.
    Loopnest,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepEmit {
    Csv,
}

#[derive(Args)]
struct TuneCmd {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    tune: TuneOpts,
    /// Restrict a dynamic axis, NAME=LO..HI (repeatable).
    #[arg(long, env = "UKT_RANGE", value_parser = parse_range, value_delimiter = ';')]
    range: Vec<(String, (u64, u64))>,
    /// Take every n-th binding of the declared ranges (ignored with --range).
    #[arg(long, env = "UKT_STRIDE", default_value_t = 1)]
    stride: u64,
    /// Output path (stdout if absent).
    #[arg(long, env = "UKT_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlanCmd {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    tune: TuneOpts,
    #[command(flatten)]
    rank: RankOpts,
    /// Dynamic binding, NAME=VALUE (repeatable).
    #[arg(long, env = "UKT_SHAPE", value_parser = parse_binding, value_delimiter = ';')]
    shape: Vec<(String, u64)>,
    /// Candidate cache from `tune`; shapes missing from it are compiled on the fly.
    #[arg(long, env = "UKT_CACHE")]
    cache: Option<PathBuf>,
    /// Output format.
    #[arg(long, env = "UKT_EMIT", value_enum, default_value = "plan")]
    emit: PlanEmit,
    /// Run the brute-force oracles on the pool and attach their report.
    #[arg(long, env = "UKT_VERIFY")]
    verify: bool,
    /// Record combine + rank wall-clock in the plan file.
    #[arg(long, env = "UKT_TIMING")]
    timing: bool,
    /// Output path (stdout if absent).
    #[arg(long, env = "UKT_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LoopnestCmd {
    /// Workload description the plan was made for.
    #[arg(long, env = "UKT_WORKLOAD")]
    workload: PathBuf,
    /// Plan file written by `plan`.
    #[arg(long, env = "UKT_PLAN")]
    plan: PathBuf,
    /// Which ranked plan to emit (1-based).
    #[arg(long, env = "UKT_RANK", default_value_t = 1)]
    rank: usize,
    /// Output path (stdout if absent).
    #[arg(long, env = "UKT_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepCmd {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    tune: TuneOpts,
    #[command(flatten)]
    rank: RankOpts,
    /// Restrict a dynamic axis, NAME=LO..HI (repeatable).
    #[arg(long, env = "UKT_RANGE", value_parser = parse_range, value_delimiter = ';')]
    range: Vec<(String, (u64, u64))>,
    /// Take every n-th binding of the declared ranges (ignored with --range).
    #[arg(long, env = "UKT_STRIDE", default_value_t = 1)]
    stride: u64,
    /// Candidate cache from `tune`; shapes missing from it are compiled on the fly.
    #[arg(long, env = "UKT_CACHE")]
    cache: Option<PathBuf>,
    /// Output format.
    #[arg(long, env = "UKT_EMIT", value_enum, default_value = "csv")]
    emit: SweepEmit,
    /// Output path (stdout if absent).
    #[arg(long, env = "UKT_OUT")]
    out: Option<PathBuf>,
}

fn parse_range(s: &str) -> std::result::Result<(String, (u64, u64)), String> {
    let (name, range) = s.split_once('=').ok_or("expected NAME=LO..HI")?;
    let (lo, hi) = range.split_once("..").ok_or("expected NAME=LO..HI")?;
    let lo: u64 = lo
        .trim()
        .parse()
        .map_err(|e| format!("bad lower bound: {e}"))?;
    let hi: u64 = hi
        .trim()
        .parse()
        .map_err(|e| format!("bad upper bound: {e}"))?;
    if lo > hi {
        return Err(format!("empty range {lo}..{hi}"));
    }
    Ok((name.trim().to_string(), (lo, hi)))
}

fn parse_binding(s: &str) -> std::result::Result<(String, u64), String> {
    let (name, v) = s.split_once('=').ok_or("expected NAME=VALUE")?;
    let v = v.trim().parse().map_err(|e| format!("bad value: {e}"))?;
    Ok((name.trim().to_string(), v))
}

fn parse_floats<const N: usize>(s: &str) -> std::result::Result<[f64; N], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into()
        .map_err(|v: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", v.len()))
}

fn parse_coeffs(s: &str) -> std::result::Result<SiaCoeffs, String> {
    let [c0, c1, c2] = parse_floats::<3>(s)?;
    let coeffs = SiaCoeffs { c0, c1, c2 };
    coeffs.validate().map_err(|e| e.to_string())?;
    Ok(coeffs)
}

fn parse_sweep(s: &str) -> std::result::Result<SweepParams, String> {
    let [eps_min, eps_max, lam_min, lam_max, eps_step, lam_step] = parse_floats::<6>(s)?;
    let sweep = SweepParams {
        eps_min,
        eps_max,
        lam_min,
        lam_max,
        eps_step,
        lam_step,
    };
    sweep.validate().map_err(|e| e.to_string())?;
    Ok(sweep)
}

fn selection(range: &[(String, (u64, u64))], stride: u64) -> ShapeSelection {
    if range.is_empty() {
        ShapeSelection::Declared { stride }
    } else {
        ShapeSelection::Ranges(range.iter().cloned().collect())
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_file(path, text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|source| Error::Io {
                    path: "<stdout>".into(),
                    source,
                })
        }
    }
}

fn load_cache(path: &Path, spec: &OperatorSpec, hw: &HardwareDescriptor) -> Result<CandidateCache> {
    let cache = CandidateCache::load(path)?;
    cache
        .header
        .check(KIND_CACHE, spec, hw)
        .map_err(|e| match e {
            Error::Validation { field, reason } => Error::Validation {
                field,
                reason: format!("{reason} (cache {})", path.display()),
            },
            other => other,
        })?;
    Ok(cache)
}

/// Candidates for one binding: from the cache when it has the shape,
/// otherwise compiled now.
fn candidates_for(
    spec: &Arc<OperatorSpec>,
    hw: &HardwareDescriptor,
    params: &TuneParams,
    cache: Option<&CandidateCache>,
    binding: &BTreeMap<String, u64>,
) -> Result<ShapeCandidates> {
    if let Some(section) = cache.and_then(|c| c.section(binding)) {
        return section.to_candidates(spec);
    }
    let instance = spec.bind(binding)?;
    if cache.is_some() {
        log::info!("shape {} not in cache; compiling", instance.binding_label());
    }
    compile_shape(&instance, hw, params)
}

fn cmd_tune(cmd: &TuneCmd) -> Result<()> {
    let (hw, spec) = cmd.inputs.load()?;
    let params = cmd.tune.params();
    let compiled = compile_stage(&spec, &hw, &params, &selection(&cmd.range, cmd.stride))?;
    let cache = CandidateCache::new(&spec, &hw, &params, &compiled);
    emit(cmd.out.as_deref(), &cache.to_json())
}

/// Returns whether verification (if requested) passed.
fn cmd_plan(cmd: &PlanCmd) -> Result<bool> {
    let (hw, spec) = cmd.inputs.load()?;
    let cache = cmd
        .cache
        .as_deref()
        .map(|p| load_cache(p, &spec, &hw))
        .transpose()?;
    let params = cache
        .as_ref()
        .map_or_else(|| cmd.tune.params(), |c| c.params.clone());
    let binding: BTreeMap<String, u64> = cmd.shape.iter().cloned().collect();
    let shape = candidates_for(&spec, &hw, &params, cache.as_ref(), &binding)?;

    let options = cmd.rank.options();
    let start = Instant::now();
    let outcome = plan_shape(&shape.kernels, &shape.instance, &hw, &options)?;
    let elapsed = start.elapsed().as_secs_f64();
    eprintln!("combine+rank: {:.3} ms", elapsed * 1e3);

    let mut report = PlanReport::new(
        &shape.instance,
        &hw,
        &options,
        shape.kernels.len(),
        &outcome,
    )?;
    if cmd.timing {
        report.combine_rank_wall_s = Some(elapsed);
    }
    let mut passed = true;
    if cmd.verify {
        let v = verify_pool(
            &shape.kernels,
            &outcome.pool,
            &options.coeffs,
            &hw,
            options.top_k,
        )?;
        eprint!("{}", v.to_text());
        passed = v.passed();
        report.verification = Some(v);
    }
    eprint!("{}", report.ranking_text());
    match cmd.emit {
        PlanEmit::Loopnest => emit(cmd.out.as_deref(), &emit_loopnest(&outcome.ranked[0].plan)?)?,
        PlanEmit::Plan => emit(cmd.out.as_deref(), &report.to_json())?,
    }
    Ok(passed)
}

fn cmd_loopnest(cmd: &LoopnestCmd) -> Result<()> {
    let spec = Arc::new(OperatorSpec::load(&cmd.workload)?);
    let report = PlanReport::load(&cmd.plan)?;
    if report.header.kind != KIND_PLAN || report.header.workload_hash != spec.hash() {
        return Err(Error::Validation {
            field: "plan".into(),
            reason: format!("{} is not a plan for this workload", cmd.plan.display()),
        });
    }
    let plan = report.program(&spec, cmd.rank)?;
    emit(cmd.out.as_deref(), &emit_loopnest(&plan)?)
}

fn cmd_sweep(cmd: &SweepCmd) -> Result<()> {
    let (hw, spec) = cmd.inputs.load()?;
    let cache = cmd
        .cache
        .as_deref()
        .map(|p| load_cache(p, &spec, &hw))
        .transpose()?;
    let params = cache
        .as_ref()
        .map_or_else(|| cmd.tune.params(), |c| c.params.clone());
    hw.validate()?;
    params.validate()?;
    let options = cmd.rank.options();
    let bindings = shape_bindings(&spec, &selection(&cmd.range, cmd.stride))?;
    let rows: Vec<SweepRow> = bindings
        .par_iter()
        .map(|b| {
            let label = b
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(",");
            let row = candidates_for(&spec, &hw, &params, cache.as_ref(), b).and_then(|c| {
                let outcome = plan_shape(&c.kernels, &c.instance, &hw, &options)?;
                SweepRow::from_outcome(&hw, c.kernels.len(), &outcome)
            });
            row.unwrap_or_else(|e| SweepRow::failed(&spec, &hw, label, &e))
        })
        .collect();
    emit(cmd.out.as_deref(), &sweep_csv(&rows)?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    let result = match &cli.command {
        Command::Tune(c) => cmd_tune(c).map(|_| true),
        Command::Plan(c) => cmd_plan(c),
        Command::Loopnest(c) => cmd_loopnest(c).map(|_| true),
        Command::Sweep(c) => cmd_sweep(c).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: verification failed");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

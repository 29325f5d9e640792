//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Runs without the libtest harness so the timed criteria own the process.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ukt_core::combiner::{build_programs, combin_search, ProgramPlan};
use ukt_core::filter::{
    attach_metrics, compile_shape, compile_shape_staged, cross_pick, first_retained_step,
    multi_axis_filter, set_bound, shape_bindings, ShapeCandidates,
};
use ukt_core::metrics::{occupancy_from_blocks, occupancy_metric};
use ukt_core::oracle::{
    brute_force_combinations, exhaustive_rank_check, simulate_sweep, OracleCase,
};
use ukt_core::report::PlanReport;
use ukt_core::sia::{rank_programs, rank_programs_with, sia_score};
use ukt_core::ukernel::{enumerate_ukernels, UKernel};
use ukt_core::workload::{dense, Extent};
use ukt_core::{
    exact, plan_shape, BigRational, HardwareDescriptor, MetricBundle, OperatorSpec, PlanOptions,
    SiaCoeffs, SiaMode, SweepParams, TuneParams, WorkloadInstance,
};

struct Verdict {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: u8, name: &'static str, pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        id,
        name,
        pass,
        detail: detail.into(),
    }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn dense_sweep_spec() -> Arc<OperatorSpec> {
    Arc::new(OperatorSpec::load(configs().join("workloads/dense.json")).expect("dense workload"))
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn bind(spec: &Arc<OperatorSpec>, axis: &str, v: u64) -> WorkloadInstance {
    let mut b = BTreeMap::new();
    b.insert(axis.to_string(), v);
    spec.bind(&b).expect("binding in range")
}

fn bundle(cmr: f64, pad: f64, occ: f64) -> MetricBundle<f64> {
    MetricBundle {
        pad,
        occ,
        regs_in_block: 0,
        block_bound: 1,
        in_bound: true,
        saturated: true,
        cmr,
        intensive: true,
        mem_latency_s: 1.0,
        blocks_needed: 1,
        smem_bytes: 0,
    }
}

fn c1_combination_exactness() -> Verdict {
    let spec = dense(
        Extent::Dynamic { lo: 1, hi: 128 },
        Extent::Fixed(32),
        Extent::Fixed(64),
    );
    let inst = bind(&spec, "i", 53);
    let kernels = [
        UKernel::new(&[1, 2], &[7, 32, 16]).with_metrics(bundle(1.0, 1.0, 1.0)),
        UKernel::new(&[1, 2], &[8, 32, 16]).with_metrics(bundle(1.0, 1.0, 1.0)),
    ];
    let start = Instant::now();
    let pool = build_programs(&kernels, &inst);
    let elapsed = start.elapsed();
    let Ok(pool) = pool else {
        return verdict(
            1,
            "combination exactness",
            false,
            "pool construction failed",
        );
    };
    let pairs: Vec<Vec<(u64, u64)>> = pool
        .iter()
        .filter(|p| p.parts.len() == 2)
        .map(|p| {
            p.parts
                .iter()
                .map(|x| (x.kernel.smem_tile()[0], x.count))
                .collect()
        })
        .collect();
    let ok = pairs == vec![vec![(7, 3), (8, 4)]]
        && pool.len() == 1
        && pool[0].tau_name() == "i"
        && pool[0].tau_coverage() == 53
        && elapsed < Duration::from_millis(1);
    verdict(
        1,
        "combination exactness",
        ok,
        format!(
            "H=53 tiles {{7,8}} -> {pairs:?}, tau padding 0, {:.3} ms",
            ms(elapsed)
        ),
    )
}

fn c2_combination_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut mismatches = 0;
    let mut nonempty = 0;
    for _ in 0..1000 {
        let h = rng.gen_range(1..=512);
        let n = rng.gen_range(1..=12);
        let tiles: BTreeSet<u64> = (0..n).map(|_| rng.gen_range(1..=64)).collect();
        let tiles: Vec<u64> = tiles.into_iter().collect();
        let fast: BTreeSet<_> = combin_search(&tiles, h).into_iter().collect();
        let brute = brute_force_combinations(&tiles, h);
        if !brute.is_empty() {
            nonempty += 1;
        }
        if fast != brute {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        2,
        "combination oracle equivalence",
        mismatches == 0 && elapsed < Duration::from_secs(10),
        format!(
            "1000 seeded cases, {nonempty} with covers, {mismatches} mismatches, {:.0} ms",
            ms(elapsed)
        ),
    )
}

fn c3_zero_tau_padding(compiled: &[ShapeCandidates]) -> Verdict {
    let start = Instant::now();
    let mut plans = 0usize;
    let mut bad = 0usize;
    let mut failed_shapes = 0usize;
    for shape in compiled {
        let inst = &shape.instance;
        // Main axis recomputed here: the largest space-axis extent.
        let spec = inst.spec();
        let tau = *spec
            .space_axes()
            .iter()
            .max_by_key(|&&a| inst.extent(a))
            .expect("space axes");
        let Ok(pool) = build_programs(&shape.kernels, inst) else {
            failed_shapes += 1;
            continue;
        };
        for p in &pool {
            plans += 1;
            let covered: u64 = p
                .parts
                .iter()
                .map(|x| x.count * x.kernel.smem_tile()[tau])
                .sum();
            let agree = p.parts.windows(2).all(|w| {
                (0..inst.extents().len())
                    .filter(|&a| a != tau)
                    .all(|a| w[0].kernel.smem_tile()[a] == w[1].kernel.smem_tile()[a])
            });
            if covered != inst.extent(tau) || !agree || p.parts.len() > 2 {
                bad += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        3,
        "zero tau-padding invariant",
        bad == 0
            && failed_shapes == 0
            && compiled.len() == 128
            && elapsed < Duration::from_secs(60),
        format!(
            "{} shapes, {plans} plans, {bad} violations, {failed_shapes} empty pools, {:.1} s",
            compiled.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn c4_occupancy() -> Verdict {
    let exact_ok = occupancy_from_blocks::<BigRational>(80, 80) == exact(1, 1)
        && occupancy_from_blocks::<BigRational>(160, 80) == exact(1, 1)
        && occupancy_from_blocks::<BigRational>(81, 80) == exact(81, 160);
    let f = occupancy_from_blocks::<f64>(81, 80);
    // Through the kernel path as well: 81 one-row blocks of a 81 x 8 output.
    let inst = ukt_core::workload::dense_instance(81, 8, 8);
    let hw = HardwareDescriptor::v100_like();
    let via_kernel: BigRational = occupancy_metric(&UKernel::new(&[1, 1], &[1, 8, 8]), &inst, &hw);
    let ok = exact_ok && (f - 0.50625).abs() <= 1e-12 && via_kernel == exact(81, 160);
    verdict(
        4,
        "occupancy formula",
        ok,
        format!("n=80,160 -> 1; n=81 -> {f} (exact 81/160)"),
    )
}

fn c5_sweep() -> Verdict {
    let s = SweepParams::default();
    let e = SweepParams::<BigRational> {
        eps_min: exact(50, 100),
        eps_max: exact(95, 100),
        lam_min: exact(90, 100),
        lam_max: exact(95, 100),
        eps_step: exact(1, 100),
        lam_step: exact(1, 1000),
    };
    let at = first_retained_step(&0.60, &0.941, &s);
    let at_exact = first_retained_step(&exact(60, 100), &exact(941, 1000), &e);
    let sim = simulate_sweep(&0.60, &0.941, &s);
    let never = first_retained_step(&0.49, &1.0, &s).is_none()
        && first_retained_step(&exact(49, 100), &exact(1, 1), &e).is_none()
        && simulate_sweep(&0.49, &1.0, &s).is_none();
    let ok = at == Some(9) && at_exact == Some(9) && sim == Some(9) && never;
    let (eps, lam) = e.point(9);
    verdict(
        5,
        "sweep semantics",
        ok,
        format!(
            "(0.60,0.941) retained at step {} (1-based), point ({eps}, {lam}); pad=0.49 never retained: {never}",
            at.map_or(0, |k| k + 1),
        ),
    )
}

fn c6_filter_inclusion() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xf117);
    let params = TuneParams::default();
    let tol = 1e-9;
    let mut total = 0usize;
    let mut cases = 0usize;
    let mut problems = Vec::new();
    while total < 100_000 || cases < 12 {
        cases += 1;
        let i = rng.gen_range(1..=64);
        let j = [32, 48, 64, 96, 128][rng.gen_range(0..5)];
        let k = [16, 32, 64][rng.gen_range(0..3)];
        let hw = match rng.gen_range(0..3) {
            0 => HardwareDescriptor::v100_like(),
            1 => ukt_core::oracle::a100_like(),
            _ => ukt_core::oracle::k80_like(),
        };
        let inst = ukt_core::workload::dense_instance(i, j, k);
        let label = format!("{}x{}x{} on {}", i, j, k, hw.name);
        let Ok(align) = enumerate_ukernels(&inst, &hw, params.candidate_cap) else {
            problems.push(format!("{label}: enumeration failed"));
            continue;
        };
        let mut kalign = align.kernels;
        total += kalign.len();
        if attach_metrics(&mut kalign, &inst, &hw, &params.metrics).is_err() {
            problems.push(format!("{label}: metrics failed"));
            continue;
        }
        let kcross = cross_pick(&kalign, &hw, &params.sweep);
        let kfilter = set_bound(&kcross);
        let kfinal = multi_axis_filter(&kfilter);
        let ids = |v: &[UKernel]| -> BTreeSet<(Vec<u64>, Vec<u64>)> {
            v.iter()
                .map(|x| (x.reg_tile().to_vec(), x.smem_tile().to_vec()))
                .collect()
        };
        let (a, c, f, z) = (ids(&kalign), ids(&kcross), ids(&kfilter), ids(&kfinal));
        if !(z.is_subset(&f) && f.is_subset(&c) && c.is_subset(&a)) {
            problems.push(format!("{label}: inclusion chain broken"));
        }
        for x in &kfilter {
            let m = x.metrics.as_ref().expect("metrics attached");
            let thresholds = m.pad >= params.sweep.eps_min - tol
                && m.occ >= params.sweep.lam_min - tol
                && m.in_bound
                && m.regs_in_block * m.block_bound <= hw.regs_per_core
                && m.smem_bytes <= hw.smem_per_core_bytes;
            let full = kfinal.iter().any(|y| y.same_tiles(x));
            if !thresholds || (full && !(m.saturated && m.intensive)) {
                problems.push(format!("{label}: threshold violated"));
                break;
            }
        }
        // The streaming compile agrees with the staged sets and honors the
        // recorded relaxations.
        match (
            compile_shape(&inst, &hw, &params),
            compile_shape_staged(&inst, &hw, &params),
        ) {
            (Ok(s), Ok(t)) => {
                if s.kernels != t.kernels || s.meta != t.meta {
                    problems.push(format!("{label}: streaming and staged compile differ"));
                }
                for x in &s.kernels {
                    let m = x.metrics.as_ref().expect("metrics");
                    let in_filter = f.contains(&(x.reg_tile().to_vec(), x.smem_tile().to_vec()));
                    if (s.meta.widen_rounds == 0 && !in_filter)
                        || (!s.meta.dropped_saturation && !m.saturated)
                        || (!s.meta.dropped_intensity && !m.intensive)
                    {
                        problems.push(format!("{label}: final member outside its recorded tier"));
                        break;
                    }
                }
            }
            (Err(a), Err(b)) if a.to_string() == b.to_string() => {}
            _ => problems.push(format!(
                "{label}: streaming and staged compile disagree on failure"
            )),
        }
    }
    let elapsed = start.elapsed();
    verdict(
        6,
        "filter chain inclusion",
        problems.is_empty() && elapsed < Duration::from_secs(30),
        format!(
            "{cases} instances, {total} candidates, {:.1} s{}",
            elapsed.as_secs_f64(),
            problems
                .first()
                .map_or(String::new(), |p| format!(", first problem: {p}"))
        ),
    )
}

fn c7_sia(pool: &[ProgramPlan]) -> Verdict {
    let unit = SiaCoeffs::default();
    let mut max_err: f64 = 0.0;
    for p in pool {
        let terms: Vec<f64> = p
            .parts
            .iter()
            .map(|x| {
                let m = x.kernel.metrics.as_ref().expect("metrics");
                m.cmr + m.pad + m.occ
            })
            .collect();
        let expect = terms.iter().sum::<f64>() / terms.len() as f64;
        let got = sia_score(p, &unit).expect("score");
        max_err = max_err.max((got - expect).abs());
    }
    let order = |r: &[ukt_core::RankedPlan<BigRational>]| -> Vec<String> {
        r.iter()
            .map(|x| ukt_core::report::plan_label(&x.plan))
            .collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x51a);
    let mut invariant = true;
    let mut trials = 0;
    for _ in 0..4 {
        let base = SiaCoeffs::<BigRational> {
            c0: exact(rng.gen_range(0..=10), 1),
            c1: exact(rng.gen_range(1..=10), 1),
            c2: exact(rng.gen_range(0..=10), 1),
        };
        let reference = order(&rank_programs_with(pool, &base, pool.len(), SiaMode::Raw).unwrap());
        for (num, den) in [(1, 1000), (7, 3), (1000, 1)] {
            trials += 1;
            let scaled = base.scaled(&exact(num, den));
            let got = order(&rank_programs_with(pool, &scaled, pool.len(), SiaMode::Raw).unwrap());
            invariant &= got == reference;
        }
    }
    verdict(
        7,
        "SIA consistency",
        max_err <= 1e-12 && invariant,
        format!(
            "{} plans, max |score - expected| = {max_err:.2e}; full ranking unchanged under {trials} exact rescalings: {invariant}",
            pool.len()
        ),
    )
}

fn c8_rank_fidelity() -> Verdict {
    let start = Instant::now();
    let params = TuneParams::default();
    let coeffs = SiaCoeffs::default();
    let mut hits = 0;
    let mut cases = 0;
    let mut lines = Vec::new();
    for seed in 0..24u64 {
        let case = OracleCase::dense_from_seed(seed);
        let label = format!(
            "seed {seed:2}: {} on {}",
            case.instance.binding_label(),
            case.hw.name
        );
        let report = compile_shape(&case.instance, &case.hw, &params)
            .and_then(|c| build_programs(&c.kernels, &case.instance))
            .and_then(|pool| exhaustive_rank_check(&pool, &coeffs, &case.hw, 10, 0.10));
        cases += 1;
        match report {
            Ok(r) => {
                if r.topk_within {
                    hits += 1;
                }
                lines.push(format!(
                    "    {label} j={} k={}: pool {}, top-1 gap {:.3}, top-10 gap {:.3} -> {}",
                    case.instance.extent(1),
                    case.instance.extent(2),
                    r.pool_size,
                    r.top1_gap,
                    r.topk_gap,
                    if r.topk_within { "hit" } else { "miss" }
                ));
            }
            Err(e) => lines.push(format!("    {label}: error {e}")),
        }
    }
    let elapsed = start.elapsed();
    let rate = hits as f64 / cases as f64;
    let mut detail = format!(
        "top-10 within 10% of model-best in {hits}/{cases} cases ({:.0}%), {:.1} s",
        rate * 100.0,
        elapsed.as_secs_f64()
    );
    for l in lines {
        detail.push('\n');
        detail.push_str(&l);
    }
    verdict(
        8,
        "ranking vs oracle fidelity",
        cases >= 20 && rate >= 0.90 && elapsed < Duration::from_secs(120),
        detail,
    )
}

fn ukt(args: &[&str]) -> (bool, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_ukt"))
        .args(args)
        .output()
        .expect("ukt runs");
    (out.status.success(), out.stdout)
}

fn c9_determinism(compiled: &[ShapeCandidates], hw: &HardwareDescriptor) -> Verdict {
    let start = Instant::now();
    let dir = tempfile::tempdir().expect("tempdir");
    let hw_path = configs().join("hardware/v100-like.json");
    let wl_path = configs().join("workloads/dense.json");
    let (hw_s, wl_s) = (hw_path.to_str().unwrap(), wl_path.to_str().unwrap());
    let cache = |name: &str| dir.path().join(name);
    let mut notes = Vec::new();

    let mut ok = true;
    let mut run_tune = |threads: &str, name: &str| {
        let p = cache(name);
        let (s, _) = ukt(&[
            "--threads",
            threads,
            "tune",
            "--hardware",
            hw_s,
            "--workload",
            wl_s,
            "--out",
            p.to_str().unwrap(),
        ]);
        ok &= s;
        std::fs::read(&p).unwrap_or_default()
    };
    let a = run_tune("1", "a.json");
    let b = run_tune("2", "b.json");
    let c = run_tune("1", "c.json");
    let tune_same = !a.is_empty() && a == b && a == c;
    notes.push(format!(
        "tune x3 (threads 1,2,1): identical {tune_same}, {} bytes",
        a.len()
    ));

    let cache_a = cache("a.json");
    let mut plans_same = true;
    for t in ["1", "53", "128"] {
        let shape = format!("i={t}");
        let outs: Vec<Vec<u8>> = ["1", "2"]
            .iter()
            .map(|threads| {
                let (s, out) = ukt(&[
                    "--threads",
                    threads,
                    "plan",
                    "--hardware",
                    hw_s,
                    "--workload",
                    wl_s,
                    "--cache",
                    cache_a.to_str().unwrap(),
                    "--shape",
                    &shape,
                ]);
                ok &= s;
                out
            })
            .collect();
        plans_same &= !outs[0].is_empty() && outs[0] == outs[1];
    }
    notes.push(format!(
        "plan via cache for i=1,53,128 at threads 1,2: identical {plans_same}"
    ));

    let sweeps: Vec<Vec<u8>> = ["1", "2"]
        .iter()
        .map(|threads| {
            let (s, out) = ukt(&[
                "--threads",
                threads,
                "sweep",
                "--hardware",
                hw_s,
                "--workload",
                wl_s,
                "--cache",
                cache_a.to_str().unwrap(),
            ]);
            ok &= s;
            out
        })
        .collect();
    let sweep_same = !sweeps[0].is_empty() && sweeps[0] == sweeps[1];
    let rows = String::from_utf8_lossy(&sweeps[0])
        .lines()
        .count()
        .saturating_sub(1);
    notes.push(format!(
        "sweep CSV at threads 1,2: identical {sweep_same}, {rows} rows"
    ));

    // In process: every shape's plan report under two pool sizes.
    let reports = |threads: usize| -> Vec<String> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            use rayon::prelude::*;
            compiled
                .par_iter()
                .map(|c| {
                    let opts = PlanOptions::default();
                    let o = plan_shape(&c.kernels, &c.instance, hw, &opts).unwrap();
                    PlanReport::new(&c.instance, hw, &opts, c.kernels.len(), &o)
                        .unwrap()
                        .to_json()
                })
                .collect()
        })
    };
    let all_same = reports(1) == reports(3);
    notes.push(format!(
        "128 in-process plan reports at 1 and 3 workers: identical {all_same}"
    ));

    let pass = ok && tune_same && plans_same && sweep_same && rows == 128 && all_same;
    verdict(
        9,
        "determinism",
        pass,
        format!(
            "{}; {:.1} s",
            notes.join("; "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn main() {
    let spec = dense_sweep_spec();
    let hw =
        HardwareDescriptor::load(configs().join("hardware/v100-like.json")).expect("descriptor");
    let params = TuneParams::default();

    // Criterion 10 first: its 128-shape compile feeds 3, 7 and 9.
    let single = Instant::now();
    let one = compile_shape(&bind(&spec, "i", 128), &hw, &params)
        .and_then(|c| plan_shape(&c.kernels, &c.instance, &hw, &PlanOptions::default()));
    let single = single.elapsed();
    let sweep_start = Instant::now();
    let bindings =
        shape_bindings(&spec, &ukt_core::ShapeSelection::Declared { stride: 1 }).unwrap();
    let compiled: Vec<ShapeCandidates> = bindings
        .iter()
        .filter_map(|b| compile_shape(&spec.bind(b).unwrap(), &hw, &params).ok())
        .collect();
    let planned = compiled
        .iter()
        .filter(|c| plan_shape(&c.kernels, &c.instance, &hw, &PlanOptions::default()).is_ok())
        .count();
    let sweep = sweep_start.elapsed();
    let v10 = verdict(
        10,
        "desk-scale performance budget",
        one.is_ok()
            && single < Duration::from_secs(5)
            && planned == 128
            && sweep < Duration::from_secs(300),
        format!(
            "one shape (i=128, capped enumeration) {:.2} s; 128 shapes {:.1} s ({planned} planned)",
            single.as_secs_f64(),
            sweep.as_secs_f64()
        ),
    );

    let t53 = compiled
        .iter()
        .find(|c| c.instance.extent(0) == 53)
        .expect("i=53 compiled");
    let pool53 = build_programs(&t53.kernels, &t53.instance).expect("pool for i=53");
    let top = rank_programs(&pool53, &SiaCoeffs::default(), 10, SiaMode::Raw).expect("ranking");
    assert!(top.windows(2).all(|w| w[0].score >= w[1].score));

    let mut verdicts = vec![
        c1_combination_exactness(),
        c2_combination_oracle(),
        c3_zero_tau_padding(&compiled),
        c4_occupancy(),
        c5_sweep(),
        c6_filter_inclusion(),
        c7_sia(&pool53),
        c8_rank_fidelity(),
        c9_determinism(&compiled, &hw),
        v10,
    ];
    verdicts.sort_by_key(|v| v.id);
    let mut failed = 0;
    for v in &verdicts {
        println!(
            "{} criterion {:2} {}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.id,
            v.name,
            v.detail
        );
        failed += usize::from(!v.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        verdicts.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

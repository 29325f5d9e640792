//! Versioned file formats (candidate cache, plan report, sweep rows) and the
//! textual loop-nest emitter.
//!
//! Every file carries a [`FileHeader`] tying it to the tool version, the
//! perf-model version, the descriptor and the workload hash. JSON files are
//! written pretty-printed with a trailing newline; field order is fixed by
//! the struct definitions, so equal inputs give byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::combiner::{PlanPart, ProgramPlan};
use crate::error::{Error, Result};
use crate::filter::{FilterMeta, ShapeCandidates, TuneParams};
use crate::hw::HardwareDescriptor;
use crate::metrics::occupancy_from_blocks;
use crate::oracle::VerifyReport;
use crate::perf::{TimeEstimate, PERF_MODEL_VERSION};
use crate::runtime::{PlanOptions, PlanOutcome};
use crate::sia::{SiaCoeffs, SiaMode};
use crate::ukernel::{UKernel, UKernelRecord};
use crate::workload::{AccessRole, OperatorSpec, WorkloadInstance};
use crate::TOOL_VERSION;

/// Bumped on any breaking change to a file layout or CSV column set.
pub const SCHEMA_VERSION: u32 = 1;

pub const KIND_CACHE: &str = "candidate-cache";
pub const KIND_PLAN: &str = "plan";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileHeader {
    pub kind: String,
    pub schema: u32,
    pub tool_version: String,
    pub perf_model_version: String,
    pub descriptor: String,
    pub descriptor_hash: String,
    pub workload: String,
    pub workload_hash: String,
}

impl FileHeader {
    pub fn new(kind: &str, spec: &OperatorSpec, hw: &HardwareDescriptor) -> Self {
        FileHeader {
            kind: kind.to_string(),
            schema: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            perf_model_version: PERF_MODEL_VERSION.to_string(),
            descriptor: hw.name.clone(),
            descriptor_hash: hw.hash(),
            workload: spec.name().to_string(),
            workload_hash: spec.hash(),
        }
    }

    /// Rejects files of another kind or schema, or produced for a different
    /// workload or descriptor.
    pub fn check(&self, kind: &str, spec: &OperatorSpec, hw: &HardwareDescriptor) -> Result<()> {
        if self.kind != kind {
            return Err(Error::validation(
                "kind",
                format!("expected {kind}, found {}", self.kind),
            ));
        }
        if self.schema != SCHEMA_VERSION {
            return Err(Error::validation(
                "schema",
                format!(
                    "unsupported schema {} (this build reads {SCHEMA_VERSION})",
                    self.schema
                ),
            ));
        }
        if self.workload_hash != spec.hash() {
            return Err(Error::validation(
                "workload_hash",
                format!(
                    "file was built for workload hash {}, not {}",
                    self.workload_hash,
                    spec.hash()
                ),
            ));
        }
        if self.descriptor_hash != hw.hash() {
            return Err(Error::validation(
                "descriptor_hash",
                format!(
                    "file was built for descriptor `{}` ({})",
                    self.descriptor, self.descriptor_hash
                ),
            ));
        }
        Ok(())
    }
}

fn to_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// One shape's filtered candidate set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSection {
    pub shape: BTreeMap<String, u64>,
    pub meta: FilterMeta,
    pub kernels: Vec<UKernelRecord>,
}

impl ShapeSection {
    pub fn from_candidates(c: &ShapeCandidates) -> Self {
        let spec = c.instance.spec();
        ShapeSection {
            shape: c.instance.bindings(),
            meta: c.meta.clone(),
            kernels: c
                .kernels
                .iter()
                .map(|k| UKernelRecord::from_kernel(spec, k))
                .collect(),
        }
    }

    pub fn to_candidates(&self, spec: &Arc<OperatorSpec>) -> Result<ShapeCandidates> {
        let instance = spec.bind(&self.shape)?;
        let kernels = self
            .kernels
            .iter()
            .map(|r| r.to_kernel(spec))
            .collect::<Result<Vec<UKernel>>>()?;
        Ok(ShapeCandidates {
            instance,
            kernels,
            meta: self.meta.clone(),
        })
    }
}

/// Compile-stage output: the tuning parameters and one section per shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateCache {
    pub header: FileHeader,
    pub params: TuneParams,
    pub shapes: Vec<ShapeSection>,
}

impl CandidateCache {
    pub fn new(
        spec: &OperatorSpec,
        hw: &HardwareDescriptor,
        params: &TuneParams,
        compiled: &[ShapeCandidates],
    ) -> Self {
        CandidateCache {
            header: FileHeader::new(KIND_CACHE, spec, hw),
            params: params.clone(),
            shapes: compiled.iter().map(ShapeSection::from_candidates).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        to_pretty(self)
    }

    pub fn from_json(document: &str) -> Result<Self> {
        Ok(serde_json::from_str(document)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read_file(path.as_ref())?)
    }

    pub fn section(&self, shape: &BTreeMap<String, u64>) -> Option<&ShapeSection> {
        self.shapes.iter().find(|s| &s.shape == shape)
    }
}

/// A plan part with its slice of the main axis and weighted score terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartEntry {
    pub count: u64,
    /// Start of this part's slice along the main axis.
    pub tau_offset: u64,
    pub reg_tile: BTreeMap<String, u64>,
    pub smem_tile: BTreeMap<String, u64>,
    /// c0·CMR
    pub cmr_term: f64,
    /// c1·Pad
    pub pad_term: f64,
    /// c2·Occ
    pub occ_term: f64,
    pub part_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntry {
    pub rank: usize,
    pub sia_score: f64,
    pub parts: Vec<PartEntry>,
    pub padded_extents: BTreeMap<String, u64>,
    pub padding_fraction: f64,
    pub estimate: TimeEstimate,
}

/// Plan file and ranking report in one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanReport {
    pub header: FileHeader,
    pub shape: BTreeMap<String, u64>,
    pub extents: BTreeMap<String, u64>,
    pub tau: String,
    pub coeffs: SiaCoeffs,
    pub sia_mode: SiaMode,
    pub top_k: usize,
    pub candidates: usize,
    pub pool_size: usize,
    /// Wall-clock seconds of combine + rank. Only written on request, since
    /// it would make otherwise identical reports differ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combine_rank_wall_s: Option<f64>,
    pub plans: Vec<PlanEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerifyReport>,
}

fn axis_map(spec: &OperatorSpec, values: &[u64]) -> BTreeMap<String, u64> {
    spec.axes()
        .iter()
        .zip(values)
        .map(|(a, &v)| (a.name.clone(), v))
        .collect()
}

impl PlanReport {
    pub fn new(
        instance: &WorkloadInstance,
        hw: &HardwareDescriptor,
        options: &PlanOptions,
        candidates: usize,
        outcome: &PlanOutcome,
    ) -> Result<Self> {
        let spec = instance.spec();
        let tau = outcome
            .pool
            .first()
            .map(|p| p.tau_name().to_string())
            .unwrap_or_default();
        let mut plans = Vec::with_capacity(outcome.ranked.len());
        for (i, r) in outcome.ranked.iter().enumerate() {
            let mut offset = 0;
            let mut parts = Vec::with_capacity(r.plan.parts.len());
            for (p, t) in r.plan.parts.iter().zip(&r.terms) {
                parts.push(PartEntry {
                    count: p.count,
                    tau_offset: offset,
                    reg_tile: p.kernel.reg_map(spec),
                    smem_tile: p.kernel.smem_map(spec),
                    cmr_term: t.cmr,
                    pad_term: t.pad,
                    occ_term: t.occ,
                    part_score: t.sum(),
                });
                offset += p.count * p.kernel.smem_tile()[r.plan.tau];
            }
            let estimate =
                r.plan.est.clone().ok_or_else(|| {
                    Error::Invariant("ranked plan without a time estimate".into())
                })?;
            plans.push(PlanEntry {
                rank: i + 1,
                sia_score: r.score,
                parts,
                padded_extents: axis_map(spec, &r.plan.covered_extents()),
                padding_fraction: r.plan.padding_fraction(),
                estimate,
            });
        }
        Ok(PlanReport {
            header: FileHeader::new(KIND_PLAN, spec, hw),
            shape: instance.bindings(),
            extents: axis_map(spec, instance.extents()),
            tau,
            coeffs: options.coeffs.clone(),
            sia_mode: options.mode,
            top_k: options.top_k,
            candidates,
            pool_size: outcome.pool.len(),
            combine_rank_wall_s: None,
            plans,
            verification: None,
        })
    }

    pub fn to_json(&self) -> String {
        to_pretty(self)
    }

    pub fn from_json(document: &str) -> Result<Self> {
        Ok(serde_json::from_str(document)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read_file(path.as_ref())?)
    }

    /// Rebuilds the ranked plan at `rank` (1-based) against `spec`. The
    /// kernels carry no metrics; the result is meant for emission.
    pub fn program(&self, spec: &Arc<OperatorSpec>, rank: usize) -> Result<ProgramPlan> {
        let entry = self
            .plans
            .iter()
            .find(|e| e.rank == rank)
            .ok_or_else(|| Error::validation("rank", format!("no plan with rank {rank}")))?;
        let instance = spec.bind(&self.shape)?;
        let tau = spec
            .axis_index(&self.tau)
            .ok_or_else(|| Error::validation("tau", format!("unknown axis `{}`", self.tau)))?;
        let parts = entry
            .parts
            .iter()
            .map(|p| {
                Ok(PlanPart {
                    kernel: UKernel::from_maps(spec, &p.reg_tile, &p.smem_tile)?,
                    count: p.count,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let plan = ProgramPlan {
            parts,
            instance,
            tau,
            sia: Some(entry.sia_score),
            est: Some(entry.estimate.clone()),
        };
        plan.verify()?;
        Ok(plan)
    }

    /// Human-readable ranking with the per-part score decomposition.
    pub fn ranking_text(&self) -> String {
        let mut out = String::new();
        let shape: Vec<String> = self.shape.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(
            out,
            "shape {}  tau={}  candidates={}  pool={}",
            shape.join(","),
            self.tau,
            self.candidates,
            self.pool_size
        );
        for e in &self.plans {
            let _ = writeln!(
                out,
                "#{:<3} score {:.6}  est {:.3e} s  padding {:.4}",
                e.rank, e.sia_score, e.estimate.total_s, e.padding_fraction
            );
            for p in &e.parts {
                let _ = writeln!(
                    out,
                    "      {} x smem {} reg {}  @{}: {:.6} = {:.6} + {:.6} + {:.6}",
                    p.count,
                    map_label(&p.smem_tile),
                    map_label(&p.reg_tile),
                    p.tau_offset,
                    p.part_score,
                    p.cmr_term,
                    p.pad_term,
                    p.occ_term
                );
            }
        }
        out
    }
}

fn map_label(m: &BTreeMap<String, u64>) -> String {
    m.iter()
        .map(|(k, v)| format!("{k}{v}"))
        .collect::<Vec<_>>()
        .join(".")
}

/// Compact label of a plan: `smem@reg*count` per part, joined by `+`, with
/// tile dims in axis declaration order.
pub fn plan_label(plan: &ProgramPlan) -> String {
    let dims = |t: &[u64]| t.iter().map(u64::to_string).collect::<Vec<_>>().join("x");
    plan.parts
        .iter()
        .map(|p| {
            format!(
                "{}@{}*{}",
                dims(p.kernel.smem_tile()),
                dims(p.kernel.reg_tile()),
                p.count
            )
        })
        .collect::<Vec<_>>()
        .join("+")
}

/// One row of a sweep report. Header fields repeat on every row so each
/// row stands alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub schema: u32,
    pub tool_version: String,
    pub perf_model_version: String,
    pub descriptor: String,
    pub workload_hash: String,
    pub shape: String,
    /// `ok`, `empty-result`, `input-error` or `invariant-violation`.
    pub status: String,
    pub error: String,
    pub candidates: Option<usize>,
    pub pool_size: Option<usize>,
    pub plan: String,
    pub parts: Option<usize>,
    pub sia_score: Option<f64>,
    pub compute_s: Option<f64>,
    pub memory_s: Option<f64>,
    pub padding_s: Option<f64>,
    pub total_s: Option<f64>,
    pub waves: Option<u64>,
    pub padding_fraction: Option<f64>,
    pub occupancy: Option<f64>,
}

impl SweepRow {
    fn base(spec: &OperatorSpec, hw: &HardwareDescriptor, shape: String) -> Self {
        SweepRow {
            schema: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            perf_model_version: PERF_MODEL_VERSION.to_string(),
            descriptor: hw.name.clone(),
            workload_hash: spec.hash(),
            shape,
            status: "ok".into(),
            error: String::new(),
            candidates: None,
            pool_size: None,
            plan: String::new(),
            parts: None,
            sia_score: None,
            compute_s: None,
            memory_s: None,
            padding_s: None,
            total_s: None,
            waves: None,
            padding_fraction: None,
            occupancy: None,
        }
    }

    /// Row for the top-ranked plan of a shape.
    pub fn from_outcome(
        hw: &HardwareDescriptor,
        candidates: usize,
        outcome: &PlanOutcome,
    ) -> Result<Self> {
        let best = outcome
            .ranked
            .first()
            .ok_or_else(|| Error::Invariant("ranking returned no plan".into()))?;
        let plan = &best.plan;
        let est = plan
            .est
            .as_ref()
            .ok_or_else(|| Error::Invariant("ranked plan without a time estimate".into()))?;
        let mut blocks = 0;
        for p in &plan.parts {
            blocks += crate::metrics::blocks_needed(&p.kernel, &plan.part_instance(p)?);
        }
        let mut row = Self::base(plan.instance.spec(), hw, plan.instance.binding_label());
        row.candidates = Some(candidates);
        row.pool_size = Some(outcome.pool.len());
        row.plan = plan_label(plan);
        row.parts = Some(plan.parts.len());
        row.sia_score = Some(best.score);
        row.compute_s = Some(est.compute_s);
        row.memory_s = Some(est.memory_s);
        row.padding_s = Some(est.padding_s);
        row.total_s = Some(est.total_s);
        row.waves = Some(est.waves);
        row.padding_fraction = Some(plan.padding_fraction());
        row.occupancy = Some(occupancy_from_blocks::<f64>(blocks, hw.num_cores));
        Ok(row)
    }

    pub fn failed(
        spec: &OperatorSpec,
        hw: &HardwareDescriptor,
        shape: String,
        err: &Error,
    ) -> Self {
        let mut row = Self::base(spec, hw, shape);
        row.status = match err.exit_code() {
            1 => "empty-result",
            3 => "invariant-violation",
            _ => "input-error",
        }
        .into();
        row.error = err.to_string();
        row
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}

/// Textual tiled loop nest for a plan, one nest per part.
///
/// Per part: block loops `a.0` over every space axis, a staging loop `r.0`
/// per reduce axis, thread loops `a.1`, the in-tile reduce loops `r.1`, and
/// register loops `a.2`. For every axis the trip counts multiply back to the
/// covered extent of the part's slice.
pub fn emit_loopnest(plan: &ProgramPlan) -> Result<String> {
    plan.verify()?;
    let spec = plan.instance.spec();
    let axes = spec.axes();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "// {} {}: main axis {}, {} part(s)",
        spec.name(),
        plan.instance.binding_label(),
        plan.tau_name(),
        plan.parts.len()
    );
    let output = spec
        .accesses()
        .iter()
        .find(|a| a.role == AccessRole::Output)
        .expect("validated operators have an output");
    let inputs: Vec<_> = spec
        .accesses()
        .iter()
        .filter(|a| a.role == AccessRole::Input)
        .collect();
    let index = |t: &crate::workload::TensorAccess| format!("{}[{}]", t.tensor, t.axes.join(", "));

    let mut offset = 0;
    for (n, part) in plan.parts.iter().enumerate() {
        let slice = plan.part_instance(part)?;
        let k = &part.kernel;
        let _ = writeln!(
            out,
            "\n// part {} of {}: {} x {}-tile {} on {}",
            n + 1,
            plan.parts.len(),
            part.count,
            plan.tau_name(),
            k.smem_tile()[plan.tau],
            plan.tau_name()
        );
        if plan.parts.len() > 1 {
            let _ = writeln!(
                out,
                "// tau offset: {} starts at {offset}, spans {}",
                plan.tau_name(),
                slice.extent(plan.tau)
            );
        }
        let mut depth = 0;
        fn open(out: &mut String, depth: &mut usize, var: String, trips: u64, note: &str) {
            let pad = "  ".repeat(*depth);
            let _ = if note.is_empty() {
                writeln!(out, "{pad}for {var} in 0..{trips} {{")
            } else {
                writeln!(out, "{pad}for {var} in 0..{trips} {{  // {note}")
            };
            *depth += 1;
        }
        let space = spec.space_axes();
        let reduce = spec.reduce_axes();
        for (i, &a) in space.iter().enumerate() {
            let trips = slice.extent(a).div_ceil(k.smem_tile()[a]);
            let note = if i == 0 { "block tiles" } else { "" };
            open(
                &mut out,
                &mut depth,
                format!("{}.0", axes[a].name),
                trips,
                note,
            );
        }
        for (i, &a) in reduce.iter().enumerate() {
            let trips = slice.extent(a).div_ceil(k.smem_tile()[a]);
            let note = if i == 0 { "shared-memory staging" } else { "" };
            open(
                &mut out,
                &mut depth,
                format!("{}.0", axes[a].name),
                trips,
                note,
            );
        }
        let staged: Vec<String> = inputs
            .iter()
            .map(|t| {
                let dims: Vec<String> = t
                    .axes
                    .iter()
                    .map(|name| {
                        let a = spec.axis_index(name).expect("validated axis");
                        format!("{name}:{}", k.smem_tile()[a])
                    })
                    .collect();
                format!("{}[{}]", t.tensor, dims.join(", "))
            })
            .collect();
        let _ = writeln!(out, "{}// stage {}", "  ".repeat(depth), staged.join(", "));
        for (i, &a) in space.iter().enumerate() {
            let reg = k.reg_tile()[i];
            let note = if i == 0 { "thread tiles" } else { "" };
            open(
                &mut out,
                &mut depth,
                format!("{}.1", axes[a].name),
                k.smem_tile()[a] / reg,
                note,
            );
        }
        for &a in reduce {
            open(
                &mut out,
                &mut depth,
                format!("{}.1", axes[a].name),
                k.smem_tile()[a],
                "",
            );
        }
        for (i, &a) in space.iter().enumerate() {
            let note = if i == 0 { "register tiles" } else { "" };
            open(
                &mut out,
                &mut depth,
                format!("{}.2", axes[a].name),
                k.reg_tile()[i],
                note,
            );
        }
        let pad = "  ".repeat(depth);
        for (i, &a) in space.iter().enumerate() {
            let name = &axes[a].name;
            let base = if a == plan.tau && offset > 0 {
                format!("{offset} + ")
            } else {
                String::new()
            };
            let _ = writeln!(
                out,
                "{pad}// {name} = {base}{name}.0*{} + {name}.1*{} + {name}.2",
                k.smem_tile()[a],
                k.reg_tile()[i]
            );
        }
        for &a in reduce {
            let name = &axes[a].name;
            let _ = writeln!(
                out,
                "{pad}// {name} = {name}.0*{} + {name}.1",
                k.smem_tile()[a]
            );
        }
        let body: Vec<String> = inputs.iter().map(|t| index(t)).collect();
        let _ = writeln!(out, "{pad}{} += {}", index(output), body.join(" * "));
        while depth > 0 {
            depth -= 1;
            let _ = writeln!(out, "{}}}", "  ".repeat(depth));
        }
        offset += slice.extent(plan.tau);
    }
    Ok(out)
}

//! Compile-stage filtering: the ε/λ cross sweep, the register-pressure bound
//! and the space/reduce-axis pass, with a recorded relaxation fallback.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combiner::select_main_axis;
use crate::error::{Error, Result};
use crate::hw::HardwareDescriptor;
use crate::metrics::{
    block_bound, blocks_needed, compute_metrics, occupancy_from_blocks, padding_metric,
    regs_in_block, regs_within_bound, MetricBundle, MetricConfig,
};
use crate::scalar::Scalar;
use crate::ukernel::{
    capacity_error, for_each_ukernel, staged_footprint_bytes, UKernel, DEFAULT_CANDIDATE_CAP,
};
use crate::workload::{Extent, OperatorSpec, WorkloadInstance};

/// Cross-sweep bounds and strides. ε (padding) rises from `eps_min`, λ
/// (occupancy) falls from `lam_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParams<T = f64> {
    pub eps_min: T,
    pub eps_max: T,
    pub lam_min: T,
    pub lam_max: T,
    pub eps_step: T,
    pub lam_step: T,
}

impl Default for SweepParams<f64> {
    fn default() -> Self {
        SweepParams {
            eps_min: 0.50,
            eps_max: 0.95,
            lam_min: 0.90,
            lam_max: 0.95,
            eps_step: 0.01,
            lam_step: 0.001,
        }
    }
}

impl<T: Scalar> SweepParams<T> {
    // Negated comparisons so that NaN bounds are rejected.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_min < self.eps_max) {
            return Err(Error::validation("eps_min", "must be below eps_max"));
        }
        if !(self.lam_min < self.lam_max) {
            return Err(Error::validation("lam_min", "must be below lam_max"));
        }
        if !(self.eps_step > T::zero()) {
            return Err(Error::validation("eps_step", "must be positive"));
        }
        if !(self.lam_step > T::zero()) {
            return Err(Error::validation("lam_step", "must be positive"));
        }
        Ok(())
    }

    /// Thresholds (ε, λ) at zero-based step `k`.
    pub fn point(&self, k: usize) -> (T, T) {
        let kk = T::from_count(k as u64);
        (
            self.eps_min.clone() + kk.clone() * self.eps_step.clone(),
            self.lam_max.clone() - kk * self.lam_step.clone(),
        )
    }

    fn in_range(&self, k: usize) -> bool {
        let (e, l) = self.point(k);
        let tol = T::tolerance();
        !(e > self.eps_max.clone() + tol.clone() || l < self.lam_min.clone() - tol)
    }

    /// Number of sweep points before termination.
    pub fn num_steps(&self) -> usize {
        // Both sequences are monotone, so the in-range prefix is found by
        // doubling followed by bisection.
        if !self.in_range(0) {
            return 0;
        }
        let mut hi = 1;
        while self.in_range(hi) {
            hi *= 2;
        }
        let mut lo = hi / 2;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.in_range(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Widened copy used by the empty-set fallback: every round lowers
    /// `eps_min`, `lam_min` and the λ start by one ε stride, floored at 0.
    pub fn widened(&self, rounds: u32) -> Self {
        let shift = T::from_count(u64::from(rounds)) * self.eps_step.clone();
        let floor = |v: &T| T::max_of(v.clone() - shift.clone(), T::zero());
        SweepParams {
            eps_min: floor(&self.eps_min),
            eps_max: self.eps_max.clone(),
            lam_min: floor(&self.lam_min),
            lam_max: floor(&self.lam_max),
            eps_step: self.eps_step.clone(),
            lam_step: self.lam_step.clone(),
        }
    }

    /// Rounds after which the sweep starts at (0, 0).
    pub fn max_widen_rounds(&self) -> u32 {
        let mut r = 0u32;
        loop {
            let w = self.widened(r);
            if w.eps_min.is_zero() && w.lam_max.is_zero() {
                return r;
            }
            r += 1;
        }
    }
}

impl SweepParams<f64> {
    /// Ratio Δε : Δλ (10 for the defaults).
    pub fn stride_ratio(&self) -> f64 {
        self.eps_step / self.lam_step
    }
}

/// Zero-based sweep step at which a candidate with (`pad`, `occ`) is first
/// retained, if any.
///
/// ε rises and λ falls along the sweep, so the first step whose λ admits
/// `occ` is the only one worth testing against `pad`.
pub fn first_retained_step<T: Scalar>(pad: &T, occ: &T, sweep: &SweepParams<T>) -> Option<usize> {
    let steps = sweep.num_steps();
    let tol = T::tolerance();
    let admits_occ = |k: usize| sweep.point(k).1 <= occ.clone() + tol.clone();
    if steps == 0 {
        return None;
    }
    // Bisect for the smallest k in [0, steps) with λ_k ≤ occ.
    let (mut lo, mut hi) = (0usize, steps);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if admits_occ(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    if lo == steps {
        return None;
    }
    let (eps, _) = sweep.point(lo);
    (eps <= pad.clone() + tol).then_some(lo)
}

fn overflows(m: &MetricBundle<f64>, hw: &HardwareDescriptor) -> bool {
    m.smem_bytes > hw.smem_per_core_bytes
}

fn metrics_of(k: &UKernel) -> &MetricBundle<f64> {
    k.metrics
        .as_ref()
        .expect("filter stages require cached metrics")
}

/// Fills cached metrics for every candidate.
pub fn attach_metrics(
    kernels: &mut [UKernel],
    instance: &WorkloadInstance,
    hw: &HardwareDescriptor,
    config: &MetricConfig,
) -> Result<()> {
    for k in kernels.iter_mut() {
        let m = compute_metrics(k, instance, hw, config)?;
        k.metrics = Some(m);
    }
    Ok(())
}

/// K.Cross: candidates that fit shared memory and meet some sweep point.
pub fn cross_pick(
    candidates: &[UKernel],
    hw: &HardwareDescriptor,
    sweep: &SweepParams,
) -> Vec<UKernel> {
    candidates
        .iter()
        .filter(|k| {
            let m = metrics_of(k);
            !overflows(m, hw) && first_retained_step(&m.pad, &m.occ, sweep).is_some()
        })
        .cloned()
        .collect()
}

/// K.Filter: candidates whose block registers fit `regs_per_core / bound`.
pub fn set_bound(kcross: &[UKernel]) -> Vec<UKernel> {
    kcross
        .iter()
        .filter(|k| metrics_of(k).in_bound)
        .cloned()
        .collect()
}

/// Candidates that both saturate the device and are compute intensive.
pub fn multi_axis_filter(kfilter: &[UKernel]) -> Vec<UKernel> {
    kfilter
        .iter()
        .filter(|k| {
            let m = metrics_of(k);
            m.saturated && m.intensive
        })
        .cloned()
        .collect()
}

/// Tuning parameters shared by every shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneParams {
    pub sweep: SweepParams,
    pub metrics: MetricConfig,
    pub candidate_cap: usize,
    /// Ceiling on the final per-shape set; see [`apply_ceiling`].
    pub max_final: usize,
}

/// Default ceiling on a shape's final candidate set.
pub const DEFAULT_MAX_FINAL: usize = 256;

impl Default for TuneParams {
    fn default() -> Self {
        TuneParams {
            sweep: SweepParams::default(),
            metrics: MetricConfig::default(),
            candidate_cap: DEFAULT_CANDIDATE_CAP,
            max_final: DEFAULT_MAX_FINAL,
        }
    }
}

impl TuneParams {
    pub fn validate(&self) -> Result<()> {
        self.sweep.validate()?;
        if !self.metrics.psi.is_finite() || self.metrics.psi < 0.0 {
            return Err(Error::validation("psi", "must be finite and non-negative"));
        }
        if self.candidate_cap == 0 {
            return Err(Error::validation("candidate_cap", "must be positive"));
        }
        if self.max_final == 0 {
            return Err(Error::validation("max_final", "must be positive"));
        }
        Ok(())
    }
}

/// Which relaxations produced the final set, plus stage sizes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterMeta {
    pub align_count: usize,
    pub truncated: bool,
    pub cross_count: usize,
    pub filter_count: usize,
    pub final_count: usize,
    /// Survivors dropped by the final-set ceiling.
    pub ceiling_dropped: usize,
    /// Sweep widening rounds applied before K.Filter became non-empty.
    pub widen_rounds: u32,
    pub dropped_intensity: bool,
    pub dropped_saturation: bool,
}

/// Compile-stage candidates for one concrete shape.
#[derive(Clone, Debug)]
pub struct ShapeCandidates {
    pub instance: WorkloadInstance,
    pub kernels: Vec<UKernel>,
    pub meta: FilterMeta,
}

/// Relaxation tier of a K.Filter member: 0 passes both axis checks,
/// 1 only saturation, 2 neither.
fn tier(m: &MetricBundle<f64>) -> u8 {
    match (m.saturated, m.intensive) {
        (true, true) => 0,
        (true, false) => 1,
        _ => 2,
    }
}

/// Keeps only members of the best tier seen so far, in arrival order.
#[derive(Default)]
struct TieredSet {
    tier: Option<u8>,
    kernels: Vec<UKernel>,
}

impl TieredSet {
    fn offer(&mut self, k: &UKernel, t: u8) {
        match self.tier {
            Some(cur) if t > cur => {}
            Some(cur) if t == cur => self.kernels.push(k.clone()),
            _ => {
                self.tier = Some(t);
                self.kernels.clear();
                self.kernels.push(k.clone());
            }
        }
    }
}

/// Smallest widening round at which the sweep retains (`pad`, `occ`).
fn widen_rounds_needed(pad: f64, occ: f64, sweep: &SweepParams, max_rounds: u32) -> Option<u32> {
    let ok = |r: u32| first_retained_step(&pad, &occ, &sweep.widened(r)).is_some();
    if !ok(max_rounds) {
        return None;
    }
    let (mut lo, mut hi) = (0u32, max_rounds);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(lo)
}

/// Keeps the `ceiling` best kernels of a final set, returned in canonical
/// order together with the number dropped.
///
/// Preference order: kernels whose main-axis tile divides the main-axis
/// extent (so single-kernel programs exist), then earlier retention step on
/// `sweep`, then higher CMR, Pad and Occ, then canonical order. The first
/// kernel of each distinct metric tuple is taken before any kernel repeating
/// a tuple already kept, so near-identical variants do not crowd out the rest.
pub fn apply_ceiling(
    kernels: Vec<UKernel>,
    instance: &WorkloadInstance,
    sweep: &SweepParams,
    ceiling: usize,
) -> (Vec<UKernel>, usize) {
    if kernels.len() <= ceiling {
        return (kernels, 0);
    }
    let dropped = kernels.len() - ceiling;
    let tau = select_main_axis(instance);
    let h = instance.extent(tau);
    let mut keyed: Vec<(bool, usize, UKernel)> = kernels
        .into_iter()
        .map(|k| {
            let m = metrics_of(&k);
            let step = first_retained_step(&m.pad, &m.occ, sweep).unwrap_or(usize::MAX);
            (!h.is_multiple_of(k.smem_tile()[tau]), step, k)
        })
        .collect();
    keyed.sort_by(|(da, sa, a), (db, sb, b)| {
        let (ma, mb) = (metrics_of(a), metrics_of(b));
        da.cmp(db)
            .then(sa.cmp(sb))
            .then(mb.cmr.total_cmp(&ma.cmr))
            .then(mb.pad.total_cmp(&ma.pad))
            .then(mb.occ.total_cmp(&ma.occ))
            .then_with(|| a.canonical_cmp(b))
    });
    let mut seen = std::collections::BTreeSet::new();
    let (firsts, repeats): (Vec<_>, Vec<_>) = keyed.into_iter().partition(|(d, step, k)| {
        let m = metrics_of(k);
        seen.insert((*d, *step, m.cmr.to_bits(), m.pad.to_bits(), m.occ.to_bits()))
    });
    let mut kept: Vec<UKernel> = firsts
        .into_iter()
        .chain(repeats)
        .take(ceiling)
        .map(|(_, _, k)| k)
        .collect();
    kept.sort_by(|a, b| a.canonical_cmp(b));
    (kept, dropped)
}

fn finish(
    instance: WorkloadInstance,
    mut meta: FilterMeta,
    set: TieredSet,
    widen_rounds: u32,
    params: &TuneParams,
) -> ShapeCandidates {
    let t = set.tier.expect("finish is called with a non-empty set");
    meta.widen_rounds = widen_rounds;
    meta.dropped_intensity = t >= 1;
    meta.dropped_saturation = t >= 2;
    let sweep = params.sweep.widened(widen_rounds);
    let (kernels, dropped) = apply_ceiling(set.kernels, &instance, &sweep, params.max_final);
    meta.ceiling_dropped = dropped;
    meta.final_count = kernels.len();
    ShapeCandidates {
        instance,
        kernels,
        meta,
    }
}

/// Enumerate → metrics → cross sweep → register bound → axis pass for one
/// shape, streaming over K.Align.
///
/// If a stage leaves nothing, the axis checks are dropped (reduce-axis
/// intensity first, then saturation); if K.Filter itself is empty the sweep
/// is widened round by round until some in-bound candidate is retained.
pub fn compile_shape(
    instance: &WorkloadInstance,
    hw: &HardwareDescriptor,
    params: &TuneParams,
) -> Result<ShapeCandidates> {
    let sweep = &params.sweep;
    let max_rounds = sweep.max_widen_rounds();
    let mut meta = FilterMeta::default();
    let mut round0 = TieredSet::default();
    // In-bound candidates the unwidened sweep rejects, at their minimal round.
    let mut widened = TieredSet::default();
    let mut widened_round = u32::MAX;
    let mut best_regs: Option<(u64, u64)> = None;
    let mut failure: Option<Error> = None;

    let spec = instance.spec();
    let stats = for_each_ukernel(instance, hw, params.candidate_cap, |k| {
        if failure.is_some() {
            return;
        }
        // Cheap metrics first; the full bundle (memory latency, CMR) is
        // computed only for kernels that can enter a tiered set.
        if staged_footprint_bytes(spec, k.smem_tile()) > hw.smem_per_core_bytes {
            return;
        }
        let blocks = blocks_needed(k, instance);
        let pad: f64 = padding_metric(k, instance);
        let occ: f64 = occupancy_from_blocks(blocks, hw.num_cores);
        let regs = regs_in_block(k, spec, params.metrics.rest_regs);
        let bound = block_bound(blocks, hw);
        let slack = (regs, hw.regs_per_core / bound);
        if best_regs.is_none_or(|(r, l)| slack.0 * l < r * slack.1) {
            best_regs = Some(slack);
        }
        let retained = first_retained_step(&pad, &occ, sweep).is_some();
        if retained {
            meta.cross_count += 1;
        }
        if !regs_within_bound(regs, hw, bound) {
            return;
        }
        if retained {
            meta.filter_count += 1;
        }
        let saturated = blocks >= hw.active_blocks();
        let target = if retained {
            &mut round0
        } else {
            if round0.tier.is_some() {
                return;
            }
            match widen_rounds_needed(pad, occ, sweep, max_rounds) {
                Some(r) if r < widened_round => {
                    widened_round = r;
                    widened = TieredSet::default();
                }
                Some(r) if r == widened_round => {}
                _ => return,
            }
            &mut widened
        };
        // An unsaturated kernel is tier 2 and loses to any current tier.
        if !saturated && target.tier.is_some_and(|t| t < 2) {
            return;
        }
        match compute_metrics::<f64>(k, instance, hw, &params.metrics) {
            Ok(m) => {
                let t = tier(&m);
                target.offer(&k.clone().with_metrics(m), t);
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    meta.align_count = stats.emitted;
    meta.truncated = stats.truncated;
    if stats.emitted == 0 {
        return Err(capacity_error(instance, hw));
    }
    if round0.tier.is_some() {
        return Ok(finish(instance.clone(), meta, round0, 0, params));
    }
    if widened.tier.is_some() {
        return Ok(finish(
            instance.clone(),
            meta,
            widened,
            widened_round,
            params,
        ));
    }
    let constraint = match best_regs {
        Some((regs, limit)) => format!(
            "register bound rejects every candidate (best block needs {regs} registers, limit {limit})"
        ),
        None => "shared-memory capacity rejects every candidate".to_string(),
    };
    Err(Error::EmptyCandidates { constraint })
}

/// Materialized equivalent of [`compile_shape`] built from the set-level
/// stage functions. Quadratic in memory; meant for tests and small shapes.
pub fn compile_shape_staged(
    instance: &WorkloadInstance,
    hw: &HardwareDescriptor,
    params: &TuneParams,
) -> Result<ShapeCandidates> {
    let align = crate::ukernel::enumerate_ukernels(instance, hw, params.candidate_cap)?;
    let mut kernels = align.kernels;
    attach_metrics(&mut kernels, instance, hw, &params.metrics)?;
    let kcross = cross_pick(&kernels, hw, &params.sweep);
    let kfilter = set_bound(&kcross);
    let mut meta = FilterMeta {
        align_count: kernels.len(),
        truncated: align.truncated,
        cross_count: kcross.len(),
        filter_count: kfilter.len(),
        ..FilterMeta::default()
    };
    let mut rounds = 0;
    let mut filtered = kfilter;
    if filtered.is_empty() {
        let max_rounds = params.sweep.max_widen_rounds();
        while rounds < max_rounds && filtered.is_empty() {
            rounds += 1;
            filtered = set_bound(&cross_pick(&kernels, hw, &params.sweep.widened(rounds)));
        }
        if filtered.is_empty() {
            return Err(Error::EmptyCandidates {
                constraint: "register bound rejects every candidate".into(),
            });
        }
    }
    let full = multi_axis_filter(&filtered);
    let sat: Vec<UKernel> = filtered
        .iter()
        .filter(|k| metrics_of(k).saturated)
        .cloned()
        .collect();
    let (chosen, di, ds) = if !full.is_empty() {
        (full, false, false)
    } else if !sat.is_empty() {
        (sat, true, false)
    } else {
        (filtered, true, true)
    };
    meta.widen_rounds = rounds;
    meta.dropped_intensity = di;
    meta.dropped_saturation = ds;
    let (chosen, dropped) = apply_ceiling(
        chosen,
        instance,
        &params.sweep.widened(rounds),
        params.max_final,
    );
    meta.ceiling_dropped = dropped;
    meta.final_count = chosen.len();
    Ok(ShapeCandidates {
        instance: instance.clone(),
        kernels: chosen,
        meta,
    })
}

/// Shapes to compile: every binding in the declared ranges, optionally
/// thinned by a stride, or an explicit list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ShapeSelection {
    Declared { stride: u64 },
    Ranges(BTreeMap<String, (u64, u64)>),
    Explicit(Vec<BTreeMap<String, u64>>),
}

/// Concrete bindings for a selection, in lexicographic order of the dynamic
/// axes (declaration order).
pub fn shape_bindings(
    spec: &OperatorSpec,
    selection: &ShapeSelection,
) -> Result<Vec<BTreeMap<String, u64>>> {
    let dynamic: Vec<(String, u64, u64)> = spec
        .dynamic_axes()
        .map(|a| match a.extent {
            Extent::Dynamic { lo, hi } => (a.name.clone(), lo, hi),
            Extent::Fixed(_) => unreachable!("dynamic_axes yields dynamic axes"),
        })
        .collect();
    let ranges: Vec<(String, Vec<u64>)> = match selection {
        ShapeSelection::Explicit(list) => return Ok(list.clone()),
        ShapeSelection::Declared { stride } => {
            let stride = (*stride).max(1);
            dynamic
                .iter()
                .map(|(n, lo, hi)| (n.clone(), (*lo..=*hi).step_by(stride as usize).collect()))
                .collect()
        }
        ShapeSelection::Ranges(r) => {
            for name in r.keys() {
                if !dynamic.iter().any(|(n, _, _)| n == name) {
                    return Err(Error::Binding {
                        axis: name.clone(),
                        reason: "not a dynamic axis".into(),
                    });
                }
            }
            dynamic
                .iter()
                .map(|(n, lo, hi)| {
                    let (a, b) = r.get(n).copied().unwrap_or((*lo, *hi));
                    (n.clone(), (a..=b).collect())
                })
                .collect()
        }
    };
    let mut out = vec![BTreeMap::new()];
    for (name, values) in &ranges {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |&v| {
                    let mut b = prefix.clone();
                    b.insert(name.clone(), v);
                    b
                })
            })
            .collect();
    }
    Ok(out)
}

/// Runs [`compile_shape`] for every selected binding. Shapes are processed
/// in parallel; results keep selection order.
pub fn compile_stage(
    spec: &Arc<OperatorSpec>,
    hw: &HardwareDescriptor,
    params: &TuneParams,
    selection: &ShapeSelection,
) -> Result<Vec<ShapeCandidates>> {
    hw.validate()?;
    params.validate()?;
    let bindings = shape_bindings(spec, selection)?;
    bindings
        .par_iter()
        .map(|b| {
            let instance = spec.bind(b)?;
            compile_shape(&instance, hw, params)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::exact;
    use crate::workload::dense_instance;
    use num_rational::BigRational;

    fn exact_sweep() -> SweepParams<BigRational> {
        SweepParams {
            eps_min: exact(50, 100),
            eps_max: exact(95, 100),
            lam_min: exact(90, 100),
            lam_max: exact(95, 100),
            eps_step: exact(1, 100),
            lam_step: exact(1, 1000),
        }
    }

    #[test]
    fn default_sweep_shape() {
        let s = SweepParams::default();
        assert!((s.stride_ratio() - 10.0).abs() < 1e-9);
        assert_eq!(s.num_steps(), 46);
        assert_eq!(exact_sweep().num_steps(), 46);
    }

    #[test]
    fn dominating_candidate_retained_at_first_point() {
        let s = SweepParams::default();
        assert_eq!(first_retained_step(&0.96, &0.95, &s), Some(0));
    }

    #[test]
    fn low_padding_never_retained() {
        let s = SweepParams::default();
        assert_eq!(first_retained_step(&0.49, &1.0, &s), None);
        assert_eq!(
            first_retained_step(&exact(49, 100), &exact(1, 1), &exact_sweep()),
            None
        );
    }

    #[test]
    fn tradeoff_candidate_retained_at_tenth_point() {
        // Zero-based index 9 is the tenth sweep point, (0.59, 0.941).
        let s = SweepParams::default();
        assert_eq!(first_retained_step(&0.60, &0.941, &s), Some(9));
        assert_eq!(
            first_retained_step(&exact(60, 100), &exact(941, 1000), &exact_sweep()),
            Some(9)
        );
        assert_eq!(exact_sweep().point(9), (exact(59, 100), exact(941, 1000)));
    }

    #[test]
    fn occupancy_below_sweep_floor_rejected() {
        let s = SweepParams::default();
        // Last in-range point is (0.95, 0.905).
        assert_eq!(first_retained_step(&1.0, &0.905, &s), Some(45));
        assert_eq!(first_retained_step(&1.0, &0.904, &s), None);
    }

    #[test]
    fn widening_reaches_origin() {
        let s = SweepParams::default();
        let r = s.max_widen_rounds();
        assert_eq!(r, 95);
        let w = s.widened(r);
        assert_eq!(first_retained_step(&0.01, &0.0125, &w), Some(0));
        assert_eq!(s.widened(0), s);
    }

    #[test]
    fn sweep_validation() {
        let s = SweepParams {
            eps_step: 0.0,
            ..SweepParams::default()
        };
        assert!(s.validate().is_err());
        let s = SweepParams {
            lam_min: 0.99,
            ..SweepParams::default()
        };
        assert!(s.validate().is_err());
        let s = SweepParams {
            lam_step: f64::NAN,
            ..SweepParams::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn streaming_matches_staged_pipeline() {
        let hw = HardwareDescriptor::v100_like();
        let params = TuneParams::default();
        for (i, j, k) in [(16, 256, 64), (53, 128, 32), (1, 64, 16), (160, 64, 16)] {
            let inst = dense_instance(i, j, k);
            let a = compile_shape(&inst, &hw, &params).unwrap();
            let b = compile_shape_staged(&inst, &hw, &params).unwrap();
            assert_eq!(a.meta, b.meta, "shape {i}x{j}x{k}");
            assert_eq!(a.kernels, b.kernels, "shape {i}x{j}x{k}");
        }
    }

    #[test]
    fn shape_bindings_cover_ranges() {
        let spec = crate::workload::dense(
            Extent::Dynamic { lo: 1, hi: 128 },
            Extent::Fixed(2304),
            Extent::Fixed(768),
        );
        let all = shape_bindings(&spec, &ShapeSelection::Declared { stride: 1 }).unwrap();
        assert_eq!(all.len(), 128);
        let thin = shape_bindings(&spec, &ShapeSelection::Declared { stride: 16 }).unwrap();
        assert_eq!(thin.len(), 8);
        let mut r = BTreeMap::new();
        r.insert("i".to_string(), (5, 9));
        assert_eq!(
            shape_bindings(&spec, &ShapeSelection::Ranges(r))
                .unwrap()
                .len(),
            5
        );
        let mut bad = BTreeMap::new();
        bad.insert("j".to_string(), (5, 9));
        assert!(shape_bindings(&spec, &ShapeSelection::Ranges(bad)).is_err());
    }
}

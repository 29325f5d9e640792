//! Analytical execution-time model used as the desk-scale oracle for
//! ranking. Time splits into compute, memory and padding; compute and memory
//! overlap, and compute pays for idle block slots in the last wave.

use serde::{Deserialize, Serialize};

use crate::combiner::ProgramPlan;
use crate::error::Result;
use crate::hw::HardwareDescriptor;
use crate::metrics::{blocks_needed, covered_output_points, memory_latency};
use crate::scalar::Scalar;

/// Bumped whenever the formulas below change.
pub const PERF_MODEL_VERSION: &str = "overlap-wave-1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerfModelConfig {
    /// Extra seconds per padded output element (boundary-check cost).
    pub padding_surcharge_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeBreakdown<T> {
    pub compute_s: T,
    pub memory_s: T,
    /// Share of `compute_s` spent on padded points.
    pub padding_s: T,
    pub total_s: T,
    pub waves: u64,
}

pub type TimeEstimate = TimeBreakdown<f64>;

/// Per part: covered FLOPs at peak rate and the memory latency of its slice.
/// Blocks of all parts share waves of `num_cores * active_blocks_per_core`
/// slots; compute is scaled by slots-per-block of the final wave layout.
pub fn estimate_time_with<T: Scalar>(
    plan: &ProgramPlan,
    hw: &HardwareDescriptor,
    config: &PerfModelConfig,
) -> Result<TimeBreakdown<T>> {
    let spec = plan.instance.spec();
    let fpp = spec.flops_per_point();
    let reduce = plan.instance.reduce_points();
    let surcharge = T::from_f64(config.padding_surcharge_s).unwrap_or_else(T::zero);

    let mut blocks = 0;
    let mut compute = Vec::with_capacity(plan.parts.len());
    let mut memory = Vec::with_capacity(plan.parts.len());
    let mut padding_s = T::zero();
    for part in &plan.parts {
        let slice = plan.part_instance(part)?;
        let covered = covered_output_points(&part.kernel, &slice);
        let padded = covered - slice.output_points();
        blocks += blocks_needed(&part.kernel, &slice);
        let extra = T::from_count(padded) * surcharge.clone();
        compute.push(T::ratio(fpp * covered * reduce, hw.peak_flops) + extra.clone());
        padding_s = padding_s + T::ratio(fpp * padded * reduce, hw.peak_flops) + extra;
        memory.push(memory_latency::<T>(&part.kernel, &slice, hw));
    }
    let slots = hw.active_blocks();
    let waves = blocks.div_ceil(slots);
    let idle_scale = T::ratio(waves * slots, blocks);
    let mut total_s = T::zero();
    for (c, m) in compute.iter().zip(&memory) {
        total_s = total_s + T::max_of(c.clone() * idle_scale.clone(), m.clone());
    }
    Ok(TimeBreakdown {
        compute_s: compute.into_iter().fold(T::zero(), |a, b| a + b),
        memory_s: memory.into_iter().fold(T::zero(), |a, b| a + b),
        padding_s,
        total_s,
        waves,
    })
}

pub fn estimate_time(plan: &ProgramPlan, hw: &HardwareDescriptor) -> Result<TimeEstimate> {
    estimate_time_with(plan, hw, &PerfModelConfig::default())
}

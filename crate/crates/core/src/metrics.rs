//! Analytical metrics of a uKernel on a workload instance: padding,
//! occupancy, register bound, space saturation, memory latency and
//! compute-to-memory ratio.
//!
//! The ratio-valued metrics are generic over [`Scalar`] so the same formulas
//! run in `f64` for tuning and in exact rationals for oracles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hw::HardwareDescriptor;
use crate::scalar::Scalar;
use crate::ukernel::{staged_footprint_bytes, UKernel};
use crate::workload::{covered_extent, data_volumes, flops, OperatorSpec, WorkloadInstance};

pub const DEFAULT_REST_REGS: u64 = 24;
pub const DEFAULT_PSI: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Per-thread registers outside the register tile.
    pub rest_regs: u64,
    /// Compute-to-memory threshold ψ.
    pub psi: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            rest_regs: DEFAULT_REST_REGS,
            psi: DEFAULT_PSI,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricBundle<T> {
    /// K.pad: useful fraction of the covered output.
    pub pad: T,
    /// K.occ: blocks over whole-wave blocks.
    pub occ: T,
    pub regs_in_block: u64,
    /// min(active blocks per core demanded by the workload, ζ).
    pub block_bound: u64,
    /// Register bound verdict under `block_bound`.
    pub in_bound: bool,
    pub saturated: bool,
    /// compute_eff: compute time over memory latency.
    pub cmr: T,
    /// Verdict `cmr >= psi`.
    pub intensive: bool,
    pub mem_latency_s: T,
    pub blocks_needed: u64,
    pub smem_bytes: u64,
}

/// Output points covered by the tile grid.
pub fn covered_output_points(kernel: &UKernel, instance: &WorkloadInstance) -> u64 {
    let smem = kernel.smem_tile();
    instance
        .spec()
        .space_axes()
        .iter()
        .map(|&a| covered_extent(instance.extent(a), smem[a]))
        .product()
}

/// Number of uKernels (blocks) tiling the covered output space.
pub fn blocks_needed(kernel: &UKernel, instance: &WorkloadInstance) -> u64 {
    let smem = kernel.smem_tile();
    instance
        .spec()
        .space_axes()
        .iter()
        .map(|&a| instance.extent(a).div_ceil(smem[a]))
        .product()
}

/// K.pad = base / (pad + base) with both measured in output bytes.
pub fn padding_metric<T: Scalar>(kernel: &UKernel, instance: &WorkloadInstance) -> T {
    let eb = instance.spec().elem_bytes();
    let base = instance.output_points() * eb;
    let padded = covered_output_points(kernel, instance) * eb - base;
    T::ratio(base, padded + base)
}

/// Smallest multiple of `m` that is at least `x`.
pub fn ceil_by(x: u64, m: u64) -> u64 {
    x.div_ceil(m) * m
}

/// n / ceil_by(n, cores).
pub fn occupancy_from_blocks<T: Scalar>(blocks: u64, num_cores: u64) -> T {
    T::ratio(blocks, ceil_by(blocks, num_cores))
}

pub fn occupancy_metric<T: Scalar>(
    kernel: &UKernel,
    instance: &WorkloadInstance,
    hw: &HardwareDescriptor,
) -> T {
    occupancy_from_blocks(blocks_needed(kernel, instance), hw.num_cores)
}

/// Registers of one block: (sum of per-thread register-tile extents +
/// rest_regs) times threads per block.
pub fn regs_in_block(kernel: &UKernel, spec: &OperatorSpec, rest_regs: u64) -> u64 {
    let per_thread: u64 = kernel.reg_tile().iter().sum::<u64>() + rest_regs;
    per_thread * kernel.threads(spec)
}

/// min(⌈blocks / cores⌉, ζ).
pub fn block_bound(blocks_needed: u64, hw: &HardwareDescriptor) -> u64 {
    blocks_needed
        .div_ceil(hw.num_cores)
        .min(hw.default_active_blocks)
}

/// regs ≤ REGS_PER_SM / bound, evaluated without rounding.
pub fn regs_within_bound(regs: u64, hw: &HardwareDescriptor, bound: u64) -> bool {
    u128::from(regs) * u128::from(bound) <= u128::from(hw.regs_per_core)
}

/// Blocks covering the output reach the device's active-block count.
pub fn space_saturation(
    kernel: &UKernel,
    instance: &WorkloadInstance,
    hw: &HardwareDescriptor,
) -> bool {
    blocks_needed(kernel, instance) >= hw.active_blocks()
}

/// max((R + W) / bw_G, (transW + transR) / bw_S), seconds.
pub fn memory_latency<T: Scalar>(
    kernel: &UKernel,
    instance: &WorkloadInstance,
    hw: &HardwareDescriptor,
) -> T {
    let v = data_volumes(instance, kernel);
    let global = T::ratio(v.read + v.write, hw.global_bw_bytes_per_s);
    let shared = T::ratio(v.trans_write + v.trans_read, hw.shared_bw_bytes_per_s);
    T::max_of(global, shared)
}

/// Compute-to-memory ratio and its verdict against ψ.
pub fn compute_intensity<T: Scalar>(
    kernel: &UKernel,
    instance: &WorkloadInstance,
    hw: &HardwareDescriptor,
    psi: &T,
) -> Result<(T, bool)> {
    let mem = memory_latency::<T>(kernel, instance, hw);
    cmr_from_latency(instance, hw, mem, psi)
}

fn cmr_from_latency<T: Scalar>(
    instance: &WorkloadInstance,
    hw: &HardwareDescriptor,
    mem: T,
    psi: &T,
) -> Result<(T, bool)> {
    if mem.is_zero() {
        return Err(Error::EmptyWorkload);
    }
    let cmr = T::ratio(flops(instance), hw.peak_flops) / mem;
    let verdict = cmr >= *psi;
    Ok((cmr, verdict))
}

/// Every metric for one candidate.
pub fn compute_metrics<T: Scalar>(
    kernel: &UKernel,
    instance: &WorkloadInstance,
    hw: &HardwareDescriptor,
    config: &MetricConfig,
) -> Result<MetricBundle<T>> {
    let spec = instance.spec();
    let blocks = blocks_needed(kernel, instance);
    let regs = regs_in_block(kernel, spec, config.rest_regs);
    let bound = block_bound(blocks, hw);
    let mem = memory_latency::<T>(kernel, instance, hw);
    let psi =
        T::from_f64(config.psi).ok_or_else(|| Error::validation("psi", "not representable"))?;
    let (cmr, intensive) = cmr_from_latency(instance, hw, mem.clone(), &psi)?;
    Ok(MetricBundle {
        pad: padding_metric(kernel, instance),
        occ: occupancy_from_blocks(blocks, hw.num_cores),
        regs_in_block: regs,
        block_bound: bound,
        in_bound: regs_within_bound(regs, hw, bound),
        saturated: blocks >= hw.active_blocks(),
        cmr,
        intensive,
        mem_latency_s: mem,
        blocks_needed: blocks,
        smem_bytes: staged_footprint_bytes(spec, kernel.smem_tile()),
    })
}

//! Runtime stage for one concrete shape: build the pool, rank it, attach
//! time estimates to the selected plans.

use crate::combiner::{build_programs, ProgramPlan};
use crate::error::Result;
use crate::hw::HardwareDescriptor;
use crate::perf::estimate_time;
use crate::sia::{rank_programs, RankedPlan, SiaCoeffs, SiaMode};
use crate::ukernel::UKernel;
use crate::workload::WorkloadInstance;

#[derive(Clone, Debug)]
pub struct PlanOutcome {
    pub pool: Vec<ProgramPlan>,
    pub ranked: Vec<RankedPlan>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanOptions {
    pub coeffs: SiaCoeffs,
    pub top_k: usize,
    pub mode: SiaMode,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            coeffs: SiaCoeffs::default(),
            top_k: crate::sia::DEFAULT_TOP_K,
            mode: SiaMode::Raw,
        }
    }
}

pub fn plan_shape(
    candidates: &[UKernel],
    instance: &WorkloadInstance,
    hw: &HardwareDescriptor,
    options: &PlanOptions,
) -> Result<PlanOutcome> {
    let pool = build_programs(candidates, instance)?;
    let mut ranked = rank_programs(&pool, &options.coeffs, options.top_k, options.mode)?;
    for r in &mut ranked {
        r.plan.est = Some(estimate_time(&r.plan, hw)?);
    }
    Ok(PlanOutcome { pool, ranked })
}

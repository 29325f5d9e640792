//! Dynamic-shape tensor-program tuning by micro-kernel composition.
//!
//! The compile stage enumerates aligned two-level tile kernels for each
//! shape of interest and filters them by padding, occupancy, register use,
//! saturation and compute intensity. At run time a concrete shape is covered
//! along its main axis by one or two kernels, and the resulting program pool
//! is ranked by a weighted score whose top entries are the candidates worth
//! measuring.
//!
//! The numeric core is generic over [`Scalar`], so every metric can be
//! computed in `f32`, `f64` or exactly with [`BigRational`].

pub mod combiner;
pub mod error;
pub mod filter;
pub mod hw;
pub mod metrics;
pub mod oracle;
pub mod perf;
pub mod report;
pub mod runtime;
pub mod scalar;
pub mod sia;
pub mod ukernel;
pub mod workload;

pub use num_rational::BigRational;

pub use combiner::{
    build_programs, combin_search, select_main_axis, Combination, PlanPart, ProgramPlan,
};
pub use error::{Error, Result};
pub use filter::{
    compile_shape, compile_stage, multi_axis_filter, FilterMeta, ShapeCandidates, ShapeSelection,
    SweepParams, TuneParams,
};
pub use hw::HardwareDescriptor;
pub use metrics::{compute_metrics, MetricBundle, MetricConfig};
pub use perf::{
    estimate_time, estimate_time_with, PerfModelConfig, TimeBreakdown, TimeEstimate,
    PERF_MODEL_VERSION,
};
pub use runtime::{plan_shape, PlanOptions, PlanOutcome};
pub use scalar::{exact, Scalar};
pub use sia::{rank_programs, rank_programs_with, sia_score, RankedPlan, SiaCoeffs, SiaMode};
pub use ukernel::{enumerate_ukernels, for_each_ukernel, UKernel};
pub use workload::{OperatorSpec, WorkloadInstance};

/// Version string embedded in every emitted file.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Metrics = MetricBundle<f64>;
pub type ExactMetrics = MetricBundle<BigRational>;
pub type ExactTimeEstimate = TimeBreakdown<BigRational>;
pub type ExactSweep = SweepParams<BigRational>;

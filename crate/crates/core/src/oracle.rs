//! Brute-force oracles: ground truth for the combination search and the
//! sweep, and a ranking check against the analytical time model.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::combiner::{combin_search, Combination, ProgramPlan};
use crate::error::{Error, Result};
use crate::filter::SweepParams;
use crate::hw::HardwareDescriptor;
use crate::perf::estimate_time;
use crate::scalar::Scalar;
use crate::sia::{rank_programs, SiaCoeffs, SiaMode};
use crate::ukernel::UKernel;
use crate::workload::{dense, Extent, WorkloadInstance};

/// Every (a, n1), (b, n2) with a ≠ b and n1·a + n2·b = h, plus singletons,
/// by exhaustive enumeration of both counts.
pub fn brute_force_combinations(tiles: &[u64], h: u64) -> BTreeSet<Combination> {
    let mut out = BTreeSet::new();
    for &a in tiles {
        for n in 1..=h {
            if a * n == h {
                out.insert(Combination::Single { tile: a, count: n });
            }
        }
        for &b in tiles {
            if a == b {
                continue;
            }
            for n1 in 1..=h / a {
                for n2 in 1..=h / b {
                    if n1 * a + n2 * b == h {
                        out.insert(Combination::pair((a, n1), (b, n2)));
                    }
                }
            }
        }
    }
    out
}

/// Literal sweep walk: step from (eps_min, lam_max) until a bound is
/// crossed, returning the first zero-based step that retains the candidate.
pub fn simulate_sweep<T: Scalar>(pad: &T, occ: &T, sweep: &SweepParams<T>) -> Option<usize> {
    let tol = T::tolerance();
    let mut eps = sweep.eps_min.clone();
    let mut lam = sweep.lam_max.clone();
    let mut step = 0;
    loop {
        if eps > sweep.eps_max.clone() + tol.clone() || lam < sweep.lam_min.clone() - tol.clone() {
            return None;
        }
        if *pad >= eps.clone() - tol.clone() && *occ >= lam.clone() - tol.clone() {
            return Some(step);
        }
        step += 1;
        // Recompute from the start point rather than accumulating strides.
        let k = T::from_count(step as u64);
        eps = sweep.eps_min.clone() + k.clone() * sweep.eps_step.clone();
        lam = sweep.lam_max.clone() - k * sweep.lam_step.clone();
    }
}

/// Outcome of comparing SIA's picks with the model-best plan of a pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankCheckReport {
    pub pool_size: usize,
    pub model_best_s: f64,
    pub sia_top1_s: f64,
    /// Fastest modeled plan among the SIA top-k.
    pub sia_topk_best_s: f64,
    pub top1_gap: f64,
    pub topk_gap: f64,
    pub top1_within: bool,
    pub topk_within: bool,
    pub tolerance: f64,
}

/// Estimates every plan of the pool and checks whether SIA's top-1 / top-k
/// contain a plan within `tolerance` (relative) of the fastest.
pub fn exhaustive_rank_check(
    pool: &[ProgramPlan],
    coeffs: &SiaCoeffs,
    hw: &HardwareDescriptor,
    k: usize,
    tolerance: f64,
) -> Result<RankCheckReport> {
    let totals: Vec<f64> = pool
        .iter()
        .map(|p| estimate_time(p, hw).map(|t| t.total_s))
        .collect::<Result<_>>()?;
    let best = totals.iter().copied().fold(f64::INFINITY, f64::min);
    let ranked = rank_programs(pool, coeffs, k, SiaMode::Raw)?;
    let time_of = |p: &ProgramPlan| -> Result<f64> { Ok(estimate_time(p, hw)?.total_s) };
    let top1 = time_of(&ranked[0].plan)?;
    let mut topk = f64::INFINITY;
    for r in &ranked {
        topk = topk.min(time_of(&r.plan)?);
    }
    let gap = |t: f64| t / best - 1.0;
    Ok(RankCheckReport {
        pool_size: pool.len(),
        model_best_s: best,
        sia_top1_s: top1,
        sia_topk_best_s: topk,
        top1_gap: gap(top1),
        topk_gap: gap(topk),
        top1_within: gap(top1) <= tolerance,
        topk_within: gap(topk) <= tolerance,
        tolerance,
    })
}

/// Oracle checks run on one shape's pool, as exposed by `plan --verify`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyReport {
    /// Whether the combination search matched brute force for every group
    /// of candidates sharing off-τ tiles. `None` when the extent or tile
    /// count is beyond the brute-force bounds.
    pub combinations_match: Option<bool>,
    pub groups_checked: usize,
    pub plans_checked: usize,
    /// Plans failing the zero-τ-padding or tile-agreement check.
    pub invalid_plans: usize,
    pub rank_check: RankCheckReport,
}

/// Largest extent and tile-set size the brute-force combination check runs on.
pub const BRUTE_FORCE_MAX_EXTENT: u64 = 4096;
pub const BRUTE_FORCE_MAX_TILES: usize = 64;

pub fn verify_pool(
    candidates: &[UKernel],
    pool: &[ProgramPlan],
    coeffs: &SiaCoeffs,
    hw: &HardwareDescriptor,
    k: usize,
) -> Result<VerifyReport> {
    let Some(first) = pool.first() else {
        return Err(Error::Invariant(
            "verification needs a non-empty pool".into(),
        ));
    };
    let tau = first.tau;
    let h = first.instance.extent(tau);
    let mut groups: BTreeMap<Vec<u64>, BTreeSet<u64>> = BTreeMap::new();
    for c in candidates {
        let mut off: Vec<u64> = c.smem_tile().to_vec();
        let t = off.remove(tau);
        groups.entry(off).or_default().insert(t);
    }
    let mut combinations_match = Some(true);
    if h > BRUTE_FORCE_MAX_EXTENT || groups.values().any(|g| g.len() > BRUTE_FORCE_MAX_TILES) {
        combinations_match = None;
    } else {
        for tiles in groups.values() {
            let tiles: Vec<u64> = tiles.iter().copied().collect();
            let fast: BTreeSet<Combination> = combin_search(&tiles, h).into_iter().collect();
            if fast != brute_force_combinations(&tiles, h) {
                combinations_match = Some(false);
            }
        }
    }
    let invalid_plans = pool.iter().filter(|p| p.verify().is_err()).count();
    Ok(VerifyReport {
        combinations_match,
        groups_checked: groups.len(),
        plans_checked: pool.len(),
        invalid_plans,
        rank_check: exhaustive_rank_check(pool, coeffs, hw, k, DEFAULT_RANK_TOLERANCE)?,
    })
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.combinations_match != Some(false) && self.invalid_plans == 0
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let r = &self.rank_check;
        let combos = match self.combinations_match {
            Some(true) => "match",
            Some(false) => "MISMATCH",
            None => "skipped",
        };
        format!(
            "combination_oracle: {combos} ({} groups)\n\
             plans_checked: {}\n\
             invalid_plans: {}\n\
             model_best_s: {:.6e}\n\
             sia_top1_s: {:.6e} (gap {:.4})\n\
             sia_topk_best_s: {:.6e} (gap {:.4})\n\
             top1_within_{:.0}pct: {}\n\
             topk_within_{:.0}pct: {}\n",
            self.groups_checked,
            self.plans_checked,
            self.invalid_plans,
            r.model_best_s,
            r.sia_top1_s,
            r.top1_gap,
            r.sia_topk_best_s,
            r.topk_gap,
            r.tolerance * 100.0,
            r.top1_within,
            r.tolerance * 100.0,
            r.topk_within,
        )
    }
}

/// Relative gap to the model-best plan accepted as a hit.
pub const DEFAULT_RANK_TOLERANCE: f64 = 0.10;

/// A reproducible Dense shape on one of a few descriptor families.
#[derive(Clone, Debug)]
pub struct OracleCase {
    pub seed: u64,
    pub instance: WorkloadInstance,
    pub hw: HardwareDescriptor,
}

impl OracleCase {
    pub fn dense_from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rng.gen_range(1..=128);
        let j = [768, 1024, 2304, 3072][rng.gen_range(0..4)];
        let k = [256, 768, 1024][rng.gen_range(0..3)];
        let hw = match rng.gen_range(0..3) {
            0 => HardwareDescriptor::v100_like(),
            1 => a100_like(),
            _ => k80_like(),
        };
        let spec = dense(
            Extent::Dynamic { lo: 1, hi: 128 },
            Extent::Fixed(j),
            Extent::Fixed(k),
        );
        let mut b = BTreeMap::new();
        b.insert("i".to_string(), t);
        let instance = spec.bind(&b).expect("seeded binding lies in range");
        OracleCase { seed, instance, hw }
    }
}

/// An A100-like configuration (user configuration, not measured).
pub fn a100_like() -> HardwareDescriptor {
    HardwareDescriptor {
        name: "a100-like".into(),
        num_cores: 108,
        regs_per_core: 65536,
        smem_per_core_bytes: 167_936,
        global_bw_bytes_per_s: 1_555_000_000_000,
        shared_bw_bytes_per_s: 19_400_000_000_000,
        peak_flops: 19_500_000_000_000,
        default_active_blocks: 2,
        active_blocks_per_core: 2,
        align_elems: 8,
    }
}

/// A K80-like configuration (one GK210 die; user configuration).
pub fn k80_like() -> HardwareDescriptor {
    HardwareDescriptor {
        name: "k80-like".into(),
        num_cores: 13,
        regs_per_core: 131_072,
        smem_per_core_bytes: 49_152,
        global_bw_bytes_per_s: 240_000_000_000,
        shared_bw_bytes_per_s: 2_900_000_000_000,
        peak_flops: 4_370_000_000_000,
        default_active_blocks: 2,
        active_blocks_per_core: 2,
        align_elems: 8,
    }
}

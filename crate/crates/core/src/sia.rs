//! Synthesis index analysis: score plans from cached uKernel metrics and
//! rank the pool without running anything.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::combiner::ProgramPlan;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_TOP_K: usize = 10;

/// Weights of CMR, Pad and Occ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiaCoeffs<T = f64> {
    pub c0: T,
    pub c1: T,
    pub c2: T,
}

impl Default for SiaCoeffs<f64> {
    fn default() -> Self {
        SiaCoeffs {
            c0: 1.0,
            c1: 1.0,
            c2: 1.0,
        }
    }
}

impl<T: Scalar> SiaCoeffs<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, c) in [("c0", &self.c0), ("c1", &self.c1), ("c2", &self.c2)] {
            let f = c.to_f64_lossy();
            if !f.is_finite() || *c < T::zero() {
                return Err(Error::validation(name, "must be finite and non-negative"));
            }
        }
        if self.c0.is_zero() && self.c1.is_zero() && self.c2.is_zero() {
            return Err(Error::validation(
                "coeffs",
                "at least one coefficient must be positive",
            ));
        }
        Ok(())
    }

    pub fn scaled(&self, alpha: &T) -> Self {
        SiaCoeffs {
            c0: self.c0.clone() * alpha.clone(),
            c1: self.c1.clone() * alpha.clone(),
            c2: self.c2.clone() * alpha.clone(),
        }
    }
}

/// Weighted terms of one part: c0·CMR, c1·Pad, c2·Occ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartTerms<T = f64> {
    pub cmr: T,
    pub pad: T,
    pub occ: T,
}

impl<T: Scalar> PartTerms<T> {
    pub fn sum(&self) -> T {
        self.cmr.clone() + self.pad.clone() + self.occ.clone()
    }
}

/// How raw metrics enter the score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SiaMode {
    #[default]
    Raw,
    /// Each metric min-max normalized over every part in the pool.
    MinMax,
}

fn raw_parts<T: Scalar>(plan: &ProgramPlan) -> Result<Vec<[T; 3]>> {
    plan.parts
        .iter()
        .map(|p| {
            let m = p.kernel.metrics.as_ref().ok_or(Error::MissingMetrics)?;
            let conv = |x: f64| T::from_f64(x).ok_or(Error::MissingMetrics);
            Ok([conv(m.cmr)?, conv(m.pad)?, conv(m.occ)?])
        })
        .collect()
}

fn weigh<T: Scalar>(m: &[T; 3], coeffs: &SiaCoeffs<T>) -> PartTerms<T> {
    PartTerms {
        cmr: coeffs.c0.clone() * m[0].clone(),
        pad: coeffs.c1.clone() * m[1].clone(),
        occ: coeffs.c2.clone() * m[2].clone(),
    }
}

/// Single part: its weighted sum. Two parts: the unweighted mean of the two.
pub fn score_from_terms<T: Scalar>(parts: &[PartTerms<T>]) -> T {
    let n = T::from_count(parts.len() as u64);
    parts.iter().fold(T::zero(), |acc, p| acc + p.sum()) / n
}

pub fn sia_score_with<T: Scalar>(plan: &ProgramPlan, coeffs: &SiaCoeffs<T>) -> Result<T> {
    let terms: Vec<PartTerms<T>> = raw_parts::<T>(plan)?
        .iter()
        .map(|m| weigh(m, coeffs))
        .collect();
    Ok(score_from_terms(&terms))
}

pub fn sia_score(plan: &ProgramPlan, coeffs: &SiaCoeffs) -> Result<f64> {
    sia_score_with(plan, coeffs)
}

/// A ranked plan with its score decomposition.
#[derive(Clone, Debug)]
pub struct RankedPlan<T = f64> {
    pub plan: ProgramPlan,
    pub score: T,
    pub terms: Vec<PartTerms<T>>,
}

fn mean_pad(plan: &ProgramPlan) -> f64 {
    let n = plan.parts.len() as f64;
    plan.parts
        .iter()
        .map(|p| p.kernel.metrics.as_ref().map_or(0.0, |m| m.pad))
        .sum::<f64>()
        / n
}

/// Descending score; ties go to fewer parts, then higher mean Pad, then
/// canonical tile order.
pub fn rank_order<T: Scalar>(a: (&ProgramPlan, &T), b: (&ProgramPlan, &T)) -> Ordering {
    b.1.partial_cmp(a.1)
        .unwrap_or(Ordering::Equal)
        .then(a.0.parts.len().cmp(&b.0.parts.len()))
        .then(mean_pad(b.0).total_cmp(&mean_pad(a.0)))
        .then_with(|| a.0.canonical_cmp(b.0))
}

/// Scores every plan and returns the best `k`, with `plan.sia` filled.
pub fn rank_programs_with<T: Scalar>(
    pool: &[ProgramPlan],
    coeffs: &SiaCoeffs<T>,
    k: usize,
    mode: SiaMode,
) -> Result<Vec<RankedPlan<T>>> {
    coeffs.validate()?;
    let raw: Vec<Vec<[T; 3]>> = pool.iter().map(raw_parts::<T>).collect::<Result<_>>()?;
    let normalized = match mode {
        SiaMode::Raw => raw,
        SiaMode::MinMax => min_max(raw),
    };
    let mut scored: Vec<RankedPlan<T>> = pool
        .iter()
        .zip(normalized)
        .map(|(plan, parts)| {
            let terms: Vec<PartTerms<T>> = parts.iter().map(|m| weigh(m, coeffs)).collect();
            let score = score_from_terms(&terms);
            let mut plan = plan.clone();
            plan.sia = Some(score.to_f64_lossy());
            RankedPlan { plan, score, terms }
        })
        .collect();
    scored.sort_by(|a, b| rank_order((&a.plan, &a.score), (&b.plan, &b.score)));
    scored.truncate(k);
    Ok(scored)
}

pub fn rank_programs(
    pool: &[ProgramPlan],
    coeffs: &SiaCoeffs,
    k: usize,
    mode: SiaMode,
) -> Result<Vec<RankedPlan>> {
    rank_programs_with(pool, coeffs, k, mode)
}

fn min_max<T: Scalar>(raw: Vec<Vec<[T; 3]>>) -> Vec<Vec<[T; 3]>> {
    let mut lo: [Option<T>; 3] = [None, None, None];
    let mut hi: [Option<T>; 3] = [None, None, None];
    for m in raw.iter().flatten() {
        for d in 0..3 {
            lo[d] = Some(
                lo[d]
                    .take()
                    .map_or(m[d].clone(), |v| T::min_of(v, m[d].clone())),
            );
            hi[d] = Some(
                hi[d]
                    .take()
                    .map_or(m[d].clone(), |v| T::max_of(v, m[d].clone())),
            );
        }
    }
    raw.into_iter()
        .map(|parts| {
            parts
                .into_iter()
                .map(|m| {
                    std::array::from_fn(|d| {
                        let (l, h) = (lo[d].clone().unwrap(), hi[d].clone().unwrap());
                        if h > l {
                            (m[d].clone() - l.clone()) / (h - l)
                        } else {
                            T::one()
                        }
                    })
                })
                .collect()
        })
        .collect()
}

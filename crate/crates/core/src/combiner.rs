//! Runtime-stage program construction: compose one or two uKernel sizes so
//! the main axis is covered without padding.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::covered_output_points;
use crate::perf::TimeEstimate;
use crate::ukernel::UKernel;
use crate::workload::{covered_extent, WorkloadInstance};

/// The largest space axis; ties prefer a dynamic axis, then the smaller name.
pub fn select_main_axis(instance: &WorkloadInstance) -> usize {
    let spec = instance.spec();
    *spec
        .space_axes()
        .iter()
        .max_by(|&&a, &&b| {
            let (xa, xb) = (&spec.axes()[a], &spec.axes()[b]);
            instance
                .extent(a)
                .cmp(&instance.extent(b))
                .then(xa.is_dynamic().cmp(&xb.is_dynamic()))
                .then(xb.name.cmp(&xa.name))
        })
        .expect("operators have at least one space axis")
}

/// A way to cover an extent with one or two tile sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Combination {
    Single {
        tile: u64,
        count: u64,
    },
    /// `first.0 < second.0`; each pair is (tile, count).
    Pair {
        first: (u64, u64),
        second: (u64, u64),
    },
}

impl Combination {
    pub fn pair(a: (u64, u64), b: (u64, u64)) -> Self {
        if a.0 <= b.0 {
            Combination::Pair {
                first: a,
                second: b,
            }
        } else {
            Combination::Pair {
                first: b,
                second: a,
            }
        }
    }

    pub fn covered(&self) -> u64 {
        match *self {
            Combination::Single { tile, count } => tile * count,
            Combination::Pair { first, second } => first.0 * first.1 + second.0 * second.1,
        }
    }
}

/// Every single-tile and two-tile exact cover of `h`, sorted.
///
/// For each tile pair (a < b) the count of `a` runs upward while the
/// remainder still admits at least one `b`.
pub fn combin_search(tile_sizes: &[u64], h: u64) -> Vec<Combination> {
    let mut tiles: Vec<u64> = tile_sizes.iter().copied().filter(|&t| t >= 1).collect();
    tiles.sort_unstable();
    tiles.dedup();
    let mut out = Vec::new();
    if h == 0 {
        return out;
    }
    for &a in &tiles {
        if h.is_multiple_of(a) {
            out.push(Combination::Single {
                tile: a,
                count: h / a,
            });
        }
    }
    for (x, &a) in tiles.iter().enumerate() {
        for &b in &tiles[x + 1..] {
            let mut n1 = 1;
            while n1 * a + b <= h {
                let rest = h - n1 * a;
                if rest.is_multiple_of(b) {
                    out.push(Combination::pair((a, n1), (b, rest / b)));
                }
                n1 += 1;
            }
        }
    }
    out.sort_unstable();
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanPart {
    pub kernel: UKernel,
    pub count: u64,
}

/// A composition of one or two uKernels covering a concrete shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ProgramPlan {
    pub parts: Vec<PlanPart>,
    pub instance: WorkloadInstance,
    /// Main axis (index into the operator's axes).
    pub tau: usize,
    pub sia: Option<f64>,
    pub est: Option<TimeEstimate>,
}

impl ProgramPlan {
    pub fn tau_name(&self) -> &str {
        &self.instance.spec().axes()[self.tau].name
    }

    /// Σ count × τ-tile.
    pub fn tau_coverage(&self) -> u64 {
        self.parts
            .iter()
            .map(|p| p.count * p.kernel.smem_tile()[self.tau])
            .sum()
    }

    /// Covered extent per axis (τ is the exact sum of its parts).
    pub fn covered_extents(&self) -> Vec<u64> {
        let first = &self.parts[0].kernel;
        (0..self.instance.extents().len())
            .map(|a| {
                if a == self.tau {
                    self.tau_coverage()
                } else {
                    covered_extent(self.instance.extent(a), first.smem_tile()[a])
                }
            })
            .collect()
    }

    /// Output points covered by all parts together.
    pub fn covered_output_points(&self) -> u64 {
        let covered = self.covered_extents();
        self.instance
            .spec()
            .space_axes()
            .iter()
            .map(|&a| covered[a])
            .product()
    }

    /// (covered − true) / covered over the output space.
    pub fn padding_fraction(&self) -> f64 {
        let covered = self.covered_output_points();
        (covered - self.instance.output_points()) as f64 / covered as f64
    }

    /// Checks zero τ padding and non-τ tile agreement.
    pub fn verify(&self) -> Result<()> {
        if self.parts.is_empty() || self.parts.len() > 2 {
            return Err(Error::Invariant(format!("{} plan parts", self.parts.len())));
        }
        if self.parts.iter().any(|p| p.count == 0) {
            return Err(Error::Invariant("part with zero count".into()));
        }
        let h = self.instance.extent(self.tau);
        if self.tau_coverage() != h {
            return Err(Error::Invariant(format!(
                "main axis covered to {} instead of {h}",
                self.tau_coverage()
            )));
        }
        if let [a, b] = &self.parts[..] {
            let differs = (0..self.instance.extents().len())
                .filter(|&x| x != self.tau)
                .any(|x| a.kernel.smem_tile()[x] != b.kernel.smem_tile()[x]);
            if differs {
                return Err(Error::Invariant("parts disagree off the main axis".into()));
            }
            if a.kernel.smem_tile()[self.tau] == b.kernel.smem_tile()[self.tau] {
                return Err(Error::Invariant(
                    "two parts with the same main-axis tile".into(),
                ));
            }
        }
        Ok(())
    }

    /// Output points a part covers when run alone over its τ slice.
    pub fn part_covered_points(&self, part: &PlanPart) -> Result<u64> {
        let slice = self.part_instance(part)?;
        Ok(covered_output_points(&part.kernel, &slice))
    }

    /// The instance restricted to a part's slice of the main axis.
    pub fn part_instance(&self, part: &PlanPart) -> Result<WorkloadInstance> {
        self.instance
            .replace_extent(self.tau, part.count * part.kernel.smem_tile()[self.tau])
    }

    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        let key = |p: &ProgramPlan| {
            p.parts
                .iter()
                .map(|x| {
                    (
                        x.kernel.reg_tile().to_vec(),
                        x.kernel.smem_tile().to_vec(),
                        x.count,
                    )
                })
                .collect::<Vec<_>>()
        };
        key(self).cmp(&key(other))
    }
}

/// The program pool for `instance`: single-uKernel plans for every candidate
/// whose main-axis tile divides the extent, and two-uKernel plans for every
/// exact cover whose two candidates agree on all other axes.
pub fn build_programs(
    candidates: &[UKernel],
    instance: &WorkloadInstance,
) -> Result<Vec<ProgramPlan>> {
    let tau = select_main_axis(instance);
    let h = instance.extent(tau);
    let off_tau = |k: &UKernel| -> Vec<u64> {
        k.smem_tile()
            .iter()
            .enumerate()
            .filter(|&(a, _)| a != tau)
            .map(|(_, &t)| t)
            .collect()
    };
    // group -> τ tile -> candidates, all in canonical order
    let mut groups: BTreeMap<Vec<u64>, BTreeMap<u64, Vec<&UKernel>>> = BTreeMap::new();
    let mut sorted: Vec<&UKernel> = candidates.iter().collect();
    sorted.sort_by(|a, b| a.canonical_cmp(b));
    sorted.dedup_by(|a, b| a.same_tiles(b));
    for k in sorted {
        groups
            .entry(off_tau(k))
            .or_default()
            .entry(k.smem_tile()[tau])
            .or_default()
            .push(k);
    }

    let plan = |parts: Vec<PlanPart>| ProgramPlan {
        parts,
        instance: instance.clone(),
        tau,
        sia: None,
        est: None,
    };
    let mut pool = Vec::new();
    for by_tile in groups.values() {
        let tiles: Vec<u64> = by_tile.keys().copied().collect();
        for combo in combin_search(&tiles, h) {
            match combo {
                Combination::Single { tile, count } => {
                    for k in &by_tile[&tile] {
                        pool.push(plan(vec![PlanPart {
                            kernel: (*k).clone(),
                            count,
                        }]));
                    }
                }
                Combination::Pair { first, second } => {
                    for ka in &by_tile[&first.0] {
                        for kb in &by_tile[&second.0] {
                            pool.push(plan(vec![
                                PlanPart {
                                    kernel: (*ka).clone(),
                                    count: first.1,
                                },
                                PlanPart {
                                    kernel: (*kb).clone(),
                                    count: second.1,
                                },
                            ]));
                        }
                    }
                }
            }
        }
    }
    if pool.is_empty() {
        return Err(Error::EmptyPool {
            axis: instance.spec().axes()[tau].name.clone(),
            extent: h,
        });
    }
    pool.sort_by(|a, b| a.canonical_cmp(b));
    Ok(pool)
}

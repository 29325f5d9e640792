//! The uKernel: one tile configuration at register and shared-memory level,
//! plus the hardware-aligned candidate enumeration.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::hw::HardwareDescriptor;
use crate::metrics::MetricBundle;
use crate::workload::{covered_extent, OperatorSpec, WorkloadInstance};

pub type Tile = SmallVec<[u64; 4]>;

/// Default candidate cap per instance (2^21).
pub const DEFAULT_CANDIDATE_CAP: usize = 1 << 21;

/// A thread-block tile configuration.
///
/// `reg_tile` has one entry per space axis (in the operator's space-axis
/// order); `smem_tile` has one entry per axis (declaration order).
#[derive(Clone, Debug, PartialEq)]
pub struct UKernel {
    reg_tile: Tile,
    smem_tile: Tile,
    pub metrics: Option<MetricBundle<f64>>,
}

impl UKernel {
    pub fn new(reg_tile: &[u64], smem_tile: &[u64]) -> Self {
        UKernel {
            reg_tile: Tile::from_slice(reg_tile),
            smem_tile: Tile::from_slice(smem_tile),
            metrics: None,
        }
    }

    pub fn reg_tile(&self) -> &[u64] {
        &self.reg_tile
    }

    pub fn smem_tile(&self) -> &[u64] {
        &self.smem_tile
    }

    pub fn with_metrics(mut self, metrics: MetricBundle<f64>) -> Self {
        self.metrics = Some(metrics);
        self
    }

    /// `padding_threshold` (K.pad) once metrics are cached.
    pub fn padding_threshold(&self) -> Option<f64> {
        self.metrics.as_ref().map(|m| m.pad)
    }

    /// `usage_eff` (K.occ) once metrics are cached.
    pub fn usage_eff(&self) -> Option<f64> {
        self.metrics.as_ref().map(|m| m.occ)
    }

    /// `compute_eff` (CMR) once metrics are cached.
    pub fn compute_eff(&self) -> Option<f64> {
        self.metrics.as_ref().map(|m| m.cmr)
    }

    /// Lexicographic order on (reg_tile, smem_tile).
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.reg_tile
            .cmp(&other.reg_tile)
            .then_with(|| self.smem_tile.cmp(&other.smem_tile))
    }

    pub fn same_tiles(&self, other: &Self) -> bool {
        self.reg_tile == other.reg_tile && self.smem_tile == other.smem_tile
    }

    /// Threads per block: product of smem/reg over space axes.
    pub fn threads(&self, spec: &OperatorSpec) -> u64 {
        spec.space_axes()
            .iter()
            .enumerate()
            .map(|(p, &a)| self.smem_tile[a] / self.reg_tile[p])
            .product()
    }

    /// Tile of axis `axis` on the register level, if it is a space axis.
    pub fn reg_of(&self, spec: &OperatorSpec, axis: usize) -> Option<u64> {
        spec.space_position(axis).map(|p| self.reg_tile[p])
    }

    pub fn reg_map(&self, spec: &OperatorSpec) -> BTreeMap<String, u64> {
        spec.space_axes()
            .iter()
            .zip(&self.reg_tile)
            .map(|(&a, &t)| (spec.axes()[a].name.clone(), t))
            .collect()
    }

    pub fn smem_map(&self, spec: &OperatorSpec) -> BTreeMap<String, u64> {
        spec.axes()
            .iter()
            .zip(&self.smem_tile)
            .map(|(a, &t)| (a.name.clone(), t))
            .collect()
    }

    pub fn from_maps(
        spec: &OperatorSpec,
        reg: &BTreeMap<String, u64>,
        smem: &BTreeMap<String, u64>,
    ) -> Result<Self> {
        let mut reg_tile = Tile::new();
        for &a in spec.space_axes() {
            let name = &spec.axes()[a].name;
            reg_tile.push(*reg.get(name).ok_or_else(|| {
                Error::validation(format!("reg_tile.{name}"), "missing space axis")
            })?);
        }
        let mut smem_tile = Tile::new();
        for a in spec.axes() {
            smem_tile.push(*smem.get(&a.name).ok_or_else(|| {
                Error::validation(format!("smem_tile.{}", a.name), "missing axis")
            })?);
        }
        if reg.len() != reg_tile.len() || smem.len() != smem_tile.len() {
            return Err(Error::validation("tiles", "unknown axis in tile map"));
        }
        if reg_tile.iter().chain(&smem_tile).any(|&t| t == 0) {
            return Err(Error::validation("tiles", "tile extents must be positive"));
        }
        Ok(UKernel {
            reg_tile,
            smem_tile,
            metrics: None,
        })
    }

    /// Checks the three structural invariants against an instance/descriptor.
    pub fn check_invariants(&self, spec: &OperatorSpec, hw: &HardwareDescriptor) -> Result<()> {
        for (p, &a) in spec.space_axes().iter().enumerate() {
            if !self.smem_tile[a].is_multiple_of(self.reg_tile[p]) {
                return Err(Error::Invariant(format!(
                    "reg tile {} does not divide smem tile {} on axis {}",
                    self.reg_tile[p],
                    self.smem_tile[a],
                    spec.axes()[a].name
                )));
            }
        }
        let fp = staged_footprint_bytes(spec, &self.smem_tile);
        if fp > hw.smem_per_core_bytes {
            return Err(Error::Invariant(format!(
                "staged footprint {fp} exceeds shared memory {}",
                hw.smem_per_core_bytes
            )));
        }
        let major = spec.major_axis();
        if !self.smem_tile[major].is_multiple_of(hw.align_elems) {
            return Err(Error::Invariant(format!(
                "major-axis smem tile {} is not a multiple of {}",
                self.smem_tile[major], hw.align_elems
            )));
        }
        Ok(())
    }
}

/// Bytes of input tiles staged in shared memory for one k-tile pass.
pub fn staged_footprint_bytes(spec: &OperatorSpec, smem_tile: &[u64]) -> u64 {
    spec.input_axes()
        .iter()
        .map(|axes| axes.iter().map(|&a| smem_tile[a]).product::<u64>())
        .sum::<u64>()
        * spec.elem_bytes()
}

pub fn divisors(n: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1;
    while d * d <= n {
        if n.is_multiple_of(d) {
            small.push(d);
            if d * d != n {
                large.push(n / d);
            }
        }
        d += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// Register-tile extents for an axis: its divisors, and for a prime extent
/// larger than the alignment also the divisors of both neighbours.
pub fn reg_tile_candidates(axis_extent: u64, align_elems: u64) -> Vec<u64> {
    assert!(axis_extent >= 1, "axis extent must be positive");
    let mut out = divisors(axis_extent);
    if is_prime(axis_extent) && axis_extent > align_elems {
        out.extend(divisors(axis_extent - 1));
        out.extend(divisors(axis_extent + 1));
    }
    out.sort_unstable();
    out.dedup();
    out
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// Per-axis admissible smem extents for a register tile, ascending.
fn smem_axis_options(reg_tile: &[u64], instance: &WorkloadInstance, align: u64) -> Vec<Vec<u64>> {
    let spec = instance.spec();
    let major = spec.major_axis();
    (0..spec.axes().len())
        .map(|a| {
            let step = match spec.space_position(a) {
                Some(p) if a == major => lcm(reg_tile[p], align),
                Some(p) => reg_tile[p],
                None => align,
            };
            let top = covered_extent(instance.extent(a), step);
            (1..=top / step).map(|m| m * step).collect()
        })
        .collect()
}

/// Walks every capacity-feasible smem tile for `reg_tile` in lexicographic
/// order. The staged footprint is monotone in every tile extent, so a level
/// stops as soon as the lower-bound footprint overflows. Returns `false` if
/// the visitor asked to stop.
fn walk_smem_tiles<F>(
    spec: &OperatorSpec,
    options: &[Vec<u64>],
    capacity: u64,
    visit: &mut F,
) -> bool
where
    F: FnMut(&[u64]) -> bool,
{
    fn go<F: FnMut(&[u64]) -> bool>(
        spec: &OperatorSpec,
        options: &[Vec<u64>],
        capacity: u64,
        tile: &mut Tile,
        level: usize,
        visit: &mut F,
    ) -> bool {
        if level == options.len() {
            return visit(tile);
        }
        for &v in &options[level] {
            tile[level] = v;
            let mut probe = tile.clone();
            for l in level + 1..options.len() {
                probe[l] = options[l][0];
            }
            if staged_footprint_bytes(spec, &probe) > capacity {
                break;
            }
            if !go(spec, options, capacity, tile, level + 1, visit) {
                return false;
            }
        }
        true
    }
    if options.iter().any(|o| o.is_empty()) {
        return true;
    }
    let mut tile: Tile = options.iter().map(|o| o[0]).collect();
    go(spec, options, capacity, &mut tile, 0, visit)
}

/// Shared-memory tiles for one register tile, in lexicographic order.
pub fn smem_tile_candidates(
    reg_tile: &[u64],
    instance: &WorkloadInstance,
    hw: &HardwareDescriptor,
) -> Vec<Tile> {
    let options = smem_axis_options(reg_tile, instance, hw.align_elems);
    let mut out = Vec::new();
    walk_smem_tiles(
        instance.spec(),
        &options,
        hw.smem_per_core_bytes,
        &mut |t: &[u64]| {
            out.push(Tile::from_slice(t));
            true
        },
    );
    out
}

/// Register tiles for the instance: Cartesian product of per-axis
/// candidates, lexicographic.
pub fn reg_tiles(instance: &WorkloadInstance, hw: &HardwareDescriptor) -> Vec<Tile> {
    let spec = instance.spec();
    let per_axis: Vec<Vec<u64>> = spec
        .space_axes()
        .iter()
        .map(|&a| reg_tile_candidates(instance.extent(a), hw.align_elems))
        .collect();
    let mut out = vec![Tile::new()];
    for options in &per_axis {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                options.iter().map(move |&v| {
                    let mut t = prefix.clone();
                    t.push(v);
                    t
                })
            })
            .collect();
    }
    out
}

/// Outcome of a streaming enumeration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EnumerationStats {
    pub emitted: usize,
    pub truncated: bool,
}

/// Streams K.Align in canonical order, stopping after `cap` candidates.
pub fn for_each_ukernel<F>(
    instance: &WorkloadInstance,
    hw: &HardwareDescriptor,
    cap: usize,
    mut visit: F,
) -> EnumerationStats
where
    F: FnMut(&UKernel),
{
    let mut stats = EnumerationStats::default();
    for reg in reg_tiles(instance, hw) {
        let options = smem_axis_options(&reg, instance, hw.align_elems);
        let mut kernel = UKernel {
            reg_tile: reg.clone(),
            smem_tile: Tile::new(),
            metrics: None,
        };
        let finished = walk_smem_tiles(
            instance.spec(),
            &options,
            hw.smem_per_core_bytes,
            &mut |t: &[u64]| {
                if stats.emitted == cap {
                    stats.truncated = true;
                    return false;
                }
                kernel.smem_tile.clear();
                kernel.smem_tile.extend_from_slice(t);
                visit(&kernel);
                stats.emitted += 1;
                true
            },
        );
        if !finished {
            break;
        }
    }
    if stats.truncated {
        log::warn!(
            "candidate enumeration for {} truncated at {cap} uKernels",
            instance.binding_label()
        );
    }
    stats
}

/// The candidate set K.Align.
#[derive(Clone, Debug)]
pub struct Alignment {
    pub kernels: Vec<UKernel>,
    pub truncated: bool,
}

/// Materializes K.Align: deduplicated, canonical order, metrics unset.
pub fn enumerate_ukernels(
    instance: &WorkloadInstance,
    hw: &HardwareDescriptor,
    cap: usize,
) -> Result<Alignment> {
    let mut kernels = Vec::new();
    let stats = for_each_ukernel(instance, hw, cap, |k| kernels.push(k.clone()));
    if kernels.is_empty() {
        return Err(capacity_error(instance, hw));
    }
    Ok(Alignment {
        kernels,
        truncated: stats.truncated,
    })
}

pub(crate) fn capacity_error(instance: &WorkloadInstance, hw: &HardwareDescriptor) -> Error {
    let spec = instance.spec();
    let ones: Tile = spec.space_axes().iter().map(|_| 1).collect();
    let options = smem_axis_options(&ones, instance, hw.align_elems);
    let smallest: Tile = options.iter().map(|o| o[0]).collect();
    Error::Capacity {
        capacity: hw.smem_per_core_bytes,
        smallest: staged_footprint_bytes(spec, &smallest),
    }
}

/// File form of a uKernel: tile maps keyed by axis name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UKernelRecord {
    pub reg_tile: BTreeMap<String, u64>,
    pub smem_tile: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage_eff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compute_eff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricBundle<f64>>,
}

impl UKernelRecord {
    pub fn from_kernel(spec: &OperatorSpec, k: &UKernel) -> Self {
        UKernelRecord {
            reg_tile: k.reg_map(spec),
            smem_tile: k.smem_map(spec),
            padding_threshold: k.padding_threshold(),
            usage_eff: k.usage_eff(),
            compute_eff: k.compute_eff(),
            metrics: k.metrics.clone(),
        }
    }

    pub fn to_kernel(&self, spec: &OperatorSpec) -> Result<UKernel> {
        let mut k = UKernel::from_maps(spec, &self.reg_tile, &self.smem_tile)?;
        k.metrics = self.metrics.clone();
        Ok(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::dense_instance;

    #[test]
    fn reg_candidates_examples() {
        assert_eq!(
            reg_tile_candidates(53, 8),
            vec![1, 2, 3, 4, 6, 9, 13, 18, 26, 27, 52, 53, 54]
        );
        assert_eq!(reg_tile_candidates(8, 8), vec![1, 2, 4, 8]);
        assert_eq!(reg_tile_candidates(1, 8), vec![1]);
        // Small primes stay below the alignment and keep only their divisors.
        assert_eq!(reg_tile_candidates(7, 8), vec![1, 7]);
        assert_eq!(reg_tile_candidates(12, 8), divisors(12));
    }

    #[test]
    fn divisors_match_trial_division() {
        for n in 1..300u64 {
            let brute: Vec<u64> = (1..=n).filter(|d| n % d == 0).collect();
            assert_eq!(divisors(n), brute, "n={n}");
        }
    }

    #[test]
    fn smem_space_tiles_are_multiples_of_reg() {
        let inst = dense_instance(64, 64, 64);
        let hw = HardwareDescriptor::v100_like();
        let tiles = smem_tile_candidates(&[4, 1], &inst, &hw);
        assert!(!tiles.is_empty());
        for t in &tiles {
            assert_eq!(t[0] % 4, 0);
            assert!(t[0] <= 64);
            assert_eq!(t[1] % 8, 0);
            assert_eq!(t[2] % 8, 0);
            assert!(staged_footprint_bytes(inst.spec(), t) <= hw.smem_per_core_bytes);
        }
        let is: std::collections::BTreeSet<u64> = tiles.iter().map(|t| t[0]).collect();
        assert_eq!(
            is.into_iter().collect::<Vec<_>>(),
            (1..=16).map(|m| m * 4).collect::<Vec<_>>()
        );
    }

    #[test]
    fn reduce_tiles_are_aligned() {
        let inst = dense_instance(8, 8, 768);
        let hw = HardwareDescriptor::v100_like();
        let ks: std::collections::BTreeSet<u64> = smem_tile_candidates(&[1, 1], &inst, &hw)
            .iter()
            .map(|t| t[2])
            .collect();
        assert!(ks.iter().all(|k| k % 8 == 0));
        assert!(ks.contains(&8) && ks.contains(&768));
    }

    #[test]
    fn smallest_aligned_candidate_exists() {
        let inst = dense_instance(8, 8, 8);
        let hw = HardwareDescriptor::v100_like();
        let set = enumerate_ukernels(&inst, &hw, DEFAULT_CANDIDATE_CAP).unwrap();
        assert!(set
            .kernels
            .iter()
            .any(|k| k.reg_tile() == [1, 1] && k.smem_tile() == [8, 8, 8]));
    }

    #[test]
    fn capacity_error_on_degenerate_descriptor() {
        let inst = dense_instance(8, 8, 8);
        let mut hw = HardwareDescriptor::v100_like();
        hw.smem_per_core_bytes = 16;
        let err = enumerate_ukernels(&inst, &hw, DEFAULT_CANDIDATE_CAP).unwrap_err();
        assert!(matches!(err, Error::Capacity { capacity: 16, .. }), "{err}");
    }

    #[test]
    fn truncation_respects_canonical_prefix() {
        let inst = dense_instance(16, 64, 64);
        let hw = HardwareDescriptor::v100_like();
        let full = enumerate_ukernels(&inst, &hw, usize::MAX).unwrap();
        let cut = enumerate_ukernels(&inst, &hw, 100).unwrap();
        assert!(cut.truncated && !full.truncated);
        assert_eq!(cut.kernels.len(), 100);
        for (a, b) in cut.kernels.iter().zip(&full.kernels) {
            assert!(a.same_tiles(b));
        }
    }

    #[test]
    fn record_round_trip() {
        let inst = dense_instance(16, 64, 64);
        let k = UKernel::new(&[2, 4], &[8, 16, 32]);
        let rec = UKernelRecord::from_kernel(inst.spec(), &k);
        assert_eq!(rec.reg_tile["i"], 2);
        assert_eq!(rec.smem_tile["k"], 32);
        assert_eq!(rec.to_kernel(inst.spec()).unwrap(), k);
    }
}

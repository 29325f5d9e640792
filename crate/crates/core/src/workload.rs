//! Declarative operator model: nested loop axes, affine tensor accesses and
//! the FLOP / data-volume accounting every metric is built on.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ukernel::UKernel;

/// Operators may bind at most this many axes at runtime.
pub const MAX_DYNAMIC_AXES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisKind {
    Space,
    Reduce,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Extent {
    Fixed(u64),
    /// Inclusive candidate range of a runtime-bound axis.
    Dynamic {
        lo: u64,
        hi: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AxisSpec {
    pub name: String,
    pub kind: AxisKind,
    pub extent: Extent,
}

impl AxisSpec {
    pub fn is_dynamic(&self) -> bool {
        matches!(self.extent, Extent::Dynamic { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessRole {
    Input,
    Output,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorAccess {
    pub tensor: String,
    pub axes: Vec<String>,
    pub role: AccessRole,
}

/// On-disk form of an axis: exactly one of `extent` or `range`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AxisDoc {
    name: String,
    kind: AxisKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    extent: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    range: Option<[i64; 2]>,
}

fn default_flops_per_point() -> u64 {
    2
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadDoc {
    name: String,
    axes: Vec<AxisDoc>,
    accesses: Vec<TensorAccess>,
    elem_bytes: u64,
    #[serde(default = "default_flops_per_point")]
    flops_per_point: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    major_axis: Option<String>,
}

/// A validated nested-loop operator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OperatorSpec {
    name: String,
    axes: Vec<AxisSpec>,
    accesses: Vec<TensorAccess>,
    elem_bytes: u64,
    flops_per_point: u64,
    space: Vec<usize>,
    reduce: Vec<usize>,
    output: Vec<usize>,
    inputs: Vec<Vec<usize>>,
    major: usize,
    major_explicit: bool,
}

impl OperatorSpec {
    /// Validates and indexes an operator. `major_axis` defaults to the
    /// innermost axis of the output access (row-major).
    pub fn new(
        name: impl Into<String>,
        axes: Vec<AxisSpec>,
        accesses: Vec<TensorAccess>,
        elem_bytes: u64,
        flops_per_point: u64,
        major_axis: Option<&str>,
    ) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::validation("name", "must be non-empty"));
        }
        if elem_bytes == 0 {
            return Err(Error::validation("elem_bytes", "must be strictly positive"));
        }
        if flops_per_point == 0 {
            return Err(Error::validation(
                "flops_per_point",
                "must be strictly positive",
            ));
        }
        let mut seen = HashSet::new();
        for axis in &axes {
            if !seen.insert(axis.name.as_str()) {
                return Err(Error::validation(
                    format!("axes.{}", axis.name),
                    "duplicate axis name",
                ));
            }
            match axis.extent {
                Extent::Fixed(0) => {
                    return Err(Error::validation(
                        format!("axes.{}.extent", axis.name),
                        "extent must be at least 1",
                    ))
                }
                Extent::Dynamic { lo, hi } if lo == 0 || lo > hi => {
                    return Err(Error::validation(
                        format!("axes.{}.range", axis.name),
                        format!("invalid range [{lo}, {hi}]"),
                    ))
                }
                _ => {}
            }
        }
        let dynamic = axes.iter().filter(|a| a.is_dynamic()).count();
        if dynamic > MAX_DYNAMIC_AXES {
            return Err(Error::validation(
                "axes",
                format!("{dynamic} dynamic axes; at most {MAX_DYNAMIC_AXES} are supported"),
            ));
        }
        let index_of = |n: &str| axes.iter().position(|a| a.name == n);
        let space: Vec<usize> = (0..axes.len())
            .filter(|&i| axes[i].kind == AxisKind::Space)
            .collect();
        let reduce: Vec<usize> = (0..axes.len())
            .filter(|&i| axes[i].kind == AxisKind::Reduce)
            .collect();
        if space.is_empty() {
            return Err(Error::validation(
                "axes",
                "at least one space axis is required",
            ));
        }
        if reduce.is_empty() {
            return Err(Error::validation(
                "axes",
                "at least one reduce axis is required",
            ));
        }

        let mut output = None;
        let mut inputs = Vec::new();
        for access in &accesses {
            let mut idx = Vec::with_capacity(access.axes.len());
            for a in &access.axes {
                let i = index_of(a).ok_or_else(|| {
                    Error::validation(
                        format!("accesses.{}", access.tensor),
                        format!("unknown axis `{a}`"),
                    )
                })?;
                idx.push(i);
            }
            match access.role {
                AccessRole::Input => inputs.push(idx),
                AccessRole::Output => {
                    if output.is_some() {
                        return Err(Error::validation(
                            format!("accesses.{}", access.tensor),
                            "multiple output accesses",
                        ));
                    }
                    output = Some((access.tensor.clone(), idx));
                }
            }
        }
        let (out_name, output) =
            output.ok_or_else(|| Error::validation("accesses", "no output access"))?;
        if inputs.is_empty() {
            return Err(Error::validation(
                "accesses",
                "at least one input access is required",
            ));
        }
        for &i in &output {
            if axes[i].kind != AxisKind::Space {
                return Err(Error::validation(
                    format!("accesses.{out_name}"),
                    format!("output references reduce axis `{}`", axes[i].name),
                ));
            }
        }
        let mut out_sorted = output.clone();
        out_sorted.sort_unstable();
        out_sorted.dedup();
        if out_sorted.len() != output.len() || out_sorted != space {
            return Err(Error::validation(
                format!("accesses.{out_name}"),
                "output must index every space axis exactly once",
            ));
        }
        let major = match major_axis {
            Some(m) => {
                let i = index_of(m).ok_or_else(|| {
                    Error::validation("major_axis", format!("unknown axis `{m}`"))
                })?;
                if axes[i].kind != AxisKind::Space {
                    return Err(Error::validation("major_axis", "must be a space axis"));
                }
                i
            }
            None => *output.last().expect("output has at least one axis"),
        };

        Ok(OperatorSpec {
            name,
            axes,
            accesses,
            elem_bytes,
            flops_per_point,
            space,
            reduce,
            output,
            inputs,
            major,
            major_explicit: major_axis.is_some(),
        })
    }

    pub fn from_json(document: &str) -> Result<Self> {
        let doc: WorkloadDoc = serde_json::from_str(document)?;
        let mut axes = Vec::with_capacity(doc.axes.len());
        for a in doc.axes {
            let extent = match (a.extent, a.range) {
                (Some(e), None) => {
                    if e < 1 {
                        return Err(Error::validation(
                            format!("axes.{}.extent", a.name),
                            "extent must be at least 1",
                        ));
                    }
                    Extent::Fixed(e as u64)
                }
                (None, Some([lo, hi])) => {
                    if lo < 1 || lo > hi {
                        return Err(Error::validation(
                            format!("axes.{}.range", a.name),
                            format!("invalid range [{lo}, {hi}]"),
                        ));
                    }
                    Extent::Dynamic {
                        lo: lo as u64,
                        hi: hi as u64,
                    }
                }
                _ => {
                    return Err(Error::validation(
                        format!("axes.{}", a.name),
                        "exactly one of `extent` or `range` is required",
                    ))
                }
            };
            axes.push(AxisSpec {
                name: a.name,
                kind: a.kind,
                extent,
            });
        }
        OperatorSpec::new(
            doc.name,
            axes,
            doc.accesses,
            doc.elem_bytes,
            doc.flops_per_point,
            doc.major_axis.as_deref(),
        )
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    fn to_doc(&self) -> WorkloadDoc {
        WorkloadDoc {
            name: self.name.clone(),
            axes: self
                .axes
                .iter()
                .map(|a| {
                    let (extent, range) = match a.extent {
                        Extent::Fixed(e) => (Some(e as i64), None),
                        Extent::Dynamic { lo, hi } => (None, Some([lo as i64, hi as i64])),
                    };
                    AxisDoc {
                        name: a.name.clone(),
                        kind: a.kind,
                        extent,
                        range,
                    }
                })
                .collect(),
            accesses: self.accesses.clone(),
            elem_bytes: self.elem_bytes,
            flops_per_point: self.flops_per_point,
            major_axis: self
                .major_explicit
                .then(|| self.axes[self.major].name.clone()),
        }
    }

    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_doc()).expect("workload serializes");
        s.push('\n');
        s
    }

    /// First 16 hex digits of the SHA-256 of the canonical document.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_canonical_json().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn axes(&self) -> &[AxisSpec] {
        &self.axes
    }

    pub fn accesses(&self) -> &[TensorAccess] {
        &self.accesses
    }

    pub fn elem_bytes(&self) -> u64 {
        self.elem_bytes
    }

    pub fn flops_per_point(&self) -> u64 {
        self.flops_per_point
    }

    /// Indices (into `axes`) of the space axes, in declaration order.
    pub fn space_axes(&self) -> &[usize] {
        &self.space
    }

    pub fn reduce_axes(&self) -> &[usize] {
        &self.reduce
    }

    /// Axis indices of each input access.
    pub fn input_axes(&self) -> &[Vec<usize>] {
        &self.inputs
    }

    pub fn output_axes(&self) -> &[usize] {
        &self.output
    }

    /// Axis index aligned to `align_elems` during enumeration.
    pub fn major_axis(&self) -> usize {
        self.major
    }

    pub fn axis_index(&self, name: &str) -> Option<usize> {
        self.axes.iter().position(|a| a.name == name)
    }

    /// Position of axis `axis` among the space axes.
    pub fn space_position(&self, axis: usize) -> Option<usize> {
        self.space.iter().position(|&s| s == axis)
    }

    pub fn dynamic_axes(&self) -> impl Iterator<Item = &AxisSpec> {
        self.axes.iter().filter(|a| a.is_dynamic())
    }

    /// Binds every dynamic axis.
    pub fn bind(self: &Arc<Self>, bindings: &BTreeMap<String, u64>) -> Result<WorkloadInstance> {
        for name in bindings.keys() {
            match self.axes.iter().find(|a| &a.name == name) {
                None => {
                    return Err(Error::Binding {
                        axis: name.clone(),
                        reason: "no such axis".into(),
                    })
                }
                Some(a) if !a.is_dynamic() => {
                    return Err(Error::Binding {
                        axis: name.clone(),
                        reason: "axis is not dynamic".into(),
                    })
                }
                _ => {}
            }
        }
        let mut extents = Vec::with_capacity(self.axes.len());
        for a in &self.axes {
            let e = match a.extent {
                Extent::Fixed(e) => e,
                Extent::Dynamic { lo, hi } => {
                    let v = *bindings.get(&a.name).ok_or_else(|| Error::Binding {
                        axis: a.name.clone(),
                        reason: "dynamic axis is unbound".into(),
                    })?;
                    if v < lo || v > hi {
                        return Err(Error::Binding {
                            axis: a.name.clone(),
                            reason: format!("{v} outside declared range [{lo}, {hi}]"),
                        });
                    }
                    v
                }
            };
            extents.push(e);
        }
        Ok(WorkloadInstance {
            spec: Arc::clone(self),
            extents,
        })
    }
}

/// An operator with every dynamic axis bound to a concrete extent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkloadInstance {
    spec: Arc<OperatorSpec>,
    extents: Vec<u64>,
}

impl WorkloadInstance {
    /// Builds an instance from raw extents (one per axis), bypassing the
    /// declared ranges. Used for plan parts that cover a slice of an axis.
    pub fn with_extents(spec: Arc<OperatorSpec>, extents: Vec<u64>) -> Result<Self> {
        if extents.len() != spec.axes.len() {
            return Err(Error::Invariant(format!(
                "{} extents for {} axes",
                extents.len(),
                spec.axes.len()
            )));
        }
        if let Some(i) = extents.iter().position(|&e| e == 0) {
            return Err(Error::Binding {
                axis: spec.axes[i].name.clone(),
                reason: "extent must be at least 1".into(),
            });
        }
        Ok(WorkloadInstance { spec, extents })
    }

    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    pub fn spec_arc(&self) -> &Arc<OperatorSpec> {
        &self.spec
    }

    pub fn extents(&self) -> &[u64] {
        &self.extents
    }

    pub fn extent(&self, axis: usize) -> u64 {
        self.extents[axis]
    }

    pub fn extent_of(&self, name: &str) -> Option<u64> {
        self.spec.axis_index(name).map(|i| self.extents[i])
    }

    /// Values of the dynamic axes, keyed by axis name.
    pub fn bindings(&self) -> BTreeMap<String, u64> {
        self.spec
            .axes
            .iter()
            .zip(&self.extents)
            .filter(|(a, _)| a.is_dynamic())
            .map(|(a, &e)| (a.name.clone(), e))
            .collect()
    }

    /// `name=value` pairs of the dynamic bindings, comma separated.
    pub fn binding_label(&self) -> String {
        self.bindings()
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Product of the true output extents.
    pub fn output_points(&self) -> u64 {
        self.spec.space.iter().map(|&a| self.extents[a]).product()
    }

    pub fn reduce_points(&self) -> u64 {
        self.spec.reduce.iter().map(|&a| self.extents[a]).product()
    }

    pub fn replace_extent(&self, axis: usize, extent: u64) -> Result<Self> {
        let mut extents = self.extents.clone();
        extents[axis] = extent;
        Self::with_extents(Arc::clone(&self.spec), extents)
    }
}

/// Total floating-point operations of the instance.
pub fn flops(instance: &WorkloadInstance) -> u64 {
    instance.spec.flops_per_point * instance.output_points() * instance.reduce_points()
}

/// Smallest multiple of `tile` that is at least `extent`.
pub fn covered_extent(extent: u64, tile: u64) -> u64 {
    extent.div_ceil(tile) * tile
}

/// Byte volumes moved by a tiled execution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataVolumes {
    /// Global memory reads.
    pub read: u64,
    /// Global memory writes.
    pub write: u64,
    /// Shared memory reads (into registers).
    pub trans_read: u64,
    /// Shared memory writes (staging of global reads).
    pub trans_write: u64,
}

/// Byte volumes of executing `instance` with `kernel`'s tiles.
///
/// Every block stages, for each k-tile pass, its shared-memory footprint of
/// each input. Threads then read from shared memory their register-tile
/// slice of every operand; an input that does not index a space axis is
/// re-read once per thread along that axis. Output elements are written once.
pub fn data_volumes(instance: &WorkloadInstance, kernel: &UKernel) -> DataVolumes {
    let spec = &instance.spec;
    let smem = kernel.smem_tile();
    let reg = kernel.reg_tile();
    let blocks: u64 = spec
        .space
        .iter()
        .map(|&a| instance.extents[a].div_ceil(smem[a]))
        .product();
    let passes: u64 = spec
        .reduce
        .iter()
        .map(|&a| instance.extents[a].div_ceil(smem[a]))
        .product();
    let eb = spec.elem_bytes;
    let mut read = 0;
    let mut trans_read = 0;
    for input in &spec.inputs {
        let footprint: u64 = input.iter().map(|&a| smem[a]).product();
        let reuse: u64 = spec
            .space
            .iter()
            .enumerate()
            .filter(|(_, a)| !input.contains(a))
            .map(|(p, &a)| smem[a] / reg[p])
            .product();
        read += footprint * blocks * passes * eb;
        trans_read += footprint * reuse * blocks * passes * eb;
    }
    DataVolumes {
        read,
        write: instance.output_points() * eb,
        trans_read,
        trans_write: read,
    }
}

/// Dense operator `C[i,j] = sum_k A[i,k] * B[k,j]` with optional dynamic ranges.
pub fn dense(i: Extent, j: Extent, k: Extent) -> Arc<OperatorSpec> {
    let axes = vec![
        AxisSpec {
            name: "i".into(),
            kind: AxisKind::Space,
            extent: i,
        },
        AxisSpec {
            name: "j".into(),
            kind: AxisKind::Space,
            extent: j,
        },
        AxisSpec {
            name: "k".into(),
            kind: AxisKind::Reduce,
            extent: k,
        },
    ];
    let accesses = vec![
        access("A", &["i", "k"], AccessRole::Input),
        access("B", &["k", "j"], AccessRole::Input),
        access("C", &["i", "j"], AccessRole::Output),
    ];
    Arc::new(OperatorSpec::new("dense", axes, accesses, 4, 2, None).expect("dense spec is valid"))
}

/// Batched matmul `C[b,i,j] = sum_k A[b,i,k] * B[b,k,j]`.
pub fn batch_matmul(b: Extent, i: Extent, j: Extent, k: Extent) -> Arc<OperatorSpec> {
    let axes = vec![
        AxisSpec {
            name: "b".into(),
            kind: AxisKind::Space,
            extent: b,
        },
        AxisSpec {
            name: "i".into(),
            kind: AxisKind::Space,
            extent: i,
        },
        AxisSpec {
            name: "j".into(),
            kind: AxisKind::Space,
            extent: j,
        },
        AxisSpec {
            name: "k".into(),
            kind: AxisKind::Reduce,
            extent: k,
        },
    ];
    let accesses = vec![
        access("A", &["b", "i", "k"], AccessRole::Input),
        access("B", &["b", "k", "j"], AccessRole::Input),
        access("C", &["b", "i", "j"], AccessRole::Output),
    ];
    Arc::new(
        OperatorSpec::new("batch_matmul", axes, accesses, 4, 2, None)
            .expect("batch matmul spec is valid"),
    )
}

fn access(tensor: &str, axes: &[&str], role: AccessRole) -> TensorAccess {
    TensorAccess {
        tensor: tensor.into(),
        axes: axes.iter().map(|s| s.to_string()).collect(),
        role,
    }
}

/// Fixed-extent dense instance.
pub fn dense_instance(i: u64, j: u64, k: u64) -> WorkloadInstance {
    let spec = dense(Extent::Fixed(i), Extent::Fixed(j), Extent::Fixed(k));
    spec.bind(&BTreeMap::new()).expect("fixed dense binds")
}

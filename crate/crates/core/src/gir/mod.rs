//! The instruction-level graph IR: memory objects, patterned slices,
//! gOperators and the parallel wrapper around them.

mod graph;
mod scalar;
mod validate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::SyncScope;

pub use graph::{Access, Deps};
pub use scalar::{ReduceKind, ScalarOp, ScalarOpInfo};
pub use validate::{validate, Diagnostic};

pub type NodeId = u32;
pub type ObjectId = u32;

pub const GRAPH_SCHEMA: &str = "gir-graph/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    I32,
    I64,
    F32,
    F64,
}

impl ElementKind {
    pub fn is_integer(self) -> bool {
        matches!(self, ElementKind::I32 | ElementKind::I64)
    }

    pub fn bits(self) -> u32 {
        match self {
            ElementKind::I32 | ElementKind::F32 => 32,
            ElementKind::I64 | ElementKind::F64 => 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryObject {
    pub id: ObjectId,
    pub name: String,
    /// Name of a level in the hardware profile.
    pub level: String,
    pub size: u64,
    pub kind: ElementKind,
}

/// Per-unit starting offset, affine in the unit index: `offset + unit * per_unit`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Base {
    pub offset: u64,
    pub per_unit: u64,
}

impl Base {
    pub fn new(offset: u64, per_unit: u64) -> Self {
        Base { offset, per_unit }
    }

    pub fn at(&self, unit: u32) -> u64 {
        self.offset + unit as u64 * self.per_unit
    }
}

/// A `num` x `width` view with `stride` between segment starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorySlice {
    pub object: ObjectId,
    pub num: u64,
    pub width: u64,
    pub stride: u64,
    pub base: Base,
}

impl MemorySlice {
    pub fn new(object: ObjectId, num: u64, width: u64, stride: u64, base: Base) -> Self {
        MemorySlice {
            object,
            num,
            width,
            stride,
            base,
        }
    }

    /// One contiguous segment of `len` elements.
    pub fn contiguous(object: ObjectId, len: u64, base: Base) -> Self {
        Self::new(object, 1, len, len, base)
    }

    pub fn total(&self) -> u64 {
        self.num * self.width
    }

    pub fn pattern(&self) -> (u64, u64, u64) {
        (self.num, self.width, self.stride)
    }

    /// Address of the `k`-th element seen by `unit`.
    pub fn address(&self, unit: u32, k: u64) -> u64 {
        self.base.at(unit) + (k / self.width) * self.stride + k % self.width
    }

    pub fn last_address(&self, unit: u32) -> u64 {
        self.base.at(unit) + (self.num - 1) * self.stride + self.width - 1
    }

    /// Addresses in slice order, without bounds checking.
    pub fn addresses(&self, unit: u32) -> impl Iterator<Item = u64> + '_ {
        let b = self.base.at(unit);
        (0..self.num).flat_map(move |i| {
            let start = b + i * self.stride;
            start..start + self.width
        })
    }

    pub fn with_object(mut self, object: ObjectId) -> Self {
        self.object = object;
        self
    }

    pub fn shifted(mut self, delta: i64) -> Self {
        self.base.offset = (self.base.offset as i64 + delta) as u64;
        self
    }

    pub fn well_formed(&self) -> bool {
        self.num >= 1 && self.width >= 1 && (self.num == 1 || self.stride >= self.width)
    }
}

/// True iff both slices have the same `(num, width, stride)` and the same
/// affine base. Element footprints are not compared.
pub fn pattern_equal(a: &MemorySlice, b: &MemorySlice) -> bool {
    a.num == b.num && a.width == b.width && a.stride == b.stride && a.base == b.base
}

/// Element addresses of `slice` for `unit`, checked against the object size.
pub fn slice_elements(slice: &MemorySlice, object_size: u64, unit: u32) -> Result<Vec<u64>> {
    if !slice.well_formed() {
        return Err(Error::InvalidGraph(format!("malformed slice {slice:?}")));
    }
    let last = slice.last_address(unit);
    if last >= object_size {
        return Err(Error::OutOfBounds {
            object: slice.object,
            address: last,
            size: object_size,
        });
    }
    Ok(slice.addresses(unit).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BroadcastMode {
    /// `out[k] = in[k / factor]`
    Repeat,
    /// `out[k] = in[k % len(in)]`
    Tile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OpKind {
    ElementWise { op: ScalarOp },
    /// Groups of `extent` consecutive input elements reduce to one output.
    Reduce { reduce: ReduceKind, extent: u64 },
    Broadcast { factor: u64, mode: BroadcastMode },
    Move,
    Sync { scope: SyncScope },
}

impl OpKind {
    pub fn is_move(&self) -> bool {
        matches!(self, OpKind::Move)
    }

    pub fn is_sync(&self) -> bool {
        matches!(self, OpKind::Sync { .. })
    }

    pub fn is_compute(&self) -> bool {
        matches!(
            self,
            OpKind::ElementWise { .. } | OpKind::Reduce { .. } | OpKind::Broadcast { .. }
        )
    }

    pub fn label(&self) -> String {
        match self {
            OpKind::ElementWise { op } => op.name().to_string(),
            OpKind::Reduce { reduce, extent } => format!("reduce_{}[{extent}]", reduce.name()),
            OpKind::Broadcast { factor, mode } => format!("broadcast_{mode:?}[{factor}]").to_lowercase(),
            OpKind::Move => "move".into(),
            OpKind::Sync { scope } => format!("sync[{scope}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GOperator {
    pub id: NodeId,
    pub op: OpKind,
    pub inputs: Vec<MemorySlice>,
    pub outputs: Vec<MemorySlice>,
    /// Units `0..units` execute this node; all units when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<u32>,
}

impl GOperator {
    pub fn active_units(&self, parallel: &ParallelSpec) -> u32 {
        self.units.unwrap_or(parallel.unit_count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelSpec {
    pub unit_count: u32,
    pub group_size: u32,
}

impl ParallelSpec {
    pub fn new(unit_count: u32, group_size: u32) -> Self {
        ParallelSpec {
            unit_count,
            group_size,
        }
    }

    /// Spec for `units` parallel units on hardware with `hw_group` units per group.
    pub fn for_units(units: u32, hw_group: u32) -> Self {
        ParallelSpec::new(units, gcd(units, hw_group).max(1))
    }

    pub fn group_of(&self, unit: u32) -> u32 {
        unit / self.group_size
    }

    pub fn is_valid(&self) -> bool {
        self.unit_count > 0 && self.group_size > 0 && self.unit_count.is_multiple_of(self.group_size)
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// A dataflow graph of gOperators wrapped by a parallel specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GirGraph {
    #[serde(default = "graph_schema")]
    pub schema: String,
    /// Name of the hardware profile the levels refer to.
    pub profile: String,
    pub parallel: ParallelSpec,
    pub objects: Vec<MemoryObject>,
    pub nodes: Vec<GOperator>,
    /// Device objects initialized by the caller.
    pub inputs: Vec<ObjectId>,
    /// Device objects returned to the caller.
    pub outputs: Vec<ObjectId>,
}

fn graph_schema() -> String {
    GRAPH_SCHEMA.to_string()
}

impl GirGraph {
    pub fn new(profile: &str, parallel: ParallelSpec) -> Self {
        GirGraph {
            schema: graph_schema(),
            profile: profile.to_string(),
            parallel,
            objects: Vec::new(),
            nodes: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_object(&mut self, name: &str, level: &str, size: u64, kind: ElementKind) -> ObjectId {
        let id = self.objects.len() as ObjectId;
        self.objects.push(MemoryObject {
            id,
            name: name.to_string(),
            level: level.to_string(),
            size,
            kind,
        });
        id
    }

    pub fn add_input(&mut self, name: &str, level: &str, size: u64, kind: ElementKind) -> ObjectId {
        let id = self.add_object(name, level, size, kind);
        self.inputs.push(id);
        id
    }

    pub fn add_output(&mut self, name: &str, level: &str, size: u64, kind: ElementKind) -> ObjectId {
        let id = self.add_object(name, level, size, kind);
        self.outputs.push(id);
        id
    }

    pub fn next_node_id(&self) -> NodeId {
        self.nodes.iter().map(|n| n.id + 1).max().unwrap_or(0)
    }

    pub fn add_node(
        &mut self,
        op: OpKind,
        inputs: Vec<MemorySlice>,
        outputs: Vec<MemorySlice>,
        units: Option<u32>,
    ) -> NodeId {
        let id = self.next_node_id();
        self.nodes.push(GOperator {
            id,
            op,
            inputs,
            outputs,
            units,
        });
        id
    }

    pub fn node(&self, id: NodeId) -> Option<&GOperator> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut GOperator> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    pub fn remove_node(&mut self, id: NodeId) {
        self.nodes.retain(|n| n.id != id);
    }

    pub fn object(&self, id: ObjectId) -> &MemoryObject {
        &self.objects[id as usize]
    }

    pub fn object_by_name(&self, name: &str) -> Option<&MemoryObject> {
        self.objects.iter().find(|o| o.name == name)
    }

    pub fn is_external(&self, id: ObjectId) -> bool {
        self.inputs.contains(&id) || self.outputs.contains(&id)
    }

    pub fn slice_elements(&self, slice: &MemorySlice, unit: u32) -> Result<Vec<u64>> {
        let size = self
            .objects
            .get(slice.object as usize)
            .map(|o| o.size)
            .ok_or_else(|| Error::InvalidGraph(format!("unknown object {}", slice.object)))?;
        slice_elements(slice, size, unit)
    }

    /// Deterministic topological order, ties broken by ascending node id.
    pub fn topo_order(&self) -> Result<Vec<NodeId>> {
        Deps::build(self).map(|d| d.order)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: GirGraph = serde_json::from_str(text)?;
        if g.schema != GRAPH_SCHEMA {
            return Err(Error::Schema(format!("unsupported graph schema `{}`", g.schema)));
        }
        Ok(g)
    }

    /// Drops objects no node touches and renumbers the rest densely.
    pub fn compact_objects(&mut self) {
        let mut used = vec![false; self.objects.len()];
        for n in &self.nodes {
            for s in n.inputs.iter().chain(&n.outputs) {
                used[s.object as usize] = true;
            }
        }
        for &o in self.inputs.iter().chain(&self.outputs) {
            used[o as usize] = true;
        }
        let mut remap = vec![u32::MAX; self.objects.len()];
        let mut kept = Vec::new();
        for (i, o) in self.objects.drain(..).enumerate() {
            if used[i] {
                remap[i] = kept.len() as u32;
                kept.push(MemoryObject {
                    id: kept.len() as u32,
                    ..o
                });
            }
        }
        self.objects = kept;
        for n in &mut self.nodes {
            for s in n.inputs.iter_mut().chain(n.outputs.iter_mut()) {
                s.object = remap[s.object as usize];
            }
        }
        for o in self.inputs.iter_mut().chain(self.outputs.iter_mut()) {
            *o = remap[*o as usize];
        }
    }
}

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use super::{GirGraph, NodeId, ObjectId};
use crate::error::{Error, Result};

/// The element footprint of one node on one object, over all active units.
#[derive(Debug, Clone)]
pub struct Access {
    pub node: NodeId,
    pub object: ObjectId,
    pub write: bool,
    pub sync: bool,
    /// Sorted, disjoint, non-adjacent half-open address ranges.
    pub spans: Vec<(u64, u64)>,
}

impl Access {
    pub fn overlaps(&self, other: &Access) -> bool {
        spans_overlap(&self.spans, &other.spans)
    }

    pub fn elements(&self) -> impl Iterator<Item = u64> + '_ {
        self.spans.iter().flat_map(|&(a, b)| a..b)
    }
}

pub(crate) fn spans_overlap(a: &[(u64, u64)], b: &[(u64, u64)]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i].1 <= b[j].0 {
            i += 1;
        } else if b[j].1 <= a[i].0 {
            j += 1;
        } else {
            return true;
        }
    }
    false
}

/// Sorts and coalesces ranges.
pub(crate) fn normalize_spans(mut v: Vec<(u64, u64)>) -> Vec<(u64, u64)> {
    v.sort_unstable();
    let mut out: Vec<(u64, u64)> = Vec::with_capacity(v.len());
    for (a, b) in v {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

fn slice_spans(s: &super::MemorySlice, unit: u32, out: &mut Vec<(u64, u64)>) {
    let b = s.base.at(unit);
    if s.num == 1 || s.width == s.stride {
        out.push((b, b + s.total()));
    } else {
        out.extend((0..s.num).map(|r| (b + r * s.stride, b + r * s.stride + s.width)));
    }
}

impl GirGraph {
    /// Per-object footprints of every node. Sync nodes report the union of
    /// their input and output slices as a single non-write access.
    pub fn accesses(&self) -> BTreeMap<ObjectId, Vec<Access>> {
        let mut map: BTreeMap<ObjectId, Vec<Access>> = BTreeMap::new();
        for n in &self.nodes {
            let units = n.active_units(&self.parallel);
            let sync = n.op.is_sync();
            let mut per: BTreeMap<(ObjectId, bool), Vec<(u64, u64)>> = BTreeMap::new();
            for (slices, write) in [(&n.inputs, false), (&n.outputs, !sync)] {
                for s in slices {
                    let e = per.entry((s.object, write)).or_default();
                    for u in 0..units {
                        slice_spans(s, u, e);
                    }
                }
            }
            for ((object, write), spans) in per {
                map.entry(object).or_default().push(Access {
                    node: n.id,
                    object,
                    write,
                    sync,
                    spans: normalize_spans(spans),
                });
            }
        }
        map
    }

    /// Dependence edges derived from element footprints.
    ///
    /// Writers precede overlapping readers, except on caller-initialized
    /// objects where reads of the initial value precede overwrites. Syncs sit
    /// between the writers and readers they overlap.
    pub fn dependence_edges(&self) -> BTreeSet<(NodeId, NodeId)> {
        let mut edges = BTreeSet::new();
        for (object, acc) in self.accesses() {
            let initialized = self.inputs.contains(&object);
            let order = |a: &Access, b: &Access| -> Option<(NodeId, NodeId)> {
                let writer = |x: &Access| !x.sync && x.write;
                let reader = |x: &Access| !x.sync && !x.write;
                if writer(a) && reader(b) {
                    Some(if initialized { (b.node, a.node) } else { (a.node, b.node) })
                } else if (writer(a) && b.sync) || (a.sync && reader(b)) {
                    Some((a.node, b.node))
                } else if (a.sync && b.sync) || (writer(a) && writer(b)) {
                    Some((a.node.min(b.node), a.node.max(b.node)))
                } else {
                    None
                }
            };
            for (i, a) in acc.iter().enumerate() {
                for b in &acc[i + 1..] {
                    if a.node == b.node || !a.overlaps(b) {
                        continue;
                    }
                    if let Some(e) = order(a, b).or_else(|| order(b, a)) {
                        edges.insert(e);
                    }
                }
            }
        }
        edges
    }
}

/// Dependence structure of a graph with its deterministic topological order.
#[derive(Debug, Clone)]
pub struct Deps {
    pub order: Vec<NodeId>,
    pub succ: HashMap<NodeId, BTreeSet<NodeId>>,
    pub pred: HashMap<NodeId, BTreeSet<NodeId>>,
}

impl Deps {
    pub fn build(g: &GirGraph) -> Result<Deps> {
        let mut succ: HashMap<NodeId, BTreeSet<NodeId>> = HashMap::new();
        let mut pred: HashMap<NodeId, BTreeSet<NodeId>> = HashMap::new();
        for n in &g.nodes {
            succ.entry(n.id).or_default();
            pred.entry(n.id).or_default();
        }
        for (a, b) in g.dependence_edges() {
            succ.entry(a).or_default().insert(b);
            pred.entry(b).or_default().insert(a);
        }
        let mut indeg: HashMap<NodeId, usize> = pred.iter().map(|(k, v)| (*k, v.len())).collect();
        let mut ready: BinaryHeap<Reverse<NodeId>> = indeg
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(k, _)| Reverse(*k))
            .collect();
        let mut order = Vec::with_capacity(g.nodes.len());
        while let Some(Reverse(n)) = ready.pop() {
            order.push(n);
            for s in &succ[&n] {
                let d = indeg.get_mut(s).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(Reverse(*s));
                }
            }
        }
        if order.len() != g.nodes.len() {
            return Err(Error::Cycle);
        }
        Ok(Deps { order, succ, pred })
    }

    pub fn successors(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.succ.get(&n).into_iter().flatten().copied()
    }

    pub fn predecessors(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.pred.get(&n).into_iter().flatten().copied()
    }

    /// Whether a directed path leads from `from` to `to`.
    pub fn reaches(&self, from: NodeId, to: NodeId) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            if seen.insert(n) {
                stack.extend(self.successors(n));
            }
        }
        false
    }

    /// Position of each node in the topological order.
    pub fn positions(&self) -> HashMap<NodeId, usize> {
        self.order.iter().enumerate().map(|(i, n)| (*n, i)).collect()
    }
}

//! Combining two lowered graphs into one kernel.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::gir::{Base, GirGraph, MemorySlice, ObjectId, OpKind};
use crate::profile::SyncScope;

/// Operator-level dependence structure of a basic-op DAG.
#[derive(Debug, Clone)]
pub struct OpDag {
    pub inputs: Vec<Vec<String>>,
    pub outputs: Vec<Vec<String>>,
    /// `reach[a][b]`: a directed path leads from op `a` to op `b`.
    reach: Vec<Vec<bool>>,
}

impl OpDag {
    /// `ops` lists each operator's input and output tensors, topologically sorted.
    pub fn new(ops: Vec<(Vec<String>, Vec<String>)>) -> Self {
        let n = ops.len();
        let (inputs, outputs): (Vec<_>, Vec<_>) = ops.into_iter().unzip();
        let mut reach = vec![vec![false; n]; n];
        for b in 0..n {
            for a in (0..b).rev() {
                let direct = outputs[a].iter().any(|t| inputs[b].contains(t));
                if direct || (a + 1..b).any(|m| reach[a][m] && reach[m][b]) {
                    reach[a][b] = true;
                }
            }
        }
        OpDag { inputs, outputs, reach }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn edge(&self, a: usize, b: usize) -> bool {
        self.outputs[a].iter().any(|t| self.inputs[b].contains(t))
    }

    pub fn reaches(&self, a: usize, b: usize) -> bool {
        self.reach[a][b]
    }

    /// Direct edge either way, or a common input tensor.
    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.edge(a, b) || self.edge(b, a) || self.inputs[a].iter().any(|t| self.inputs[b].contains(t))
    }
}

/// Whether the candidate graphs of ops `a` and `b` may share one kernel:
/// equal parallel structure, and no path between the two ops leaves the pair.
pub fn can_merge(g1: &GirGraph, g2: &GirGraph, dag: &OpDag, a: usize, b: usize) -> bool {
    if g1.parallel != g2.parallel {
        return false;
    }
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    !(0..dag.len()).any(|x| x != lo && x != hi && dag.reaches(lo, x) && dag.reaches(x, hi))
}

fn whole(g: &GirGraph, o: ObjectId) -> MemorySlice {
    MemorySlice::contiguous(o, g.object(o).size, Base::default())
}

fn has_device_sync(g: &GirGraph, o: ObjectId) -> bool {
    g.nodes.iter().any(|n| {
        matches!(n.op, OpKind::Sync { scope: SyncScope::Device }) && n.outputs.iter().any(|s| s.object == o)
    })
}

/// Union of two graphs with external objects identified by name.
///
/// A tensor stored by one side and loaded by the other gets a DEVICE Sync
/// between the two, and a tensor both sides load gets one Sync ahead of the
/// loads. Stored tensors not listed in `keep` stop being outputs.
pub fn merge_graphs(g1: &GirGraph, g2: &GirGraph, keep: &BTreeSet<String>) -> Result<GirGraph> {
    if g1.parallel != g2.parallel {
        return Err(Error::Merge(format!(
            "parallel structures differ: {}x{} vs {}x{}",
            g1.parallel.unit_count, g1.parallel.group_size, g2.parallel.unit_count, g2.parallel.group_size
        )));
    }
    if g1.profile != g2.profile {
        return Err(Error::Merge(format!("profiles differ: {} vs {}", g1.profile, g2.profile)));
    }
    let mut g = g1.clone();
    let external1: BTreeMap<String, ObjectId> = g1
        .inputs
        .iter()
        .chain(&g1.outputs)
        .map(|&o| (g1.object(o).name.clone(), o))
        .collect();
    let external2: BTreeSet<String> = g2
        .inputs
        .iter()
        .chain(&g2.outputs)
        .map(|&o| g2.object(o).name.clone())
        .collect();
    let mut taken: BTreeSet<String> = g.objects.iter().map(|o| o.name.clone()).collect();
    taken.extend(external2.iter().cloned());
    let rename = |name: &str, taken: &mut BTreeSet<String>| {
        let fresh = (1..).map(|k| format!("{name}~{k}")).find(|c| !taken.contains(c)).unwrap();
        taken.insert(fresh.clone());
        fresh
    };
    // Internal objects of g1 that clash with a g2 external name move aside.
    for o in 0..g.objects.len() {
        let id = o as ObjectId;
        if !g.is_external(id) && external2.contains(&g.objects[o].name) {
            let fresh = rename(&g.objects[o].name, &mut taken);
            g.objects[o].name = fresh;
        }
    }

    let mut map: Vec<ObjectId> = Vec::with_capacity(g2.objects.len());
    for (i, o) in g2.objects.iter().enumerate() {
        let id = i as ObjectId;
        if g2.is_external(id) {
            if let Some(&shared) = external1.get(&o.name) {
                let s = g.object(shared);
                if s.size != o.size || s.kind != o.kind {
                    return Err(Error::Merge(format!("tensor `{}` has conflicting descriptions", o.name)));
                }
                map.push(shared);
                continue;
            }
            map.push(g.add_object(&o.name, &o.level, o.size, o.kind));
        } else {
            let name = if taken.contains(&o.name) {
                rename(&o.name, &mut taken)
            } else {
                taken.insert(o.name.clone());
                o.name.clone()
            };
            map.push(g.add_object(&name, &o.level, o.size, o.kind));
        }
    }

    let offset = g.next_node_id();
    for n in &g2.nodes {
        let mut n = n.clone();
        n.id += offset;
        for s in n.inputs.iter_mut().chain(n.outputs.iter_mut()) {
            s.object = map[s.object as usize];
        }
        g.nodes.push(n);
    }

    let in1: BTreeSet<ObjectId> = g1.inputs.iter().copied().collect();
    let out1: BTreeSet<ObjectId> = g1.outputs.iter().copied().collect();
    let in2: BTreeSet<ObjectId> = g2.inputs.iter().map(|&o| map[o as usize]).collect();
    let out2: BTreeSet<ObjectId> = g2.outputs.iter().map(|&o| map[o as usize]).collect();
    let written: BTreeSet<ObjectId> = out1.union(&out2).copied().collect();
    let handoff: BTreeSet<ObjectId> = out1
        .intersection(&in2)
        .chain(out2.intersection(&in1))
        .copied()
        .collect();
    let common: BTreeSet<ObjectId> = in1.intersection(&in2).filter(|o| !written.contains(o)).copied().collect();

    for &o in handoff.iter().chain(&common) {
        if !has_device_sync(&g, o) {
            let w = whole(&g, o);
            g.add_node(OpKind::Sync { scope: SyncScope::Device }, vec![w], vec![w], Some(1));
        }
    }

    let mut inputs: Vec<ObjectId> = Vec::new();
    let mut outputs: Vec<ObjectId> = Vec::new();
    for &o in g1.inputs.iter().chain(g2.inputs.iter().map(|o| &map[*o as usize])) {
        if !written.contains(&o) && !inputs.contains(&o) {
            inputs.push(o);
        }
    }
    for &o in g1.outputs.iter().chain(g2.outputs.iter().map(|o| &map[*o as usize])) {
        let consumed = handoff.contains(&o);
        if (!consumed || keep.contains(&g.object(o).name)) && !outputs.contains(&o) {
            outputs.push(o);
        }
    }
    g.inputs = inputs;
    g.outputs = outputs;
    Ok(g)
}

//! Reference semantics for GIR graphs and operator-level graphs.
//!
//! GIR execution follows a phase-commit memory model. The program is split
//! into phases at every Sync node (in topological order). Inside a phase each
//! unit runs its own instruction stream; a write is visible to its own
//! (unit, lane) immediately and to anyone else only after a Sync on that
//! object whose scope spans both accessors. A read that can see neither a
//! visible write nor a committed value is an undefined read.

mod races;
mod reference;
mod tensor;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gir::{BroadcastMode, GirGraph, MemorySlice, NodeId, OpKind, ParallelSpec};
use crate::profile::{HardwareProfile, SyncScope};

pub use races::{detect_races, RaceReport};
pub use reference::{eval_operator, run_reference, run_reference_all};
pub use tensor::{read_tensor, write_tensor, Tensor, TensorMap};

/// Flat buffers keyed by object name.
pub type Buffers = BTreeMap<String, Vec<f64>>;

/// Elements moved per memory level, keyed by level name.
pub type Traffic = BTreeMap<String, u64>;

/// Who touches an element: a parallel unit and the lane inside it. A lane is
/// the element's position in the unit's slice stream, so only a handoff
/// whose reader walks the same addresses in the same order stays in-lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Accessor {
    pub unit: u32,
    pub lane: u32,
}

/// Whether a sync of `scope` orders accesses by `a` and `b`.
pub fn scope_covers(scope: SyncScope, a: Accessor, b: Accessor, parallel: &ParallelSpec) -> bool {
    match scope {
        SyncScope::Lane => a == b,
        SyncScope::Unit => a.unit == b.unit,
        SyncScope::Group => parallel.group_of(a.unit) == parallel.group_of(b.unit),
        SyncScope::Device => true,
    }
}

/// The lane that handles the `k`-th element of a slice.
pub fn lane_of(k: u64, lane_width: u32) -> u32 {
    (k % lane_width as u64) as u32
}

#[derive(Debug, Clone, Default)]
pub struct ExecOptions {
    /// Order in which units run inside a phase; ascending when absent.
    pub unit_order: Option<Vec<u32>>,
}

#[derive(Debug, Clone)]
pub struct Execution {
    pub outputs: Buffers,
    pub traffic: Traffic,
}

#[derive(Debug, Clone, Copy, Default)]
struct Cell {
    value: Option<f64>,
    /// Value other accessors still see while `value` is unpublished.
    committed: Option<f64>,
    writer: Option<Accessor>,
    published: Option<SyncScope>,
}

struct Machine<'a> {
    g: &'a GirGraph,
    memory: Vec<Vec<Cell>>,
    traffic: Traffic,
}

impl<'a> Machine<'a> {
    fn new(g: &'a GirGraph, inputs: &Buffers) -> Result<Self> {
        let mut memory: Vec<Vec<Cell>> = g
            .objects
            .iter()
            .map(|o| vec![Cell::default(); o.size as usize])
            .collect();
        for &id in &g.inputs {
            let obj = g.object(id);
            let data = inputs
                .get(&obj.name)
                .ok_or_else(|| Error::Execution(format!("missing input `{}`", obj.name)))?;
            if data.len() as u64 != obj.size {
                return Err(Error::Execution(format!(
                    "input `{}` has {} elements, expected {}",
                    obj.name,
                    data.len(),
                    obj.size
                )));
            }
            for (c, v) in memory[id as usize].iter_mut().zip(data) {
                c.value = Some(*v);
                c.committed = Some(*v);
            }
        }
        Ok(Machine {
            g,
            memory,
            traffic: Traffic::new(),
        })
    }

    fn read(&self, node: NodeId, s: &MemorySlice, unit: u32) -> Result<Vec<f64>> {
        let cells = &self.memory[s.object as usize];
        s.addresses(unit)
            .enumerate()
            .map(|(k, addr)| {
                let r = Accessor { unit, lane: k as u32 };
                let c = cells.get(addr as usize).ok_or(Error::OutOfBounds {
                    object: s.object,
                    address: addr,
                    size: cells.len() as u64,
                })?;
                let visible = match c.writer {
                    None => c.value,
                    Some(w) if w == r => c.value,
                    Some(w) => match c.published {
                        Some(p) if scope_covers(p, w, r, &self.g.parallel) => c.value,
                        _ => c.committed,
                    },
                };
                visible.ok_or_else(|| Error::UndefinedRead {
                    object: self.g.object(s.object).name.clone(),
                    address: addr,
                    unit,
                    lane: r.lane,
                    node,
                })
            })
            .collect()
    }

    fn write(&mut self, s: &MemorySlice, unit: u32, values: &[f64]) -> Result<()> {
        let cells = &mut self.memory[s.object as usize];
        for (k, addr) in s.addresses(unit).enumerate() {
            let size = cells.len() as u64;
            let c = cells.get_mut(addr as usize).ok_or(Error::OutOfBounds {
                object: s.object,
                address: addr,
                size,
            })?;
            if c.writer.is_none() || c.published == Some(SyncScope::Device) {
                c.committed = c.value;
            }
            c.value = Some(values[k]);
            c.writer = Some(Accessor { unit, lane: k as u32 });
            c.published = None;
        }
        Ok(())
    }

    fn sync(&mut self, node: &crate::gir::GOperator, scope: SyncScope) {
        let units = node.active_units(&self.g.parallel);
        for s in node.inputs.iter().chain(&node.outputs) {
            let cells = &mut self.memory[s.object as usize];
            for u in 0..units {
                for addr in s.addresses(u) {
                    if let Some(c) = cells.get_mut(addr as usize) {
                        if c.writer.is_some() {
                            c.published = Some(c.published.map_or(scope, |p| p.max(scope)));
                        }
                    }
                }
            }
        }
    }

    fn step(&mut self, node: &crate::gir::GOperator, unit: u32) -> Result<()> {
        let ins: Vec<Vec<f64>> = node
            .inputs
            .iter()
            .map(|s| self.read(node.id, s, unit))
            .collect::<Result<_>>()?;
        let out = match node.op {
            OpKind::Move => {
                let n = ins[0].len() as u64;
                for s in node.inputs.iter().chain(&node.outputs) {
                    *self
                        .traffic
                        .entry(self.g.object(s.object).level.clone())
                        .or_default() += n;
                }
                ins[0].clone()
            }
            OpKind::ElementWise { op } => (0..node.outputs[0].total() as usize)
                .map(|k| {
                    let args: Vec<f64> = ins.iter().map(|v| v[k]).collect();
                    op.eval(&args)
                })
                .collect(),
            OpKind::Reduce { reduce, extent } => ins[0]
                .chunks(extent as usize)
                .map(|c| c.iter().fold(reduce.identity(), |a, &b| reduce.combine(a, b)))
                .collect(),
            OpKind::Broadcast { factor, mode } => {
                let src = &ins[0];
                (0..node.outputs[0].total() as usize)
                    .map(|k| match mode {
                        BroadcastMode::Repeat => src[k / factor as usize],
                        BroadcastMode::Tile => src[k % src.len()],
                    })
                    .collect()
            }
            OpKind::Sync { .. } => unreachable!("syncs are phase boundaries"),
        };
        self.write(&node.outputs[0], unit, &out)
    }
}

/// Splits a topological order into Sync-free phases and the Syncs between them.
pub(crate) fn phases(g: &GirGraph) -> Result<Vec<(Vec<NodeId>, Option<NodeId>)>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for id in g.topo_order()? {
        if g.node(id).unwrap().op.is_sync() {
            out.push((std::mem::take(&mut cur), Some(id)));
        } else {
            cur.push(id);
        }
    }
    out.push((cur, None));
    Ok(out)
}

/// Executes `g` and reports outputs together with per-level traffic.
pub fn execute(
    g: &GirGraph,
    _profile: &HardwareProfile,
    inputs: &Buffers,
    opts: &ExecOptions,
) -> Result<Execution> {
    let mut m = Machine::new(g, inputs)?;
    let order: Vec<u32> = opts
        .unit_order
        .clone()
        .unwrap_or_else(|| (0..g.parallel.unit_count).collect());
    for (body, sync) in phases(g)? {
        let nodes: Vec<_> = body.iter().map(|id| g.node(*id).unwrap()).collect();
        for &u in &order {
            for n in &nodes {
                if u < n.active_units(&g.parallel) {
                    m.step(n, u)?;
                }
            }
        }
        if let Some(s) = sync {
            let n = g.node(s).unwrap();
            if let OpKind::Sync { scope } = n.op {
                m.sync(n, scope);
            }
        }
    }
    let mut outputs = Buffers::new();
    for &id in &g.outputs {
        let obj = g.object(id);
        let vals = m.memory[id as usize]
            .iter()
            .enumerate()
            .map(|(i, c)| {
                c.value.ok_or_else(|| {
                    Error::Execution(format!("output `{}`[{i}] never written", obj.name))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        outputs.insert(obj.name.clone(), vals);
    }
    Ok(Execution {
        outputs,
        traffic: m.traffic,
    })
}

/// Runs `g` on `inputs` and returns its external outputs.
pub fn run_gir(g: &GirGraph, profile: &HardwareProfile, inputs: &Buffers) -> Result<Buffers> {
    execute(g, profile, inputs, &ExecOptions::default()).map(|e| e.outputs)
}

/// Elements transferred by Move nodes, at both source and destination level.
pub fn count_traffic(g: &GirGraph, profile: &HardwareProfile, inputs: &Buffers) -> Result<Traffic> {
    execute(g, profile, inputs, &ExecOptions::default()).map(|e| e.traffic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gir::{Base, ElementKind, ScalarOp};

    fn gpu() -> HardwareProfile {
        HardwareProfile::generic_gpu()
    }

    /// Two units each load 2 elements, apply relu and store back.
    fn relu_graph() -> GirGraph {
        let mut g = GirGraph::new("generic-gpu", ParallelSpec::new(2, 2));
        let a = g.add_input("a", "device", 2, ElementKind::I32);
        let r = g.add_object("r", "unit", 2, ElementKind::I32);
        let t = g.add_object("t", "unit", 2, ElementKind::I32);
        let b = g.add_output("b", "device", 2, ElementKind::I32);
        let s = |o| MemorySlice::contiguous(o, 1, Base::new(0, 1));
        g.add_node(OpKind::Move, vec![s(a)], vec![s(r)], None);
        g.add_node(OpKind::ElementWise { op: ScalarOp::Relu }, vec![s(r)], vec![s(t)], None);
        g.add_node(OpKind::Move, vec![s(t)], vec![s(b)], None);
        g
    }

    #[test]
    fn relu_example() {
        let out = run_gir(&relu_graph(), &gpu(), &Buffers::from([("a".into(), vec![-3.0, 5.0])])).unwrap();
        assert_eq!(out["b"], vec![0.0, 5.0]);
    }

    #[test]
    fn pure_copy() {
        let mut g = GirGraph::new("generic-gpu", ParallelSpec::new(1, 1));
        let a = g.add_input("a", "device", 3, ElementKind::I32);
        let b = g.add_output("b", "device", 3, ElementKind::I32);
        let s = |o| MemorySlice::contiguous(o, 3, Base::default());
        g.add_node(OpKind::Move, vec![s(a)], vec![s(b)], None);
        let inp = Buffers::from([("a".into(), vec![1.0, 2.0, 3.0])]);
        assert_eq!(run_gir(&g, &gpu(), &inp).unwrap()["b"], vec![1.0, 2.0, 3.0]);
        assert_eq!(count_traffic(&g, &gpu(), &inp).unwrap()["device"], 6);
    }

    #[test]
    fn load_store_traffic() {
        let t = count_traffic(&relu_graph(), &gpu(), &Buffers::from([("a".into(), vec![1.0, 2.0])])).unwrap();
        assert_eq!(t["device"], 4);
        assert_eq!(t["unit"], 4);
    }

    #[test]
    fn cross_unit_read_without_sync_is_undefined() {
        // Unit u writes x[u]; unit u then reads x[1 - u] with no sync.
        let mut g = GirGraph::new("generic-gpu", ParallelSpec::new(2, 2));
        let a = g.add_input("a", "device", 2, ElementKind::I32);
        let x = g.add_object("x", "group", 2, ElementKind::I32);
        let b = g.add_output("b", "device", 2, ElementKind::I32);
        let fwd = |o| MemorySlice::contiguous(o, 1, Base::new(0, 1));
        g.add_node(OpKind::Move, vec![fwd(a)], vec![fwd(x)], None);
        // Unit 0 reads x[1] via a reversed base on a second slice family.
        let rev = MemorySlice::new(x, 1, 1, 1, Base::new(1, 0));
        g.add_node(OpKind::Move, vec![rev], vec![MemorySlice::contiguous(b, 1, Base::new(0, 0))], Some(1));
        let only1 = MemorySlice::contiguous(b, 1, Base::new(1, 0));
        g.add_node(OpKind::Move, vec![MemorySlice::contiguous(x, 1, Base::new(0, 0))], vec![only1], Some(1));
        let inp = Buffers::from([("a".into(), vec![7.0, 8.0])]);
        let err = run_gir(&g, &gpu(), &inp).unwrap_err();
        assert!(matches!(err, Error::UndefinedRead { .. }));

        // A group-scope sync makes the exchange well defined.
        let mut synced = g.clone();
        let whole = MemorySlice::contiguous(x, 2, Base::default());
        synced.add_node(OpKind::Sync { scope: SyncScope::Group }, vec![whole], vec![whole], Some(1));
        let out = run_gir(&synced, &gpu(), &inp).unwrap();
        assert_eq!(out["b"], vec![8.0, 7.0]);
    }

    #[test]
    fn unit_order_does_not_matter() {
        let g = relu_graph();
        let inp = Buffers::from([("a".into(), vec![-1.0, 4.0])]);
        let a = execute(&g, &gpu(), &inp, &ExecOptions::default()).unwrap();
        let b = execute(&g, &gpu(), &inp, &ExecOptions { unit_order: Some(vec![1, 0]) }).unwrap();
        assert_eq!(a.outputs, b.outputs);
        assert_eq!(a.traffic, b.traffic);
    }
}

//! Graph rewriting: sync insertion, Move merging and element-wise swapping,
//! driven to a fixpoint by [`optimize`].

mod merge;
mod scope;
mod swap;

use serde::Serialize;

use crate::costmodel::estimate;
use crate::error::{Error, Result};
use crate::gir::{validate, GirGraph, NodeId, OpKind};
use crate::profile::HardwareProfile;

pub use merge::{merge_raw, merge_rar};
pub use scope::{determine_sync_scope, insert_sync, pair_scope, scope_between, Sided};
pub use swap::swap;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewriteRecord {
    pub rule: &'static str,
    pub nodes_before: Vec<NodeId>,
    pub nodes_after: Vec<NodeId>,
    pub device_traffic_before: u64,
    pub device_traffic_after: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph: Option<GirGraph>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RewriteTrace {
    pub records: Vec<RewriteRecord>,
}

impl RewriteTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Whether modeled device traffic never grows from one record to the next.
    pub fn is_monotone(&self) -> bool {
        self.records
            .iter()
            .all(|r| r.device_traffic_after <= r.device_traffic_before)
            && self
                .records
                .windows(2)
                .all(|w| w[1].device_traffic_before <= w[0].device_traffic_after)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OptimizeOptions {
    /// Attach a snapshot of the graph to every trace record.
    pub dump_graphs: bool,
}

struct Recorder<'a> {
    profile: &'a HardwareProfile,
    opts: OptimizeOptions,
    trace: RewriteTrace,
}

impl Recorder<'_> {
    fn apply(&mut self, rule: &'static str, before: &GirGraph, after: GirGraph, touched: &[NodeId]) -> GirGraph {
        let ids = |g: &GirGraph| -> Vec<NodeId> { g.nodes.iter().map(|n| n.id).collect() };
        let (b, a) = (ids(before), ids(&after));
        let mut nodes_before: Vec<NodeId> = b.iter().filter(|i| !a.contains(i)).copied().collect();
        let mut nodes_after: Vec<NodeId> = a.iter().filter(|i| !b.contains(i)).copied().collect();
        for t in touched {
            if b.contains(t) && !nodes_before.contains(t) {
                nodes_before.push(*t);
            }
            if a.contains(t) && !nodes_after.contains(t) {
                nodes_after.push(*t);
            }
        }
        nodes_before.sort_unstable();
        nodes_after.sort_unstable();
        self.trace.records.push(RewriteRecord {
            rule,
            nodes_before,
            nodes_after,
            device_traffic_before: estimate(before, self.profile).device_traffic(self.profile),
            device_traffic_after: estimate(&after, self.profile).device_traffic(self.profile),
            graph: self.opts.dump_graphs.then(|| after.clone()),
        });
        after
    }
}

fn find_swap(g: &GirGraph, profile: &HardwareProfile) -> Result<Option<(GirGraph, [NodeId; 2])>> {
    for id in g.topo_order()? {
        let e = g.node(id).unwrap();
        if !matches!(e.op, OpKind::ElementWise { op } if op.is_unary()) {
            continue;
        }
        let t = e.outputs[0].object;
        let consumers: Vec<NodeId> = g
            .nodes
            .iter()
            .filter(|n| n.id != id && n.inputs.iter().chain(&n.outputs).any(|s| s.object == t))
            .map(|n| n.id)
            .collect();
        if let [n] = consumers[..] {
            if let Some(next) = swap(g, profile, id, n) {
                return Ok(Some((next, [id, n])));
            }
        }
    }
    Ok(None)
}

fn find_merge(g: &GirGraph) -> Result<Option<(&'static str, GirGraph, [NodeId; 2])>> {
    let order = g.topo_order()?;
    let moves: Vec<NodeId> = order.iter().copied().filter(|&i| g.node(i).unwrap().op.is_move()).collect();
    for (i, &m0) in moves.iter().enumerate() {
        let x = g.node(m0).unwrap().outputs[0].object;
        for &m1 in &moves[i + 1..] {
            let n1 = g.node(m1).unwrap();
            if n1.inputs[0].object == x {
                if let Some(next) = merge_raw(g, m0, m1) {
                    return Ok(Some(("merge_raw", next, [m0, m1])));
                }
            }
            if n1.inputs[0] == g.node(m0).unwrap().inputs[0] {
                if let Some(next) = merge_rar(g, m0, m1) {
                    return Ok(Some(("merge_rar", next, [m0, m1])));
                }
            }
        }
    }
    Ok(None)
}

/// Greedy rewriting to a fixpoint: insert syncs, swap while possible, merge
/// while possible, and repeat until a round merges nothing.
pub fn optimize(g: &GirGraph, profile: &HardwareProfile) -> Result<(GirGraph, RewriteTrace)> {
    optimize_with(g, profile, OptimizeOptions::default())
}

pub fn optimize_with(g: &GirGraph, profile: &HardwareProfile, opts: OptimizeOptions) -> Result<(GirGraph, RewriteTrace)> {
    if let Some(d) = validate(g, profile).into_iter().next() {
        return Err(Error::InvalidGraph(d.to_string()));
    }
    let mut rec = Recorder { profile, opts, trace: RewriteTrace::default() };
    let mut g = g.clone();
    loop {
        let synced = insert_sync(&g, profile)?;
        if synced != g {
            g = rec.apply("insert_sync", &g, synced, &[]);
        }
        while let Some((next, pair)) = find_swap(&g, profile)? {
            g = rec.apply("swap", &g, next, &pair);
        }
        let mut merged = false;
        while let Some((rule, next, pair)) = find_merge(&g)? {
            g = rec.apply(rule, &g, next, &pair);
            merged = true;
        }
        if !merged {
            break;
        }
    }
    g.compact_objects();
    Ok((g, rec.trace))
}

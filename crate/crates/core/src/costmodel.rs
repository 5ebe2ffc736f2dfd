//! Analytical time model over per-level traffic and synchronization counts.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::gir::{GirGraph, OpKind};
use crate::profile::{HardwareProfile, SyncScope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    /// Level times and sync costs add up.
    #[default]
    Additive,
    /// Transfers at different levels overlap; only the slowest level counts.
    Overlap,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostEstimate {
    pub traffic: BTreeMap<String, u64>,
    pub sync_count: BTreeMap<SyncScope, u64>,
    pub time: f64,
}

impl CostEstimate {
    pub fn device_traffic(&self, profile: &HardwareProfile) -> u64 {
        self.traffic.get(&profile.device_level().name).copied().unwrap_or(0)
    }
}

pub fn estimate(g: &GirGraph, profile: &HardwareProfile) -> CostEstimate {
    estimate_with(g, profile, TimeMode::Additive)
}

pub fn estimate_with(g: &GirGraph, profile: &HardwareProfile, mode: TimeMode) -> CostEstimate {
    let mut traffic: BTreeMap<String, u64> = BTreeMap::new();
    let mut sync_count: BTreeMap<SyncScope, u64> = BTreeMap::new();
    for n in &g.nodes {
        match n.op {
            OpKind::Move => {
                let moved = n.inputs[0].total() * n.active_units(&g.parallel) as u64;
                for s in n.inputs.iter().chain(&n.outputs) {
                    *traffic.entry(g.object(s.object).level.clone()).or_default() += moved;
                }
            }
            OpKind::Sync { scope } => *sync_count.entry(scope).or_default() += 1,
            _ => {}
        }
    }
    let level_times = traffic.iter().map(|(l, &n)| {
        let bw = profile.level(l).map_or(1.0, |m| m.bandwidth);
        n as f64 / bw
    });
    let syncs: f64 = sync_count.iter().map(|(&s, &c)| c as f64 * profile.sync_cost(s)).sum();
    let time = match mode {
        TimeMode::Additive => level_times.sum::<f64>() + syncs,
        TimeMode::Overlap => level_times.fold(0.0, f64::max) + syncs,
    };
    CostEstimate { traffic, sync_count, time }
}

/// Bytes moved per level, using each object's element width.
pub fn traffic_bytes(g: &GirGraph) -> BTreeMap<String, u64> {
    let mut out: BTreeMap<String, u64> = BTreeMap::new();
    for n in g.nodes.iter().filter(|n| n.op.is_move()) {
        let moved = n.inputs[0].total() * n.active_units(&g.parallel) as u64;
        for s in n.inputs.iter().chain(&n.outputs) {
            let o = g.object(s.object);
            *out.entry(o.level.clone()).or_default() += moved * (o.kind.bits() as u64).div_ceil(8);
        }
    }
    out
}

/// Admissible bound on remaining cost: every boundary element still to be
/// touched must cross device memory at least once.
pub fn lower_bound(boundary_elements: u64, profile: &HardwareProfile) -> f64 {
    boundary_elements as f64 / profile.device_level().bandwidth
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gir::{Base, ElementKind, MemorySlice, ParallelSpec, ScalarOp};

    #[test]
    fn load_relu_store() {
        let p = HardwareProfile::generic_gpu();
        let mut g = GirGraph::new("generic-gpu", ParallelSpec::new(1, 1));
        let n = 64;
        let a = g.add_input("a", "device", n, ElementKind::I32);
        let r = g.add_object("r", "unit", n, ElementKind::I32);
        let t = g.add_object("t", "unit", n, ElementKind::I32);
        let b = g.add_output("b", "device", n, ElementKind::I32);
        let s = |o| MemorySlice::contiguous(o, n, Base::default());
        g.add_node(OpKind::Move, vec![s(a)], vec![s(r)], None);
        g.add_node(OpKind::ElementWise { op: ScalarOp::Relu }, vec![s(r)], vec![s(t)], None);
        g.add_node(OpKind::Move, vec![s(t)], vec![s(b)], None);
        let e = estimate(&g, &p);
        assert_eq!(e.device_traffic(&p), 2 * n);
        let unit = p.level("unit").unwrap().bandwidth;
        assert!((e.time - (2.0 * n as f64 / 1.0 + 2.0 * n as f64 / unit)).abs() < 1e-9);
        let o = estimate_with(&g, &p, TimeMode::Overlap);
        assert!((o.time - 2.0 * n as f64).abs() < 1e-9);
    }

    #[test]
    fn empty_bound() {
        assert_eq!(lower_bound(0, &HardwareProfile::generic_gpu()), 0.0);
        assert_eq!(lower_bound(128, &HardwareProfile::generic_gpu()), 128.0);
    }
}

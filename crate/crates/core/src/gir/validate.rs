use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use super::{GirGraph, MemorySlice, NodeId, OpKind};
use crate::error::Error;
use crate::gir::graph::normalize_spans;
use crate::gir::Deps;
use crate::profile::HardwareProfile;

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Diagnostic {
    pub node: Option<NodeId>,
    pub invariant: &'static str,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(n) => write!(f, "node {n}: {}: {}", self.invariant, self.message),
            None => write!(f, "{}: {}", self.invariant, self.message),
        }
    }
}

struct Collector(Vec<Diagnostic>);

impl Collector {
    fn push(&mut self, node: Option<NodeId>, invariant: &'static str, message: String) {
        self.0.push(Diagnostic {
            node,
            invariant,
            message,
        });
    }
}

/// Checks every structural and typing invariant of `g` against `profile`.
/// An empty result means the graph is well-formed.
pub fn validate(g: &GirGraph, profile: &HardwareProfile) -> Vec<Diagnostic> {
    let mut d = Collector(Vec::new());
    if !g.parallel.is_valid() {
        d.push(None, "parallel", format!("invalid parallel spec {:?}", g.parallel));
        return d.0;
    }
    for (i, o) in g.objects.iter().enumerate() {
        if o.id as usize != i {
            d.push(None, "object-id", format!("object `{}` has id {} at index {i}", o.name, o.id));
        }
        if o.size == 0 {
            d.push(None, "object-size", format!("object `{}` is empty", o.name));
        }
        if profile.level(&o.level).is_none() {
            d.push(None, "unknown-level", format!("object `{}` on unknown level `{}`", o.name, o.level));
        }
    }
    for &e in g.inputs.iter().chain(&g.outputs) {
        match g.objects.get(e as usize) {
            Some(o) if !profile.is_device(&o.level) => d.push(
                None,
                "external-level",
                format!("external object `{}` is not on the device level", o.name),
            ),
            None => d.push(None, "unknown-object", format!("external id {e}")),
            _ => {}
        }
    }
    let mut ids = BTreeSet::new();
    let mut slices_ok = true;
    for n in &g.nodes {
        if !ids.insert(n.id) {
            d.push(Some(n.id), "node-id", "duplicate node id".into());
        }
        let units = n.active_units(&g.parallel);
        if units == 0 || units > g.parallel.unit_count {
            d.push(Some(n.id), "active-units", format!("{units} active units"));
            slices_ok = false;
            continue;
        }
        for s in n.inputs.iter().chain(&n.outputs) {
            if !check_slice(g, n.id, s, units, &mut d) {
                slices_ok = false;
            }
        }
        check_kind(g, n, &mut d);
    }
    if !slices_ok {
        return d.0;
    }
    if let Err(Error::Cycle) = Deps::build(g) {
        d.push(None, "cycle", "dependence graph has a cycle".into());
        return d.0;
    }
    check_producers(g, &mut d);
    d.0
}

fn check_slice(g: &GirGraph, node: NodeId, s: &MemorySlice, units: u32, d: &mut Collector) -> bool {
    let Some(obj) = g.objects.get(s.object as usize) else {
        d.push(Some(node), "unknown-object", format!("slice names object {}", s.object));
        return false;
    };
    if !s.well_formed() {
        d.push(
            Some(node),
            "slice-shape",
            format!("({}, {}, {}) on `{}`", s.num, s.width, s.stride, obj.name),
        );
        return false;
    }
    let last = s.last_address(units - 1).max(s.last_address(0));
    if last >= obj.size {
        d.push(
            Some(node),
            "bounds",
            format!("address {last} beyond `{}` of size {}", obj.name, obj.size),
        );
        return false;
    }
    true
}

fn check_kind(g: &GirGraph, n: &super::GOperator, d: &mut Collector) {
    let arity = |d: &mut Collector, ins: usize, outs: usize| {
        if n.inputs.len() != ins || n.outputs.len() != outs {
            d.push(
                Some(n.id),
                "arity",
                format!(
                    "{} expects {ins} inputs / {outs} outputs, has {} / {}",
                    n.op.label(),
                    n.inputs.len(),
                    n.outputs.len()
                ),
            );
            false
        } else {
            true
        }
    };
    match n.op {
        OpKind::ElementWise { op } => {
            if arity(d, op.arity(), 1) {
                let t = n.outputs[0].total();
                if n.inputs.iter().any(|s| s.total() != t) {
                    d.push(Some(n.id), "element-count", "element-wise sizes differ".into());
                }
            }
        }
        OpKind::Reduce { extent, .. } => {
            if arity(d, 1, 1) && (extent == 0 || n.inputs[0].total() != n.outputs[0].total() * extent) {
                d.push(Some(n.id), "element-count", format!("reduce over {extent} sizes disagree"));
            }
        }
        OpKind::Broadcast { factor, .. } => {
            if arity(d, 1, 1) && (factor == 0 || n.outputs[0].total() != n.inputs[0].total() * factor) {
                d.push(Some(n.id), "element-count", format!("broadcast by {factor} sizes disagree"));
            }
        }
        OpKind::Move => {
            if arity(d, 1, 1) && n.inputs[0].pattern() != n.outputs[0].pattern() {
                d.push(
                    Some(n.id),
                    "pattern mismatch",
                    format!("move {:?} -> {:?}", n.inputs[0].pattern(), n.outputs[0].pattern()),
                );
            }
        }
        OpKind::Sync { .. } => {
            if arity(d, 1, 1) && n.inputs[0].object != n.outputs[0].object {
                d.push(Some(n.id), "sync-object", "sync views two different objects".into());
            }
        }
    }
    let _ = g;
}

/// Every element read from a graph-internal object has exactly one writer.
fn check_producers(g: &GirGraph, d: &mut Collector) {
    for (object, acc) in g.accesses() {
        let mut writes: Vec<(u64, u64, NodeId)> = acc
            .iter()
            .filter(|a| a.write)
            .flat_map(|a| a.spans.iter().map(move |&(s, e)| (s, e, a.node)))
            .collect();
        writes.sort_unstable();
        let mut reported = BTreeSet::new();
        let mut reach: Option<(u64, NodeId)> = None;
        for &(s, e, node) in &writes {
            if let Some((end, prev)) = reach {
                if s < end && prev != node && reported.insert(node) {
                    d.push(
                        Some(node),
                        "single-writer",
                        format!("`{}`[{s}] also written by node {prev}", g.object(object).name),
                    );
                }
            }
            if reach.is_none_or(|(end, _)| e > end) {
                reach = Some((e, node));
            }
        }
        if g.inputs.contains(&object) {
            continue;
        }
        let written = normalize_spans(writes.iter().map(|&(s, e, _)| (s, e)).collect());
        for a in acc.iter().filter(|a| !a.write && !a.sync) {
            if let Some(e) = first_uncovered(&a.spans, &written) {
                d.push(
                    Some(a.node),
                    "unproduced-read",
                    format!("`{}`[{e}] is read but never written", g.object(object).name),
                );
            }
        }
    }
}

/// Smallest address in `need` outside `have`; both sorted and coalesced.
fn first_uncovered(need: &[(u64, u64)], have: &[(u64, u64)]) -> Option<u64> {
    let mut j = 0;
    for &(s, e) in need {
        let mut at = s;
        while at < e {
            while j < have.len() && have[j].1 <= at {
                j += 1;
            }
            match have.get(j) {
                Some(&(hs, he)) if hs <= at => at = he,
                _ => return Some(at),
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gir::{Base, ElementKind, ParallelSpec};

    fn profile() -> HardwareProfile {
        HardwareProfile::generic_gpu()
    }

    #[test]
    fn single_move_is_valid() {
        let mut g = GirGraph::new("generic-gpu", ParallelSpec::new(2, 2));
        let a = g.add_input("a", "device", 8, ElementKind::I32);
        let b = g.add_output("b", "device", 8, ElementKind::I32);
        let s = |o| MemorySlice::contiguous(o, 4, Base::new(0, 4));
        g.add_node(OpKind::Move, vec![s(a)], vec![s(b)], None);
        assert_eq!(validate(&g, &profile()), vec![]);
        assert_eq!(validate(&g, &profile()), validate(&g, &profile()));
    }

    #[test]
    fn move_pattern_mismatch() {
        let mut g = GirGraph::new("generic-gpu", ParallelSpec::new(1, 1));
        let a = g.add_input("a", "device", 64, ElementKind::I32);
        let b = g.add_output("b", "device", 64, ElementKind::I32);
        g.add_node(
            OpKind::Move,
            vec![MemorySlice::new(a, 2, 4, 8, Base::default())],
            vec![MemorySlice::new(b, 2, 4, 6, Base::default())],
            None,
        );
        let diags = validate(&g, &profile());
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].invariant, "pattern mismatch");
        assert_eq!(diags[0].node, Some(0));
    }

    #[test]
    fn two_move_cycle() {
        let mut g = GirGraph::new("generic-gpu", ParallelSpec::new(1, 1));
        let x = g.add_object("x", "unit", 4, ElementKind::I32);
        let y = g.add_object("y", "unit", 4, ElementKind::I32);
        let s = |o| MemorySlice::contiguous(o, 4, Base::default());
        g.add_node(OpKind::Move, vec![s(x)], vec![s(y)], None);
        g.add_node(OpKind::Move, vec![s(y)], vec![s(x)], None);
        let diags = validate(&g, &profile());
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].invariant, "cycle");
    }

    #[test]
    fn unproduced_and_bounds() {
        let mut g = GirGraph::new("generic-gpu", ParallelSpec::new(1, 1));
        let x = g.add_object("x", "unit", 4, ElementKind::I32);
        let b = g.add_output("b", "device", 4, ElementKind::I32);
        let s = |o| MemorySlice::contiguous(o, 4, Base::default());
        g.add_node(OpKind::Move, vec![s(x)], vec![s(b)], None);
        let diags = validate(&g, &profile());
        assert_eq!(diags[0].invariant, "unproduced-read");

        let mut g = GirGraph::new("generic-gpu", ParallelSpec::new(2, 2));
        let a = g.add_input("a", "device", 4, ElementKind::I32);
        let b = g.add_output("b", "device", 4, ElementKind::I32);
        let s = |o| MemorySlice::contiguous(o, 4, Base::new(0, 4));
        g.add_node(OpKind::Move, vec![s(a)], vec![s(b)], None);
        assert!(validate(&g, &profile()).iter().any(|d| d.invariant == "bounds"));
    }

    #[test]
    fn external_must_be_device() {
        let mut g = GirGraph::new("generic-gpu", ParallelSpec::new(1, 1));
        g.add_input("a", "unit", 4, ElementKind::I32);
        assert_eq!(validate(&g, &profile())[0].invariant, "external-level");
    }
}

use super::scope::{object_use, ObjectUse};
use crate::gir::{pattern_equal, Deps, GirGraph, MemorySlice, NodeId, ObjectId, OpKind};
use crate::profile::SyncScope;

fn is_lane_sync(g: &GirGraph, id: NodeId) -> bool {
    matches!(g.node(id).map(|n| n.op), Some(OpKind::Sync { scope: SyncScope::Lane }))
}

/// Fuses a Move into X with the Move out of X when both see X identically.
///
/// X must be internal and touched only by the two Moves and LANE syncs. The
/// result moves straight from m0's source to m1's destination, or vanishes
/// when that would copy a slice onto itself. When X is a graph output the
/// store stays and m1 reads m0's source instead.
pub fn merge_raw(g: &GirGraph, m0: NodeId, m1: NodeId) -> Option<GirGraph> {
    let (a, b) = (g.node(m0)?, g.node(m1)?);
    if m0 == m1 || !a.op.is_move() || !b.op.is_move() {
        return None;
    }
    let (src, x_out, x_in, dst) = (a.inputs[0], a.outputs[0], b.inputs[0], b.outputs[0]);
    let x = x_out.object;
    if x_in.object != x || !pattern_equal(&x_out, &x_in) {
        return None;
    }
    if a.active_units(&g.parallel) != b.active_units(&g.parallel) {
        return None;
    }
    let u = object_use(g, x);
    if g.is_external(x) {
        return forward(g, m0, m1, src, x, &u);
    }
    if u.writers != [m0] || u.readers != [m1] || !u.other.is_empty() || !u.syncs.iter().all(|&s| is_lane_sync(g, s)) {
        return None;
    }
    let mut out = g.clone();
    for s in &u.syncs {
        out.remove_node(*s);
    }
    out.remove_node(m1);
    if src == dst {
        out.remove_node(m0);
    } else {
        out.node_mut(m0).unwrap().outputs = vec![dst];
    }
    Deps::build(&out).ok()?;
    Some(out)
}

fn forward(g: &GirGraph, m0: NodeId, m1: NodeId, src: MemorySlice, x: ObjectId, u: &ObjectUse) -> Option<GirGraph> {
    if g.inputs.contains(&x) || u.writers != [m0] || u.readers != [m1] || !u.other.is_empty() {
        return None;
    }
    let mut out = g.clone();
    for s in &u.syncs {
        out.remove_node(*s);
    }
    out.node_mut(m1).unwrap().inputs = vec![src];
    Deps::build(&out).ok()?;
    Some(out)
}

/// Drops the second of two independent, identical loads and redirects its
/// consumers to the first load's destination.
pub fn merge_rar(g: &GirGraph, m0: NodeId, m1: NodeId) -> Option<GirGraph> {
    let (a, b) = (g.node(m0)?, g.node(m1)?);
    if m0 == m1 || !a.op.is_move() || !b.op.is_move() {
        return None;
    }
    if a.inputs[0] != b.inputs[0] || a.active_units(&g.parallel) != b.active_units(&g.parallel) {
        return None;
    }
    let (o0, o1) = (a.outputs[0], b.outputs[0]);
    let same_shape = o0.pattern() == o1.pattern() && o0.base.per_unit == o1.base.per_unit;
    if o0.object == o1.object || !same_shape {
        return None;
    }
    let (y0, y1) = (g.object(o0.object), g.object(o1.object));
    if g.is_external(o1.object) || y0.level != y1.level || y0.kind != y1.kind {
        return None;
    }
    let u = object_use(g, o1.object);
    let writes_y1 = |id: NodeId| g.node(id).unwrap().outputs.iter().any(|s| s.object == o1.object);
    if u.writers != [m1] || u.other.iter().any(|&id| writes_y1(id)) {
        return None;
    }
    let deps = Deps::build(g).ok()?;
    if deps.reaches(m0, m1) || deps.reaches(m1, m0) {
        return None;
    }
    let delta = o0.base.offset as i64 - o1.base.offset as i64;
    let mut out = g.clone();
    out.remove_node(m1);
    // Syncs on the dropped object are rebuilt by the next sync insertion.
    for id in &u.syncs {
        out.remove_node(*id);
    }
    for n in out.nodes.iter_mut() {
        for s in n.inputs.iter_mut().chain(n.outputs.iter_mut()) {
            if s.object == o1.object {
                *s = s.with_object(o0.object).shifted(delta);
            }
        }
    }
    Deps::build(&out).ok()?;
    Some(out)
}

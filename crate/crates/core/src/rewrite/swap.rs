use super::scope::object_use;
use crate::gir::{GirGraph, NodeId, OpKind};
use crate::profile::{HardwareProfile, SyncScope};

/// Moves unary element-wise node `e` past its sole consumer `n`.
///
/// `e`'s output object must be private to the pair and `n` must read exactly
/// what `e` wrote. `n` then reads `e`'s input and writes a fresh object, and
/// `e` maps that object onto `n`'s old output. Moves are only swapped when
/// device traffic is unaffected; Reduce only when the scalar op commutes
/// with the reduction.
pub fn swap(g: &GirGraph, profile: &HardwareProfile, e: NodeId, n: NodeId) -> Option<GirGraph> {
    let (en, nn) = (g.node(e)?, g.node(n)?);
    let OpKind::ElementWise { op } = en.op else { return None };
    if e == n || !op.is_unary() || nn.inputs.len() != 1 || nn.outputs.len() != 1 {
        return None;
    }
    let (a, t, y) = (en.inputs[0], en.outputs[0], nn.outputs[0]);
    if nn.inputs[0] != t || en.active_units(&g.parallel) != nn.active_units(&g.parallel) || g.is_external(t.object) {
        return None;
    }
    let u = object_use(g, t.object);
    let mut touching: Vec<NodeId> = [u.writers, u.readers, u.syncs, u.other].concat();
    touching.sort_unstable();
    let mut pair = vec![e, n];
    pair.sort_unstable();
    if touching != pair {
        return None;
    }
    let (ao, to, yo) = (g.object(a.object), g.object(t.object), g.object(y.object));
    let fresh_size = match nn.op {
        OpKind::Move => {
            let dev = |l: &str| profile.is_device(l);
            if dev(&yo.level) || g.is_external(y.object) || dev(&ao.level) != dev(&to.level) {
                return None;
            }
            ao.size
        }
        OpKind::Broadcast { .. } => yo.size,
        OpKind::Reduce { reduce, .. } if op.commutes_with(reduce) => yo.size,
        OpKind::Sync { scope: SyncScope::Lane } => {
            let mut out = g.clone();
            let s = out.node_mut(n).unwrap();
            s.inputs = vec![a];
            s.outputs = vec![a];
            return Some(out);
        }
        _ => return None,
    };
    let mut out = g.clone();
    let name = format!("{}~{}", ao.name, out.objects.len());
    let (level, kind) = (yo.level.clone(), ao.kind);
    let f = out.add_object(&name, &level, fresh_size, kind);
    let mid = if nn.op.is_move() { a.with_object(f) } else { y.with_object(f) };
    {
        let m = out.node_mut(n).unwrap();
        m.inputs = vec![a];
        m.outputs = vec![mid];
    }
    {
        let m = out.node_mut(e).unwrap();
        m.inputs = vec![mid];
        m.outputs = vec![y];
    }
    out.compact_objects();
    Some(out)
}


use crate::error::{Error, Result};
use crate::gir::{pattern_equal, Base, GirGraph, MemorySlice, NodeId, ObjectId, OpKind, ParallelSpec};
use crate::profile::{HardwareProfile, SyncScope};

/// Least scope whose instances contain both units.
pub fn pair_scope(w: u32, r: u32, parallel: &ParallelSpec) -> SyncScope {
    if w == r {
        SyncScope::Unit
    } else if parallel.group_of(w) == parallel.group_of(r) {
        SyncScope::Group
    } else {
        SyncScope::Device
    }
}

/// A slice together with the units that execute it.
#[derive(Debug, Clone, Copy)]
pub struct Sided {
    pub slice: MemorySlice,
    pub units: u32,
}

/// Sorted, deduplicated (address, unit) pairs touched by `sides`.
fn owners(sides: &[Sided]) -> Vec<(u64, u32)> {
    let mut m: Vec<(u64, u32)> = Vec::new();
    for s in sides {
        for u in 0..s.units {
            m.extend(s.slice.addresses(u).map(|a| (a, u)));
        }
    }
    m.sort_unstable();
    m.dedup();
    m
}

/// Runs of equal address: (address, units).
fn by_address(pairs: &[(u64, u32)]) -> impl Iterator<Item = (u64, &[(u64, u32)])> {
    pairs.chunk_by(|a, b| a.0 == b.0).map(|run| (run[0].0, run))
}

/// Scope needed so every reader sees every write of the elements it reads.
///
/// LANE when each read slice is pattern-equal to a write slice run by the
/// same units; otherwise the widest pair scope over shared elements, never
/// below UNIT. Fails
/// with a coverage error when a read element is never written, or when
/// `exact` is set and some written element is never read.
pub fn scope_between(writes: &[Sided], reads: &[Sided], parallel: &ParallelSpec, exact: bool) -> Result<SyncScope> {
    let lane = reads.iter().all(|rd| {
        writes
            .iter()
            .any(|wr| wr.units == rd.units && pattern_equal(&wr.slice, &rd.slice))
    });
    if lane && !exact {
        return Ok(SyncScope::Lane);
    }
    let w = owners(writes);
    let r = owners(reads);
    let wa: Vec<(u64, &[(u64, u32)])> = by_address(&w).collect();
    let mut scope = SyncScope::Unit;
    let mut i = 0;
    let mut matched = 0;
    for (a, readers) in by_address(&r) {
        while i < wa.len() && wa[i].0 < a {
            i += 1;
        }
        if i == wa.len() || wa[i].0 != a {
            return Err(Error::Coverage);
        }
        matched += 1;
        if lane || scope == SyncScope::Device {
            continue;
        }
        for &(_, wu) in wa[i].1 {
            for &(_, ru) in readers {
                scope = scope.max(pair_scope(wu, ru, parallel));
            }
        }
    }
    if exact && matched != wa.len() {
        return Err(Error::Coverage);
    }
    Ok(if lane { SyncScope::Lane } else { scope })
}

/// Least scope ordering a write slice before a read slice over all units.
pub fn determine_sync_scope(write: &MemorySlice, read: &MemorySlice, parallel: &ParallelSpec) -> Result<SyncScope> {
    if write.object != read.object {
        return Err(Error::Coverage);
    }
    let n = parallel.unit_count;
    scope_between(
        &[Sided { slice: *write, units: n }],
        &[Sided { slice: *read, units: n }],
        parallel,
        true,
    )
}

/// Nodes touching `obj`, split into Move writers, Move readers, Syncs and others.
pub(crate) struct ObjectUse {
    pub writers: Vec<NodeId>,
    pub readers: Vec<NodeId>,
    pub syncs: Vec<NodeId>,
    pub other: Vec<NodeId>,
}

pub(crate) fn object_use(g: &GirGraph, obj: ObjectId) -> ObjectUse {
    let mut u = ObjectUse { writers: vec![], readers: vec![], syncs: vec![], other: vec![] };
    for n in &g.nodes {
        let reads = n.inputs.iter().any(|s| s.object == obj);
        let writes = n.outputs.iter().any(|s| s.object == obj);
        if !reads && !writes {
            continue;
        }
        match n.op {
            OpKind::Sync { .. } => u.syncs.push(n.id),
            OpKind::Move if writes && !reads => u.writers.push(n.id),
            OpKind::Move if reads && !writes => u.readers.push(n.id),
            _ => u.other.push(n.id),
        }
    }
    u
}

fn sided(g: &GirGraph, ids: &[NodeId], obj: ObjectId, output: bool) -> Vec<Sided> {
    ids.iter()
        .map(|&id| {
            let n = g.node(id).unwrap();
            let s = if output { &n.outputs } else { &n.inputs };
            Sided {
                slice: *s.iter().find(|s| s.object == obj).unwrap(),
                units: n.active_units(&g.parallel),
            }
        })
        .collect()
}

/// Scope required between the Moves that write and read an internal object,
/// or `None` when the object is not a pure Move-to-Move handoff.
pub(crate) fn handoff_scope(g: &GirGraph, obj: ObjectId) -> Result<Option<SyncScope>> {
    let u = object_use(g, obj);
    if g.is_external(obj) || !u.other.is_empty() || u.writers.is_empty() || u.readers.is_empty() {
        return Ok(None);
    }
    let w = sided(g, &u.writers, obj, true);
    let r = sided(g, &u.readers, obj, false);
    scope_between(&w, &r, &g.parallel, false).map(Some)
}

/// Places every Move-to-Move handoff object at the fastest level that can
/// hold it under its required scope, with one Sync of that scope (none for
/// LANE). Syncs on objects nothing inside the graph writes are dropped.
pub fn insert_sync(g: &GirGraph, profile: &HardwareProfile) -> Result<GirGraph> {
    let mut g = g.clone();
    for obj in 0..g.objects.len() as ObjectId {
        let u = object_use(&g, obj);
        if u.writers.is_empty() && u.other.iter().all(|&id| !g.node(id).unwrap().outputs.iter().any(|s| s.object == obj)) {
            for id in &u.syncs {
                g.remove_node(*id);
            }
            continue;
        }
        let Some(scope) = handoff_scope(&g, obj)? else { continue };
        let level = profile.fastest_level_for(scope)?.name.clone();
        g.objects[obj as usize].level = level;
        let size = g.object(obj).size;
        let whole = MemorySlice::contiguous(obj, size, Base::default());
        let wanted = (scope != SyncScope::Lane).then_some(OpKind::Sync { scope });
        let already = u.syncs.len() == 1 && {
            let n = g.node(u.syncs[0]).unwrap();
            Some(n.op) == wanted && n.inputs == vec![whole] && n.outputs == vec![whole] && n.units == Some(1)
        };
        if already || (wanted.is_none() && u.syncs.is_empty()) {
            continue;
        }
        for id in &u.syncs {
            g.remove_node(*id);
        }
        if let Some(op) = wanted {
            g.add_node(op, vec![whole], vec![whole], Some(1));
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn per_unit(o: ObjectId, len: u64, offset: u64, per: u64) -> MemorySlice {
        MemorySlice::contiguous(o, len, Base::new(offset, per))
    }

    #[test]
    fn scope_cases() {
        let p = ParallelSpec::new(8, 4);
        let w = per_unit(0, 4, 0, 4);
        assert_eq!(determine_sync_scope(&w, &w, &p).unwrap(), SyncScope::Lane);
        // Same unit, different order: two segments of 2 vs one of 4.
        let r = MemorySlice::new(0, 2, 2, 2, Base::new(0, 4));
        assert_eq!(determine_sync_scope(&w, &r, &p).unwrap(), SyncScope::Unit);
        // Every unit reads all four elements written one per unit.
        let w1 = per_unit(0, 1, 0, 1);
        let all = per_unit(0, 4, 0, 0);
        assert_eq!(determine_sync_scope(&w1, &all, &ParallelSpec::new(4, 4)).unwrap(), SyncScope::Group);
        assert_eq!(determine_sync_scope(&w1, &all, &ParallelSpec::new(4, 2)).unwrap(), SyncScope::Device);
        let shifted = MemorySlice::contiguous(0, 1, Base::new(1, 1));
        assert!(determine_sync_scope(&w1, &shifted, &p).is_err());
    }
}

//! Node ordering inside Sync phases, tuned for small on-chip live sets.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::Result;
use crate::gir::{GirGraph, NodeId, ObjectId};
use crate::interp::phases;
use crate::profile::HardwareProfile;

/// Objects each node touches, Syncs included.
fn touched(g: &GirGraph, id: NodeId) -> BTreeSet<ObjectId> {
    let n = g.node(id).unwrap();
    n.inputs.iter().chain(&n.outputs).map(|s| s.object).collect()
}

fn on_chip(g: &GirGraph, profile: &HardwareProfile) -> Vec<bool> {
    g.objects.iter().map(|o| !profile.is_device(&o.level)).collect()
}

/// List schedule: phases stay in order, and inside a phase the ready node
/// that grows the live set least goes first (lowest id on ties). Falls back
/// to plain topological order when that peaks lower.
pub fn reorder(g: &GirGraph, profile: &HardwareProfile) -> Result<Vec<NodeId>> {
    let deps = crate::gir::Deps::build(g)?;
    let chip = on_chip(g, profile);
    let mut remaining: BTreeMap<ObjectId, usize> = BTreeMap::new();
    for n in &g.nodes {
        for o in touched(g, n.id) {
            *remaining.entry(o).or_default() += 1;
        }
    }
    let mut live: BTreeSet<ObjectId> = BTreeSet::new();
    let mut done: BTreeSet<NodeId> = BTreeSet::new();
    let mut schedule = Vec::with_capacity(g.nodes.len());
    for (body, sync) in phases(g)? {
        let mut pending: BTreeSet<NodeId> = body.into_iter().collect();
        while !pending.is_empty() {
            let mut best: Option<(i64, NodeId)> = None;
            for &id in &pending {
                if !deps.predecessors(id).all(|p| done.contains(&p)) {
                    continue;
                }
                let mut growth = 0i64;
                for o in touched(g, id) {
                    if !chip[o as usize] {
                        continue;
                    }
                    let size = g.object(o).size as i64;
                    if !live.contains(&o) {
                        growth += size;
                    }
                    if remaining[&o] == 1 {
                        growth -= size;
                    }
                }
                if best.is_none_or(|(b, _)| growth < b) {
                    best = Some((growth, id));
                }
            }
            let (_, id) = best.expect("phase bodies are closed under predecessors");
            pending.remove(&id);
            step(g, id, &chip, &mut live, &mut remaining);
            done.insert(id);
            schedule.push(id);
        }
        if let Some(s) = sync {
            step(g, s, &chip, &mut live, &mut remaining);
            done.insert(s);
            schedule.push(s);
        }
    }
    let plain = deps.order;
    if peak_live(g, profile, &plain) < peak_live(g, profile, &schedule) {
        return Ok(plain);
    }
    Ok(schedule)
}

fn step(
    g: &GirGraph,
    id: NodeId,
    chip: &[bool],
    live: &mut BTreeSet<ObjectId>,
    remaining: &mut BTreeMap<ObjectId, usize>,
) {
    for o in touched(g, id) {
        let r = remaining.get_mut(&o).unwrap();
        *r -= 1;
        if chip[o as usize] {
            if *r == 0 {
                live.remove(&o);
            } else {
                live.insert(o);
            }
        }
    }
}

/// Live interval `[first, last]` of every on-chip object over `schedule`.
pub fn live_ranges(
    g: &GirGraph,
    profile: &HardwareProfile,
    schedule: &[NodeId],
) -> BTreeMap<ObjectId, (usize, usize)> {
    let chip = on_chip(g, profile);
    let mut ranges: BTreeMap<ObjectId, (usize, usize)> = BTreeMap::new();
    for (pos, &id) in schedule.iter().enumerate() {
        for o in touched(g, id) {
            if chip[o as usize] {
                ranges.entry(o).and_modify(|r| r.1 = pos).or_insert((pos, pos));
            }
        }
    }
    ranges
}

/// Largest total size of simultaneously live on-chip objects.
pub fn peak_live(g: &GirGraph, profile: &HardwareProfile, schedule: &[NodeId]) -> u64 {
    let ranges = live_ranges(g, profile, schedule);
    (0..schedule.len())
        .map(|pos| {
            ranges
                .iter()
                .filter(|(_, &(a, b))| a <= pos && pos <= b)
                .map(|(o, _)| g.object(*o).size)
                .sum()
        })
        .max()
        .unwrap_or(0)
}

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{phases, scope_covers, Accessor};
use crate::error::Result;
use crate::gir::{GirGraph, NodeId, ObjectId, OpKind};
use crate::profile::{HardwareProfile, SyncScope};

/// A pair of accesses to one element that the sync structure does not order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct RaceReport {
    pub object: String,
    pub address: u64,
    /// "write-write", "write-read" or "read-write", in program order.
    pub kind: &'static str,
    pub first: Accessor,
    pub second: Accessor,
    pub nodes: (NodeId, NodeId),
}

#[derive(Clone, Copy)]
struct Event {
    phase: usize,
    who: Accessor,
    write: bool,
    node: NodeId,
}

/// Syncs on one object: (phase boundary, scope, covered elements).
type SyncLog = Vec<(usize, SyncScope, BTreeSet<u64>)>;

/// Finds unordered conflicting accesses by static analysis of the access log.
///
/// Accesses in the same phase by distinct (unit, lane) accessors conflict when
/// either is a write. Accesses in different phases conflict unless a Sync on
/// the object, placed between them, covers the element at a scope spanning
/// both accessors. Reports are deduplicated per (object, kind, units).
pub fn detect_races(g: &GirGraph, _profile: &HardwareProfile) -> Result<Vec<RaceReport>> {
    let mut log: BTreeMap<(ObjectId, u64), Vec<Event>> = BTreeMap::new();
    let mut syncs: BTreeMap<ObjectId, SyncLog> = BTreeMap::new();
    for (phase, (body, sync)) in phases(g)?.into_iter().enumerate() {
        for id in body {
            let n = g.node(id).unwrap();
            for u in 0..n.active_units(&g.parallel) {
                let tagged = n
                    .inputs
                    .iter()
                    .map(|s| (s, false))
                    .chain(n.outputs.iter().map(|s| (s, true)));
                for (s, write) in tagged {
                    for (k, addr) in s.addresses(u).enumerate() {
                        log.entry((s.object, addr)).or_default().push(Event {
                            phase,
                            who: Accessor { unit: u, lane: k as u32 },
                            write,
                            node: id,
                        });
                    }
                }
            }
        }
        if let Some(id) = sync {
            let n = g.node(id).unwrap();
            let OpKind::Sync { scope } = n.op else { unreachable!() };
            for s in n.inputs.iter().chain(&n.outputs) {
                let mut elems = BTreeSet::new();
                for u in 0..n.active_units(&g.parallel) {
                    elems.extend(s.addresses(u));
                }
                syncs.entry(s.object).or_default().push((phase, scope, elems));
            }
        }
    }

    let empty = SyncLog::new();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for ((obj, addr), events) in &log {
        let ob_syncs = syncs.get(obj).unwrap_or(&empty);
        let ordered = |a: &Event, b: &Event| {
            ob_syncs.iter().any(|(p, scope, elems)| {
                *p >= a.phase && *p < b.phase && elems.contains(addr) && scope_covers(*scope, a.who, b.who, &g.parallel)
            })
        };
        for (i, a) in events.iter().enumerate() {
            for b in &events[i + 1..] {
                if a.who == b.who || !(a.write || b.write) {
                    continue;
                }
                if a.phase != b.phase && ordered(a, b) {
                    continue;
                }
                let kind = match (a.write, b.write) {
                    (true, true) => "write-write",
                    (true, false) => "write-read",
                    _ => "read-write",
                };
                let name = g.object(*obj).name.clone();
                if seen.insert((name.clone(), kind, a.who.unit, b.who.unit)) {
                    out.push(RaceReport {
                        object: name,
                        address: *addr,
                        kind,
                        first: a.who,
                        second: b.who,
                        nodes: (a.node, b.node),
                    });
                }
            }
        }
    }
    Ok(out)
}

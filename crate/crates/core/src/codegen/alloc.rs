//! Linear-scan buffer assignment over live intervals, one address space per
//! level instance.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gir::{GirGraph, NodeId, ObjectId};
use crate::interp::lane_of;
use crate::profile::{HardwareProfile, SyncScope};

use super::schedule::live_ranges;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Buffer {
    pub object: String,
    pub level: String,
    pub offset: u64,
    /// Elements one instance of the level holds for this object.
    pub footprint: u64,
    pub live: (usize, usize),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BufferPlan {
    pub buffers: Vec<Buffer>,
    /// Highest address used per level instance.
    pub usage: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Allocation {
    Fits(BufferPlan),
    /// Every object fits alone but the live set does not.
    Exceeded { level: String, needed: u64, capacity: u64 },
}

impl Allocation {
    pub fn plan(self) -> Result<BufferPlan> {
        match self {
            Allocation::Fits(p) => Ok(p),
            Allocation::Exceeded { level, needed, capacity } => Err(Error::Allocation {
                object: "<live set>".into(),
                level,
                needed,
                capacity,
            }),
        }
    }
}

/// Distinct elements of `object` touched by the busiest instance of a
/// level shared at `scope`. Syncs name whole objects and do not count.
pub fn footprint(g: &GirGraph, profile: &HardwareProfile, object: ObjectId, scope: SyncScope) -> Result<u64> {
    let mut per: BTreeMap<(u32, u32), BTreeSet<u64>> = BTreeMap::new();
    for n in g.nodes.iter().filter(|n| !n.op.is_sync()) {
        for s in n.inputs.iter().chain(&n.outputs).filter(|s| s.object == object) {
            for u in 0..n.active_units(&g.parallel) {
                for (k, a) in g.slice_elements(s, u)?.into_iter().enumerate() {
                    let key = match scope {
                        SyncScope::Lane => (u, lane_of(k as u64, profile.lane_width)),
                        SyncScope::Unit => (u, 0),
                        SyncScope::Group => (g.parallel.group_of(u), 0),
                        SyncScope::Device => (0, 0),
                    };
                    per.entry(key).or_default().insert(a);
                }
            }
        }
    }
    Ok(per.values().map(|s| s.len() as u64).max().unwrap_or(0))
}

/// Assigns every on-chip object an offset within its level. Objects whose
/// live ranges are disjoint may share addresses.
pub fn allocate(g: &GirGraph, schedule: &[NodeId], profile: &HardwareProfile) -> Result<Allocation> {
    let ranges = live_ranges(g, profile, schedule);
    let mut order: Vec<(ObjectId, (usize, usize))> = ranges.into_iter().collect();
    order.sort_by_key(|&(o, r)| (r.0, o));
    let mut plan = BufferPlan::default();
    let mut active: BTreeMap<String, Vec<(u64, u64, usize)>> = BTreeMap::new();
    for (o, live) in order {
        let obj = g.object(o);
        let level = profile
            .level(&obj.level)
            .ok_or_else(|| Error::Profile(format!("unknown level `{}`", obj.level)))?;
        let fp = footprint(g, profile, o, level.scope)?;
        if fp > level.capacity {
            return Err(Error::Allocation {
                object: obj.name.clone(),
                level: level.name.clone(),
                needed: fp,
                capacity: level.capacity,
            });
        }
        let slots = active.entry(level.name.clone()).or_default();
        slots.retain(|&(_, _, end)| end >= live.0);
        slots.sort();
        let mut offset = 0;
        for &(start, len, _) in slots.iter() {
            if offset + fp <= start {
                break;
            }
            offset = offset.max(start + len);
        }
        if offset + fp > level.capacity {
            return Ok(Allocation::Exceeded {
                level: level.name.clone(),
                needed: offset + fp,
                capacity: level.capacity,
            });
        }
        slots.push((offset, fp, live.1));
        let top = plan.usage.entry(level.name.clone()).or_default();
        *top = (*top).max(offset + fp);
        plan.buffers.push(Buffer {
            object: obj.name.clone(),
            level: level.name.clone(),
            offset,
            footprint: fp,
            live,
        });
    }
    plan.buffers.sort_by(|a, b| a.object.cmp(&b.object));
    Ok(Allocation::Fits(plan))
}

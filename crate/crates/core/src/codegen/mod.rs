//! Scheduling, buffer assignment and kernel text emission.

mod alloc;
mod emit;
mod schedule;

use serde::Serialize;

use crate::error::Result;
use crate::gir::{GirGraph, NodeId, ParallelSpec};
use crate::profile::HardwareProfile;

pub use alloc::{allocate, footprint, Allocation, Buffer, BufferPlan};
pub use emit::emit_portable;
pub use schedule::{live_ranges, peak_live, reorder};

pub const MANIFEST_SCHEMA: &str = "gir-manifest/v1";

/// A graph ready to emit: its schedule and buffer plan.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub name: String,
    pub graph: GirGraph,
    pub schedule: Vec<NodeId>,
    pub plan: BufferPlan,
    pub source: String,
}

pub fn build_kernel(name: &str, g: &GirGraph, profile: &HardwareProfile) -> Result<Kernel> {
    let schedule = reorder(g, profile)?;
    let plan = allocate(g, &schedule, profile)?.plan()?;
    let source = emit_portable(name, g, &schedule, &plan, profile);
    Ok(Kernel {
        name: name.to_string(),
        graph: g.clone(),
        schedule,
        plan,
        source,
    })
}

/// Manifest row for one kernel.
#[derive(Debug, Clone, Serialize)]
pub struct KernelEntry {
    pub name: String,
    pub source: String,
    pub graph: String,
    pub parallel: ParallelSpec,
    pub lanes: u32,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub schedule: Vec<NodeId>,
    pub buffers: Vec<Buffer>,
}

impl KernelEntry {
    pub fn new(k: &Kernel, profile: &HardwareProfile) -> Self {
        let names = |ids: &[u32]| ids.iter().map(|&o| k.graph.object(o).name.clone()).collect();
        KernelEntry {
            name: k.name.clone(),
            source: format!("{}.kernel", k.name),
            graph: format!("{}.gir.json", k.name),
            parallel: k.graph.parallel,
            lanes: profile.lane_width,
            inputs: names(&k.graph.inputs),
            outputs: names(&k.graph.outputs),
            schedule: k.schedule.clone(),
            buffers: k.plan.buffers.clone(),
        }
    }
}

//! Hardware abstraction: memory levels, parallel structure and sync costs.
//!
//! A profile is the only place hardware numbers live. Scope analysis picks
//! memory levels from it, the cost model reads bandwidths and sync costs
//! from it, and codegen checks buffer capacities against it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The set of parallel units a synchronization (or a memory level) spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SyncScope {
    Lane,
    Unit,
    Group,
    Device,
}

impl SyncScope {
    pub const ALL: [SyncScope; 4] = [
        SyncScope::Lane,
        SyncScope::Unit,
        SyncScope::Group,
        SyncScope::Device,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SyncScope::Lane => "LANE",
            SyncScope::Unit => "UNIT",
            SyncScope::Group => "GROUP",
            SyncScope::Device => "DEVICE",
        }
    }
}

impl fmt::Display for SyncScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryLevel {
    pub name: String,
    /// Scope at which one instance of this level is shared.
    pub scope: SyncScope,
    /// Elements per owning scope instance.
    pub capacity: u64,
    /// Elements per abstract time unit.
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareProfile {
    #[serde(default = "profile_schema")]
    pub schema: String,
    pub name: String,
    /// Ordered outermost (device) first.
    pub levels: Vec<MemoryLevel>,
    pub lane_width: u32,
    pub group_size: u32,
    pub unit_count: u32,
    pub sync_cost: BTreeMap<SyncScope, f64>,
    /// Peak arithmetic throughput in FLOPs per abstract time unit.
    pub compute_throughput: f64,
}

fn profile_schema() -> String {
    PROFILE_SCHEMA.to_string()
}

pub const PROFILE_SCHEMA: &str = "gir-profile/v1";

impl HardwareProfile {
    /// Default GPU-like profile: device, group-shared, unit-local and lane levels.
    pub fn generic_gpu() -> Self {
        HardwareProfile {
            schema: profile_schema(),
            name: "generic-gpu".into(),
            levels: vec![
                level("device", SyncScope::Device, 1 << 32, 1.0),
                level("group", SyncScope::Group, 4096, 10.0),
                level("unit", SyncScope::Unit, 256, 100.0),
                level("lane", SyncScope::Lane, 64, 1000.0),
            ],
            lane_width: 32,
            group_size: 4,
            unit_count: 128,
            sync_cost: costs(0.0, 1.0, 8.0, 64.0),
            compute_throughput: 16.0,
        }
    }

    /// Same hierarchy with a larger compute/bandwidth ratio.
    pub fn generic_wide() -> Self {
        HardwareProfile {
            name: "generic-wide".into(),
            levels: vec![
                level("device", SyncScope::Device, 1 << 32, 1.0),
                level("group", SyncScope::Group, 8192, 16.0),
                level("unit", SyncScope::Unit, 512, 128.0),
                level("lane", SyncScope::Lane, 64, 1000.0),
            ],
            group_size: 8,
            unit_count: 256,
            compute_throughput: 64.0,
            ..Self::generic_gpu()
        }
    }

    /// Accelerator with two scratchpad levels (cluster-shared and core-local)
    /// and no lane level.
    pub fn generic_dsa() -> Self {
        HardwareProfile {
            schema: profile_schema(),
            name: "generic-dsa".into(),
            levels: vec![
                level("dram", SyncScope::Device, 1 << 32, 1.0),
                level("sram", SyncScope::Group, 65536, 8.0),
                level("nram", SyncScope::Unit, 8192, 50.0),
            ],
            lane_width: 1,
            group_size: 4,
            unit_count: 16,
            sync_cost: costs(0.0, 0.5, 16.0, 128.0),
            compute_throughput: 24.0,
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "generic-gpu" => Some(Self::generic_gpu()),
            "generic-wide" => Some(Self::generic_wide()),
            "generic-dsa" => Some(Self::generic_dsa()),
            _ => None,
        }
    }

    /// Loads a profile from a JSON file, or a built-in profile by name.
    pub fn load(spec: &str) -> Result<Self> {
        if let Some(p) = Self::builtin(spec) {
            return Ok(p);
        }
        let text = std::fs::read_to_string(Path::new(spec))?;
        let p: HardwareProfile = serde_json::from_str(&text)?;
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        if self.levels.len() < 2 {
            return Err(Error::Profile("need at least two memory levels".into()));
        }
        let devices = self
            .levels
            .iter()
            .filter(|l| l.scope == SyncScope::Device)
            .count();
        if devices != 1 {
            return Err(Error::Profile(format!(
                "exactly one device level required, found {devices}"
            )));
        }
        if self.levels[0].scope != SyncScope::Device {
            return Err(Error::Profile("outermost level must be the device level".into()));
        }
        for l in &self.levels {
            if l.capacity == 0 || l.bandwidth.is_nan() || l.bandwidth <= 0.0 {
                return Err(Error::Profile(format!(
                    "level `{}` needs positive capacity and bandwidth",
                    l.name
                )));
            }
        }
        if self.lane_width == 0 || self.group_size == 0 || self.unit_count == 0 {
            return Err(Error::Profile("parallel counts must be positive".into()));
        }
        if !self.unit_count.is_multiple_of(self.group_size) {
            return Err(Error::Profile("group_size must divide unit_count".into()));
        }
        Ok(())
    }

    pub fn level(&self, name: &str) -> Option<&MemoryLevel> {
        self.levels.iter().find(|l| l.name == name)
    }

    pub fn device_level(&self) -> &MemoryLevel {
        &self.levels[0]
    }

    pub fn is_device(&self, name: &str) -> bool {
        self.device_level().name == name
    }

    /// Innermost level whose sharing scope is at least `scope`.
    pub fn fastest_level_for(&self, scope: SyncScope) -> Result<&MemoryLevel> {
        self.levels
            .iter()
            .rev()
            .find(|l| l.scope >= scope)
            .ok_or_else(|| Error::Profile(format!("no memory level serves scope {scope}")))
    }

    /// The level used for per-unit temporaries in lowering templates.
    pub fn unit_level(&self) -> &MemoryLevel {
        self.fastest_level_for(SyncScope::Unit)
            .unwrap_or_else(|_| self.device_level())
    }

    pub fn sync_cost(&self, scope: SyncScope) -> f64 {
        self.sync_cost.get(&scope).copied().unwrap_or(0.0)
    }

    /// Peak FLOPs per element of device traffic.
    pub fn machine_balance(&self) -> f64 {
        self.compute_throughput / self.device_level().bandwidth
    }
}

fn level(name: &str, scope: SyncScope, capacity: u64, bandwidth: f64) -> MemoryLevel {
    MemoryLevel {
        name: name.into(),
        scope,
        capacity,
        bandwidth,
    }
}

fn costs(lane: f64, unit: f64, group: f64, device: f64) -> BTreeMap<SyncScope, f64> {
    BTreeMap::from([
        (SyncScope::Lane, lane),
        (SyncScope::Unit, unit),
        (SyncScope::Group, group),
        (SyncScope::Device, device),
    ])
}

use std::collections::{BTreeMap, BTreeSet};

use crate::frontend::TensorDesc;
use crate::gir::{Base, ElementKind, GirGraph, MemorySlice, ObjectId, OpKind, ParallelSpec, ReduceKind, ScalarOp};
use crate::profile::{HardwareProfile, SyncScope};
use crate::rewrite::{scope_between, Sided};

/// A slice with `num == 1` normalized so equal views compare equal.
pub fn slice(object: ObjectId, num: u64, width: u64, stride: u64, base: Base) -> MemorySlice {
    let stride = if num == 1 { width } else { stride };
    MemorySlice::new(object, num, width, stride, base)
}

/// Incremental construction of a lowered graph.
pub struct Builder<'a> {
    pub g: GirGraph,
    profile: &'a HardwareProfile,
    names: BTreeMap<String, ObjectId>,
    counter: usize,
    written: BTreeMap<ObjectId, Vec<Sided>>,
    synced: BTreeSet<ObjectId>,
}

impl<'a> Builder<'a> {
    pub fn new(profile: &'a HardwareProfile, units: u32) -> Self {
        Builder {
            g: GirGraph::new(&profile.name, ParallelSpec::for_units(units, profile.group_size)),
            profile,
            names: BTreeMap::new(),
            counter: 0,
            written: BTreeMap::new(),
            synced: BTreeSet::new(),
        }
    }

    pub fn units(&self) -> u32 {
        self.g.parallel.unit_count
    }

    pub fn input(&mut self, name: &str, d: &TensorDesc) -> ObjectId {
        if let Some(&id) = self.names.get(name) {
            return id;
        }
        let id = self.g.add_input(name, &self.profile.device_level().name, d.elements() as u64, d.kind);
        self.names.insert(name.to_string(), id);
        id
    }

    pub fn output(&mut self, name: &str, d: &TensorDesc) -> ObjectId {
        let id = self.g.add_output(name, &self.profile.device_level().name, d.elements() as u64, d.kind);
        self.names.insert(name.to_string(), id);
        id
    }

    fn fresh(&mut self, stem: &str) -> String {
        self.counter += 1;
        format!("{stem}.{}", self.counter)
    }

    /// Unit-local scratch object.
    pub fn local(&mut self, stem: &str, size: u64, kind: ElementKind) -> ObjectId {
        let name = self.fresh(stem);
        let level = self.profile.unit_level().name.clone();
        self.g.add_object(&name, &level, size, kind)
    }

    /// Internal device object used to exchange data between units.
    pub fn shared(&mut self, stem: &str, size: u64, kind: ElementKind) -> ObjectId {
        let name = self.fresh(stem);
        let level = self.profile.device_level().name.clone();
        self.g.add_object(&name, &level, size, kind)
    }

    pub fn kind(&self, o: ObjectId) -> ElementKind {
        self.g.object(o).kind
    }

    fn active(&self, units: u32) -> Option<u32> {
        (units != self.units()).then_some(units)
    }

    /// Adds a node, preceded by whatever sync its reads need.
    fn node(&mut self, op: OpKind, ins: Vec<MemorySlice>, outs: Vec<MemorySlice>, units: u32) {
        for s in &ins {
            let Some(w) = self.written.get(&s.object) else { continue };
            if self.synced.contains(&s.object) {
                continue;
            }
            let reader = Sided { slice: *s, units };
            let scope = scope_between(w, &[reader], &self.g.parallel, false).unwrap_or(SyncScope::Device);
            if scope > SyncScope::Lane {
                let level = self.profile.fastest_level_for(scope).map(|l| l.name.clone());
                let obj = &mut self.g.objects[s.object as usize];
                if let Ok(level) = level {
                    if self.profile.level(&obj.level).is_none_or(|l| l.scope < scope) {
                        obj.level = level;
                    }
                }
                self.sync(scope, s.object);
            }
        }
        for s in &outs {
            self.written.entry(s.object).or_default().push(Sided { slice: *s, units });
        }
        let u = self.active(units);
        self.g.add_node(op, ins, outs, u);
    }

    pub fn mv(&mut self, from: MemorySlice, to: MemorySlice, units: u32) {
        self.node(OpKind::Move, vec![from], vec![to], units);
    }

    /// Loads `from` into a fresh unit-local object laid out like its source.
    /// A source every unit reads in full gets one private copy per unit.
    pub fn load(&mut self, from: MemorySlice, units: u32) -> MemorySlice {
        let src = self.g.object(from.object).clone();
        let to = if from.base.per_unit == 0 && units > 1 {
            let span = from.last_address(0) - from.base.offset + 1;
            let l = self.local(&src.name, span * units as u64, src.kind);
            MemorySlice::new(l, from.num, from.width, from.stride, Base::new(0, span))
        } else {
            from.with_object(self.local(&src.name, src.size, src.kind))
        };
        self.mv(from, to, units);
        to
    }

    pub fn ew(&mut self, op: ScalarOp, ins: Vec<MemorySlice>, out: MemorySlice, units: u32) {
        self.node(OpKind::ElementWise { op }, ins, vec![out], units);
    }

    pub fn reduce(&mut self, reduce: ReduceKind, extent: u64, from: MemorySlice, to: MemorySlice, units: u32) {
        self.node(OpKind::Reduce { reduce, extent }, vec![from], vec![to], units);
    }

    pub fn broadcast(&mut self, factor: u64, mode: crate::gir::BroadcastMode, from: MemorySlice, to: MemorySlice, units: u32) {
        self.node(OpKind::Broadcast { factor, mode }, vec![from], vec![to], units);
    }

    /// Publishes all writes to `obj` at `scope`.
    pub fn sync(&mut self, scope: SyncScope, obj: ObjectId) {
        self.synced.insert(obj);
        let whole = MemorySlice::contiguous(obj, self.g.object(obj).size, Base::default());
        self.g.add_node(OpKind::Sync { scope }, vec![whole], vec![whole], Some(1));
    }
}

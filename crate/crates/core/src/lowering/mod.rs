//! Per-operator GIR templates instantiated over a parameter grid.

mod builder;
mod grid;
mod matmul;
mod movement;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::frontend::{BasicKind, BasicOp, TensorDesc};
use crate::gir::{Base, BroadcastMode, GirGraph, ReduceKind};
use crate::profile::{HardwareProfile, SyncScope};

pub use builder::{slice, Builder};
pub use grid::{cyclic_params, parallel_grid, tile_grid};
pub use matmul::lower_matmul_memorybound;

/// One instantiated template.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    /// Stable identifier: `<variant>/p<units>[/t<tile>]`.
    pub id: String,
    pub variant: &'static str,
    pub units: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tile: Option<u64>,
    #[serde(skip)]
    pub graph: GirGraph,
}

impl Candidate {
    pub fn new(variant: &'static str, units: u32, tile: Option<u64>, graph: GirGraph) -> Self {
        let id = match tile {
            Some(t) => format!("{variant}/p{units}/t{t}"),
            None => format!("{variant}/p{units}"),
        };
        Candidate { id, variant, units, tile, graph }
    }
}

/// Template inventory, for inspection.
#[derive(Debug, Clone, Serialize)]
pub struct TemplateInfo {
    pub op: &'static str,
    pub variant: &'static str,
    pub parameters: &'static str,
    pub description: &'static str,
}

pub fn templates() -> Vec<TemplateInfo> {
    let t = |op, variant, parameters, description| TemplateInfo { op, variant, parameters, description };
    vec![
        t("element_wise", "cyclic", "units x tile", "per-unit cyclic tiles: load, compute, store"),
        t("broadcast", "block", "units", "contiguous input block per unit"),
        t("broadcast", "cyclic", "units x tile", "cyclic input tiles per unit"),
        t("reduce", "block", "units", "whole rows per unit, contiguous row blocks"),
        t("reduce", "cyclic", "units", "whole rows per unit, rows dealt round-robin"),
        t("reduce", "tree", "units (power of two)", "rows split across units, pairwise combining tree"),
        t("transpose", "gather", "units x tile", "contiguous runs moved directly, strided runs permuted on chip"),
        t("matmul", "rows", "units", "output rows per unit, dot products on chip"),
        t("matmul", "cols", "units", "output columns per unit"),
        t("matmul", "ksplit", "units (power of two)", "contraction split across units, combining tree"),
        t("dwconv", "channels", "units", "channels per unit, window multiply-accumulate"),
    ]
}

fn desc<'a>(tensors: &'a BTreeMap<String, TensorDesc>, name: &str) -> Result<&'a TensorDesc> {
    tensors
        .get(name)
        .ok_or_else(|| Error::Lowering(format!("unknown tensor `{name}`")))
}

/// All template instantiations for `op`, in a fixed order.
pub fn enumerate_candidates(op: &BasicOp, tensors: &BTreeMap<String, TensorDesc>, profile: &HardwareProfile) -> Result<Vec<Candidate>> {
    let out = match &op.kind {
        BasicKind::ElementWise { op: s } => element_wise(op, *s, tensors, profile)?,
        BasicKind::Broadcast { size } => broadcast(op, *size as u64, tensors, profile)?,
        BasicKind::Reduce { reduce, extent } => reduce_candidates(op, *reduce, *extent as u64, tensors, profile)?,
        BasicKind::Transpose { pattern } => movement::lower(op, pattern, tensors, profile)?,
        BasicKind::MatMul { .. } => matmul::lower(op, tensors, profile)?,
        BasicKind::DepthwiseConv { .. } => matmul::lower_dwconv(op, tensors, profile)?,
    };
    if out.is_empty() {
        return Err(Error::Lowering(format!("no template covers `{}` ({})", op.origin, op.kind.label())));
    }
    Ok(out)
}

fn element_wise(op: &BasicOp, s: crate::gir::ScalarOp, tensors: &BTreeMap<String, TensorDesc>, profile: &HardwareProfile) -> Result<Vec<Candidate>> {
    let d = desc(tensors, &op.outputs[0])?;
    let n = d.elements() as u64;
    let mut out = Vec::new();
    for (p, t) in cyclic_params(n, profile) {
        let mut b = Builder::new(profile, p);
        let view = |o| slice(o, n / (p as u64 * t), t, p as u64 * t, Base::new(0, t));
        let ins: Vec<_> = op
            .inputs
            .iter()
            .map(|name| {
                let x = b.input(name, desc(tensors, name)?);
                Ok(b.load(view(x), p))
            })
            .collect::<Result<_>>()?;
        let y = b.output(&op.outputs[0], d);
        let r = b.local(&op.outputs[0], n, d.kind);
        b.ew(s, ins, view(r), p);
        b.mv(view(r), view(y), p);
        out.push(Candidate::new("cyclic", p, Some(t), b.g));
    }
    Ok(out)
}

fn broadcast(op: &BasicOp, f: u64, tensors: &BTreeMap<String, TensorDesc>, profile: &HardwareProfile) -> Result<Vec<Candidate>> {
    let din = desc(tensors, &op.inputs[0])?;
    let dout = desc(tensors, &op.outputs[0])?;
    let n = din.elements() as u64;
    let mut out = Vec::new();
    let mut params: Vec<(&'static str, u32, u64)> = Vec::new();
    for p in parallel_grid(profile) {
        if n.is_multiple_of(p as u64) {
            params.push(("block", p, n / p as u64));
        }
    }
    for (p, t) in cyclic_params(n, profile) {
        if t < n / p as u64 {
            params.push(("cyclic", p, t));
        }
    }
    for (variant, p, t) in params {
        let mut b = Builder::new(profile, p);
        let pt = p as u64 * t;
        let x = b.input(&op.inputs[0], din);
        let l = b.load(slice(x, n / pt, t, pt, Base::new(0, t)), p);
        let y = b.output(&op.outputs[0], dout);
        let r = b.local(&op.outputs[0], n * f, dout.kind);
        let ov = |o| slice(o, n / pt, t * f, pt * f, Base::new(0, t * f));
        b.broadcast(f, BroadcastMode::Repeat, l, ov(r), p);
        b.mv(ov(r), ov(y), p);
        let tile = (variant == "cyclic").then_some(t);
        out.push(Candidate::new(variant, p, tile, b.g));
    }
    Ok(out)
}

fn reduce_candidates(op: &BasicOp, kind: ReduceKind, e: u64, tensors: &BTreeMap<String, TensorDesc>, profile: &HardwareProfile) -> Result<Vec<Candidate>> {
    if e == 0 {
        return Err(Error::Lowering(format!("`{}`: reduce extent 0", op.origin)));
    }
    let din = desc(tensors, &op.inputs[0])?;
    let dout = desc(tensors, &op.outputs[0])?;
    let rows = dout.elements() as u64;
    if rows * e != din.elements() as u64 {
        return Err(Error::Lowering(format!("`{}`: extent {e} does not tile the input", op.origin)));
    }
    let mut out = Vec::new();
    for p in parallel_grid(profile) {
        let pp = p as u64;
        if !rows.is_multiple_of(pp) {
            continue;
        }
        let per = rows / pp;
        let mut variants = vec!["block"];
        if per > 1 {
            variants.push("cyclic");
        }
        for variant in variants {
            let mut b = Builder::new(profile, p);
            let x = b.input(&op.inputs[0], din);
            let (inv, outv) = if variant == "block" {
                (slice(x, 1, per * e, per * e, Base::new(0, per * e)), Base::new(0, per))
            } else {
                (slice(x, per, e, pp * e, Base::new(0, e)), Base::new(0, 1))
            };
            let l = b.load(inv, p);
            let y = b.output(&op.outputs[0], dout);
            let r = b.local(&op.outputs[0], rows, dout.kind);
            let ov = |o| if variant == "block" { slice(o, 1, per, per, outv) } else { slice(o, per, 1, pp, outv) };
            b.reduce(kind, e, l, ov(r), p);
            b.mv(ov(r), ov(y), p);
            out.push(Candidate::new(variant, p, None, b.g));
        }
    }
    for p in parallel_grid(profile) {
        let pp = p as u64;
        if p < 2 || !p.is_power_of_two() || !e.is_multiple_of(pp) {
            continue;
        }
        let mut b = Builder::new(profile, p);
        let x = b.input(&op.inputs[0], din);
        let chunk = e / pp;
        let l = b.load(slice(x, rows, chunk, e, Base::new(0, chunk)), p);
        let part = b.local("partial", pp * rows, dout.kind);
        b.reduce(kind, chunk, l, slice(part, 1, rows, rows, Base::new(0, rows)), p);
        let y = b.output(&op.outputs[0], dout);
        tree(&mut b, kind, part, rows, p, y);
        out.push(Candidate::new("tree", p, None, b.g));
    }
    Ok(out)
}

/// Combines per-unit partials of `rows` elements held in unit-local
/// `part` (unit u at `u * rows`) pairwise across units, storing into `y`.
pub(crate) fn tree(b: &mut Builder, kind: ReduceKind, part: crate::gir::ObjectId, rows: u64, p: u32, y: crate::gir::ObjectId) {
    let k = b.kind(part);
    let per = |o| slice(o, 1, rows, rows, Base::new(0, rows));
    let mut level = b.shared("level", p as u64 * rows, k);
    b.mv(per(part), per(level), p);
    let mut active = p;
    while active > 1 {
        b.sync(SyncScope::Device, level);
        active /= 2;
        let lo = b.load(slice(level, 1, rows, rows, Base::new(0, 2 * rows)), active);
        let hi = b.load(slice(level, 1, rows, rows, Base::new(rows, 2 * rows)), active);
        let sum = b.local("combined", active as u64 * rows, k);
        b.ew(kind.combiner(), vec![lo, hi], per(sum), active);
        if active > 1 {
            level = b.shared("level", active as u64 * rows, k);
            b.mv(per(sum), per(level), active);
        } else {
            b.mv(per(sum), per(y), 1);
        }
    }
}

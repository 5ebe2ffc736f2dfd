use std::collections::BTreeMap;

use super::builder::{slice, Builder};
use super::grid::parallel_grid;
use super::{desc, tree, Candidate};
use crate::error::{Error, Result};
use crate::frontend::{BasicKind, BasicOp, TensorDesc};
use crate::gir::{Base, BroadcastMode, MemorySlice, ReduceKind, ScalarOp};
use crate::profile::HardwareProfile;

/// Per-unit contiguous block of `len` elements in a fresh local object.
fn block(b: &mut Builder, stem: &str, len: u64, units: u32, kind: crate::gir::ElementKind) -> MemorySlice {
    let o = b.local(stem, len * units as u64, kind);
    slice(o, 1, len, len, Base::new(0, len))
}

/// Computes `out = a · bm` per unit, where `a` holds an `r x k` block in row
/// order and `bm` a `k x n` block. The product goes through broadcasts to an
/// `r x k x n` cube, then the `k` axis is summed.
#[allow(clippy::too_many_arguments)]
fn dot(b: &mut Builder, a: MemorySlice, bm: MemorySlice, r: u64, k: u64, n: u64, units: u32, out: MemorySlice) {
    let kind = b.kind(out.object);
    let cube = r * k * n;
    let av = if n > 1 {
        let t = block(b, "a_rep", cube, units, kind);
        b.broadcast(n, BroadcastMode::Repeat, a, t, units);
        t
    } else {
        a
    };
    let bv = if r > 1 {
        let t = block(b, "b_tile", cube, units, kind);
        b.broadcast(r, BroadcastMode::Tile, bm, t, units);
        t
    } else {
        bm
    };
    if k == 1 {
        b.ew(ScalarOp::Mul, vec![av, bv], out, units);
        return;
    }
    let prod = block(b, "prod", cube, units, kind);
    b.ew(ScalarOp::Mul, vec![av, bv], prod, units);
    if n == 1 {
        b.reduce(ReduceKind::Sum, k, prod, out, units);
        return;
    }
    // Pairwise halving along the middle axis of an r x c x n block.
    let mut cur = prod.object;
    let mut c = k;
    while c > 1 {
        let h = c / 2;
        let c2 = c - h;
        let unit = r * c * n;
        let lo = slice(cur, r, h * n, c * n, Base::new(0, unit));
        let hi = slice(cur, r, h * n, c * n, Base::new(h * n, unit));
        if c2 == 1 {
            b.ew(ScalarOp::Add, vec![lo, hi], out, units);
            break;
        }
        let unit2 = r * c2 * n;
        let next = b.local("half", unit2 * units as u64, kind);
        b.ew(ScalarOp::Add, vec![lo, hi], slice(next, r, h * n, c2 * n, Base::new(0, unit2)), units);
        if c2 > h {
            let odd = slice(cur, r, n, c * n, Base::new(2 * h * n, unit));
            b.ew(ScalarOp::Copy, vec![odd], slice(next, r, n, c2 * n, Base::new(h * n, unit2)), units);
        }
        cur = next;
        c = c2;
    }
}

pub(super) fn lower(op: &BasicOp, tensors: &BTreeMap<String, TensorDesc>, profile: &HardwareProfile) -> Result<Vec<Candidate>> {
    let BasicKind::MatMul { m, k, n } = op.kind else {
        return Err(Error::Lowering(format!("`{}` is not a matmul", op.origin)));
    };
    let (m, k, n) = (m as u64, k as u64, n as u64);
    let (da, db, dc) = (desc(tensors, &op.inputs[0])?, desc(tensors, &op.inputs[1])?, desc(tensors, &op.outputs[0])?);
    let mut out = Vec::new();
    for p in parallel_grid(profile) {
        let pp = p as u64;
        if m % pp == 0 {
            let rr = m / pp;
            let mut b = Builder::new(profile, p);
            let (xa, xb) = (b.input(&op.inputs[0], da), b.input(&op.inputs[1], db));
            let la = b.load(slice(xa, 1, rr * k, rr * k, Base::new(0, rr * k)), p);
            let lb = b.load(slice(xb, 1, k * n, k * n, Base::default()), p);
            let y = b.output(&op.outputs[0], dc);
            let res = block(&mut b, &op.outputs[0], rr * n, p, dc.kind);
            dot(&mut b, la, lb, rr, k, n, p, res);
            b.mv(res, slice(y, 1, rr * n, rr * n, Base::new(0, rr * n)), p);
            out.push(Candidate::new("rows", p, None, b.g));
        }
        if n > 1 && n % pp == 0 {
            let nn = n / pp;
            let mut b = Builder::new(profile, p);
            let (xa, xb) = (b.input(&op.inputs[0], da), b.input(&op.inputs[1], db));
            let la = b.load(slice(xa, 1, m * k, m * k, Base::default()), p);
            let lb = b.load(slice(xb, k, nn, n, Base::new(0, nn)), p);
            let y = b.output(&op.outputs[0], dc);
            let view = slice(y, m, nn, n, Base::new(0, nn));
            let res = b.local(&op.outputs[0], m * n, dc.kind);
            dot(&mut b, la, lb, m, k, nn, p, view.with_object(res));
            b.mv(view.with_object(res), view, p);
            out.push(Candidate::new("cols", p, None, b.g));
        }
        if p >= 2 && p.is_power_of_two() && k % pp == 0 {
            let kk = k / pp;
            let mut b = Builder::new(profile, p);
            let (xa, xb) = (b.input(&op.inputs[0], da), b.input(&op.inputs[1], db));
            let la = b.load(slice(xa, m, kk, k, Base::new(0, kk)), p);
            let lb = b.load(slice(xb, 1, kk * n, kk * n, Base::new(0, kk * n)), p);
            let y = b.output(&op.outputs[0], dc);
            let part = block(&mut b, "partial", m * n, p, dc.kind);
            dot(&mut b, la, lb, m, kk, n, p, part);
            tree(&mut b, ReduceKind::Sum, part.object, m * n, p, y);
            out.push(Candidate::new("ksplit", p, None, b.g));
        }
    }
    Ok(out)
}

/// Matmul candidates for an instance below the profile's machine balance.
pub fn lower_matmul_memorybound(op: &BasicOp, tensors: &BTreeMap<String, TensorDesc>, profile: &HardwareProfile) -> Result<Vec<Candidate>> {
    let BasicKind::MatMul { m, k, n } = op.kind else {
        return Err(Error::Lowering(format!("`{}` is not a matmul", op.origin)));
    };
    let flops = 2.0 * (m * k * n) as f64;
    let traffic = (m * k + k * n + m * n) as f64;
    if flops / traffic > profile.machine_balance() {
        return Err(Error::Lowering(format!(
            "`{}` is compute-bound ({:.1} flops per element); it must stay a library call",
            op.origin,
            flops / traffic
        )));
    }
    lower(op, tensors, profile)
}

/// Most channels one unit handles; bounds the node count.
const MAX_CHANNELS_PER_UNIT: u64 = 4;

pub(super) fn lower_dwconv(op: &BasicOp, tensors: &BTreeMap<String, TensorDesc>, profile: &HardwareProfile) -> Result<Vec<Candidate>> {
    let BasicKind::DepthwiseConv { c, h, w, kh, kw } = op.kind else {
        return Err(Error::Lowering(format!("`{}` is not a depthwise convolution", op.origin)));
    };
    let (c, h, w, kh, kw) = (c as u64, h as u64, w as u64, kh as u64, kw as u64);
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let (dx, dw, dy) = (desc(tensors, &op.inputs[0])?, desc(tensors, &op.inputs[1])?, desc(tensors, &op.outputs[0])?);
    let mut out = Vec::new();
    for p in parallel_grid(profile) {
        let pp = p as u64;
        if c % pp != 0 || c / pp > MAX_CHANNELS_PER_UNIT {
            continue;
        }
        let cu = c / pp;
        let mut b = Builder::new(profile, p);
        let (xx, xw) = (b.input(&op.inputs[0], dx), b.input(&op.inputs[1], dw));
        let lx = b.load(slice(xx, 1, cu * h * w, cu * h * w, Base::new(0, cu * h * w)), p);
        let lw = b.load(slice(xw, 1, cu * kh * kw, cu * kh * kw, Base::new(0, cu * kh * kw)), p);
        let plane = oh * ow;
        let y = b.output(&op.outputs[0], dy);
        let res = b.local(&op.outputs[0], c * plane, dy.kind);
        for q in 0..cu {
            let plane_view = |o| slice(o, 1, plane, plane, Base::new(q * plane, cu * plane));
            let taps = kh * kw;
            let mut acc: Option<MemorySlice> = None;
            for t in 0..taps {
                let (i, j) = (t / kw, t % kw);
                let window = slice(lx.object, oh, ow, w, Base::new(q * h * w + i * w + j, cu * h * w));
                let tap = slice(lw.object, 1, 1, 1, Base::new(lw.base.offset + q * taps + t, lw.base.per_unit));
                let weight = block(&mut b, "weight", plane, p, dw.kind);
                b.broadcast(plane, BroadcastMode::Repeat, tap, weight, p);
                let last = t + 1 == taps;
                let prod = if last && acc.is_none() { plane_view(res) } else { plane_view(b.local("tap", c * plane, dy.kind)) };
                b.ew(ScalarOp::Mul, vec![window, weight], prod, p);
                acc = Some(match acc {
                    None => prod,
                    Some(a) => {
                        let sum = if last { plane_view(res) } else { plane_view(b.local("acc", c * plane, dy.kind)) };
                        b.ew(ScalarOp::Add, vec![a, prod], sum, p);
                        sum
                    }
                });
            }
            b.mv(plane_view(res), plane_view(y), p);
        }
        out.push(Candidate::new("channels", p, None, b.g));
    }
    Ok(out)
}

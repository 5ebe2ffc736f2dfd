use std::collections::BTreeMap;

use super::builder::{slice, Builder};
use super::grid::{parallel_grid, tile_grid};
use super::Candidate;
use crate::error::Result;
use crate::frontend::{BasicOp, DataMove, TensorDesc};
use crate::gir::{Base, ScalarOp};
use crate::profile::HardwareProfile;

/// Most pieces a gather may be cut into before the candidate is dropped.
const MAX_PIECES: usize = 16;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Rows of `len` consecutive output elements copied from `len` consecutive
/// source elements, grouped into runs with a constant source stride.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Run {
    input: usize,
    src: u64,
    stride: u64,
    dst: u64,
    rows: u64,
}

/// Runs of equal shape whose starts advance by fixed steps, one per unit.
#[derive(Debug, Clone, Copy)]
struct Block {
    run: Run,
    count: u64,
    src_step: u64,
    dst_step: u64,
}

fn runs(map: &[(usize, usize)], len: u64) -> Vec<Run> {
    let mut out: Vec<Run> = Vec::new();
    for r in 0..map.len() as u64 / len {
        let (input, src) = map[(r * len) as usize];
        let src = src as u64;
        if let Some(last) = out.last_mut() {
            let next = last.src + last.rows * last.stride;
            let fits_first = last.rows == 1 && src > last.src && src - last.src >= len;
            if last.input == input && (fits_first || (last.rows > 1 && src == next)) {
                if last.rows == 1 {
                    last.stride = src - last.src;
                }
                last.rows += 1;
                continue;
            }
        }
        out.push(Run { input, src, stride: len, dst: r * len, rows: 1 });
    }
    out
}

fn blocks(runs: &[Run]) -> Vec<Block> {
    let mut out: Vec<Block> = Vec::new();
    for &r in runs {
        if let Some(b) = out.last_mut() {
            let same = b.run.input == r.input && b.run.rows == r.rows && b.run.stride == r.stride;
            let (ls, ld) = (b.run.src + (b.count - 1) * b.src_step, b.run.dst + (b.count - 1) * b.dst_step);
            if same && r.src > ls && r.dst > ld {
                let (ss, ds) = (r.src - ls, r.dst - ld);
                if b.count == 1 || (ss == b.src_step && ds == b.dst_step) {
                    b.src_step = ss;
                    b.dst_step = ds;
                    b.count += 1;
                    continue;
                }
            }
        }
        out.push(Block { run: r, count: 1, src_step: 0, dst_step: 0 });
    }
    out
}

/// One node group: `units` units each copying `rows` rows of `len`.
struct Piece {
    input: usize,
    units: u32,
    rows: u64,
    len: u64,
    src: Base,
    stride: u64,
    dst: Base,
}

fn pieces(blocks: &[Block], len: u64, p: u32) -> Vec<Piece> {
    let mut out = Vec::new();
    for b in blocks {
        let r = b.run;
        if b.count == 1 {
            let q = (1..=p as u64).rev().find(|q| r.rows % q == 0).unwrap();
            let m = r.rows / q;
            out.push(Piece {
                input: r.input,
                units: q as u32,
                rows: m,
                len,
                src: Base::new(r.src, m * r.stride),
                stride: r.stride,
                dst: Base::new(r.dst, m * len),
            });
        } else {
            let mut done = 0;
            while done < b.count {
                let q = (b.count - done).min(p as u64);
                out.push(Piece {
                    input: r.input,
                    units: q as u32,
                    rows: r.rows,
                    len,
                    src: Base::new(r.src + done * b.src_step, b.src_step),
                    stride: r.stride,
                    dst: Base::new(r.dst + done * b.dst_step, b.dst_step),
                });
                done += q;
            }
        }
    }
    out
}

pub(super) fn lower(op: &BasicOp, pattern: &DataMove, tensors: &BTreeMap<String, TensorDesc>, profile: &HardwareProfile) -> Result<Vec<Candidate>> {
    let ins: Vec<&TensorDesc> = op.inputs.iter().map(|t| super::desc(tensors, t)).collect::<Result<_>>()?;
    let outs: Vec<&TensorDesc> = op.outputs.iter().map(|t| super::desc(tensors, t)).collect::<Result<_>>()?;
    let shapes: Vec<Vec<usize>> = ins.iter().map(|d| d.shape.clone()).collect();
    let maps = pattern.gather(&shapes);

    // Longest row length dividing every contiguity break.
    let mut row = 0u64;
    for m in &maps {
        row = gcd(row, m.len() as u64);
        for o in 1..m.len() {
            if m[o].0 != m[o - 1].0 || m[o].1 != m[o - 1].1 + 1 {
                row = gcd(row, o as u64);
            }
        }
    }
    let mut lens: Vec<u64> = tile_grid(profile).into_iter().map(|t| gcd(row, t)).collect();
    lens.push(row);
    lens.sort_unstable();
    lens.dedup();

    let mut out = Vec::new();
    let mut fallback: Option<(usize, Candidate)> = None;
    for &len in &lens {
        let per_output: Vec<Vec<Block>> = maps.iter().map(|m| blocks(&runs(m, len))).collect();
        for p in parallel_grid(profile) {
            let cut: Vec<Vec<Piece>> = per_output.iter().map(|b| pieces(b, len, p)).collect();
            let count: usize = cut.iter().map(|c| c.len()).sum();
            let mut b = Builder::new(profile, p);
            let srcs: Vec<_> = op.inputs.iter().zip(&ins).map(|(t, d)| b.input(t, d)).collect();
            for (j, pcs) in cut.iter().enumerate() {
                let y = b.output(&op.outputs[j], outs[j]);
                for pc in pcs {
                    let from = slice(srcs[pc.input], pc.rows, pc.len, pc.stride, pc.src);
                    let to = slice(y, pc.rows, pc.len, pc.len, pc.dst);
                    if from.pattern() == to.pattern() {
                        b.mv(from, to, pc.units);
                    } else {
                        let l = b.load(from, pc.units);
                        let d = outs[j];
                        let staged = b.local(&op.outputs[j], d.elements() as u64, d.kind);
                        b.ew(ScalarOp::Copy, vec![l], to.with_object(staged), pc.units);
                        b.mv(to.with_object(staged), to, pc.units);
                    }
                }
            }
            let c = Candidate::new("gather", p, Some(len), b.g);
            if count <= MAX_PIECES {
                out.push(c);
            } else if fallback.as_ref().is_none_or(|(n, _)| count < *n) {
                fallback = Some((count, c));
            }
        }
    }
    if out.is_empty() {
        out.extend(fallback.map(|(_, c)| c));
    }
    Ok(out)
}

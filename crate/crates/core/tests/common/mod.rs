#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use gir_fusion::frontend::{BasicKind, BasicOp, CompGraph, Subgraph, TensorDesc};
use gir_fusion::gir::{pattern_equal, Base, ElementKind, GirGraph, MemorySlice, ObjectId, ParallelSpec, ScalarOp};
use gir_fusion::interp::Buffers;
use gir_fusion::lowering::{enumerate_candidates, Builder};
use gir_fusion::pipeline::{compile, CompileOptions};
use gir_fusion::profile::{HardwareProfile, SyncScope};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MODELS: [&str; 9] = [
    "empty",
    "chain_2",
    "chain_4",
    "chain_8",
    "shufflenet_fragment",
    "softmax",
    "attention_kvcache",
    "efficientnet_fragment",
    "twenty_ops",
];

pub fn model(name: &str) -> CompGraph {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models").join(format!("{name}.json"));
    CompGraph::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// How one unit's share of an `n`-element tensor is laid out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Layout {
    /// Unit u owns one contiguous block.
    Block,
    /// Tiles of `t` elements dealt round-robin to units.
    Cyclic(u64),
}

pub fn layout_slice(o: ObjectId, l: Layout, p: u32, per: u64) -> MemorySlice {
    let p = p as u64;
    match l {
        Layout::Block => MemorySlice::contiguous(o, per, Base::new(0, per)),
        Layout::Cyclic(t) => MemorySlice::new(o, per / t, t, p * t, Base::new(0, t)),
    }
}

fn random_layout(rng: &mut ChaCha8Rng, per: u64) -> Layout {
    let tiles: Vec<u64> = (0..=per.trailing_zeros()).map(|k| 1u64 << k).filter(|t| per.is_multiple_of(*t)).collect();
    if rng.gen_bool(0.4) {
        Layout::Block
    } else {
        Layout::Cyclic(tiles[rng.gen_range(0..tiles.len())])
    }
}

/// A seeded random program over integer tensors: loads, element-wise
/// chains, data exchanges through device memory under changing layouts,
/// and a final store. Syncs come from the builder's scope analysis.
pub fn random_gir(seed: u64, profile: &HardwareProfile) -> GirGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = [1u32, 2, 4, 8][rng.gen_range(0..4)];
    let per = [1u64, 2, 4, 8, 16, 32, 64][rng.gen_range(0..7)];
    let n = p as u64 * per;
    let desc = TensorDesc::new(vec![n as usize], ElementKind::I32);
    let mut b = Builder::new(profile, p);
    let x = b.input("x", &desc);
    let z = b.input("z", &desc);
    let mut layout = random_layout(&mut rng, per);
    let mut cur = b.load(layout_slice(x, layout, p, per), p);
    let unary = [ScalarOp::Relu, ScalarOp::Neg, ScalarOp::Copy, ScalarOp::Scale { factor: 2.0 }];
    let binary = [ScalarOp::Add, ScalarOp::Sub, ScalarOp::Max, ScalarOp::Min, ScalarOp::Mul];
    for _ in 0..rng.gen_range(1..=6) {
        if b.g.nodes.len() > 24 {
            break;
        }
        match rng.gen_range(0..5) {
            0 | 1 => {
                let t = b.local("t", n, ElementKind::I32);
                let out = cur.with_object(t);
                b.ew(unary[rng.gen_range(0..unary.len())], vec![cur], out, p);
                cur = out;
            }
            2 => {
                let zl = b.load(layout_slice(z, layout, p, per), p);
                let t = b.local("t", n, ElementKind::I32);
                let out = cur.with_object(t);
                let (l, r) = if rng.gen_bool(0.5) { (cur, zl) } else { (zl, cur) };
                b.ew(binary[rng.gen_range(0..binary.len())], vec![l, r], out, p);
                cur = out;
            }
            k => {
                // Store and reload, either unchanged (k == 3) or re-laid out.
                let s = b.shared("s", n, ElementKind::I32);
                b.mv(cur, layout_slice(s, layout, p, per), p);
                if k == 4 {
                    layout = random_layout(&mut rng, per);
                }
                cur = b.load(layout_slice(s, layout, p, per), p);
            }
        }
    }
    let y = b.output("y", &desc);
    b.mv(cur, layout_slice(y, layout, p, per), p);
    b.g
}

pub fn random_buffers(g: &GirGraph, seed: u64) -> Buffers {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    g.inputs
        .iter()
        .map(|&o| {
            let obj = g.object(o);
            (obj.name.clone(), (0..obj.size).map(|_| rng.gen_range(-100..=100) as f64).collect())
        })
        .collect()
}

/// Element-level scope oracle: the smallest scope whose instances contain
/// the writer and every reader of each element. Pattern-equal views need
/// no exchange at all.
pub fn scope_oracle(w: &MemorySlice, r: &MemorySlice, size: u64, parallel: &ParallelSpec) -> Option<SyncScope> {
    let units = parallel.unit_count;
    let mut writer: BTreeMap<u64, Vec<u32>> = BTreeMap::new();
    let mut reader: BTreeMap<u64, Vec<u32>> = BTreeMap::new();
    for u in 0..units {
        for a in w.addresses(u) {
            if a >= size {
                return None;
            }
            writer.entry(a).or_default().push(u);
        }
        for a in r.addresses(u) {
            if a >= size {
                return None;
            }
            reader.entry(a).or_default().push(u);
        }
    }
    if writer.keys().ne(reader.keys()) {
        return None;
    }
    if pattern_equal(w, r) {
        return Some(SyncScope::Lane);
    }
    let same = |f: &dyn Fn(u32) -> u32| {
        writer.iter().all(|(a, ws)| ws.iter().all(|&x| reader[a].iter().all(|&y| f(x) == f(y))))
    };
    if same(&|u| u) {
        Some(SyncScope::Unit)
    } else if same(&|u| parallel.group_of(u)) {
        Some(SyncScope::Group)
    } else {
        Some(SyncScope::Device)
    }
}

/// Every affine slice of a 64-element object for `units` units with 1, 2, 4
/// or 8 elements per unit, grouped by the element set the units jointly touch.
pub fn exchange_slices(units: u32) -> Vec<Vec<MemorySlice>> {
    let mut groups: BTreeMap<Vec<u64>, Vec<MemorySlice>> = BTreeMap::new();
    for k in [1u64, 2, 4, 8] {
        for num in (1..=k).filter(|d| k % d == 0) {
            let width = k / num;
            let strides: Vec<u64> = if num == 1 { vec![width] } else { (width..=64).collect() };
            for &stride in &strides {
                for offset in 0..64 {
                    for per_unit in 0..=8 {
                        let s = MemorySlice::new(0, num, width, stride, Base::new(offset, per_unit));
                        if s.last_address(units - 1) >= 64 {
                            continue;
                        }
                        let mut set: Vec<u64> = (0..units).flat_map(|u| s.addresses(u).collect::<Vec<_>>()).collect();
                        set.sort_unstable();
                        set.dedup();
                        groups.entry(set).or_default().push(s);
                    }
                }
            }
        }
    }
    groups.into_values().collect()
}

/// Kernel graphs of every compiled model, every lowering candidate of every
/// basic op in the corpus, and 50 random programs.
pub fn gir_corpus(profile: &HardwareProfile) -> Vec<(String, GirGraph)> {
    let mut out = vec![];
    for name in MODELS {
        let c = compile(&model(name), profile, &CompileOptions::default()).unwrap();
        for k in &c.kernels {
            out.push((format!("{name}/{}", k.kernel.name), k.kernel.graph.clone()));
        }
        for sub in &c.partition.gir_subgraphs {
            for op in &sub.ops {
                for cand in enumerate_candidates(op, &c.partition.tensors, profile).unwrap() {
                    out.push((format!("{name}/{}/{}", op.outputs.join(","), cand.id), cand.graph));
                }
            }
        }
    }
    for seed in 0..50 {
        out.push((format!("random/{seed}"), random_gir(seed, profile)));
    }
    out
}

pub fn ew(op: ScalarOp, ins: &[&str], out: &str) -> BasicOp {
    BasicOp {
        origin: out.into(),
        kind: BasicKind::ElementWise { op },
        inputs: ins.iter().map(|s| s.to_string()).collect(),
        outputs: vec![out.into()],
    }
}

pub fn tensors(names: &[&str], n: usize) -> BTreeMap<String, TensorDesc> {
    names.iter().map(|t| (t.to_string(), TensorDesc::new(vec![n], ElementKind::I32))).collect()
}

pub fn subgraph(ops: Vec<BasicOp>) -> Subgraph {
    let produced: BTreeSet<String> = ops.iter().flat_map(|o| o.outputs.clone()).collect();
    let consumed: BTreeSet<String> = ops.iter().flat_map(|o| o.inputs.clone()).collect();
    Subgraph {
        inputs: consumed.difference(&produced).cloned().collect(),
        outputs: produced.difference(&consumed).cloned().collect(),
        ops,
    }
}

/// 2 to 5 element-wise ops over one or two inputs of 256, 512 or 1024 elements.
pub fn random_instance(seed: u64) -> (Subgraph, BTreeMap<String, TensorDesc>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = [256, 512, 1024][rng.gen_range(0..3)];
    let k = rng.gen_range(2..=5);
    let mut avail = vec!["x0".to_string()];
    let mut names = vec!["x0".to_string()];
    if rng.gen_bool(0.5) {
        avail.push("x1".into());
        names.push("x1".into());
    }
    let unary = [ScalarOp::Relu, ScalarOp::Neg, ScalarOp::Copy];
    let binary = [ScalarOp::Add, ScalarOp::Mul, ScalarOp::Max];
    let mut ops = Vec::new();
    for i in 0..k {
        let out = format!("t{i}");
        let a = avail[rng.gen_range(0..avail.len())].clone();
        let op = if avail.len() > 1 && rng.gen_bool(0.4) {
            let b = avail[rng.gen_range(0..avail.len())].clone();
            ew(binary[rng.gen_range(0..3)], &[&a, &b], &out)
        } else {
            ew(unary[rng.gen_range(0..3)], &[&a], &out)
        };
        ops.push(op);
        avail.push(out.clone());
        names.push(out);
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    (subgraph(ops), tensors(&refs, n))
}

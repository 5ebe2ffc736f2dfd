mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{ew, random_instance, subgraph, tensors};

use gir_fusion::costmodel::estimate;
use gir_fusion::frontend::{classify, insert_layout_transposes, BasicKind, BasicOp, CompGraph, Subgraph, TensorDesc};
use gir_fusion::fusion::{can_merge, merge_graphs, search_plan, OpDag, SearchOptions};
use gir_fusion::gir::{validate, GirGraph, OpKind, ScalarOp};
use gir_fusion::interp::{detect_races, run_gir, Buffers};
use gir_fusion::lowering::{enumerate_candidates, Candidate};
use gir_fusion::profile::{HardwareProfile, SyncScope};
use gir_fusion::rewrite::optimize;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gpu() -> HardwareProfile {
    HardwareProfile::generic_gpu()
}

fn candidate(op: &BasicOp, t: &BTreeMap<String, TensorDesc>, id: &str) -> GirGraph {
    let c = enumerate_candidates(op, t, &gpu()).unwrap();
    c.into_iter().find(|c| c.id == id).unwrap().graph
}

fn dag(ops: &[&BasicOp]) -> OpDag {
    OpDag::new(ops.iter().map(|o| (o.inputs.clone(), o.outputs.clone())).collect())
}

fn inputs(names: &[&str], n: usize, seed: u64) -> Buffers {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    names
        .iter()
        .map(|t| (t.to_string(), (0..n).map(|_| rng.gen_range(-8..=8) as f64).collect()))
        .collect()
}

fn device_syncs(g: &GirGraph) -> usize {
    g.nodes.iter().filter(|n| matches!(n.op, OpKind::Sync { scope: SyncScope::Device })).count()
}

#[test]
fn sigmoid_add_merge_hands_off_on_chip() {
    let p = gpu();
    let t = tensors(&["x", "t", "z", "y"], 1024);
    let sig = ew(ScalarOp::Sigmoid, &["x"], "t");
    let add = ew(ScalarOp::Add, &["t", "z"], "y");
    let g1 = candidate(&sig, &t, "cyclic/p8/t128");
    let g2 = candidate(&add, &t, "cyclic/p8/t128");
    assert!(can_merge(&g1, &g2, &dag(&[&sig, &add]), 0, 1));
    let keep = BTreeSet::from(["y".to_string()]);
    let m = merge_graphs(&g1, &g2, &keep).unwrap();
    assert!(validate(&m, &p).is_empty());
    assert_eq!(device_syncs(&m), device_syncs(&g1) + device_syncs(&g2) + 1);
    assert!(detect_races(&m, &p).unwrap().is_empty());
    let ins = inputs(&["x", "z"], 1024, 1);
    let mut seq = run_gir(&g1, &p, &ins).unwrap();
    seq.extend(ins.clone());
    let seq = run_gir(&g2, &p, &seq).unwrap();
    let merged = run_gir(&m, &p, &ins).unwrap();
    assert_eq!(merged["y"], seq["y"]);
    let (opt, trace) = optimize(&m, &p).unwrap();
    assert!(trace.is_monotone());
    assert_eq!(estimate(&opt, &p).device_traffic(&p), 3 * 1024);
    assert_eq!(run_gir(&opt, &p, &ins).unwrap()["y"], seq["y"]);
}

#[test]
fn shared_input_gets_one_sync_then_one_load() {
    let p = gpu();
    let t = tensors(&["x", "a", "b"], 1024);
    let o1 = ew(ScalarOp::Relu, &["x"], "a");
    let o2 = ew(ScalarOp::Neg, &["x"], "b");
    let g1 = candidate(&o1, &t, "cyclic/p8/t128");
    let g2 = candidate(&o2, &t, "cyclic/p8/t128");
    assert!(can_merge(&g1, &g2, &dag(&[&o1, &o2]), 0, 1));
    let keep = BTreeSet::from(["a".to_string(), "b".to_string()]);
    let m = merge_graphs(&g1, &g2, &keep).unwrap();
    assert_eq!(device_syncs(&m), device_syncs(&g1) + device_syncs(&g2) + 1);
    let (opt, _) = optimize(&m, &p).unwrap();
    assert_eq!(estimate(&opt, &p).device_traffic(&p), 3 * 1024);
    let ins = inputs(&["x"], 1024, 2);
    assert_eq!(run_gir(&opt, &p, &ins).unwrap(), run_gir(&m, &p, &ins).unwrap());
}

#[test]
fn disjoint_merge_is_a_plain_union() {
    let t = tensors(&["x", "y", "u", "v"], 256);
    let g1 = candidate(&ew(ScalarOp::Relu, &["x"], "y"), &t, "cyclic/p2/t128");
    let g2 = candidate(&ew(ScalarOp::Relu, &["u"], "v"), &t, "cyclic/p2/t128");
    let keep = BTreeSet::from(["y".to_string(), "v".to_string()]);
    let m = merge_graphs(&g1, &g2, &keep).unwrap();
    assert_eq!(m.nodes.len(), g1.nodes.len() + g2.nodes.len());
    assert_eq!(m.objects.len(), g1.objects.len() + g2.objects.len());
    assert_eq!(device_syncs(&m), 0);
    assert!(validate(&m, &gpu()).is_empty());
}

#[test]
fn can_merge_rejects_mismatch_and_outside_paths() {
    let t = tensors(&["x", "y", "z", "w"], 1024);
    let a = ew(ScalarOp::Relu, &["x"], "y");
    let lib = ew(ScalarOp::Copy, &["y"], "z");
    let b = ew(ScalarOp::Neg, &["z"], "w");
    let g1 = candidate(&a, &t, "cyclic/p8/t128");
    let g2 = candidate(&b, &t, "cyclic/p8/t128");
    let d = dag(&[&a, &lib, &b]);
    assert!(!can_merge(&g1, &g2, &d, 0, 2));
    assert!(can_merge(&g1, &g2, &dag(&[&a, &b]), 0, 1));
    let g64 = candidate(&b, &t, "cyclic/p4/t256");
    assert!(!can_merge(&g1, &g64, &dag(&[&a, &b]), 0, 1));
    assert!(merge_graphs(&g1, &g64, &BTreeSet::new()).is_err());
}

fn cands(sub: &Subgraph, t: &BTreeMap<String, TensorDesc>) -> Vec<Vec<Candidate>> {
    sub.ops.iter().map(|o| enumerate_candidates(o, t, &gpu()).unwrap()).collect()
}

#[test]
fn single_op_picks_cheapest_candidate() {
    let t = tensors(&["x", "y"], 1024);
    let sub = subgraph(vec![ew(ScalarOp::Relu, &["x"], "y")]);
    let c = cands(&sub, &t);
    let (groups, report) = search_plan(&sub, &c, &t, &gpu(), SearchOptions::default()).unwrap();
    assert_eq!(groups.len(), 1);
    let best = c[0]
        .iter()
        .filter_map(|c| optimize(&c.graph, &gpu()).ok().map(|(g, _)| estimate(&g, &gpu()).time))
        .fold(f64::INFINITY, f64::min);
    assert!(report.cost <= best + 1e-9);
}

#[test]
fn chain_of_three_fuses_fully() {
    let n = 1024;
    let t = tensors(&["x", "a", "b", "y"], n);
    let sub = subgraph(vec![ew(ScalarOp::Relu, &["x"], "a"), ew(ScalarOp::Neg, &["a"], "b"), ew(ScalarOp::Copy, &["b"], "y")]);
    let c = cands(&sub, &t);
    let (groups, report) = search_plan(&sub, &c, &t, &gpu(), SearchOptions::default()).unwrap();
    assert_eq!(report.strategy, "exhaustive");
    assert_eq!(groups.len(), 1);
    assert_eq!(groups[0].estimate.device_traffic(&gpu()), 2 * n as u64);
}

/// Random element-wise DAGs of 2 to 5 ops over a few tensor sizes.
#[test]
fn beam_matches_exhaustive_and_beats_no_fusion() {
    let p = gpu();
    let mut checked = 0;
    for seed in 0..40 {
        let (sub, t) = random_instance(seed);
        let c = cands(&sub, &t);
        let (_, ex) = search_plan(&sub, &c, &t, &p, SearchOptions::default()).unwrap();
        let (_, beam) = search_plan(&sub, &c, &t, &p, SearchOptions { beam_width: 8, exhaustive_cap: 0 }).unwrap();
        assert_eq!(beam.strategy, "beam");
        assert!(beam.cost <= beam.no_fusion_cost + 1e-9, "seed {seed}");
        assert!(ex.cost <= ex.no_fusion_cost + 1e-9, "seed {seed}");
        if ex.strategy == "exhaustive" {
            assert!((beam.cost - ex.cost).abs() <= 1e-9 * ex.cost, "seed {seed}: {} vs {}", beam.cost, ex.cost);
            checked += 1;
        }
    }
    assert!(checked >= 20, "{checked}");
}

#[test]
fn attention_matmuls_use_different_candidates() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../models/attention_kvcache.json");
    let model = CompGraph::from_json(&std::fs::read_to_string(path).unwrap()).unwrap();
    let p = gpu();
    let part = insert_layout_transposes(&classify(&model, &p, None).unwrap()).unwrap();
    let mut chosen = Vec::new();
    for sub in &part.gir_subgraphs {
        let c: Vec<Vec<Candidate>> = sub.ops.iter().map(|o| enumerate_candidates(o, &part.tensors, &p).unwrap()).collect();
        let (groups, _) = search_plan(sub, &c, &part.tensors, &p, SearchOptions::default()).unwrap();
        for g in groups {
            for (&op, id) in g.ops.iter().zip(&g.candidates) {
                if matches!(sub.ops[op].kind, BasicKind::MatMul { .. }) {
                    chosen.push((sub.ops[op].origin.clone(), id.clone()));
                }
            }
        }
    }
    assert_eq!(chosen.len(), 2, "{chosen:?}");
    assert_ne!(chosen[0].1, chosen[1].1, "{chosen:?}");
}


mod common;

use std::collections::BTreeMap;

use common::model;
use gir_fusion::error::Error;
use gir_fusion::frontend::{
    classify, eval_basic, insert_layout_transposes, split_composite, BasicKind, CompGraph, DataMove, OpClass, Operator, TensorDesc,
};
use gir_fusion::gir::{ElementKind, ReduceKind, ScalarOp};
use gir_fusion::interp::{eval_operator, Tensor};
use gir_fusion::profile::HardwareProfile;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn gpu() -> HardwareProfile {
    HardwareProfile::generic_gpu()
}

fn graph(v: serde_json::Value) -> CompGraph {
    CompGraph::from_json(&v.to_string()).unwrap()
}

fn f32(shape: &[usize]) -> serde_json::Value {
    json!({ "shape": shape, "kind": "f32" })
}

#[test]
fn depthwise_is_lowered_and_pointwise_is_a_library_call() {
    let p = classify(&model("efficientnet_fragment"), &gpu(), None).unwrap();
    assert_eq!(p.classes["dw"], OpClass::Lowered);
    assert_eq!(p.classes["stem"], OpClass::Library);
    assert_eq!(p.classes["project"], OpClass::Library);
}

#[test]
fn matrix_vector_product_is_lowered() {
    let p = classify(&model("attention_kvcache"), &gpu(), None).unwrap();
    let m = model("attention_kvcache");
    let matmuls: Vec<&Operator> = m.operators.iter().filter(|o| o.op == "matmul").collect();
    assert!(!matmuls.is_empty());
    for op in matmuls {
        assert_eq!(p.classes[&op.name], OpClass::Lowered, "{}", op.name);
    }
}

#[test]
fn square_matmul_is_compute_bound() {
    let g = graph(json!({
        "schema": "gir-model/v1",
        "name": "mm",
        "tensors": { "a": f32(&[1024, 1024]), "b": f32(&[1024, 1024]), "c": f32(&[1024, 1024]) },
        "inputs": ["a", "b"],
        "outputs": ["c"],
        "operators": [{ "name": "mm", "op": "matmul", "inputs": ["a", "b"], "outputs": ["c"] }]
    }));
    let p = classify(&g, &gpu(), Some(16.0)).unwrap();
    assert_eq!(p.classes["mm"], OpClass::Library);
    assert!(p.gir_subgraphs.is_empty());
}

#[test]
fn unknown_operator_is_named() {
    let text = json!({
        "schema": "gir-model/v1",
        "name": "bad",
        "tensors": { "x": f32(&[4]), "y": f32(&[4]) },
        "inputs": ["x"],
        "outputs": ["y"],
        "operators": [{ "name": "g", "op": "gelu", "inputs": ["x"], "outputs": ["y"] }]
    })
    .to_string();
    let err = CompGraph::from_json(&text).and_then(|g| classify(&g, &gpu(), None)).unwrap_err();
    assert!(matches!(&err, Error::UnsupportedOperator(t) if t == "gelu"), "{err:?}");
}

#[test]
fn classification_is_stable_and_covers_every_operator() {
    for name in common::MODELS {
        let m = model(name);
        let a = classify(&m, &gpu(), None).unwrap();
        assert_eq!(a, classify(&m, &gpu(), None).unwrap());
        assert_eq!(a.classes.len(), m.operators.len());
        let libs = a.library_calls.len();
        let lowered = a.classes.values().filter(|c| **c == OpClass::Lowered).count();
        assert_eq!(libs + lowered, m.operators.len(), "{name}");
        for sub in &a.gir_subgraphs {
            for op in &sub.ops {
                assert_eq!(a.classes[&op.origin], OpClass::Lowered, "{name}: {}", op.origin);
            }
        }
    }
}

fn op(name: &str, ty: &str, ins: &[&str], outs: &[&str]) -> Operator {
    Operator {
        name: name.into(),
        op: ty.into(),
        inputs: ins.iter().map(|s| s.to_string()).collect(),
        outputs: outs.iter().map(|s| s.to_string()).collect(),
        attrs: Default::default(),
    }
}

fn kinds(op: &Operator, tensors: &BTreeMap<String, TensorDesc>) -> Vec<BasicKind> {
    split_composite(op, tensors).unwrap().0.into_iter().map(|b| b.kind).collect()
}

#[test]
fn composites_split_into_basic_ops() {
    let t: BTreeMap<String, TensorDesc> =
        [("x", vec![4, 8]), ("y", vec![4, 8])].into_iter().map(|(n, s)| (n.to_string(), TensorDesc::new(s, ElementKind::F32))).collect();
    let ew = |op| BasicKind::ElementWise { op };
    assert_eq!(kinds(&op("s", "silu", &["x"], &["y"]), &t), vec![ew(ScalarOp::Sigmoid), ew(ScalarOp::Mul)]);
    assert_eq!(kinds(&op("r", "relu", &["x"], &["y"]), &t), vec![ew(ScalarOp::Relu)]);
    assert_eq!(
        kinds(&op("sm", "softmax", &["x"], &["y"]), &t),
        vec![
            BasicKind::Reduce { reduce: ReduceKind::Max, extent: 8 },
            BasicKind::Broadcast { size: 8 },
            ew(ScalarOp::Sub),
            ew(ScalarOp::Exp),
            BasicKind::Reduce { reduce: ReduceKind::Sum, extent: 8 },
            BasicKind::Broadcast { size: 8 },
            ew(ScalarOp::Div),
        ]
    );
}

#[test]
fn splits_evaluate_like_the_composite() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t: BTreeMap<String, TensorDesc> =
        [("x", vec![6, 16]), ("y", vec![6, 16])].into_iter().map(|(n, s)| (n.to_string(), TensorDesc::new(s, ElementKind::F32))).collect();
    for ty in ["silu", "softmax", "relu", "sigmoid"] {
        let o = op(ty, ty, &["x"], &["y"]);
        let x = Tensor::new(vec![6, 16], ElementKind::F32, (0..96).map(|_| rng.gen_range(-4.0..4.0)).collect()).unwrap();
        let want = eval_operator(&o, &[&x], &[t["y"].clone()]).unwrap().remove(0);
        let (ops, fresh) = split_composite(&o, &t).unwrap();
        let mut descs = t.clone();
        descs.extend(fresh);
        let mut env = BTreeMap::from([("x".to_string(), x)]);
        for b in &ops {
            eval_basic(b, &mut env, &descs).unwrap();
        }
        for (a, b) in env["y"].data.iter().zip(&want.data) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0), "{ty}: {a} vs {b}");
        }
    }
}

fn library_model(layouts: [Option<[usize; 2]>; 2]) -> CompGraph {
    let mm = |name: &str, a: &str, w: &str, out: &str, l: Option<[usize; 2]>| {
        let mut o = json!({ "name": name, "op": "matmul", "inputs": [a, w], "outputs": [out] });
        if let Some(l) = l {
            o["attrs"] = json!({ "layout": l });
        }
        o
    };
    graph(json!({
        "schema": "gir-model/v1",
        "name": "libs",
        "tensors": {
            "x": f32(&[64, 64]), "a": f32(&[64, 64]), "w1": f32(&[64, 64]), "w2": f32(&[64, 64]),
            "y": f32(&[64, 64]), "z": f32(&[64, 64]), "out": f32(&[64, 64])
        },
        "inputs": ["x", "w1", "w2"],
        "outputs": ["out"],
        "operators": [
            { "name": "act", "op": "relu", "inputs": ["x"], "outputs": ["a"] },
            mm("mm1", "a", "w1", "y", layouts[0]),
            mm("mm2", "y", "w2", "z", layouts[1]),
            { "name": "fin", "op": "neg", "inputs": ["z"], "outputs": ["out"] }
        ]
    }))
}

fn transposes(p: &gir_fusion::frontend::Partition) -> Vec<(usize, String)> {
    p.gir_subgraphs
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            s.ops
                .iter()
                .filter(|o| matches!(o.kind, BasicKind::Transpose { pattern: DataMove::Permute { .. } }))
                .map(move |o| (i, o.origin.clone()))
        })
        .collect()
}

#[test]
fn mismatched_layout_gets_a_transpose_in_the_producer_subgraph() {
    let p = classify(&library_model([Some([1, 0]), None]), &gpu(), Some(1.0)).unwrap();
    assert_eq!(p.library_calls.len(), 2);
    let q = insert_layout_transposes(&p).unwrap();
    let t = transposes(&q);
    assert_eq!(t.len(), 2, "{t:?}");
    let producer = q.gir_subgraphs.iter().position(|s| s.ops.iter().any(|o| o.origin == "act")).unwrap();
    assert!(t.contains(&(producer, "mm1.layout_in".to_string())), "{t:?}");
}

#[test]
fn matching_layouts_are_unchanged() {
    for l in [None, Some([0, 1])] {
        let p = classify(&library_model([l, l]), &gpu(), Some(1.0)).unwrap();
        assert_eq!(insert_layout_transposes(&p).unwrap().gir_subgraphs, p.gir_subgraphs);
    }
}

#[test]
fn inverse_transposes_between_library_calls_cancel() {
    let p = classify(&library_model([Some([1, 0]), Some([1, 0])]), &gpu(), Some(1.0)).unwrap();
    let t = transposes(&insert_layout_transposes(&p).unwrap());
    let names: Vec<&str> = t.iter().map(|(_, n)| n.as_str()).collect();
    assert_eq!(names.len(), 2, "{names:?}");
    assert!(names.contains(&"mm1.layout_in") && names.contains(&"mm2.layout_out"), "{names:?}");
}

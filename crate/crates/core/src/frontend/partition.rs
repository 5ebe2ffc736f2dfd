use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::Serialize;

use super::basic::{eval_basic, split_composite, BasicKind, BasicOp, DataMove};
use super::graph::{invert_perm, permute_shape, CompGraph, OpType, Operator, TensorDesc};
use crate::error::{Error, Result};
use crate::interp::{eval_operator, Tensor, TensorMap};
use crate::profile::HardwareProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OpClass {
    Library,
    Lowered,
}

/// An opaque library kernel, executed by the reference implementation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LibraryCall {
    pub op: Operator,
    /// Tensors actually read and written; differ from `op` after layout insertion.
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// First input and output are held in the declared physical layout.
    pub physical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Subgraph {
    pub ops: Vec<BasicOp>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Item {
    Library(usize),
    Subgraph(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    pub model: String,
    pub threshold: f64,
    pub tensors: BTreeMap<String, TensorDesc>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub classes: BTreeMap<String, OpClass>,
    pub library_calls: Vec<LibraryCall>,
    pub gir_subgraphs: Vec<Subgraph>,
}

/// Floating-point work and element traffic of one operator instance.
pub fn op_cost(op: &Operator, tensors: &BTreeMap<String, TensorDesc>) -> Result<(f64, f64)> {
    let elems = |t: &String| {
        tensors
            .get(t)
            .map(|d| d.elements() as f64)
            .ok_or_else(|| Error::Schema(format!("unknown tensor `{t}`")))
    };
    let shape = |t: &String| tensors[t].shape.clone();
    let traffic: f64 = op.inputs.iter().chain(&op.outputs).map(elems).sum::<Result<f64>>()?;
    let out = elems(&op.outputs[0])?;
    let flops = match OpType::of(op)? {
        OpType::Unary(_) | OpType::Binary(_) => out,
        OpType::Silu => 2.0 * out,
        OpType::Softmax => 5.0 * out,
        OpType::Reduce(_) => elems(&op.inputs[0])?,
        OpType::Broadcast
        | OpType::Transpose
        | OpType::Concat
        | OpType::Split
        | OpType::ChannelShuffle => 0.0,
        OpType::MatMul => {
            let a = shape(&op.inputs[0]);
            2.0 * out * *a.last().unwrap() as f64
        }
        OpType::Conv2d => {
            let w = shape(&op.inputs[1]);
            2.0 * out * (w[1] * w[2] * w[3]) as f64
        }
        OpType::DepthwiseConv2d => {
            let w = shape(&op.inputs[1]);
            2.0 * out * (w[1] * w[2]) as f64
        }
    };
    Ok((flops, traffic))
}

fn must_be_library(op: &Operator, tensors: &BTreeMap<String, TensorDesc>) -> bool {
    OpType::of(op) == Ok(OpType::Conv2d) && {
        let w = &tensors[&op.inputs[1]].shape;
        w[2] != 1 || w[3] != 1
    }
}

/// Splits the model into library calls and memory-bound GIR subgraphs.
///
/// An operator is a library call iff its FLOPs per element of traffic exceed
/// `threshold` (the profile's machine balance when `None`).
pub fn classify(g: &CompGraph, profile: &HardwareProfile, threshold: Option<f64>) -> Result<Partition> {
    let threshold = threshold.unwrap_or_else(|| profile.machine_balance());
    let mut tensors = g.tensors.clone();
    let mut classes = BTreeMap::new();
    let mut libs = Vec::new();
    let mut basic = Vec::new();
    for i in g.topo_order()? {
        let op = &g.operators[i];
        let (flops, traffic) = op_cost(op, &g.tensors)?;
        if flops / traffic > threshold || must_be_library(op, &g.tensors) {
            classes.insert(op.name.clone(), OpClass::Library);
            libs.push(LibraryCall {
                op: op.clone(),
                inputs: op.inputs.clone(),
                outputs: op.outputs.clone(),
                physical: false,
            });
        } else {
            classes.insert(op.name.clone(), OpClass::Lowered);
            let (ops, fresh) = split_composite(op, &g.tensors)?;
            basic.extend(ops);
            tensors.extend(fresh);
        }
    }
    let gir_subgraphs = group(&libs, basic, &g.outputs);
    Ok(Partition {
        model: g.name.clone(),
        threshold,
        tensors,
        inputs: g.inputs.clone(),
        outputs: g.outputs.clone(),
        classes,
        library_calls: libs,
        gir_subgraphs,
    })
}

#[derive(Clone, Copy)]
enum Producer {
    Lib(usize),
    Basic(usize),
}

/// Groups basic ops into connected subgraphs that never straddle a library
/// call: ops only join when they sit behind the same number of library calls.
fn group(libs: &[LibraryCall], basic: Vec<BasicOp>, outputs: &[String]) -> Vec<Subgraph> {
    let basic = topo_sort(basic);
    let mut prod: BTreeMap<&str, Producer> = BTreeMap::new();
    for (i, l) in libs.iter().enumerate() {
        for t in &l.outputs {
            prod.insert(t, Producer::Lib(i));
        }
    }
    for (i, b) in basic.iter().enumerate() {
        for t in &b.outputs {
            prod.insert(t, Producer::Basic(i));
        }
    }
    fn depth(
        p: Producer,
        libs: &[LibraryCall],
        basic: &[BasicOp],
        prod: &BTreeMap<&str, Producer>,
        memo: &mut BTreeMap<(bool, usize), usize>,
    ) -> usize {
        let key = match p {
            Producer::Lib(i) => (true, i),
            Producer::Basic(i) => (false, i),
        };
        if let Some(&d) = memo.get(&key) {
            return d;
        }
        let inputs = match p {
            Producer::Lib(i) => &libs[i].inputs,
            Producer::Basic(i) => &basic[i].inputs,
        };
        let d = inputs
            .iter()
            .filter_map(|t| prod.get(t.as_str()).copied())
            .map(|q| depth(q, libs, basic, prod, memo) + matches!(q, Producer::Lib(_)) as usize)
            .max()
            .unwrap_or(0);
        memo.insert(key, d);
        d
    }
    let mut memo = BTreeMap::new();
    let depths: Vec<usize> = (0..basic.len())
        .map(|i| depth(Producer::Basic(i), libs, &basic, &prod, &mut memo))
        .collect();

    let mut parent: Vec<usize> = (0..basic.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    fn union(a: usize, b: usize, p: &mut [usize]) {
        let (ra, rb) = (find(p, a), find(p, b));
        if ra != rb {
            p[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut readers: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, b) in basic.iter().enumerate() {
        for t in &b.inputs {
            if let Some(Producer::Basic(j)) = prod.get(t.as_str()) {
                if depths[*j] == depths[i] {
                    union(i, *j, &mut parent);
                }
            }
            readers.entry(t).or_default().push(i);
        }
    }
    for rs in readers.values() {
        for w in rs.windows(2) {
            if depths[w[0]] == depths[w[1]] {
                union(w[0], w[1], &mut parent);
            }
        }
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..basic.len() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups
        .into_values()
        .map(|members| {
            let ops: Vec<BasicOp> = members.iter().map(|&i| basic[i].clone()).collect();
            let made: BTreeSet<&str> = ops.iter().flat_map(|o| o.outputs.iter().map(|s| s.as_str())).collect();
            let mut inputs = Vec::new();
            for o in &ops {
                for t in &o.inputs {
                    if !made.contains(t.as_str()) && !inputs.contains(t) {
                        inputs.push(t.clone());
                    }
                }
            }
            let used_outside = |t: &str| {
                outputs.iter().any(|o| o == t)
                    || libs.iter().any(|l| l.inputs.iter().any(|i| i == t))
                    || basic
                        .iter()
                        .enumerate()
                        .any(|(i, b)| !members.contains(&i) && b.inputs.iter().any(|x| x == t))
            };
            let outputs = ops
                .iter()
                .flat_map(|o| o.outputs.iter())
                .filter(|t| used_outside(t))
                .cloned()
                .collect();
            Subgraph { ops, inputs, outputs }
        })
        .collect()
}

/// Stable topological sort of basic ops by tensor dependences.
fn topo_sort(basic: Vec<BasicOp>) -> Vec<BasicOp> {
    let mut prod = BTreeMap::new();
    for (i, b) in basic.iter().enumerate() {
        for t in &b.outputs {
            prod.insert(t.clone(), i);
        }
    }
    let mut indeg = vec![0; basic.len()];
    let mut succ = vec![Vec::new(); basic.len()];
    for (i, b) in basic.iter().enumerate() {
        for t in &b.inputs {
            if let Some(&p) = prod.get(t) {
                succ[p].push(i);
                indeg[i] += 1;
            }
        }
    }
    let mut heap: BinaryHeap<Reverse<usize>> = (0..basic.len()).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut order = Vec::new();
    while let Some(Reverse(i)) = heap.pop() {
        order.push(i);
        for &s in &succ[i] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                heap.push(Reverse(s));
            }
        }
    }
    let mut slots: Vec<Option<BasicOp>> = basic.into_iter().map(Some).collect();
    order.into_iter().map(|i| slots[i].take().unwrap()).collect()
}

impl Partition {
    pub fn basic_ops(&self) -> impl Iterator<Item = &BasicOp> {
        self.gir_subgraphs.iter().flat_map(|s| s.ops.iter())
    }

    /// Library calls and subgraphs in an order respecting data dependences.
    pub fn schedule(&self) -> Result<Vec<Item>> {
        let mut prod: BTreeMap<&str, Item> = BTreeMap::new();
        let mut reads: BTreeMap<Item, Vec<&String>> = BTreeMap::new();
        for (i, l) in self.library_calls.iter().enumerate() {
            for t in &l.outputs {
                prod.insert(t, Item::Library(i));
            }
            reads.insert(Item::Library(i), l.inputs.iter().collect());
        }
        for (i, s) in self.gir_subgraphs.iter().enumerate() {
            for t in &s.outputs {
                prod.insert(t, Item::Subgraph(i));
            }
            reads.insert(Item::Subgraph(i), s.inputs.iter().collect());
        }
        let mut indeg: BTreeMap<Item, usize> = reads.keys().map(|&k| (k, 0)).collect();
        let mut succ: BTreeMap<Item, BTreeSet<Item>> = BTreeMap::new();
        for (&item, ins) in &reads {
            for t in ins {
                if let Some(&p) = prod.get(t.as_str()) {
                    if p != item && succ.entry(p).or_default().insert(item) {
                        *indeg.get_mut(&item).unwrap() += 1;
                    }
                }
            }
        }
        let mut heap: BinaryHeap<Reverse<Item>> =
            indeg.iter().filter(|(_, &d)| d == 0).map(|(&k, _)| Reverse(k)).collect();
        let mut order = Vec::new();
        while let Some(Reverse(it)) = heap.pop() {
            order.push(it);
            for s in succ.get(&it).into_iter().flatten() {
                let d = indeg.get_mut(s).unwrap();
                *d -= 1;
                if *d == 0 {
                    heap.push(Reverse(*s));
                }
            }
        }
        if order.len() != indeg.len() {
            return Err(Error::Cycle);
        }
        Ok(order)
    }

    /// Operator-level execution: library stubs plus basic-op evaluation.
    pub fn run_basic(&self, inputs: &TensorMap) -> Result<TensorMap> {
        let mut env = inputs.clone();
        for item in self.schedule()? {
            match item {
                Item::Library(i) => self.library_calls[i].execute(&mut env, &self.tensors)?,
                Item::Subgraph(i) => {
                    for op in &self.gir_subgraphs[i].ops {
                        eval_basic(op, &mut env, &self.tensors)?;
                    }
                }
            }
        }
        self.outputs
            .iter()
            .map(|t| {
                env.remove(t)
                    .map(|v| (t.clone(), v))
                    .ok_or_else(|| Error::Execution(format!("output `{t}` not computed")))
            })
            .collect()
    }
}

fn permute_tensor(t: &Tensor, perm: &[usize]) -> Tensor {
    let g = &DataMove::Permute { perm: perm.to_vec() }.gather(std::slice::from_ref(&t.shape))[0];
    Tensor {
        shape: permute_shape(&t.shape, perm),
        kind: t.kind,
        data: g.iter().map(|&(_, i)| t.data[i]).collect(),
    }
}

impl LibraryCall {
    pub fn execute(&self, env: &mut TensorMap, tensors: &BTreeMap<String, TensorDesc>) -> Result<()> {
        let layout = self.op.attrs.layout.as_deref().filter(|_| self.physical);
        let mut ins: Vec<Tensor> = self
            .inputs
            .iter()
            .map(|t| env.get(t).cloned().ok_or_else(|| Error::Execution(format!("tensor `{t}` not computed"))))
            .collect::<Result<_>>()?;
        if let Some(l) = layout {
            ins[0] = permute_tensor(&ins[0], &invert_perm(l));
        }
        let descs: Vec<TensorDesc> = self.op.outputs.iter().map(|t| tensors[t].clone()).collect();
        let refs: Vec<&Tensor> = ins.iter().collect();
        let mut outs = eval_operator(&self.op, &refs, &descs)?;
        if let Some(l) = layout {
            outs[0] = permute_tensor(&outs[0], l);
        }
        for (name, t) in self.outputs.iter().zip(outs) {
            env.insert(name.clone(), t);
        }
        Ok(())
    }
}

fn is_identity(p: &[usize]) -> bool {
    p.iter().enumerate().all(|(i, &a)| i == a)
}

/// Adds transposes where a library call wants a layout other than the
/// logical one. Each transpose joins the neighbouring GIR subgraph, and
/// back-to-back inverse pairs between two library calls cancel.
pub fn insert_layout_transposes(p: &Partition) -> Result<Partition> {
    let mut p = p.clone();
    let mut basic: Vec<BasicOp> = p.gir_subgraphs.drain(..).flat_map(|s| s.ops).collect();
    for lib in p.library_calls.iter_mut() {
        let Some(l) = lib.op.attrs.layout.clone() else { continue };
        if lib.physical || is_identity(&l) {
            continue;
        }
        let x = lib.inputs[0].clone();
        let y = lib.outputs[0].clone();
        let (xs, ys) = (p.tensors[&x].clone(), p.tensors[&y].clone());
        if ys.shape.len() != l.len() {
            return Err(Error::Schema(format!(
                "operator `{}`: layout {l:?} does not fit output rank {}",
                lib.op.name,
                ys.shape.len()
            )));
        }
        let xp = format!("{x}@{}", lib.op.name);
        let yp = format!("{y}@{}", lib.op.name);
        p.tensors.insert(xp.clone(), TensorDesc::new(permute_shape(&xs.shape, &l), xs.kind));
        p.tensors.insert(yp.clone(), TensorDesc::new(permute_shape(&ys.shape, &l), ys.kind));
        basic.push(BasicOp {
            origin: format!("{}.layout_in", lib.op.name),
            kind: BasicKind::Transpose { pattern: DataMove::Permute { perm: l.clone() } },
            inputs: vec![x],
            outputs: vec![xp.clone()],
        });
        basic.push(BasicOp {
            origin: format!("{}.layout_out", lib.op.name),
            kind: BasicKind::Transpose { pattern: DataMove::Permute { perm: invert_perm(&l) } },
            inputs: vec![yp.clone()],
            outputs: vec![y],
        });
        lib.inputs[0] = xp;
        lib.outputs[0] = yp;
        lib.physical = true;
    }
    cancel_inverse_pairs(&mut basic, &mut p.library_calls, &p.outputs);
    p.gir_subgraphs = group(&p.library_calls, basic, &p.outputs);
    Ok(p)
}

fn cancel_inverse_pairs(basic: &mut Vec<BasicOp>, libs: &mut [LibraryCall], outputs: &[String]) {
    loop {
        let perm_of = |b: &BasicOp| match &b.kind {
            BasicKind::Transpose { pattern: DataMove::Permute { perm } } => Some(perm.clone()),
            _ => None,
        };
        let found = (0..basic.len()).find_map(|j| {
            let q = perm_of(&basic[j])?;
            let mid = &basic[j].inputs[0];
            let i = basic.iter().position(|b| b.outputs.contains(mid))?;
            let p = perm_of(&basic[i])?;
            let composed: Vec<usize> = q.iter().map(|&e| p[e]).collect();
            let sole_reader = basic.iter().filter(|b| b.inputs.contains(mid)).count() == 1
                && !libs.iter().any(|l| l.inputs.contains(mid))
                && !outputs.contains(mid);
            let out = &basic[j].outputs[0];
            (is_identity(&composed) && sole_reader && !outputs.contains(out)).then_some((i, j))
        });
        let Some((i, j)) = found else { return };
        let src = basic[i].inputs[0].clone();
        let dst = basic[j].outputs[0].clone();
        let rename = |ts: &mut Vec<String>| {
            for t in ts.iter_mut().filter(|t| **t == dst) {
                *t = src.clone();
            }
        };
        for b in basic.iter_mut() {
            rename(&mut b.inputs);
        }
        for l in libs.iter_mut() {
            rename(&mut l.inputs);
        }
        basic.remove(i.max(j));
        basic.remove(i.min(j));
    }
}

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gir::{ElementKind, ReduceKind, ScalarOp};

pub const MODEL_SCHEMA: &str = "gir-model/v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorDesc {
    pub shape: Vec<usize>,
    pub kind: ElementKind,
}

impl TensorDesc {
    pub fn new(shape: Vec<usize>, kind: ElementKind) -> Self {
        TensorDesc { shape, kind }
    }

    pub fn elements(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Operator attributes. Which ones are required depends on the operator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attrs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
    /// Length of the trailing axis appended by `broadcast`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perm: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
    /// Physical layout a library implementation wants for its first input
    /// and produces for its first output, as an axis permutation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<Vec<usize>>,
}

impl Attrs {
    pub fn is_empty(&self) -> bool {
        *self == Attrs::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Operator {
    pub name: String,
    pub op: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Attrs::is_empty")]
    pub attrs: Attrs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpType {
    Unary(ScalarOp),
    Binary(ScalarOp),
    Silu,
    Softmax,
    Reduce(ReduceKind),
    Broadcast,
    Transpose,
    Concat,
    Split,
    ChannelShuffle,
    MatMul,
    Conv2d,
    DepthwiseConv2d,
}

/// Every operator name the importer accepts.
pub const OPERATORS: &[&str] = &[
    "relu", "sigmoid", "exp", "neg", "tanh", "copy", "scale", "add", "sub", "mul", "div", "max",
    "min", "silu", "softmax", "reduce_sum", "reduce_max", "broadcast", "transpose", "concat",
    "split", "channel_shuffle", "matmul", "conv2d", "depthwise_conv2d",
];

impl OpType {
    pub fn of(op: &Operator) -> Result<Self> {
        Ok(match op.op.as_str() {
            "silu" => OpType::Silu,
            "softmax" => OpType::Softmax,
            "reduce_sum" => OpType::Reduce(ReduceKind::Sum),
            "reduce_max" => OpType::Reduce(ReduceKind::Max),
            "broadcast" => OpType::Broadcast,
            "transpose" => OpType::Transpose,
            "concat" => OpType::Concat,
            "split" => OpType::Split,
            "channel_shuffle" => OpType::ChannelShuffle,
            "matmul" => OpType::MatMul,
            "conv2d" => OpType::Conv2d,
            "depthwise_conv2d" => OpType::DepthwiseConv2d,
            name => match ScalarOp::from_name(name, op.attrs.factor) {
                Some(s) if s.is_unary() => OpType::Unary(s),
                Some(s) => OpType::Binary(s),
                None => return Err(Error::UnsupportedOperator(name.to_string())),
            },
        })
    }

    pub fn is_data_movement(self) -> bool {
        matches!(
            self,
            OpType::Transpose | OpType::Concat | OpType::Split | OpType::ChannelShuffle
        )
    }
}

fn is_perm(p: &[usize], rank: usize) -> bool {
    let set: BTreeSet<_> = p.iter().copied().collect();
    p.len() == rank && set.len() == rank && set.iter().all(|&a| a < rank)
}

pub fn invert_perm(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &a) in p.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

pub fn permute_shape(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    perm.iter().map(|&a| shape[a]).collect()
}

/// Output shapes of `op` given its input shapes, with attribute checks.
pub fn infer_shapes(op: &Operator, ins: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
    let ty = OpType::of(op)?;
    let fail = |msg: String| Err(Error::Schema(format!("operator `{}` ({}): {msg}", op.name, op.op)));
    let arity = match ty {
        OpType::Binary(_) | OpType::MatMul | OpType::Conv2d | OpType::DepthwiseConv2d => Some(2),
        OpType::Concat => None,
        _ => Some(1),
    };
    if let Some(n) = arity {
        if ins.len() != n {
            return fail(format!("expects {n} inputs, got {}", ins.len()));
        }
    } else if ins.is_empty() {
        return fail("expects at least one input".into());
    }
    if matches!(ty, OpType::Unary(ScalarOp::Scale { .. })) && op.attrs.factor.is_none() {
        return fail("missing attribute `factor`".into());
    }
    if let Some(l) = &op.attrs.layout {
        if !matches!(ty, OpType::MatMul | OpType::Conv2d | OpType::DepthwiseConv2d) {
            return fail("`layout` applies only to library-capable operators".into());
        }
        if !is_perm(l, ins[0].len()) {
            return fail(format!("layout {l:?} is not a permutation of rank {}", ins[0].len()));
        }
    }
    let x = &ins[0];
    Ok(match ty {
        OpType::Unary(_) | OpType::Silu => vec![x.clone()],
        OpType::Binary(_) => {
            if ins[1] != *x {
                return fail(format!("operand shapes {x:?} and {:?} differ", ins[1]));
            }
            vec![x.clone()]
        }
        OpType::Softmax | OpType::Reduce(_) if x.is_empty() => return fail("needs rank >= 1".into()),
        OpType::Softmax => vec![x.clone()],
        OpType::Reduce(_) => {
            let s = x[..x.len() - 1].to_vec();
            vec![if s.is_empty() { vec![1] } else { s }]
        }
        OpType::Broadcast => match op.attrs.size {
            Some(n) if n > 0 => {
                let mut s = x.clone();
                s.push(n);
                vec![s]
            }
            _ => return fail("missing positive attribute `size`".into()),
        },
        OpType::Transpose => match &op.attrs.perm {
            Some(p) if is_perm(p, x.len()) => vec![permute_shape(x, p)],
            _ => return fail(format!("`perm` must be a permutation of rank {}", x.len())),
        },
        OpType::Concat => {
            let axis = op.attrs.axis.unwrap_or(0);
            if axis >= x.len() {
                return fail(format!("axis {axis} out of range"));
            }
            let mut s = x.clone();
            s[axis] = 0;
            for i in ins {
                let mut rest = i.clone();
                if rest.len() != x.len() {
                    return fail("inputs differ in rank".into());
                }
                s[axis] += rest[axis];
                rest[axis] = x[axis];
                if rest != *x {
                    return fail(format!("shapes {x:?} and {i:?} differ off axis {axis}"));
                }
            }
            vec![s]
        }
        OpType::Split => {
            let axis = op.attrs.axis.unwrap_or(0);
            let Some(sizes) = &op.attrs.sizes else { return fail("missing attribute `sizes`".into()) };
            if axis >= x.len() || sizes.iter().sum::<usize>() != x[axis] || sizes.contains(&0) {
                return fail(format!("sizes {sizes:?} do not partition axis {axis} of {x:?}"));
            }
            sizes
                .iter()
                .map(|&n| {
                    let mut s = x.clone();
                    s[axis] = n;
                    s
                })
                .collect()
        }
        OpType::ChannelShuffle => match op.attrs.groups {
            Some(g) if g > 0 && !x.is_empty() && x[0].is_multiple_of(g) => vec![x.clone()],
            _ => return fail("`groups` must divide the leading axis".into()),
        },
        OpType::MatMul => {
            let (a, b) = (x, &ins[1]);
            let (m, k1) = match a.len() {
                1 => (None, a[0]),
                2 => (Some(a[0]), a[1]),
                _ => return fail("left operand must have rank 1 or 2".into()),
            };
            let (k2, n) = match b.len() {
                1 => (b[0], None),
                2 => (b[0], Some(b[1])),
                _ => return fail("right operand must have rank 1 or 2".into()),
            };
            if k1 != k2 {
                return fail(format!("contraction sizes {k1} and {k2} differ"));
            }
            vec![[m, n].into_iter().flatten().collect::<Vec<_>>()]
                .into_iter()
                .map(|s| if s.is_empty() { vec![1] } else { s })
                .collect()
        }
        OpType::Conv2d | OpType::DepthwiseConv2d => {
            let w = &ins[1];
            let dw = ty == OpType::DepthwiseConv2d;
            if x.len() != 3 || w.len() != if dw { 3 } else { 4 } {
                return fail("expects input [C,H,W] and weight [O,C,kh,kw] or [C,kh,kw]".into());
            }
            let (o, c, kh, kw) = if dw { (w[0], w[0], w[1], w[2]) } else { (w[0], w[1], w[2], w[3]) };
            if c != x[0] || kh > x[1] || kw > x[2] || kh == 0 || kw == 0 {
                return fail(format!("weight {w:?} does not fit input {x:?}"));
            }
            vec![vec![o, x[1] - kh + 1, x[2] - kw + 1]]
        }
    })
}

/// Operator-level model graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompGraph {
    pub schema: String,
    pub name: String,
    pub tensors: BTreeMap<String, TensorDesc>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub operators: Vec<Operator>,
}

impl CompGraph {
    pub fn new(name: &str) -> Self {
        CompGraph {
            schema: MODEL_SCHEMA.into(),
            name: name.into(),
            tensors: BTreeMap::new(),
            inputs: vec![],
            outputs: vec![],
            operators: vec![],
        }
    }

    /// Parses and checks a model; errors name the offending operator or field.
    pub fn from_json(text: &str) -> Result<Self> {
        let g: CompGraph = serde_json::from_str(text)?;
        if g.schema != MODEL_SCHEMA {
            return Err(Error::Schema(format!(
                "unsupported schema `{}`, expected `{MODEL_SCHEMA}`",
                g.schema
            )));
        }
        g.check()?;
        Ok(g)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn tensor(&self, name: &str) -> Result<&TensorDesc> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Schema(format!("unknown tensor `{name}`")))
    }

    pub fn operator(&self, name: &str) -> Option<&Operator> {
        self.operators.iter().find(|o| o.name == name)
    }

    /// Producer operator index of every produced tensor.
    pub fn producers(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for (i, op) in self.operators.iter().enumerate() {
            for t in &op.outputs {
                m.insert(t.as_str(), i);
            }
        }
        m
    }

    /// Operator indices in dependence order, ties broken by declaration order.
    pub fn topo_order(&self) -> Result<Vec<usize>> {
        let prod = self.producers();
        let n = self.operators.len();
        let mut indeg = vec![0; n];
        let mut succ = vec![BTreeSet::new(); n];
        for (i, op) in self.operators.iter().enumerate() {
            for t in &op.inputs {
                if let Some(&p) = prod.get(t.as_str()) {
                    if succ[p].insert(i) {
                        indeg[i] += 1;
                    }
                }
            }
        }
        let mut heap: BinaryHeap<_> = (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(i)) = heap.pop() {
            order.push(i);
            for &s in &succ[i] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    heap.push(Reverse(s));
                }
            }
        }
        if order.len() != n {
            return Err(Error::Cycle);
        }
        Ok(order)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Schema(m));
        let mut names = BTreeSet::new();
        let mut produced: BTreeSet<&str> = BTreeSet::new();
        for t in &self.inputs {
            self.tensor(t)?;
            if !produced.insert(t) {
                return bad(format!("input `{t}` listed twice"));
            }
        }
        for op in &self.operators {
            OpType::of(op)?;
            if !names.insert(&op.name) {
                return bad(format!("duplicate operator name `{}`", op.name));
            }
            for t in &op.outputs {
                self.tensor(t)?;
                if !produced.insert(t) {
                    return bad(format!("tensor `{t}` has more than one producer"));
                }
            }
        }
        for op in &self.operators {
            for t in &op.inputs {
                if !produced.contains(t.as_str()) {
                    return bad(format!("operator `{}` reads `{t}`, which nothing produces", op.name));
                }
            }
        }
        for t in &self.outputs {
            if !produced.contains(t.as_str()) || self.inputs.contains(t) {
                return bad(format!("output `{t}` is not produced by an operator"));
            }
        }
        for (name, d) in &self.tensors {
            if d.shape.is_empty() || d.shape.contains(&0) {
                return bad(format!("tensor `{name}` has empty shape {:?}", d.shape));
            }
        }
        self.topo_order()?;
        for op in &self.operators {
            let ins: Vec<Vec<usize>> = op
                .inputs
                .iter()
                .map(|t| self.tensor(t).map(|d| d.shape.clone()))
                .collect::<Result<_>>()?;
            let outs = infer_shapes(op, &ins)?;
            if outs.len() != op.outputs.len() {
                return bad(format!(
                    "operator `{}` produces {} tensors, {} declared",
                    op.name,
                    outs.len(),
                    op.outputs.len()
                ));
            }
            for (t, s) in op.outputs.iter().zip(outs) {
                let d = self.tensor(t)?;
                if d.shape != s {
                    return bad(format!(
                        "operator `{}` output `{t}` declared {:?}, inferred {s:?}",
                        op.name, d.shape
                    ));
                }
            }
        }
        Ok(())
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::{invert_perm, permute_shape, Operator, OpType, TensorDesc};
use crate::error::{Error, Result};
use crate::gir::{ReduceKind, ScalarOp};
use crate::interp::Tensor;

/// Pure data movement: every output element copies one input element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMove {
    Permute { perm: Vec<usize> },
    Concat { axis: usize },
    Split { axis: usize, sizes: Vec<usize> },
    Shuffle { groups: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasicKind {
    ElementWise { op: ScalarOp },
    /// Appends a trailing axis of length `size`.
    Broadcast { size: usize },
    /// Reduces the trailing axis of length `extent`.
    Reduce { reduce: ReduceKind, extent: usize },
    Transpose { pattern: DataMove },
    /// `[m,k] x [k,n]`; only memory-bound instances reach lowering.
    MatMul { m: usize, k: usize, n: usize },
    /// Valid-padding, stride-1 depthwise convolution of `[c,h,w]` by `[c,kh,kw]`.
    DepthwiseConv { c: usize, h: usize, w: usize, kh: usize, kw: usize },
}

impl BasicKind {
    pub fn label(&self) -> String {
        match self {
            BasicKind::ElementWise { op } => op.name().to_string(),
            BasicKind::Broadcast { size } => format!("broadcast[{size}]"),
            BasicKind::Reduce { reduce, extent } => format!("reduce_{}[{extent}]", reduce.name()),
            BasicKind::Transpose { pattern } => match pattern {
                DataMove::Permute { perm } => format!("transpose{perm:?}"),
                DataMove::Concat { axis } => format!("concat[{axis}]"),
                DataMove::Split { axis, .. } => format!("split[{axis}]"),
                DataMove::Shuffle { groups } => format!("shuffle[{groups}]"),
            },
            BasicKind::MatMul { m, k, n } => format!("matmul[{m}x{k}x{n}]"),
            BasicKind::DepthwiseConv { kh, kw, .. } => format!("dwconv[{kh}x{kw}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasicOp {
    /// Name of the model operator this op was split from.
    pub origin: String,
    pub kind: BasicKind,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for d in (0..shape.len()).rev() {
        idx[d] = flat % shape[d];
        flat /= shape[d];
    }
    idx
}

fn ravel(idx: &[usize], shape: &[usize]) -> usize {
    idx.iter().zip(strides(shape)).map(|(i, s)| i * s).sum()
}

impl DataMove {
    pub fn output_shapes(&self, ins: &[Vec<usize>]) -> Vec<Vec<usize>> {
        match self {
            DataMove::Permute { perm } => vec![permute_shape(&ins[0], perm)],
            DataMove::Concat { axis } => {
                let mut s = ins[0].clone();
                s[*axis] = ins.iter().map(|i| i[*axis]).sum();
                vec![s]
            }
            DataMove::Split { axis, sizes } => sizes
                .iter()
                .map(|&n| {
                    let mut s = ins[0].clone();
                    s[*axis] = n;
                    s
                })
                .collect(),
            DataMove::Shuffle { .. } => vec![ins[0].clone()],
        }
    }

    /// For each output, the (input index, flat element) each element copies.
    pub fn gather(&self, ins: &[Vec<usize>]) -> Vec<Vec<(usize, usize)>> {
        let outs = self.output_shapes(ins);
        outs.iter()
            .enumerate()
            .map(|(j, oshape)| {
                let n: usize = oshape.iter().product();
                (0..n)
                    .map(|flat| {
                        let o = unravel(flat, oshape);
                        match self {
                            DataMove::Permute { perm } => {
                                let mut i = vec![0; o.len()];
                                for (d, &p) in perm.iter().enumerate() {
                                    i[p] = o[d];
                                }
                                (0, ravel(&i, &ins[0]))
                            }
                            DataMove::Concat { axis } => {
                                let mut i = o.clone();
                                let mut src = 0;
                                while i[*axis] >= ins[src][*axis] {
                                    i[*axis] -= ins[src][*axis];
                                    src += 1;
                                }
                                (src, ravel(&i, &ins[src]))
                            }
                            DataMove::Split { axis, sizes } => {
                                let mut i = o.clone();
                                i[*axis] += sizes[..j].iter().sum::<usize>();
                                (0, ravel(&i, &ins[0]))
                            }
                            DataMove::Shuffle { groups } => {
                                let c = ins[0][0];
                                let inner = n / c;
                                let k = c / groups;
                                let (ch, rest) = (flat / inner, flat % inner);
                                let src = (ch % groups) * k + ch / groups;
                                (0, src * inner + rest)
                            }
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// The data movement undoing this one, when it has a single input.
    pub fn inverse(&self) -> Option<DataMove> {
        match self {
            DataMove::Permute { perm } => Some(DataMove::Permute { perm: invert_perm(perm) }),
            _ => None,
        }
    }
}

/// Splits a lowered operator into basic ops. Intermediate tensors are named
/// `<operator>.<n>` and returned alongside.
pub fn split_composite(
    op: &Operator,
    tensors: &BTreeMap<String, TensorDesc>,
) -> Result<(Vec<BasicOp>, BTreeMap<String, TensorDesc>)> {
    let ty = OpType::of(op)?;
    let desc = |t: &String| tensors.get(t).cloned().ok_or_else(|| Error::Schema(format!("unknown tensor `{t}`")));
    let x = desc(&op.inputs[0])?;
    let mut fresh = BTreeMap::new();
    let mut tmp = |shape: Vec<usize>| {
        let name = format!("{}.{}", op.name, fresh.len());
        fresh.insert(name.clone(), TensorDesc::new(shape, x.kind));
        name
    };
    let basic = |kind: BasicKind, inputs: Vec<String>, outputs: Vec<String>| BasicOp {
        origin: op.name.clone(),
        kind,
        inputs,
        outputs,
    };
    let ew = |s: ScalarOp| BasicKind::ElementWise { op: s };
    let ops = match ty {
        OpType::Unary(s) | OpType::Binary(s) => vec![basic(ew(s), op.inputs.clone(), op.outputs.clone())],
        OpType::Silu => {
            let t = tmp(x.shape.clone());
            vec![
                basic(ew(ScalarOp::Sigmoid), op.inputs.clone(), vec![t.clone()]),
                basic(ew(ScalarOp::Mul), vec![op.inputs[0].clone(), t], op.outputs.clone()),
            ]
        }
        OpType::Softmax => {
            let n = *x.shape.last().unwrap();
            let rows = {
                let s = x.shape[..x.shape.len() - 1].to_vec();
                if s.is_empty() { vec![1] } else { s }
            };
            let (m, mb, d, e, s, sb) = (
                tmp(rows.clone()),
                tmp(x.shape.clone()),
                tmp(x.shape.clone()),
                tmp(x.shape.clone()),
                tmp(rows),
                tmp(x.shape.clone()),
            );
            let xin = op.inputs[0].clone();
            vec![
                basic(BasicKind::Reduce { reduce: ReduceKind::Max, extent: n }, vec![xin.clone()], vec![m.clone()]),
                basic(BasicKind::Broadcast { size: n }, vec![m], vec![mb.clone()]),
                basic(ew(ScalarOp::Sub), vec![xin, mb], vec![d.clone()]),
                basic(ew(ScalarOp::Exp), vec![d], vec![e.clone()]),
                basic(BasicKind::Reduce { reduce: ReduceKind::Sum, extent: n }, vec![e.clone()], vec![s.clone()]),
                basic(BasicKind::Broadcast { size: n }, vec![s], vec![sb.clone()]),
                basic(ew(ScalarOp::Div), vec![e, sb], op.outputs.clone()),
            ]
        }
        OpType::Reduce(r) => vec![basic(
            BasicKind::Reduce { reduce: r, extent: *x.shape.last().unwrap() },
            op.inputs.clone(),
            op.outputs.clone(),
        )],
        OpType::Broadcast => vec![basic(
            BasicKind::Broadcast { size: op.attrs.size.unwrap_or(1) },
            op.inputs.clone(),
            op.outputs.clone(),
        )],
        OpType::Transpose | OpType::Concat | OpType::Split | OpType::ChannelShuffle => {
            let pattern = match ty {
                OpType::Transpose => DataMove::Permute { perm: op.attrs.perm.clone().unwrap_or_default() },
                OpType::Concat => DataMove::Concat { axis: op.attrs.axis.unwrap_or(0) },
                OpType::Split => DataMove::Split {
                    axis: op.attrs.axis.unwrap_or(0),
                    sizes: op.attrs.sizes.clone().unwrap_or_default(),
                },
                _ => DataMove::Shuffle { groups: op.attrs.groups.unwrap_or(1) },
            };
            vec![basic(BasicKind::Transpose { pattern }, op.inputs.clone(), op.outputs.clone())]
        }
        OpType::MatMul => {
            let b = desc(&op.inputs[1])?;
            let (m, k) = if x.shape.len() == 1 { (1, x.shape[0]) } else { (x.shape[0], x.shape[1]) };
            let n = if b.shape.len() == 1 { 1 } else { b.shape[1] };
            vec![basic(BasicKind::MatMul { m, k, n }, op.inputs.clone(), op.outputs.clone())]
        }
        OpType::Conv2d => {
            // A 1x1 convolution is a matmul of the [O,C] weight with the [C,H*W] input.
            let w = desc(&op.inputs[1])?;
            if w.shape[2] != 1 || w.shape[3] != 1 {
                return Err(Error::UnsupportedOperator(format!(
                    "{} with a {}x{} kernel outside a library call",
                    op.op, w.shape[2], w.shape[3]
                )));
            }
            let (o, c) = (w.shape[0], w.shape[1]);
            vec![basic(
                BasicKind::MatMul { m: o, k: c, n: x.shape[1] * x.shape[2] },
                vec![op.inputs[1].clone(), op.inputs[0].clone()],
                op.outputs.clone(),
            )]
        }
        OpType::DepthwiseConv2d => {
            let w = desc(&op.inputs[1])?;
            vec![basic(
                BasicKind::DepthwiseConv { c: x.shape[0], h: x.shape[1], w: x.shape[2], kh: w.shape[1], kw: w.shape[2] },
                op.inputs.clone(),
                op.outputs.clone(),
            )]
        }
    };
    Ok((ops, fresh))
}

/// Evaluates one basic op, reading and writing `env` by tensor name.
pub fn eval_basic(op: &BasicOp, env: &mut BTreeMap<String, Tensor>, descs: &BTreeMap<String, TensorDesc>) -> Result<()> {
    let ins: Vec<&Tensor> = op
        .inputs
        .iter()
        .map(|t| env.get(t).ok_or_else(|| Error::Execution(format!("tensor `{t}` not computed"))))
        .collect::<Result<_>>()?;
    let outs: Vec<Vec<f64>> = match &op.kind {
        BasicKind::ElementWise { op: s } => vec![(0..ins[0].len())
            .map(|i| s.eval(&ins.iter().map(|t| t.data[i]).collect::<Vec<_>>()))
            .collect()],
        BasicKind::Broadcast { size } => {
            vec![(0..ins[0].len() * size).map(|i| ins[0].data[i / size]).collect()]
        }
        BasicKind::Reduce { reduce, extent } => vec![ins[0]
            .data
            .chunks(*extent)
            .map(|c| c.iter().fold(reduce.identity(), |a, &b| reduce.combine(a, b)))
            .collect()],
        BasicKind::Transpose { pattern } => {
            let shapes: Vec<Vec<usize>> = ins.iter().map(|t| t.shape.clone()).collect();
            pattern
                .gather(&shapes)
                .into_iter()
                .map(|g| g.into_iter().map(|(s, i)| ins[s].data[i]).collect())
                .collect()
        }
        BasicKind::MatMul { m, k, n } => {
            let (a, b) = (&ins[0].data, &ins[1].data);
            vec![(0..m * n)
                .map(|o| (0..*k).fold(0.0, |acc, j| acc + a[(o / n) * k + j] * b[j * n + o % n]))
                .collect()]
        }
        BasicKind::DepthwiseConv { c, h, w, kh, kw } => {
            let (x, wt) = (&ins[0].data, &ins[1].data);
            let (oh, ow) = (h - kh + 1, w - kw + 1);
            vec![(0..c * oh * ow)
                .map(|o| {
                    let (ch, y, xx) = (o / (oh * ow), (o / ow) % oh, o % ow);
                    let mut acc = 0.0;
                    for i in 0..*kh {
                        for j in 0..*kw {
                            acc += x[ch * h * w + (y + i) * w + xx + j] * wt[ch * kh * kw + i * kw + j];
                        }
                    }
                    acc
                })
                .collect()]
        }
    };
    for (name, data) in op.outputs.iter().zip(outs) {
        let d = descs
            .get(name)
            .ok_or_else(|| Error::Schema(format!("unknown tensor `{name}`")))?;
        env.insert(name.clone(), Tensor::new(d.shape.clone(), d.kind, data)?);
    }
    Ok(())
}

use crate::error::{Error, Result};
use crate::frontend::{CompGraph, OpType, Operator, TensorDesc};
use crate::interp::{Tensor, TensorMap};

fn index(idx: &[usize], shape: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (i, n)| acc * n + i)
}

fn coords(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for d in (0..shape.len()).rev() {
        idx[d] = flat % shape[d];
        flat /= shape[d];
    }
    idx
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Textbook semantics of one model operator.
pub fn eval_operator(op: &Operator, ins: &[&Tensor], outs: &[TensorDesc]) -> Result<Vec<Tensor>> {
    let x = ins[0];
    let out0 = &outs[0];
    let n0 = out0.elements();
    let data: Vec<Vec<f64>> = match OpType::of(op)? {
        OpType::Unary(s) => vec![x.data.iter().map(|&v| s.eval(&[v])).collect()],
        OpType::Binary(s) => {
            let y = ins[1];
            if y.shape != x.shape {
                return Err(Error::Execution(format!("`{}`: operand shapes differ", op.name)));
            }
            vec![x.data.iter().zip(&y.data).map(|(&a, &b)| s.eval(&[a, b])).collect()]
        }
        OpType::Silu => vec![x.data.iter().map(|&v| v * sigmoid(v)).collect()],
        OpType::Softmax => {
            let n = *x.shape.last().unwrap();
            vec![x
                .data
                .chunks(n)
                .flat_map(|row| {
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
                    let s: f64 = e.iter().sum();
                    e.into_iter().map(move |v| v / s)
                })
                .collect()]
        }
        OpType::Reduce(r) => {
            let n = *x.shape.last().unwrap();
            vec![x
                .data
                .chunks(n)
                .map(|c| c.iter().fold(r.identity(), |a, &b| r.combine(a, b)))
                .collect()]
        }
        OpType::Broadcast => {
            let f = op.attrs.size.unwrap_or(1);
            vec![x.data.iter().flat_map(|&v| std::iter::repeat_n(v, f)).collect()]
        }
        OpType::Transpose => {
            let perm = op.attrs.perm.as_ref().unwrap();
            vec![(0..n0)
                .map(|o| {
                    let oi = coords(o, &out0.shape);
                    let mut ii = vec![0; oi.len()];
                    for (d, &p) in perm.iter().enumerate() {
                        ii[p] = oi[d];
                    }
                    x.data[index(&ii, &x.shape)]
                })
                .collect()]
        }
        OpType::Concat => {
            let axis = op.attrs.axis.unwrap_or(0);
            let outer: usize = x.shape[..axis].iter().product();
            let mut v = Vec::with_capacity(n0);
            for o in 0..outer {
                for t in ins {
                    let chunk: usize = t.shape[axis..].iter().product();
                    v.extend_from_slice(&t.data[o * chunk..(o + 1) * chunk]);
                }
            }
            vec![v]
        }
        OpType::Split => {
            let axis = op.attrs.axis.unwrap_or(0);
            let outer: usize = x.shape[..axis].iter().product();
            let inner: usize = x.shape[axis + 1..].iter().product();
            let sizes = op.attrs.sizes.as_ref().unwrap();
            let mut off = 0;
            sizes
                .iter()
                .map(|&s| {
                    let mut v = Vec::new();
                    for o in 0..outer {
                        let base = (o * x.shape[axis] + off) * inner;
                        v.extend_from_slice(&x.data[base..base + s * inner]);
                    }
                    off += s;
                    v
                })
                .collect()
        }
        OpType::ChannelShuffle => {
            // [g*k, ...] viewed as [g, k, ...] and transposed to [k, g, ...].
            let g = op.attrs.groups.unwrap();
            let k = x.shape[0] / g;
            let inner = x.len() / x.shape[0];
            let mut v = Vec::with_capacity(n0);
            for j in 0..k {
                for i in 0..g {
                    let c = i * k + j;
                    v.extend_from_slice(&x.data[c * inner..(c + 1) * inner]);
                }
            }
            vec![v]
        }
        OpType::MatMul => {
            let b = ins[1];
            let kk = *x.shape.last().unwrap();
            let m = x.len() / kk;
            let n = b.len() / kk;
            let mut v = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    for p in 0..kk {
                        v[i * n + j] += x.data[i * kk + p] * b.data[p * n + j];
                    }
                }
            }
            vec![v]
        }
        OpType::Conv2d | OpType::DepthwiseConv2d => {
            let w = ins[1];
            let dw = matches!(OpType::of(op)?, OpType::DepthwiseConv2d);
            let (c, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
            let (kh, kw) = (w.shape[w.shape.len() - 2], w.shape[w.shape.len() - 1]);
            let (o, oh, ow) = (out0.shape[0], out0.shape[1], out0.shape[2]);
            let mut v = vec![0.0; o * oh * ow];
            for oc in 0..o {
                let chans: Vec<usize> = if dw { vec![oc] } else { (0..c).collect() };
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = 0.0;
                        for &ic in &chans {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let wv = if dw {
                                        w.data[(oc * kh + i) * kw + j]
                                    } else {
                                        w.data[((oc * c + ic) * kh + i) * kw + j]
                                    };
                                    acc += x.data[(ic * h + y + i) * wd + xx + j] * wv;
                                }
                            }
                        }
                        v[(oc * oh + y) * ow + xx] = acc;
                    }
                }
            }
            vec![v]
        }
    };
    outs.iter()
        .zip(data)
        .map(|(d, v)| Tensor::new(d.shape.clone(), d.kind, v))
        .collect()
}

/// Runs the model at operator level, returning every tensor it computes.
pub fn run_reference_all(g: &CompGraph, inputs: &TensorMap) -> Result<TensorMap> {
    let mut env = TensorMap::new();
    for name in &g.inputs {
        let t = inputs
            .get(name)
            .ok_or_else(|| Error::Execution(format!("missing input `{name}`")))?;
        if t.shape != g.tensor(name)?.shape {
            return Err(Error::Execution(format!(
                "input `{name}` has shape {:?}, expected {:?}",
                t.shape,
                g.tensor(name)?.shape
            )));
        }
        env.insert(name.clone(), t.clone());
    }
    for i in g.topo_order()? {
        let op = &g.operators[i];
        let ins: Vec<&Tensor> = op.inputs.iter().map(|t| &env[t]).collect();
        let descs: Vec<TensorDesc> = op.outputs.iter().map(|t| g.tensors[t].clone()).collect();
        let outs = eval_operator(op, &ins, &descs)?;
        for (name, t) in op.outputs.iter().zip(outs) {
            env.insert(name.clone(), t);
        }
    }
    Ok(env)
}

/// Runs the model at operator level and returns its declared outputs.
pub fn run_reference(g: &CompGraph, inputs: &TensorMap) -> Result<TensorMap> {
    let mut env = run_reference_all(g, inputs)?;
    Ok(g.outputs.iter().map(|t| (t.clone(), env.remove(t).unwrap())).collect())
}

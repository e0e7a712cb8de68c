//! Forward and vector-Jacobian rules for every primitive.

use std::sync::Arc;

use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Input(usize),
    Const(Arc<Tensor>),
    MatMul,
    /// Elementwise; the right operand may also be a `[n]` row broadcast
    /// over the leading axes of the left operand.
    Add,
    Sub,
    Mul,
    Relu,
    Silu,
    Tanh,
    /// Mean over rows of `-log softmax(logits)[label]`.
    SoftmaxCrossEntropy { labels: Arc<[usize]> },
    Sum,
    Mean,
    Abs,
    Clamp { lo: f64, hi: f64 },
    Reshape { shape: Vec<usize> },
    /// `out[i] = in[indices[i]]` over flattened data.
    Gather { indices: Arc<[usize]>, shape: Vec<usize> },
    /// Bilinear resize of a `[C, H, W]` tensor, align-corners-false,
    /// edge-clamped.
    Resize { out_h: usize, out_w: usize },
    Scale(f64),
    L1Norm,
    Sign,
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Const(_) => "const",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Relu => "relu",
            Op::Silu => "silu",
            Op::Tanh => "tanh",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Abs => "abs",
            Op::Clamp { .. } => "clamp",
            Op::Reshape { .. } => "reshape",
            Op::Gather { .. } => "gather",
            Op::Resize { .. } => "resize",
            Op::Scale(_) => "scale",
            Op::L1Norm => "l1_norm",
            Op::Sign => "sign",
        }
    }

    pub(crate) fn arity(&self) -> usize {
        match self {
            Op::Input(_) | Op::Const(_) => 0,
            Op::MatMul | Op::Add | Op::Sub | Op::Mul => 2,
            _ => 1,
        }
    }

    /// Output shape for the given argument shapes.
    pub(crate) fn infer(&self, args: &[&[usize]]) -> Result<Vec<usize>, String> {
        match self {
            Op::Input(_) | Op::Const(_) => unreachable!("leaf shapes are known"),
            Op::MatMul => {
                let (a, b) = (args[0], args[1]);
                if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
                    return Err(format!("matmul of {a:?} and {b:?}"));
                }
                Ok(vec![a[0], b[1]])
            }
            Op::Add | Op::Sub | Op::Mul => {
                let (a, b) = (args[0], args[1]);
                if a == b || (b.len() == 1 && a.last() == Some(&b[0])) {
                    Ok(a.to_vec())
                } else {
                    Err(format!("{} of {a:?} and {b:?}", self.name()))
                }
            }
            Op::SoftmaxCrossEntropy { labels } => {
                let a = args[0];
                if a.len() != 2 || a[0] != labels.len() {
                    return Err(format!(
                        "cross-entropy over logits {a:?} with {} labels",
                        labels.len()
                    ));
                }
                if let Some(&l) = labels.iter().find(|&&l| l >= a[1]) {
                    return Err(format!("label {l} out of range for {} classes", a[1]));
                }
                Ok(vec![1])
            }
            Op::Sum | Op::Mean | Op::L1Norm => Ok(vec![1]),
            Op::Reshape { shape } => {
                let n: usize = args[0].iter().product();
                if shape.iter().product::<usize>() != n || shape.contains(&0) {
                    return Err(format!("reshape {:?} to {shape:?}", args[0]));
                }
                Ok(shape.clone())
            }
            Op::Gather { indices, shape } => {
                let n: usize = args[0].iter().product();
                if shape.iter().product::<usize>() != indices.len() {
                    return Err(format!(
                        "gather of {} indices into shape {shape:?}",
                        indices.len()
                    ));
                }
                if let Some(&i) = indices.iter().find(|&&i| i >= n) {
                    return Err(format!("gather index {i} out of range {n}"));
                }
                Ok(shape.clone())
            }
            Op::Resize { out_h, out_w } => {
                let a = args[0];
                if a.len() != 3 || *out_h == 0 || *out_w == 0 {
                    return Err(format!("resize of {a:?} to {out_h}x{out_w}"));
                }
                Ok(vec![a[0], *out_h, *out_w])
            }
            Op::Clamp { lo, hi } if lo > hi => Err(format!("clamp bounds {lo} > {hi}")),
            _ => Ok(args[0].to_vec()),
        }
    }

    pub(crate) fn forward(&self, args: &[&Tensor], out_shape: &[usize]) -> Tensor {
        match self {
            Op::Input(_) | Op::Const(_) => unreachable!("leaves are not evaluated"),
            Op::MatMul => matmul(args[0], args[1]),
            Op::Add => broadcast(args[0], args[1], |a, b| a + b),
            Op::Sub => broadcast(args[0], args[1], |a, b| a - b),
            Op::Mul => broadcast(args[0], args[1], |a, b| a * b),
            Op::Relu => args[0].map(|v| if v > 0.0 { v } else { 0.0 }),
            Op::Silu => args[0].map(|v| v * sigmoid(v)),
            Op::Tanh => args[0].map(f64::tanh),
            Op::SoftmaxCrossEntropy { labels } => {
                let x = args[0];
                let c = x.shape()[1];
                let total: f64 = x
                    .data()
                    .chunks(c)
                    .zip(labels.iter())
                    .map(|(row, &l)| log_sum_exp(row) - row[l])
                    .sum();
                Tensor::scalar(total / labels.len() as f64)
            }
            Op::Sum => Tensor::scalar(args[0].sum()),
            Op::Mean => Tensor::scalar(args[0].mean()),
            Op::Abs => args[0].map(f64::abs),
            Op::Clamp { lo, hi } => args[0].map(|v| v.clamp(*lo, *hi)),
            Op::Reshape { shape } => Tensor::from_parts(shape.clone(), args[0].data().to_vec()),
            Op::Gather { indices, shape } => {
                let d = args[0].data();
                Tensor::from_parts(shape.clone(), indices.iter().map(|&i| d[i]).collect())
            }
            Op::Resize { out_h, out_w } => resize_forward(args[0], *out_h, *out_w),
            Op::Scale(s) => args[0].scale(*s),
            Op::L1Norm => Tensor::scalar(args[0].data().iter().map(|v| v.abs()).sum()),
            Op::Sign => args[0].map(sign),
        }
        .with_shape_check(out_shape)
    }

    /// Cotangents for each argument; `None` where `need[i]` is false.
    pub(crate) fn backward(
        &self,
        args: &[&Tensor],
        out: &Tensor,
        cot: &Tensor,
        need: &[bool],
    ) -> Vec<Option<Tensor>> {
        let unary = |t: Tensor| vec![Some(t)];
        match self {
            Op::Input(_) | Op::Const(_) => vec![],
            Op::MatMul => vec![
                need[0].then(|| matmul_nt(cot, args[1])),
                need[1].then(|| matmul_tn(args[0], cot)),
            ],
            Op::Add => vec![
                need[0].then(|| cot.clone()),
                need[1].then(|| reduce_to(cot.clone(), args[1].shape())),
            ],
            Op::Sub => vec![
                need[0].then(|| cot.clone()),
                need[1].then(|| reduce_to(cot.scale(-1.0), args[1].shape())),
            ],
            Op::Mul => vec![
                need[0].then(|| broadcast(cot, args[1], |c, b| c * b)),
                need[1].then(|| {
                    let prod = cot
                        .zip_map(args[0], |c, a| c * a)
                        .expect("cotangent matches output shape");
                    reduce_to(prod, args[1].shape())
                }),
            ],
            Op::Relu => unary(masked(cot, args[0], |x| if x > 0.0 { 1.0 } else { 0.0 })),
            Op::Silu => unary(masked(cot, args[0], |x| {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            })),
            Op::Tanh => unary(masked(cot, out, |y| 1.0 - y * y)),
            Op::SoftmaxCrossEntropy { labels } => {
                let x = args[0];
                let c = x.shape()[1];
                let scale = cot.item() / labels.len() as f64;
                let mut g = Vec::with_capacity(x.len());
                for (row, &l) in x.data().chunks(c).zip(labels.iter()) {
                    let lse = log_sum_exp(row);
                    for (j, &v) in row.iter().enumerate() {
                        let p = (v - lse).exp();
                        let onehot = if j == l { 1.0 } else { 0.0 };
                        g.push(scale * (p - onehot));
                    }
                }
                unary(Tensor::from_parts(x.shape().to_vec(), g))
            }
            Op::Sum => unary(Tensor::full(args[0].shape().to_vec(), cot.item())),
            Op::Mean => unary(Tensor::full(
                args[0].shape().to_vec(),
                cot.item() / args[0].len() as f64,
            )),
            Op::Abs => unary(masked(cot, args[0], sign)),
            Op::Clamp { lo, hi } => unary(masked(cot, args[0], |x| {
                if x > *lo && x < *hi {
                    1.0
                } else {
                    0.0
                }
            })),
            Op::Reshape { .. } => unary(Tensor::from_parts(
                args[0].shape().to_vec(),
                cot.data().to_vec(),
            )),
            Op::Gather { indices, .. } => {
                let mut g = vec![0.0; args[0].len()];
                for (&i, &c) in indices.iter().zip(cot.data()) {
                    g[i] += c;
                }
                unary(Tensor::from_parts(args[0].shape().to_vec(), g))
            }
            Op::Resize { out_h, out_w } => unary(resize_backward(args[0], cot, *out_h, *out_w)),
            Op::Scale(s) => unary(cot.scale(*s)),
            Op::L1Norm => {
                let c = cot.item();
                unary(args[0].map(|x| c * sign(x)))
            }
            Op::Sign => unary(Tensor::zeros(args[0].shape().to_vec())),
        }
    }
}

trait ShapeCheck {
    fn with_shape_check(self, shape: &[usize]) -> Self;
}

impl ShapeCheck for Tensor {
    fn with_shape_check(self, shape: &[usize]) -> Self {
        debug_assert_eq!(self.shape(), shape);
        self
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let bd = b.data();
    let n = bd.len();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, bd[i % n]))
        .collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

/// Sum a full-shape cotangent down to a broadcast operand's shape.
fn reduce_to(t: Tensor, shape: &[usize]) -> Tensor {
    if t.shape() == shape {
        return t;
    }
    let n = shape[0];
    let mut out = vec![0.0; n];
    for chunk in t.data().chunks(n) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}

fn masked(cot: &Tensor, at: &Tensor, d: impl Fn(f64) -> f64) -> Tensor {
    let data = cot
        .data()
        .iter()
        .zip(at.data())
        .map(|(&c, &x)| c * d(x))
        .collect();
    Tensor::from_parts(cot.shape().to_vec(), data)
}

/// Source taps `(i0, i1, frac)` along one axis.
fn resize_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * ratio - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn resize_forward(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let ys = resize_taps(h, out_h);
    let xs = resize_taps(w, out_w);
    let d = x.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &d[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::from_parts(vec![c, out_h, out_w], out)
}

fn resize_backward(x: &Tensor, cot: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let ys = resize_taps(h, out_h);
    let xs = resize_taps(w, out_w);
    let mut g = vec![0.0; c * h * w];
    let cd = cot.data();
    let mut k = 0;
    for ch in 0..c {
        let plane = &mut g[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let v = cd[k];
                k += 1;
                plane[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                plane[y0 * w + x1] += v * (1.0 - fy) * fx;
                plane[y1 * w + x0] += v * fy * (1.0 - fx);
                plane[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), g)
}

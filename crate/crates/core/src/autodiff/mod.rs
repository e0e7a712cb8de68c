//! Reverse-mode differentiation over a fixed primitive set.
//!
//! A [`Graph`] records primitive nodes in topological order; [`Graph::build`]
//! runs shape inference and freezes it into a [`Program`]. A program can be
//! evaluated any number of times, and [`Program::vjp`] pulls a cotangent
//! back to every declared input. Evaluation is single-threaded with a fixed
//! reduction order, so identical inputs give bitwise-identical outputs.

mod check;
mod ops;

use std::sync::Arc;

pub use check::{grad_check, relative_error, GRAD_CHECK_FLOOR};
use ops::Op;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    args: Vec<usize>,
}

/// Program under construction.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    input_shapes: Vec<Vec<usize>>,
    inputs: Vec<usize>,
    leaf_shapes: Vec<Option<Vec<usize>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, args: Vec<Var>) -> Var {
        debug_assert_eq!(op.arity(), args.len());
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            args: args.into_iter().map(|v| v.0).collect(),
        });
        self.leaf_shapes.push(None);
        Var(id)
    }

    /// Declare the next program input.
    pub fn input(&mut self, shape: &[usize]) -> Var {
        let index = self.inputs.len();
        let v = self.push(Op::Input(index), vec![]);
        self.inputs.push(v.0);
        self.input_shapes.push(shape.to_vec());
        self.leaf_shapes[v.0] = Some(shape.to_vec());
        v
    }

    pub fn constant(&mut self, value: impl Into<Arc<Tensor>>) -> Var {
        let value = value.into();
        let shape = value.shape().to_vec();
        let v = self.push(Op::Const(value), vec![]);
        self.leaf_shapes[v.0] = Some(shape);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::MatMul, vec![a, b])
    }

    /// `a + b`; `b` may be a `[n]` row broadcast across `a`'s last axis.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Sub, vec![a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Mul, vec![a, b])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.push(Op::Relu, vec![a])
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.push(Op::Silu, vec![a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.push(Op::Tanh, vec![a])
    }

    /// Mean cross-entropy of `[batch, classes]` logits against `labels`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        self.push(
            Op::SoftmaxCrossEntropy {
                labels: labels.into(),
            },
            vec![logits],
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.push(Op::Sum, vec![a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.push(Op::Mean, vec![a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.push(Op::Abs, vec![a])
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.push(Op::Clamp { lo, hi }, vec![a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        self.push(
            Op::Reshape {
                shape: shape.to_vec(),
            },
            vec![a],
        )
    }

    /// `out[i] = a[indices[i]]` over flattened data, reshaped to `shape`.
    /// Permutations, flips, rotations and crops are all gathers.
    pub fn gather(&mut self, a: Var, indices: Arc<[usize]>, shape: &[usize]) -> Var {
        self.push(
            Op::Gather {
                indices,
                shape: shape.to_vec(),
            },
            vec![a],
        )
    }

    /// Bilinear resize of a `[C, H, W]` node.
    pub fn resize(&mut self, a: Var, out_h: usize, out_w: usize) -> Var {
        self.push(Op::Resize { out_h, out_w }, vec![a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.push(Op::Scale(s), vec![a])
    }

    /// `Σ |a_i|`.
    pub fn l1_norm(&mut self, a: Var) -> Var {
        self.push(Op::L1Norm, vec![a])
    }

    /// Elementwise sign; its pullback is identically zero.
    pub fn sign(&mut self, a: Var) -> Var {
        self.push(Op::Sign, vec![a])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Infer shapes and freeze the graph with the given outputs.
    pub fn build(self, outputs: &[Var]) -> Result<Program> {
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            if let Some(&bad) = node.args.iter().find(|&&a| a >= id) {
                return Err(Error::graph(id, format!("argument {bad} does not precede node")));
            }
            let shape = match &self.leaf_shapes[id] {
                Some(s) => s.clone(),
                None => {
                    let args: Vec<&[usize]> =
                        node.args.iter().map(|&a| shapes[a].as_slice()).collect();
                    node.op.infer(&args).map_err(|m| Error::graph(id, m))?
                }
            };
            shapes.push(shape);
        }
        if let Some(bad) = outputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::Inputs(format!("output {} is not a node", bad.0)));
        }
        let mut needs_grad = vec![false; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            needs_grad[id] = matches!(node.op, Op::Input(_))
                || node.args.iter().any(|&a| needs_grad[a]);
        }
        Ok(Program {
            nodes: self.nodes,
            shapes,
            inputs: self.inputs,
            input_shapes: self.input_shapes,
            outputs: outputs.iter().map(|v| v.0).collect(),
            needs_grad,
        })
    }
}

/// A frozen, re-evaluable sequence of primitives.
#[derive(Debug, Clone)]
pub struct Program {
    nodes: Vec<Node>,
    shapes: Vec<Vec<usize>>,
    inputs: Vec<usize>,
    input_shapes: Vec<Vec<usize>>,
    outputs: Vec<usize>,
    needs_grad: Vec<bool>,
}

enum Slot<'a> {
    Borrowed(&'a Tensor),
    Owned(Tensor),
}

impl Slot<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Slot::Borrowed(t) => t,
            Slot::Owned(t) => t,
        }
    }
}

impl Program {
    pub fn input_shapes(&self) -> &[Vec<usize>] {
        &self.input_shapes
    }

    pub fn output_shapes(&self) -> Vec<&[usize]> {
        self.outputs.iter().map(|&o| self.shapes[o].as_slice()).collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn check_inputs(&self, inputs: &[Tensor]) -> Result<()> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::Inputs(format!(
                "expected {} inputs, got {}",
                self.inputs.len(),
                inputs.len()
            )));
        }
        for (k, (t, want)) in inputs.iter().zip(&self.input_shapes).enumerate() {
            if t.shape() != want.as_slice() {
                return Err(Error::graph(
                    self.inputs[k],
                    format!("input {k} has shape {:?}, declared {want:?}", t.shape()),
                ));
            }
        }
        Ok(())
    }

    fn forward<'a>(&'a self, inputs: &'a [Tensor]) -> Result<Vec<Slot<'a>>> {
        self.check_inputs(inputs)?;
        let mut values: Vec<Slot<'a>> = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            let slot = match &node.op {
                Op::Input(k) => Slot::Borrowed(&inputs[*k]),
                Op::Const(t) => Slot::Borrowed(t.as_ref()),
                op => {
                    let args: Vec<&Tensor> = node.args.iter().map(|&a| values[a].get()).collect();
                    let out = op.forward(&args, &self.shapes[id]);
                    Slot::Owned(out)
                }
            };
            if !slot.get().is_finite() {
                return Err(Error::NonFinite {
                    node: id,
                    op: node.op.name(),
                });
            }
            values.push(slot);
        }
        Ok(values)
    }

    /// Run every node in order and return the declared outputs.
    pub fn eval(&self, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
        let values = self.forward(inputs)?;
        Ok(self
            .outputs
            .iter()
            .map(|&o| values[o].get().clone())
            .collect())
    }

    /// Gradient of `⟨cotangent, output⟩` with respect to each input.
    /// The program must have exactly one output.
    pub fn vjp(&self, inputs: &[Tensor], cotangent: &Tensor) -> Result<Vec<Tensor>> {
        self.eval_vjp(inputs, cotangent).map(|(_, g)| g)
    }

    /// Forward value of the single output together with its pullback.
    pub fn eval_vjp(&self, inputs: &[Tensor], cotangent: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let [out_id] = self.outputs[..] else {
            return Err(Error::Inputs(format!(
                "vjp needs exactly one output, program has {}",
                self.outputs.len()
            )));
        };
        if cotangent.shape() != self.shapes[out_id].as_slice() {
            return Err(Error::graph(
                out_id,
                format!(
                    "cotangent shape {:?} does not match output {:?}",
                    cotangent.shape(),
                    self.shapes[out_id]
                ),
            ));
        }
        let values = self.forward(inputs)?;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out_id] = Some(cotangent.clone());
        for id in (0..=out_id).rev() {
            let node = &self.nodes[id];
            if node.args.is_empty() || !self.needs_grad[id] {
                continue;
            }
            let Some(cot) = grads[id].take() else {
                continue;
            };
            let need: Vec<bool> = node.args.iter().map(|&a| self.needs_grad[a]).collect();
            let args: Vec<&Tensor> = node.args.iter().map(|&a| values[a].get()).collect();
            let partials = node.op.backward(&args, values[id].get(), &cot, &need);
            for (&a, g) in node.args.iter().zip(partials) {
                let Some(g) = g else { continue };
                grads[a] = Some(match grads[a].take() {
                    Some(acc) => acc.add(&g).expect("gradient shapes agree"),
                    None => g,
                });
            }
        }
        let output = values[out_id].get().clone();
        let input_grads = self
            .inputs
            .iter()
            .map(|&i| {
                grads[i]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(self.shapes[i].clone()))
            })
            .collect();
        Ok((output, input_grads))
    }

    /// Value and gradient of a scalar-output program.
    pub fn value_and_grad(&self, inputs: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
        let shape = self.output_shapes().first().map(|s| s.to_vec()).unwrap_or_default();
        if shape != [1] {
            return Err(Error::NotScalar(shape));
        }
        let (out, g) = self.eval_vjp(inputs, &Tensor::scalar(1.0))?;
        Ok((out.item(), g))
    }
}

use std::sync::Arc;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Models whose parameters can be enumerated, replaced, and bound into a
/// graph either as constants or as differentiable inputs.
pub trait Parameterized {
    /// Parameters in a fixed order, with stable names.
    fn params(&self) -> Vec<(String, Arc<Tensor>)>;

    /// Replace every parameter, in [`Parameterized::params`] order.
    fn set_params(&mut self, params: Vec<Tensor>) -> Result<()>;

    fn bind_constants(&self, g: &mut Graph) -> Vec<Var> {
        self.params().into_iter().map(|(_, t)| g.constant(t)).collect()
    }

    fn bind_inputs(&self, g: &mut Graph) -> Vec<Var> {
        self.params()
            .iter()
            .map(|(_, t)| g.input(t.shape()))
            .collect()
    }

    fn param_values(&self) -> Vec<Tensor> {
        self.params().into_iter().map(|(_, t)| (*t).clone()).collect()
    }

    /// Euclidean distance between two parameter sets of the same model type.
    fn param_distance(&self, other: &Self) -> f64
    where
        Self: Sized,
    {
        self.params()
            .iter()
            .zip(other.params())
            .map(|((_, a), (_, b))| {
                a.data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }
}

pub(crate) fn check_param_shapes(expected: &[(String, Arc<Tensor>)], got: &[Tensor]) -> Result<()> {
    if expected.len() != got.len() {
        return Err(Error::Shape(format!(
            "expected {} parameter tensors, got {}",
            expected.len(),
            got.len()
        )));
    }
    for ((name, e), g) in expected.iter().zip(got) {
        if e.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "parameter {name}: expected {:?}, got {:?}",
                e.shape(),
                g.shape()
            )));
        }
    }
    Ok(())
}

/// Affine layer `x · W + b`, with `W` stored `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Arc<Tensor>,
    pub bias: Arc<Tensor>,
}

impl Linear {
    /// Normal init with standard deviation `gain / √in`; zero bias.
    pub fn init(rng: &mut Rng, inputs: usize, outputs: usize, gain: f64) -> Self {
        let std = gain / (inputs as f64).sqrt();
        let w = rng::normals(rng, inputs * outputs)
            .into_iter()
            .map(|v| v * std)
            .collect();
        Self {
            weight: Arc::new(Tensor::from_parts(vec![inputs, outputs], w)),
            bias: Arc::new(Tensor::zeros(vec![outputs])),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Arc::new(Tensor::zeros(vec![inputs, outputs])),
            bias: Arc::new(Tensor::zeros(vec![outputs])),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub(crate) fn named(&self, prefix: &str) -> [(String, Arc<Tensor>); 2] {
        [
            (format!("{prefix}.weight"), self.weight.clone()),
            (format!("{prefix}.bias"), self.bias.clone()),
        ]
    }

    pub(crate) fn replace(&mut self, weight: Tensor, bias: Tensor) {
        self.weight = Arc::new(weight);
        self.bias = Arc::new(bias);
    }
}

/// `x · w + b` on bound parameter nodes.
pub(crate) fn affine(g: &mut Graph, x: Var, w: Var, b: Var) -> Var {
    let h = g.matmul(x, w);
    g.add(h, b)
}

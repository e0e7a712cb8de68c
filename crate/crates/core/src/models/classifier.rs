use std::sync::Arc;

use super::layers::{affine, check_param_shapes, Linear, Parameterized};
use super::PIXELS;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Index of the larger logit; ties go to class 0 (real).
pub fn argmax_label(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Pixel value subtracted from every input before the first layer.
pub const INPUT_CENTRE: f64 = 0.5;

/// Detector MLP `768 → width → width/2 → 2` with ReLU activations, applied
/// to pixels shifted by [`INPUT_CENTRE`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierNet {
    layers: [Linear; 3],
}

impl ClassifierNet {
    pub fn init(rng: &mut Rng, width: usize) -> Self {
        let gain = std::f64::consts::SQRT_2;
        Self {
            layers: [
                Linear::init(rng, PIXELS, width, gain),
                Linear::init(rng, width, width / 2, gain),
                Linear::init(rng, width / 2, 2, 1.0),
            ],
        }
    }

    pub fn zeros(width: usize) -> Self {
        Self {
            layers: [
                Linear::zeros(PIXELS, width),
                Linear::zeros(width, width / 2),
                Linear::zeros(width / 2, 2),
            ],
        }
    }

    pub fn width(&self) -> usize {
        self.layers[0].outputs()
    }

    /// Logits for a `[batch, 768]` node given bound parameter nodes.
    pub(crate) fn emit_with(g: &mut Graph, p: &[Var], x: Var) -> Var {
        let centre = g.constant(Tensor::full(vec![PIXELS], INPUT_CENTRE));
        let x = g.sub(x, centre);
        let h = affine(g, x, p[0], p[1]);
        let h = g.relu(h);
        let h = affine(g, h, p[2], p[3]);
        let h = g.relu(h);
        affine(g, h, p[4], p[5])
    }

    /// Logits with the parameters frozen as constants. `x` must hold a
    /// multiple of 768 values; it is viewed as `[batch, 768]`.
    pub fn emit(&self, g: &mut Graph, x: Var, batch: usize) -> Var {
        let p = self.bind_constants(g);
        let flat = g.reshape(x, &[batch, PIXELS]);
        Self::emit_with(g, &p, flat)
    }

    /// `[batch, 2]` logits for a batch of images, each a `3×16×16` block.
    pub fn classify_logits(&self, x: &Tensor) -> Result<Tensor> {
        if x.is_empty() || !x.len().is_multiple_of(PIXELS) {
            return Err(Error::Shape(format!(
                "classifier input has {} values, not a multiple of {PIXELS}",
                x.len()
            )));
        }
        let batch = x.len() / PIXELS;
        let mut g = Graph::new();
        let xv = g.input(x.shape());
        let logits = self.emit(&mut g, xv, batch);
        let program = g.build(&[logits])?;
        Ok(program.eval(std::slice::from_ref(x))?.remove(0))
    }

    /// Predicted label for every image in the batch.
    pub fn predict_labels(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.classify_logits(x)?;
        Ok(logits.data().chunks(2).map(argmax_label).collect())
    }
}

impl Parameterized for ClassifierNet {
    fn params(&self) -> Vec<(String, Arc<Tensor>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.named(&format!("classifier.layer{i}")))
            .collect()
    }

    fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        check_param_shapes(&self.params(), &params)?;
        let mut it = params.into_iter();
        for l in &mut self.layers {
            l.replace(it.next().unwrap(), it.next().unwrap());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::models::IMAGE_SHAPE;
    use crate::rng;

    fn image(seed: u64) -> Tensor {
        use rand::Rng as _;
        let mut r = rng::stream(seed, 9);
        Tensor::new(IMAGE_SHAPE.to_vec(), (0..PIXELS).map(|_| r.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn zero_weights_tie_to_real() {
        let net = ClassifierNet::zeros(64);
        let logits = net.classify_logits(&image(1)).unwrap();
        assert_eq!(logits.data(), &[0.0, 0.0]);
        assert_eq!(net.predict_labels(&image(1)).unwrap(), vec![0]);
        assert_eq!(argmax_label(&[1.0, 1.0]), 0);
        assert_eq!(argmax_label(&[0.0, 1e-300]), 1);
    }

    #[test]
    fn cross_entropy_gradient_in_pixels() {
        let net = ClassifierNet::init(&mut rng::stream(5, 0), 64);
        let mut g = Graph::new();
        let x = g.input(&IMAGE_SHAPE);
        let logits = net.emit(&mut g, x, 1);
        let loss = g.softmax_cross_entropy(logits, &[1]);
        let program = g.build(&[loss]).unwrap();
        let err = grad_check(&program, &[image(2)], 1e-6).unwrap();
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn batched_matches_single() {
        let net = ClassifierNet::init(&mut rng::stream(5, 0), 96);
        let (a, b) = (image(3), image(4));
        let batch = Tensor::new(vec![2, PIXELS], [a.data(), b.data()].concat()).unwrap();
        let both = net.classify_logits(&batch).unwrap();
        assert_eq!(&both.data()[..2], net.classify_logits(&a).unwrap().data());
        assert_eq!(&both.data()[2..], net.classify_logits(&b).unwrap().data());
        assert!(net.classify_logits(&Tensor::zeros(vec![5])).is_err());
    }
}

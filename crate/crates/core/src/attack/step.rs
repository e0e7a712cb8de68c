use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradMethod {
    PlainGd,
    FgsmSign,
    MiFgsm,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One descent step on `delta` (before projection).
///
/// * `plain-gd`: `δ − α·∇`
/// * `fgsm-sign`: `δ − α·sign(∇)`
/// * `mi-fgsm`: `g ← μ·g + ∇/‖∇‖₁`, then `δ − α·sign(g)`. A zero gradient
///   leaves `g = μ·g` and skips the update.
pub fn gradient_step(
    delta: &mut Tensor,
    momentum: &mut Tensor,
    grad: &Tensor,
    alpha: f64,
    method: GradMethod,
    mu: f64,
) -> Result<()> {
    if grad.shape() != delta.shape() || momentum.shape() != delta.shape() {
        return Err(Error::Shape(format!(
            "gradient {:?} and momentum {:?} must match δ {:?}",
            grad.shape(),
            momentum.shape(),
            delta.shape()
        )));
    }
    match method {
        GradMethod::PlainGd => {
            for (d, g) in delta.data_mut().iter_mut().zip(grad.data()) {
                *d -= alpha * g;
            }
        }
        GradMethod::FgsmSign => {
            for (d, g) in delta.data_mut().iter_mut().zip(grad.data()) {
                *d -= alpha * sign(*g);
            }
        }
        GradMethod::MiFgsm => {
            let l1: f64 = grad.data().iter().map(|g| g.abs()).sum();
            for (m, g) in momentum.data_mut().iter_mut().zip(grad.data()) {
                *m = if l1 > 0.0 { mu * *m + g / l1 } else { mu * *m };
            }
            if l1 > 0.0 {
                for (d, m) in delta.data_mut().iter_mut().zip(momentum.data()) {
                    *d -= alpha * sign(*m);
                }
            }
        }
    }
    Ok(())
}

/// Elementwise clamp into `[−eps, eps]`.
pub fn project(delta: &Tensor, eps: f64) -> Result<Tensor> {
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("projection radius {eps} must be positive")));
    }
    Ok(delta.map(|v| v.clamp(-eps, eps)))
}

/// Radius of a level: `min(start + level · step, end)`.
pub fn radius_schedule(level: usize, start: f64, step: f64, end: f64) -> f64 {
    (start + level as f64 * step).min(end)
}

/// Number of levels until the radius saturates, so levels `0..count` cover
/// `start` through `end`.
pub fn level_count(start: f64, step: f64, end: f64) -> usize {
    let mut n = 0;
    while radius_schedule(n, start, step, end) < end - 1e-12 {
        n += 1;
    }
    n + 1
}

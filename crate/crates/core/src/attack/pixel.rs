//! Pixel-space MI-FGSM baseline.

use serde::{Deserialize, Serialize};

use super::{gradient_step, project, verdicts, AttackResult, GradMethod};
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::metrics::ssim;
use crate::models::{ClassifierNet, IMAGE_SHAPE, LABEL_REAL};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PixelAttackConfig {
    pub eps: f64,
    pub iters: usize,
    pub momentum: f64,
}

impl Default for PixelAttackConfig {
    fn default() -> Self {
        Self {
            eps: 8.0 / 255.0,
            iters: 10,
            momentum: 1.0,
        }
    }
}

/// MI-FGSM on the pixels with step `eps / iters`, starting from δ = 0 and
/// keeping `x + δ` inside `[0, 1]`. The loss is the summed cross-entropy
/// toward real over the white-box classifiers; the final iterate is
/// returned.
pub fn run_pixel_mifgsm(
    image: &Tensor,
    cfg: &PixelAttackConfig,
    white_box: &[ClassifierNet],
    transfer: &[ClassifierNet],
    id: usize,
) -> Result<AttackResult> {
    if white_box.is_empty() || cfg.iters == 0 {
        return Err(Error::Invalid("pixel attack needs classifiers and iterations".into()));
    }
    let x = image.reshape(IMAGE_SHAPE.to_vec())?;
    let mut g = Graph::new();
    let d = g.input(&IMAGE_SHAPE);
    let base = g.constant(x.clone());
    let sum = g.add(base, d);
    let adv = g.clamp(sum, 0.0, 1.0);
    let losses: Vec<_> = white_box
        .iter()
        .map(|f| {
            let logits = f.emit(&mut g, adv, 1);
            g.softmax_cross_entropy(logits, &[LABEL_REAL])
        })
        .collect();
    let total = super::emit_ensemble(&mut g, &losses)?;
    let program = g.build(&[total])?;

    let alpha = cfg.eps / cfg.iters as f64;
    let mut delta = Tensor::zeros(IMAGE_SHAPE.to_vec());
    let mut momentum = Tensor::zeros(IMAGE_SHAPE.to_vec());
    let mut trace = Vec::with_capacity(cfg.iters);
    for _ in 0..cfg.iters {
        let (loss, mut grads) = program.value_and_grad(std::slice::from_ref(&delta))?;
        trace.push(loss);
        gradient_step(&mut delta, &mut momentum, &grads.remove(0), alpha, GradMethod::MiFgsm, cfg.momentum)?;
        delta = project(&delta, cfg.eps)?;
        delta = x.add(&delta)?.map(|v| v.clamp(0.0, 1.0)).sub(&x)?;
    }
    let adv = x.add(&delta)?.map(|v| v.clamp(0.0, 1.0));
    let wb = verdicts(white_box, &adv)?;
    let success = wb.iter().all(|&l| l == LABEL_REAL);
    Ok(AttackResult {
        id,
        success,
        ssim: ssim(&x, &adv)?,
        transfer_verdicts: verdicts(transfer, &adv)?,
        white_box_verdicts: wb,
        x_recon: x.into_data(),
        x_adv: adv.into_data(),
        delta: delta.into_data(),
        radius: success.then_some(cfg.eps),
        final_radius: cfg.eps,
        iterations: cfg.iters,
        loss_trace: trace,
        grad_method: GradMethod::MiFgsm,
    })
}

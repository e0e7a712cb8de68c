//! Latent-space attack: DDIM-invert an image a few steps, perturb the
//! latent inside a growing L∞ ball, and denoise back, while a pool of
//! transforms, a classifier ensemble and a momentum sign step push the
//! result toward the "real" label.

mod pixel;
mod step;
mod transforms;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use pixel::{run_pixel_mifgsm, PixelAttackConfig};
pub use step::{gradient_step, level_count, project, radius_schedule, GradMethod};
pub use transforms::{
    apply_transforms, emit_transforms, sample_draw, transform_sample, Transform, TransformDraw,
    TransformKind, CROP_SIDE,
};

use crate::autodiff::{Graph, Program, Var};
use crate::diffusion::{emit_denoise_chain, invert_chain, EpsilonModel, Guidance, NoiseSchedule};
use crate::error::{Error, Result};
use crate::metrics::ssim;
use crate::models::{argmax_label, ClassifierNet, Codec, FAKE_STYLE, IMAGE_SHAPE, LABEL_REAL};
use crate::rng;
use crate::tensor::Tensor;

/// Random stream index reserved for attack draws.
pub const ATTACK_STREAM: u64 = 3;

/// Step size per radius level: a fixed value or the `"eps/5"` rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSize {
    Fixed(f64),
    Rule(StepRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepRule {
    #[serde(rename = "eps/5")]
    EpsOver5,
}

impl StepSize {
    pub fn at(self, radius: f64) -> f64 {
        match self {
            StepSize::Fixed(a) => a,
            StepSize::Rule(StepRule::EpsOver5) => radius / 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleMode {
    EqualWeightSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_step: f64,
    /// Iterations per radius level (K).
    pub inner_iters: usize,
    pub step_size: StepSize,
    pub grad_method: GradMethod,
    pub momentum: f64,
    pub lambda: f64,
    pub transforms: Vec<TransformKind>,
    pub transform_prob: f64,
    pub ensemble: EnsembleMode,
    /// DDIM index `s` of the perturbed latent.
    pub timestep: usize,
    pub guidance_w: f64,
    /// Embedding row used as conditioning.
    pub cond_index: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            eps_start: 0.05,
            eps_end: 0.3,
            eps_step: 0.02,
            inner_iters: 10,
            step_size: StepSize::Rule(StepRule::EpsOver5),
            grad_method: GradMethod::MiFgsm,
            momentum: 1.0,
            lambda: 0.1,
            transforms: TransformKind::ALL.to_vec(),
            transform_prob: 0.5,
            ensemble: EnsembleMode::EqualWeightSum,
            timestep: 1,
            guidance_w: 1.0,
            cond_index: FAKE_STYLE,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self, ddim_steps: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if !(self.eps_start > 0.0 && self.eps_start <= self.eps_end) {
            return bad(format!(
                "need 0 < eps_start <= eps_end, got {} and {}",
                self.eps_start, self.eps_end
            ));
        }
        if !(self.eps_step > 0.0) {
            return bad(format!("eps_step {} must be positive", self.eps_step));
        }
        if let StepSize::Fixed(a) = self.step_size {
            if !(a > 0.0) {
                return bad(format!("step size {a} must be positive"));
            }
        }
        if self.timestep == 0 || self.timestep > ddim_steps {
            return bad(format!("timestep {} outside 1..={ddim_steps}", self.timestep));
        }
        if !(0.0..=1.0).contains(&self.transform_prob) {
            return bad(format!("transform_prob {} outside [0, 1]", self.transform_prob));
        }
        if !(self.lambda >= 0.0) || !(self.momentum >= 0.0) {
            return bad("lambda and momentum must be non-negative".into());
        }
        let mut pool = self.transforms.clone();
        pool.sort();
        pool.dedup();
        if pool.len() != self.transforms.len() {
            return bad("transform pool lists a member twice".into());
        }
        Ok(())
    }
}

/// Frozen components the attack differentiates through.
#[derive(Clone, Copy)]
pub struct AttackModels<'a> {
    pub codec: &'a Codec,
    pub score: &'a dyn EpsilonModel,
    pub schedule: &'a NoiseSchedule,
    pub cond: &'a Tensor,
    pub null_cond: &'a Tensor,
    pub white_box: &'a [ClassifierNet],
    /// Held-out detectors, evaluated on the returned image only.
    pub transfer: &'a [ClassifierNet],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub id: usize,
    pub success: bool,
    pub x_adv: Vec<f64>,
    pub x_recon: Vec<f64>,
    pub delta: Vec<f64>,
    pub ssim: f64,
    pub white_box_verdicts: Vec<usize>,
    pub transfer_verdicts: Vec<usize>,
    /// Radius of the level that produced the returned success.
    pub radius: Option<f64>,
    /// Largest radius reached.
    pub final_radius: f64,
    pub iterations: usize,
    pub loss_trace: Vec<f64>,
    pub grad_method: GradMethod,
}

impl AttackResult {
    pub fn x_adv_image(&self) -> Tensor {
        Tensor::new(IMAGE_SHAPE.to_vec(), self.x_adv.clone()).expect("stored image has 768 values")
    }

    pub fn x_recon_image(&self) -> Tensor {
        Tensor::new(IMAGE_SHAPE.to_vec(), self.x_recon.clone()).expect("stored image has 768 values")
    }

    pub fn delta_inf(&self) -> f64 {
        self.delta.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// `CE(logits, real) + λ · mean|x_adv − x_recon|` for one classifier.
pub fn emit_composite_loss(g: &mut Graph, logits: Var, x_adv: Var, x_recon: Var, lambda: f64) -> Var {
    let attack = g.softmax_cross_entropy(logits, &[LABEL_REAL]);
    if lambda == 0.0 {
        return attack;
    }
    let d = g.sub(x_adv, x_recon);
    let a = g.abs(d);
    let others = g.mean(a);
    let others = g.scale(others, lambda);
    g.add(attack, others)
}

/// Composite loss evaluated on concrete values; `logits` holds one row.
pub fn compose_loss(logits: &[f64], x_adv: &Tensor, x_recon: &Tensor, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::Invalid(format!("lambda {lambda} must be non-negative")));
    }
    let mut g = Graph::new();
    let l = g.input(&[1, logits.len()]);
    let a = g.input(x_adv.shape());
    let r = g.input(x_recon.shape());
    let loss = emit_composite_loss(&mut g, l, a, r, lambda);
    let program = g.build(&[loss])?;
    let inputs = [Tensor::new(vec![1, logits.len()], logits.to_vec())?, x_adv.clone(), x_recon.clone()];
    Ok(program.eval(&inputs)?[0].item())
}

/// Equal-weight sum of per-classifier losses.
pub fn ensemble_loss(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::Invalid("ensemble of zero losses".into()));
    }
    Ok(losses.iter().sum())
}

pub fn emit_ensemble(g: &mut Graph, losses: &[Var]) -> Result<Var> {
    let (first, rest) = losses
        .split_first()
        .ok_or_else(|| Error::Invalid("ensemble of zero losses".into()))?;
    Ok(rest.iter().fold(*first, |acc, &l| g.add(acc, l)))
}

fn emit_image(g: &mut Graph, models: &AttackModels, z_s: &Tensor, delta: Var, s: usize, w: f64) -> Result<Var> {
    let base = g.constant(z_s.clone());
    let z = g.add(base, delta);
    let guidance = Guidance::new(models.cond, models.null_cond, w);
    let z0 = emit_denoise_chain(g, models.score, models.schedule, z, s, &guidance)?;
    let x = models.codec.emit_decode(g, z0);
    Ok(g.reshape(x, &IMAGE_SHAPE))
}

/// Scalar program `δ ↦ Σ_f [CE(f(T(x_adv)), real) + λ·mean|x_adv − x_recon|]`
/// with `x_adv = decode(denoise(z_s + δ))` and `T` the given draw.
pub fn attack_loss_program(
    models: &AttackModels,
    cfg: &AttackConfig,
    z_s: &Tensor,
    x_recon: &Tensor,
    draw: &[Transform],
) -> Result<Program> {
    let mut g = Graph::new();
    let delta = g.input(z_s.shape());
    let x = emit_image(&mut g, models, z_s, delta, cfg.timestep, cfg.guidance_w)?;
    let aug = emit_transforms(&mut g, x, draw);
    let recon = g.constant(x_recon.reshape(IMAGE_SHAPE.to_vec())?);
    let losses: Vec<Var> = models
        .white_box
        .iter()
        .map(|f| {
            let logits = f.emit(&mut g, aug, 1);
            emit_composite_loss(&mut g, logits, x, recon, cfg.lambda)
        })
        .collect();
    let total = emit_ensemble(&mut g, &losses)?;
    g.build(&[total])
}

/// Program `δ ↦ decode(denoise(z_s + δ))` as a `[3, 16, 16]` image.
pub fn image_program(models: &AttackModels, cfg: &AttackConfig, z_s: &Tensor) -> Result<Program> {
    let mut g = Graph::new();
    let delta = g.input(z_s.shape());
    let x = emit_image(&mut g, models, z_s, delta, cfg.timestep, cfg.guidance_w)?;
    g.build(&[x])
}

pub(crate) fn verdicts(classifiers: &[ClassifierNet], x: &Tensor) -> Result<Vec<usize>> {
    classifiers
        .iter()
        .map(|f| Ok(argmax_label(f.classify_logits(x)?.data())))
        .collect()
}

/// Latent `z_s` at DDIM index `s` and the unperturbed reconstruction.
pub fn invert_image(models: &AttackModels, cfg: &AttackConfig, image: &Tensor) -> Result<(Tensor, Tensor)> {
    let z0 = models.codec.encode(image)?;
    let guidance = Guidance::new(models.cond, models.null_cond, cfg.guidance_w);
    let z_s = invert_chain(models.score, models.schedule, &z0, cfg.timestep, &guidance)?
        .pop()
        .expect("chain holds z_0");
    let recon = image_program(models, cfg, &z_s)?.eval(&[Tensor::zeros(z_s.shape().to_vec())])?.remove(0);
    Ok((z_s, recon))
}

struct Candidate {
    delta: Tensor,
    x: Tensor,
    ssim: f64,
    verdicts: Vec<usize>,
    radius: f64,
}

/// Run the attack on one `3×16×16` image. `id` selects the image's random
/// stream, so results depend only on `(cfg.seed, id)` and the models.
///
/// The radius grows level by level; each level runs `inner_iters`
/// iterations, checking success on the untransformed image after every
/// update. Once a level produces a success its remaining iterations still
/// run, and the best-SSIM success among them is returned.
pub fn run_attack(image: &Tensor, cfg: &AttackConfig, models: &AttackModels, id: usize) -> Result<AttackResult> {
    cfg.validate(models.schedule.ddim_steps())?;
    if models.white_box.is_empty() {
        return Err(Error::Invalid("attack needs at least one white-box classifier".into()));
    }
    let image = image.reshape(IMAGE_SHAPE.to_vec())?;
    let (z_s, x_recon) = invert_image(models, cfg, &image)?;
    let render = image_program(models, cfg, &z_s)?;
    let mut stream = rng::stream(rng::derive_seed(cfg.seed, id as u64), ATTACK_STREAM);

    let e0 = cfg.eps_start;
    let mut delta = Tensor::new(
        z_s.shape().to_vec(),
        (0..z_s.len()).map(|_| stream.random_range(-e0..=e0)).collect(),
    )?;
    let mut momentum = Tensor::zeros(z_s.shape().to_vec());
    let mut trace = Vec::new();
    let mut best: Option<Candidate> = None;
    let mut radius = e0;

    'levels: for level in 0..level_count(cfg.eps_start, cfg.eps_step, cfg.eps_end) {
        radius = radius_schedule(level, cfg.eps_start, cfg.eps_step, cfg.eps_end);
        let alpha = cfg.step_size.at(radius);
        for _ in 0..cfg.inner_iters {
            let draw = sample_draw(&cfg.transforms, cfg.transform_prob, &mut stream);
            let program = attack_loss_program(models, cfg, &z_s, &x_recon, &draw)?;
            let (loss, mut grads) = match program.value_and_grad(std::slice::from_ref(&delta)) {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::NonFiniteLoss {
                        iteration: trace.len(),
                        trace,
                    })
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration: trace.len(),
                    trace,
                });
            }
            trace.push(loss);
            gradient_step(&mut delta, &mut momentum, &grads.remove(0), alpha, cfg.grad_method, cfg.momentum)?;
            delta = project(&delta, radius)?;
            debug_assert!(delta.abs_max() <= radius);

            let x = render.eval(std::slice::from_ref(&delta))?.remove(0);
            let v = verdicts(models.white_box, &x)?;
            if v.iter().all(|&l| l == LABEL_REAL) {
                let s = ssim(&image, &x)?;
                if best.as_ref().is_none_or(|b| s > b.ssim) {
                    best = Some(Candidate {
                        delta: delta.clone(),
                        x,
                        ssim: s,
                        verdicts: v,
                        radius,
                    });
                }
            }
        }
        if best.is_some() {
            break 'levels;
        }
    }

    let success = best.is_some();
    let chosen = match best {
        Some(c) => c,
        None => {
            // with no iterations the initial δ was never applied
            let x = if trace.is_empty() {
                x_recon.clone()
            } else {
                render.eval(std::slice::from_ref(&delta))?.remove(0)
            };
            Candidate {
                verdicts: verdicts(models.white_box, &x)?,
                ssim: ssim(&image, &x)?,
                delta,
                x,
                radius,
            }
        }
    };
    Ok(AttackResult {
        id,
        success,
        transfer_verdicts: verdicts(models.transfer, &chosen.x)?,
        x_adv: chosen.x.into_data(),
        x_recon: x_recon.into_data(),
        delta: chosen.delta.into_data(),
        ssim: chosen.ssim,
        white_box_verdicts: chosen.verdicts,
        radius: success.then_some(chosen.radius),
        final_radius: radius,
        iterations: trace.len(),
        loss_trace: trace,
        grad_method: cfg.grad_method,
    })
}

//! Built-in correctness checks run by `ladv selftest`.

use serde::Serialize;

use crate::attack::{
    attack_loss_program, gradient_step, project, sample_draw, AttackConfig, AttackModels, GradMethod, Transform,
};
use crate::autodiff::{grad_check, Graph};
use crate::diffusion::{
    cfg_predict, denoise_with_eps, invert_chain_traced, EpsilonModel, GaussianAnalyticModel, Guidance, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::metrics::ssim;
use crate::models::{ClassifierNet, Codec, ScoreNet, COND_WIDTH, IMAGE_SHAPE, PIXELS};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;
use rand::Rng as _;

/// Tolerance for the end-to-end gradient check.
pub const GRAD_TOLERANCE: f64 = 1e-5;
/// Finite-difference step for the end-to-end gradient check.
pub const GRAD_STEP: f64 = 1e-5;
pub const ROUND_TRIP_TOLERANCE: f64 = 1e-12;

/// Small untrained pipeline: 8-dim latent, 2 DDIM steps, three tiny
/// white-box detectors and one transfer detector.
pub struct TinyFixture {
    pub codec: Codec,
    pub score: ScoreNet,
    pub schedule: NoiseSchedule,
    pub cond: Tensor,
    pub null_cond: Tensor,
    pub white_box: Vec<ClassifierNet>,
    pub transfer: Vec<ClassifierNet>,
}

pub const TINY_LATENT: usize = 8;

fn uniform_images(rng: &mut Rng, n: usize) -> Tensor {
    Tensor::new(vec![n, PIXELS], (0..n * PIXELS).map(|_| rng.random::<f64>()).collect()).unwrap()
}

impl TinyFixture {
    pub fn new(seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, 0);
        let mut codec = Codec::linear(&mut r, TINY_LATENT);
        codec.center(&Tensor::full(vec![PIXELS], 0.5))?;
        codec.fit_standardization(&uniform_images(&mut r, 32))?;
        let score = ScoreNet::init(&mut r, TINY_LATENT);
        let cond = Tensor::vector(rng::normals(&mut r, COND_WIDTH));
        let null_cond = Tensor::vector(rng::normals(&mut r, COND_WIDTH));
        let white_box = (0..3).map(|k| ClassifierNet::init(&mut r, 8 + 4 * k)).collect();
        let transfer = vec![ClassifierNet::init(&mut r, 10)];
        Ok(Self {
            codec,
            score,
            schedule: NoiseSchedule::new(100, 1e-4, 0.02, 2)?,
            cond,
            null_cond,
            white_box,
            transfer,
        })
    }

    pub fn models(&self) -> AttackModels<'_> {
        AttackModels {
            codec: &self.codec,
            score: &self.score,
            schedule: &self.schedule,
            cond: &self.cond,
            null_cond: &self.null_cond,
            white_box: &self.white_box,
            transfer: &self.transfer,
        }
    }

    /// Attack settings matching the fixture: denoise through both steps
    /// with real guidance.
    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig {
            timestep: 2,
            guidance_w: 2.0,
            lambda: 0.1,
            ..AttackConfig::default()
        }
    }

    pub fn image(&self, seed: u64) -> Tensor {
        let mut r = rng::stream(seed, 1);
        Tensor::new(IMAGE_SHAPE.to_vec(), (0..PIXELS).map(|_| r.random_range(0.1..0.9)).collect()).unwrap()
    }
}

/// Largest relative error between the analytic and central-difference
/// gradient of the full attack loss with respect to δ, with every transform
/// of the pool active. δ is drawn away from zero so `|x_adv − x_recon|`
/// stays off its kink.
pub fn end_to_end_grad_error(seed: u64) -> Result<f64> {
    let fx = TinyFixture::new(seed)?;
    let cfg = fx.attack_config();
    let models = fx.models();
    let x = fx.image(seed);
    let z0 = fx.codec.encode(&x)?;
    let guidance = Guidance::new(&fx.cond, &fx.null_cond, cfg.guidance_w);
    let (mut z, _) = invert_chain_traced(&fx.score, &fx.schedule, &z0, cfg.timestep, &guidance)?;
    let z_s = z.pop().unwrap();
    let recon = fx.codec.decode(&crate::diffusion::denoise_chain(&fx.score, &fx.schedule, &z_s, cfg.timestep, &guidance)?)?;
    let draw = [
        Transform::Hflip,
        Transform::Rot90 { quarter_turns: 1 },
        Transform::CenterCropResize,
        Transform::ChannelDropout { channel: 1 },
        Transform::Vflip,
    ];
    let program = attack_loss_program(&models, &cfg, &z_s, &recon, &draw)?;
    let mut r = rng::stream(seed, 2);
    let delta = Tensor::new(
        z_s.shape().to_vec(),
        (0..z_s.len()).map(|_| {
            let v: f64 = r.random_range(0.05..0.2);
            if r.random::<bool>() { v } else { -v }
        }).collect(),
    )?;
    grad_check(&program, &[delta], GRAD_STEP)
}

/// Invert then denoise with the same ε sequence under the Gaussian oracle;
/// returns the max absolute deviation from z_0.
pub fn shared_eps_round_trip_error(seed: u64) -> Result<f64> {
    let dim = 6;
    let mut r = rng::stream(seed, 3);
    let mu = rng::normals(&mut r, dim);
    let sigma = (0..dim).map(|_| r.random_range(0.5..2.0)).collect();
    let model = GaussianAnalyticModel::new(mu, sigma)?;
    let schedule = NoiseSchedule::new(100, 1e-4, 0.02, 20)?;
    let z0 = Tensor::new(vec![1, dim], rng::normals(&mut r, dim))?;
    let empty = Tensor::zeros(vec![0]);
    let guidance = Guidance::new(&empty, &empty, 1.0);
    let (latents, eps) = invert_chain_traced(&model, &schedule, &z0, 20, &guidance)?;
    let back = denoise_with_eps(&schedule, latents.last().unwrap(), &eps)?;
    Ok(back.sub(&z0)?.abs_max())
}

/// `w = 1` guidance must reproduce the conditional prediction bitwise.
pub fn cfg_unit_weight_exact(seed: u64) -> Result<bool> {
    let fx = TinyFixture::new(seed)?;
    let mut r = rng::stream(seed, 4);
    let z = Tensor::new(vec![1, TINY_LATENT], rng::normals(&mut r, TINY_LATENT))?;
    let step = fx.schedule.ddim_timestep(1);
    let guided = cfg_predict(&fx.score, &z, step, &Guidance::new(&fx.cond, &fx.null_cond, 1.0))?;
    let cond = fx.score.predict(&z, step, &fx.cond)?;
    Ok(guided.data().iter().zip(cond.data()).all(|(a, b)| a.to_bits() == b.to_bits()))
}

/// `project(project(δ)) == project(δ)` on random wide vectors.
pub fn projection_idempotent(seed: u64) -> Result<bool> {
    let mut r = rng::stream(seed, 5);
    for _ in 0..20 {
        let eps = r.random_range(0.01..0.5);
        let d = Tensor::vector(rng::normals(&mut r, 32));
        let once = project(&d, eps)?;
        if project(&once, eps)? != once || once.abs_max() > eps {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn ssim_self_is_one(seed: u64) -> Result<bool> {
    let fx = TinyFixture::new(seed)?;
    let x = fx.image(seed);
    Ok(ssim(&x, &x)? == 1.0)
}

/// MI-FGSM with μ = 0 equals a single sign step of the gradient.
pub fn mifgsm_zero_momentum_is_fgsm(seed: u64) -> Result<bool> {
    let mut r = rng::stream(seed, 6);
    let grad = Tensor::vector(rng::normals(&mut r, 16));
    let start = Tensor::vector(rng::normals(&mut r, 16));
    let (mut a, mut b) = (start.clone(), start);
    let mut m = Tensor::vector(rng::normals(&mut r, 16));
    let mut unused = Tensor::zeros(vec![16]);
    gradient_step(&mut a, &mut m, &grad, 0.1, GradMethod::MiFgsm, 0.0)?;
    gradient_step(&mut b, &mut unused, &grad, 0.1, GradMethod::FgsmSign, 0.0)?;
    Ok(a == b)
}

/// A transform draw from the full pool at probability 1 holds every kind.
pub fn full_pool_draw(seed: u64) -> Result<bool> {
    let mut r = rng::stream(seed, 7);
    let draw = sample_draw(&crate::attack::TransformKind::ALL, 1.0, &mut r);
    Ok(draw.len() == crate::attack::TransformKind::ALL.len())
}

/// Gradient check of a small graph mixing every elementwise op family.
pub fn primitive_grad_error(seed: u64) -> Result<f64> {
    let mut r = rng::stream(seed, 8);
    let mut g = Graph::new();
    let x = g.input(&[4]);
    let w = g.input(&[4, 3]);
    let xr = g.reshape(x, &[1, 4]);
    let h = g.matmul(xr, w);
    let a = g.tanh(h);
    let b = g.silu(h);
    let c = g.mul(a, b);
    let l = g.sum(c);
    let p = g.build(&[l])?;
    let inputs = [
        Tensor::vector(rng::normals(&mut r, 4)),
        Tensor::new(vec![4, 3], rng::normals(&mut r, 12))?,
    ];
    grad_check(&p, &inputs, 1e-6)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, check: Result<(bool, String)>) -> SuiteOutcome {
    match check {
        Ok((passed, detail)) => SuiteOutcome { name, passed, detail },
        Err(e) => SuiteOutcome { name, passed: false, detail: format!("error: {e}") },
    }
}

fn flag(r: Result<bool>) -> Result<(bool, String)> {
    r.map(|b| (b, String::new()))
}

/// Run every suite with `seed`.
pub fn run_selftest(seed: u64) -> Vec<SuiteOutcome> {
    vec![
        outcome("primitive-grad-check", primitive_grad_error(seed).map(|e| (e < 1e-6, format!("max rel err {e:.3e}")))),
        outcome(
            "attack-grad-check",
            end_to_end_grad_error(seed).map(|e| (e < GRAD_TOLERANCE, format!("max rel err {e:.3e}"))),
        ),
        outcome(
            "shared-eps-round-trip",
            shared_eps_round_trip_error(seed).map(|e| (e < ROUND_TRIP_TOLERANCE, format!("max abs err {e:.3e}"))),
        ),
        outcome("cfg-unit-weight", flag(cfg_unit_weight_exact(seed))),
        outcome("projection-idempotent", flag(projection_idempotent(seed))),
        outcome("ssim-identity", flag(ssim_self_is_one(seed))),
        outcome("mifgsm-zero-momentum", flag(mifgsm_zero_momentum_is_fgsm(seed))),
        outcome("transform-pool", flag(full_pool_draw(seed))),
    ]
}

/// `Err(SelfTest)` naming the failed suites, if any.
pub fn check_outcomes(outcomes: &[SuiteOutcome]) -> Result<()> {
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name.to_string()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::SelfTest(failed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        let out = run_selftest(0);
        for o in &out {
            assert!(o.passed, "{}: {}", o.name, o.detail);
        }
        check_outcomes(&out).unwrap();
    }

    #[test]
    fn failures_are_named() {
        let out = vec![SuiteOutcome { name: "x", passed: false, detail: String::new() }];
        assert!(matches!(check_outcomes(&out), Err(Error::SelfTest(v)) if v == ["x"]));
    }
}

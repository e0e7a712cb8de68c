//! Deterministic DDIM transfer between noise levels.
//!
//! Both directions use the same update, moving a latent from level ᾱ_from to
//! ᾱ_to along the predicted clean sample:
//!
//! ```text
//! z_to = √ᾱ_to · (z_from − √(1 − ᾱ_from) · ε) / √ᾱ_from + √(1 − ᾱ_to) · ε
//! ```
//!
//! Denoising has ᾱ_to > ᾱ_from, inversion the reverse. With a shared ε the
//! two are exact algebraic inverses.

use super::{EpsilonModel, NoiseSchedule, Timestep};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Conditioning for classifier-free guidance.
#[derive(Debug, Clone, Copy)]
pub struct Guidance<'a> {
    pub cond: &'a Tensor,
    pub null_cond: &'a Tensor,
    pub w: f64,
}

impl<'a> Guidance<'a> {
    pub fn new(cond: &'a Tensor, null_cond: &'a Tensor, w: f64) -> Self {
        Self { cond, null_cond, w }
    }
}

fn check_levels(from: f64, to: f64) -> Result<()> {
    for a in [from, to] {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::Invalid(format!("alpha_bar {a} outside (0, 1]")));
        }
    }
    Ok(())
}

fn transfer(z: &Tensor, eps: &Tensor, from: f64, to: f64) -> Result<Tensor> {
    check_levels(from, to)?;
    let x0 = z.sub(&eps.scale((1.0 - from).sqrt()))?.scale(1.0 / from.sqrt());
    x0.scale(to.sqrt()).add(&eps.scale((1.0 - to).sqrt()))
}

/// One denoising step z_t → z_{t−1}.
pub fn ddim_step(z_t: &Tensor, eps: &Tensor, abar_t: f64, abar_prev: f64) -> Result<Tensor> {
    transfer(z_t, eps, abar_t, abar_prev)
}

/// One inversion step z_t → z_{t+1}.
pub fn ddim_invert_step(z_t: &Tensor, eps: &Tensor, abar_t: f64, abar_next: f64) -> Result<Tensor> {
    transfer(z_t, eps, abar_t, abar_next)
}

/// Graph form of the transfer; performs the same floating-point operations
/// in the same order as [`ddim_step`].
pub fn emit_ddim_transfer(g: &mut Graph, z: Var, eps: Var, from: f64, to: f64) -> Result<Var> {
    check_levels(from, to)?;
    let noise = g.scale(eps, (1.0 - from).sqrt());
    let diff = g.sub(z, noise);
    let x0 = g.scale(diff, 1.0 / from.sqrt());
    let signal = g.scale(x0, to.sqrt());
    let dir = g.scale(eps, (1.0 - to).sqrt());
    Ok(g.add(signal, dir))
}

fn check_cond(model: &dyn EpsilonModel, guidance: &Guidance) -> Result<()> {
    if guidance.cond.shape() != guidance.null_cond.shape() {
        return Err(Error::Shape(format!(
            "conditioning {:?} vs null conditioning {:?}",
            guidance.cond.shape(),
            guidance.null_cond.shape()
        )));
    }
    if let Some(width) = model.cond_dim() {
        if guidance.cond.len() != width {
            return Err(Error::Shape(format!(
                "conditioning width {} but model expects {width}",
                guidance.cond.len()
            )));
        }
    }
    if !guidance.w.is_finite() {
        return Err(Error::Invalid(format!("guidance scale {}", guidance.w)));
    }
    Ok(())
}

/// Guided prediction `w · ε(z, t, c) + (1 − w) · ε(z, t, ∅)`.
///
/// At `w = 1`, `w = 0`, or when both embeddings coincide, only the branch
/// that survives is evaluated, so the result equals it bitwise.
pub fn emit_cfg(
    g: &mut Graph,
    model: &dyn EpsilonModel,
    z: Var,
    step: Timestep,
    guidance: &Guidance,
) -> Result<Var> {
    check_cond(model, guidance)?;
    let w = guidance.w;
    if w == 1.0 || guidance.cond == guidance.null_cond {
        return model.emit(g, z, step, guidance.cond);
    }
    if w == 0.0 {
        return model.emit(g, z, step, guidance.null_cond);
    }
    let cond = model.emit(g, z, step, guidance.cond)?;
    let uncond = model.emit(g, z, step, guidance.null_cond)?;
    let a = g.scale(cond, w);
    let b = g.scale(uncond, 1.0 - w);
    Ok(g.add(a, b))
}

pub fn cfg_predict(
    model: &dyn EpsilonModel,
    z: &Tensor,
    step: Timestep,
    guidance: &Guidance,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let zv = g.input(z.shape());
    let eps = emit_cfg(&mut g, model, zv, step, guidance)?;
    let program = g.build(&[eps])?;
    Ok(program.eval(std::slice::from_ref(z))?.remove(0))
}

fn check_index(schedule: &NoiseSchedule, index: usize, allow_zero: bool) -> Result<()> {
    let lo = if allow_zero { 0 } else { 1 };
    if index < lo || index > schedule.ddim_steps() {
        return Err(Error::Invalid(format!(
            "DDIM index {index} outside {lo}..={}",
            schedule.ddim_steps()
        )));
    }
    Ok(())
}

/// DDIM inversion from z_0 to DDIM index `stop_index`, returning the latents
/// `[z_0, z_σ1, …, z_σstop]` and the ε used for each step.
pub fn invert_chain_traced(
    model: &dyn EpsilonModel,
    schedule: &NoiseSchedule,
    z0: &Tensor,
    stop_index: usize,
    guidance: &Guidance,
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    check_index(schedule, stop_index, false)?;
    let mut latents = vec![z0.clone()];
    let mut epsilons = Vec::with_capacity(stop_index);
    for k in 0..stop_index {
        let from = schedule.ddim_timestep(k);
        let to = schedule.ddim_timestep(k + 1);
        let z = latents.last().unwrap();
        let eps = cfg_predict(model, z, from, guidance)?;
        let next = ddim_invert_step(z, &eps, from.alpha_bar, to.alpha_bar)?;
        latents.push(next);
        epsilons.push(eps);
    }
    Ok((latents, epsilons))
}

/// DDIM inversion trajectory `[z_0, …, z_σstop]`; ε is evaluated at the
/// current latent of each step.
pub fn invert_chain(
    model: &dyn EpsilonModel,
    schedule: &NoiseSchedule,
    z0: &Tensor,
    stop_index: usize,
    guidance: &Guidance,
) -> Result<Vec<Tensor>> {
    invert_chain_traced(model, schedule, z0, stop_index, guidance).map(|(z, _)| z)
}

/// Emit `start_index` guided denoising steps from a latent at DDIM index
/// `start_index` down to index 0.
pub fn emit_denoise_chain(
    g: &mut Graph,
    model: &dyn EpsilonModel,
    schedule: &NoiseSchedule,
    z_s: Var,
    start_index: usize,
    guidance: &Guidance,
) -> Result<Var> {
    check_index(schedule, start_index, true)?;
    let mut z = z_s;
    for k in (0..start_index).rev() {
        let from = schedule.ddim_timestep(k + 1);
        let to = schedule.ddim_timestep(k);
        let eps = emit_cfg(g, model, z, from, guidance)?;
        z = emit_ddim_transfer(g, z, eps, from.alpha_bar, to.alpha_bar)?;
    }
    Ok(z)
}

pub fn denoise_chain(
    model: &dyn EpsilonModel,
    schedule: &NoiseSchedule,
    z_s: &Tensor,
    start_index: usize,
    guidance: &Guidance,
) -> Result<Tensor> {
    check_index(schedule, start_index, true)?;
    let mut z = z_s.clone();
    for k in (0..start_index).rev() {
        let from = schedule.ddim_timestep(k + 1);
        let to = schedule.ddim_timestep(k);
        let eps = cfg_predict(model, &z, from, guidance)?;
        z = ddim_step(&z, &eps, from.alpha_bar, to.alpha_bar)?;
    }
    Ok(z)
}

/// Denoise with explicitly supplied per-step ε (`epsilons[k]` drives the
/// step between DDIM indices `k + 1` and `k`).
pub fn denoise_with_eps(schedule: &NoiseSchedule, z_s: &Tensor, epsilons: &[Tensor]) -> Result<Tensor> {
    check_index(schedule, epsilons.len(), true)?;
    let mut z = z_s.clone();
    for k in (0..epsilons.len()).rev() {
        let from = schedule.ddim_timestep(k + 1);
        let to = schedule.ddim_timestep(k);
        z = ddim_step(&z, &epsilons[k], from.alpha_bar, to.alpha_bar)?;
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::diffusion::{GaussianAnalyticModel, ScheduleConfig};

    /// ε = tanh(z · a + c · b) with a conditioning-dependent shift.
    struct ToyModel;

    impl EpsilonModel for ToyModel {
        fn latent_dim(&self) -> usize {
            2
        }
        fn cond_dim(&self) -> Option<usize> {
            Some(2)
        }
        fn emit(&self, g: &mut Graph, z: Var, step: Timestep, cond: &Tensor) -> Result<Var> {
            let a = g.constant(Tensor::new(vec![2, 2], vec![0.7, -0.3, 0.2, 1.1]).unwrap());
            let shift = g.constant(cond.scale(step.alpha_bar));
            let h = g.matmul(z, a);
            let h = g.add(h, shift);
            Ok(g.tanh(h))
        }
    }

    fn t(k: usize, abar: f64) -> Timestep {
        Timestep { t: k, alpha_bar: abar }
    }

    #[test]
    fn zero_eps_same_level_is_identity() {
        let z = Tensor::vector(vec![0.3, -1.2, 2.0]);
        let e = Tensor::zeros(vec![3]);
        let out = ddim_step(&z, &e, 0.7, 0.7).unwrap();
        for (a, b) in out.data().iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        let out = ddim_invert_step(&z, &e, 0.7, 0.7).unwrap();
        for (a, b) in out.data().iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_eps_is_pure_rescale() {
        let z = Tensor::vector(vec![0.3, -1.2]);
        let e = Tensor::zeros(vec![2]);
        let down = ddim_step(&z, &e, 0.6, 0.9).unwrap();
        let up = ddim_invert_step(&z, &e, 0.9, 0.6).unwrap();
        for i in 0..2 {
            assert!((down.data()[i] - (0.9f64 / 0.6).sqrt() * z.data()[i]).abs() < 1e-15);
            assert!((up.data()[i] - (0.6f64 / 0.9).sqrt() * z.data()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn standard_gaussian_step_closed_form() {
        let m = GaussianAnalyticModel::standard(3);
        let z = Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let (at, ap) = (0.55, 0.8);
        let eps = m.predict(&z, t(10, at), &Tensor::vector(vec![0.0])).unwrap();
        let out = ddim_step(&z, &eps, at, ap).unwrap();
        let factor = (ap * at).sqrt() + ((1.0 - ap) * (1.0 - at)).sqrt();
        for (o, x) in out.data().iter().zip(z.data()) {
            assert!((o - factor * x).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_non_positive_levels() {
        let z = Tensor::vector(vec![1.0]);
        assert!(ddim_step(&z, &z, 0.0, 0.5).is_err());
        assert!(ddim_invert_step(&z, &z, 0.5, -0.1).is_err());
        assert!(ddim_step(&z, &z, 0.5, 1.2).is_err());
    }

    #[test]
    fn graph_transfer_matches_tensor_transfer_bitwise() {
        let z = Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let e = Tensor::new(vec![1, 3], vec![0.1, 0.7, -0.4]).unwrap();
        let mut g = Graph::new();
        let zv = g.input(&[1, 3]);
        let ev = g.input(&[1, 3]);
        let out = emit_ddim_transfer(&mut g, zv, ev, 0.4, 0.9).unwrap();
        let p = g.build(&[out]).unwrap();
        let a = p.eval(&[z.clone(), e.clone()]).unwrap().remove(0);
        assert_eq!(a, ddim_step(&z, &e, 0.4, 0.9).unwrap());
    }

    #[test]
    fn cfg_endpoints_and_coincident_conditioning() {
        let z = Tensor::new(vec![1, 2], vec![0.4, -0.9]).unwrap();
        let c = Tensor::vector(vec![1.0, -2.0]);
        let n = Tensor::vector(vec![0.0, 0.0]);
        let step = t(5, 0.6);
        let cond = ToyModel.predict(&z, step, &c).unwrap();
        let uncond = ToyModel.predict(&z, step, &n).unwrap();
        assert_eq!(cfg_predict(&ToyModel, &z, step, &Guidance::new(&c, &n, 1.0)).unwrap(), cond);
        assert_eq!(cfg_predict(&ToyModel, &z, step, &Guidance::new(&c, &n, 0.0)).unwrap(), uncond);
        for w in [-1.5, 0.3, 2.0, 7.5] {
            assert_eq!(cfg_predict(&ToyModel, &z, step, &Guidance::new(&c, &c, w)).unwrap(), cond);
        }
    }

    #[test]
    fn cfg_rejects_mismatched_conditioning() {
        let z = Tensor::new(vec![1, 2], vec![0.4, -0.9]).unwrap();
        let c = Tensor::vector(vec![1.0, -2.0, 3.0]);
        let n = Tensor::vector(vec![0.0, 0.0, 0.0]);
        assert!(cfg_predict(&ToyModel, &z, t(1, 0.9), &Guidance::new(&c, &n, 1.0)).is_err());
        let c2 = Tensor::vector(vec![1.0, -2.0]);
        assert!(cfg_predict(&ToyModel, &z, t(1, 0.9), &Guidance::new(&c2, &n, 1.0)).is_err());
    }

    #[test]
    fn chains_validate_indices_and_lengths() {
        let s = ScheduleConfig::default().build().unwrap();
        let m = GaussianAnalyticModel::standard(2);
        let z0 = Tensor::new(vec![1, 2], vec![0.4, -0.9]).unwrap();
        let c = Tensor::vector(vec![0.0]);
        let guide = Guidance::new(&c, &c, 1.0);
        assert_eq!(invert_chain(&m, &s, &z0, 1, &guide).unwrap().len(), 2);
        assert!(invert_chain(&m, &s, &z0, 0, &guide).is_err());
        assert!(invert_chain(&m, &s, &z0, 21, &guide).is_err());
        assert_eq!(denoise_chain(&m, &s, &z0, 0, &guide).unwrap(), z0);
    }

    #[test]
    fn zero_model_inversion_is_pure_rescale() {
        struct Zero;
        impl EpsilonModel for Zero {
            fn latent_dim(&self) -> usize {
                2
            }
            fn cond_dim(&self) -> Option<usize> {
                None
            }
            fn emit(&self, g: &mut Graph, z: Var, _: Timestep, _: &Tensor) -> Result<Var> {
                Ok(g.scale(z, 0.0))
            }
        }
        let s = ScheduleConfig::default().build().unwrap();
        let z0 = Tensor::new(vec![1, 2], vec![0.4, -0.9]).unwrap();
        let c = Tensor::vector(vec![0.0]);
        let traj = invert_chain(&Zero, &s, &z0, 4, &Guidance::new(&c, &c, 1.0)).unwrap();
        for (k, z) in traj.iter().enumerate() {
            let r = s.ddim_timestep(k).alpha_bar.sqrt();
            for (a, b) in z.data().iter().zip(z0.data()) {
                assert!((a - r * b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shared_eps_chain_round_trip_is_exact() {
        let s = ScheduleConfig::default().build().unwrap();
        let z0 = Tensor::new(vec![1, 2], vec![0.4, -0.9]).unwrap();
        let c = Tensor::vector(vec![0.3, -0.1]);
        let n = Tensor::vector(vec![0.0, 0.0]);
        let guide = Guidance::new(&c, &n, 1.0);
        for stop in [1, 2, 7, 20] {
            let (traj, eps) = invert_chain_traced(&ToyModel, &s, &z0, stop, &guide).unwrap();
            let back = denoise_with_eps(&s, traj.last().unwrap(), &eps).unwrap();
            for (a, b) in back.data().iter().zip(z0.data()) {
                assert!((a - b).abs() < 1e-12, "stop {stop}: {a} vs {b}");
            }
        }
    }

    proptest! {
        #[test]
        fn shared_eps_step_round_trip(
            z in prop::collection::vec(-3.0f64..3.0, 4),
            e in prop::collection::vec(-3.0f64..3.0, 4),
            k in 0usize..20,
        ) {
            let s = ScheduleConfig::default().build().unwrap();
            let (a, b) = (s.ddim_timestep(k).alpha_bar, s.ddim_timestep(k + 1).alpha_bar);
            let z = Tensor::vector(z);
            let e = Tensor::vector(e);
            let up = ddim_invert_step(&z, &e, a, b).unwrap();
            let back = ddim_step(&up, &e, b, a).unwrap();
            let down = ddim_step(&z, &e, b, a).unwrap();
            let back2 = ddim_invert_step(&down, &e, a, b).unwrap();
            for i in 0..4 {
                prop_assert!((back.data()[i] - z.data()[i]).abs() < 1e-12);
                prop_assert!((back2.data()[i] - z.data()[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn cfg_is_affine_in_w(w in -4.0f64..4.0, z in prop::collection::vec(-2.0f64..2.0, 2)) {
            let z = Tensor::new(vec![1, 2], z).unwrap();
            let c = Tensor::vector(vec![1.0, -2.0]);
            let n = Tensor::vector(vec![0.0, 0.5]);
            let step = t(5, 0.6);
            let a = ToyModel.predict(&z, step, &c).unwrap();
            let b = ToyModel.predict(&z, step, &n).unwrap();
            let got = cfg_predict(&ToyModel, &z, step, &Guidance::new(&c, &n, w)).unwrap();
            let expected = a.scale(w).add(&b.scale(1.0 - w)).unwrap();
            if w != 0.0 && w != 1.0 {
                prop_assert_eq!(got, expected);
            }
        }
    }
}

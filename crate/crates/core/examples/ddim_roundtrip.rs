//! DDIM inversion under the analytic Gaussian ε-model: the shared-ε round
//! trip is exact, the usual first-order inversion converges with step count.

use latent_adv::diffusion::{
    denoise_chain, denoise_with_eps, invert_chain, invert_chain_traced, GaussianAnalyticModel, Guidance,
    NoiseSchedule,
};
use latent_adv::{rng, Tensor};

fn main() -> latent_adv::Result<()> {
    let model = GaussianAnalyticModel::new(vec![1.0, -0.5, 0.0], vec![0.4, 2.0, 1.0])?;
    let z0 = Tensor::new(vec![1, 3], rng::normals(&mut rng::stream(1, 0), 3))?;
    let empty = Tensor::zeros(vec![0]);
    let g = Guidance::new(&empty, &empty, 1.0);

    let schedule = NoiseSchedule::new(100, 1e-4, 0.02, 20)?;
    let (latents, eps) = invert_chain_traced(&model, &schedule, &z0, 20, &g)?;
    let back = denoise_with_eps(&schedule, latents.last().unwrap(), &eps)?;
    println!("shared ε, 20 steps: max error {:.2e}", back.sub(&z0)?.abs_max());

    for steps in [5, 20, 50, 200] {
        let s = NoiseSchedule::new(200, 1e-4, 0.02, steps)?;
        let z_t = invert_chain(&model, &s, &z0, steps, &g)?.pop().unwrap();
        let back = denoise_chain(&model, &s, &z_t, steps, &g)?;
        println!("re-evaluated ε, {steps:>3} steps: relative L2 {:.2e}", back.sub(&z0)?.l2_norm() / z0.l2_norm());
    }
    Ok(())
}

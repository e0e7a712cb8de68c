use latent_adv::autodiff::{grad_check, Graph};
use latent_adv::diffusion::{
    denoise_chain, emit_denoise_chain, invert_chain, GaussianAnalyticModel, Guidance, NoiseSchedule,
};
use latent_adv::pipeline::selftest::{TinyFixture, TINY_LATENT};
use latent_adv::rng;
use latent_adv::Tensor;

fn no_guidance(empty: &Tensor) -> Guidance<'_> {
    Guidance::new(empty, empty, 1.0)
}

fn gaussian() -> GaussianAnalyticModel {
    GaussianAnalyticModel::new(vec![0.5, -1.0, 2.0, 0.0], vec![0.6, 1.5, 0.3, 1.0]).unwrap()
}

fn samples(model: &GaussianAnalyticModel, n: usize, seed: u64) -> Tensor {
    let dim = model.mu().len();
    let z = rng::normals(&mut rng::stream(seed, 0), n * dim);
    let data = z
        .iter()
        .enumerate()
        .map(|(i, e)| model.mu()[i % dim] + model.sigma_diag()[i % dim].sqrt() * e)
        .collect();
    Tensor::new(vec![n, dim], data).unwrap()
}

#[test]
fn fine_schedule_round_trip_reconstructs() {
    let model = gaussian();
    let schedule = NoiseSchedule::new(200, 1e-4, 0.02, 200).unwrap();
    let empty = Tensor::zeros(vec![0]);
    let g = no_guidance(&empty);
    let z0 = samples(&model, 64, 1);
    let z_t = invert_chain(&model, &schedule, &z0, 200, &g).unwrap().pop().unwrap();
    let back = denoise_chain(&model, &schedule, &z_t, 200, &g).unwrap();
    let rel = back.sub(&z0).unwrap().l2_norm() / z0.l2_norm();
    assert!(rel < 1e-2, "relative L2 error {rel}");
}

#[test]
fn inversion_preserves_marginals() {
    // inverting N(μ, Σ) samples to level t should give N(√ᾱ μ, ᾱ Σ + (1 − ᾱ) I)
    let model = gaussian();
    // every training step is a DDIM step; at 20 steps the first-order
    // inversion drifts by more than the Monte-Carlo band
    let steps = 100;
    let schedule = NoiseSchedule::new(100, 1e-4, 0.02, steps).unwrap();
    let empty = Tensor::zeros(vec![0]);
    let n = 10_000;
    let z0 = samples(&model, n, 2);
    let chain = invert_chain(&model, &schedule, &z0, steps, &no_guidance(&empty)).unwrap();
    let dim = model.mu().len();
    for k in [steps / 20, steps / 4, steps] {
        let abar = schedule.ddim_timestep(k).alpha_bar;
        let z = &chain[k];
        for d in 0..dim {
            let col: Vec<f64> = z.data().iter().skip(d).step_by(dim).copied().collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let want_mean = abar.sqrt() * model.mu()[d];
            let want_var = abar * model.sigma_diag()[d] + 1.0 - abar;
            let mean_band = 3.0 * (want_var / n as f64).sqrt();
            let var_band = 3.0 * want_var * (2.0 / (n - 1) as f64).sqrt();
            assert!((mean - want_mean).abs() < mean_band, "k={k} d={d}: mean {mean} vs {want_mean}");
            assert!((var - want_var).abs() < var_band, "k={k} d={d}: var {var} vs {want_var}");
        }
    }
}

#[test]
fn denoise_chain_gradient_matches_differences() {
    let fx = TinyFixture::new(3).unwrap();
    let guidance = Guidance::new(&fx.cond, &fx.null_cond, 2.0);
    let mut g = Graph::new();
    let z = g.input(&[1, TINY_LATENT]);
    let out = emit_denoise_chain(&mut g, &fx.score, &fx.schedule, z, 2, &guidance).unwrap();
    let sq = g.mul(out, out);
    let loss = g.sum(sq);
    let program = g.build(&[loss]).unwrap();
    let z_s = Tensor::new(vec![1, TINY_LATENT], rng::normals(&mut rng::stream(3, 9), TINY_LATENT)).unwrap();
    let err = grad_check(&program, &[z_s], 1e-5).unwrap();
    assert!(err < 1e-5, "relative error {err}");
}

#[test]
fn graph_chain_matches_tensor_chain() {
    let fx = TinyFixture::new(4).unwrap();
    let guidance = Guidance::new(&fx.cond, &fx.null_cond, 1.5);
    let z_s = Tensor::new(vec![1, TINY_LATENT], rng::normals(&mut rng::stream(4, 9), TINY_LATENT)).unwrap();
    let direct = denoise_chain(&fx.score, &fx.schedule, &z_s, 2, &guidance).unwrap();
    let mut g = Graph::new();
    let z = g.input(&[1, TINY_LATENT]);
    let out = emit_denoise_chain(&mut g, &fx.score, &fx.schedule, z, 2, &guidance).unwrap();
    let via_graph = g.build(&[out]).unwrap().eval(&[z_s]).unwrap().remove(0);
    assert_eq!(direct, via_graph);
}

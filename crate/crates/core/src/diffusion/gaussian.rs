use super::{EpsilonModel, Timestep};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Exact ε* for data distributed as N(μ, diag(σ)).
///
/// The noisy marginal at level ᾱ is N(√ᾱ μ, ᾱ diag(σ) + (1 − ᾱ) I), so the
/// optimal noise prediction is
/// `ε* = √(1 − ᾱ) (z − √ᾱ μ) / (ᾱ σ + 1 − ᾱ)` elementwise.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianAnalyticModel {
    mu: Vec<f64>,
    sigma_diag: Vec<f64>,
}

impl GaussianAnalyticModel {
    pub fn new(mu: Vec<f64>, sigma_diag: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma_diag.len() || mu.is_empty() {
            return Err(Error::Shape(format!(
                "mean has {} dims, variance has {}",
                mu.len(),
                sigma_diag.len()
            )));
        }
        if let Some(v) = sigma_diag.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Invalid(format!("variance {v} must be positive")));
        }
        Ok(Self { mu, sigma_diag })
    }

    /// N(0, I).
    pub fn standard(dim: usize) -> Self {
        Self {
            mu: vec![0.0; dim],
            sigma_diag: vec![1.0; dim],
        }
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma_diag(&self) -> &[f64] {
        &self.sigma_diag
    }

    /// Per-dim shift `√ᾱ μ` and gain `√(1 − ᾱ) / (ᾱ σ + 1 − ᾱ)`.
    fn coefficients(&self, abar: f64) -> (Vec<f64>, Vec<f64>) {
        let shift = self.mu.iter().map(|m| abar.sqrt() * m).collect();
        let gain = self
            .sigma_diag
            .iter()
            .map(|s| (1.0 - abar).sqrt() / (abar * s + (1.0 - abar)))
            .collect();
        (shift, gain)
    }

    /// Log-density of the noisy marginal at level ᾱ, summed over dims.
    pub fn log_density(&self, z: &[f64], abar: f64) -> f64 {
        z.iter()
            .zip(self.mu.iter().zip(&self.sigma_diag))
            .map(|(&x, (&m, &s))| {
                let var = abar * s + 1.0 - abar;
                let d = x - abar.sqrt() * m;
                -0.5 * d * d / var - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
            })
            .sum()
    }
}

fn check_abar(abar: f64) -> Result<()> {
    if abar > 0.0 && abar <= 1.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!("alpha_bar {abar} outside (0, 1]")))
    }
}

/// ε*(z, t) for a `[batch, dim]` (or `[dim]`) latent.
pub fn analytic_epsilon(model: &GaussianAnalyticModel, z: &Tensor, abar: f64) -> Result<Tensor> {
    check_abar(abar)?;
    let dim = *z.shape().last().unwrap();
    if dim != model.mu.len() {
        return Err(Error::Shape(format!(
            "latent width {dim} but model has {} dims",
            model.mu.len()
        )));
    }
    let (shift, gain) = model.coefficients(abar);
    let data = z
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - shift[i % dim]) * gain[i % dim])
        .collect();
    Tensor::new(z.shape().to_vec(), data)
}

impl EpsilonModel for GaussianAnalyticModel {
    fn latent_dim(&self) -> usize {
        self.mu.len()
    }

    fn cond_dim(&self) -> Option<usize> {
        None
    }

    fn emit(&self, g: &mut Graph, z: Var, step: Timestep, _cond: &Tensor) -> Result<Var> {
        check_abar(step.alpha_bar)?;
        let (shift, gain) = self.coefficients(step.alpha_bar);
        let shift = g.constant(Tensor::vector(shift));
        let gain = g.constant(Tensor::vector(gain));
        let centered = g.sub(z, shift);
        Ok(g.mul(centered, gain))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_level_gives_zero_noise() {
        let m = GaussianAnalyticModel::new(vec![0.3, -1.0], vec![0.5, 2.0]).unwrap();
        let z = Tensor::new(vec![1, 2], vec![1.2, -0.7]).unwrap();
        assert!(analytic_epsilon(&m, &z, 1.0).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standard_normal_is_scaled_latent() {
        let m = GaussianAnalyticModel::standard(3);
        let z = Tensor::new(vec![1, 3], vec![0.5, -2.0, 1.0]).unwrap();
        let abar = 0.64;
        let eps = analytic_epsilon(&m, &z, abar).unwrap();
        for (e, x) in eps.data().iter().zip(z.data()) {
            assert!((e - 0.6 * x).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_score_identity_by_finite_differences() {
        // ε* = −√(1−ᾱ) ∇ log q_t(z), with the gradient taken numerically.
        let m = GaussianAnalyticModel::new(vec![0.4, -0.2, 1.5], vec![0.3, 1.7, 0.05]).unwrap();
        let z = vec![0.9, -1.1, 0.2];
        for &abar in &[0.99, 0.7, 0.2] {
            let eps = analytic_epsilon(&m, &Tensor::new(vec![1, 3], z.clone()).unwrap(), abar).unwrap();
            let h = 1e-5;
            for i in 0..3 {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += h;
                zm[i] -= h;
                let grad = (m.log_density(&zp, abar) - m.log_density(&zm, abar)) / (2.0 * h);
                let expected = -(1.0 - abar).sqrt() * grad;
                assert!((eps.data()[i] - expected).abs() < 1e-7, "abar {abar} dim {i}");
            }
        }
    }

    #[test]
    fn emitted_graph_matches_closed_form() {
        let m = GaussianAnalyticModel::new(vec![0.4, -0.2], vec![0.3, 1.7]).unwrap();
        let z = Tensor::new(vec![2, 2], vec![0.9, -1.1, 0.2, 0.0]).unwrap();
        let step = Timestep { t: 3, alpha_bar: 0.8 };
        let a = m.predict(&z, step, &Tensor::vector(vec![0.0])).unwrap();
        let b = analytic_epsilon(&m, &z, 0.8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(GaussianAnalyticModel::new(vec![0.0], vec![0.0]).is_err());
        assert!(GaussianAnalyticModel::new(vec![0.0, 1.0], vec![1.0]).is_err());
        let m = GaussianAnalyticModel::standard(2);
        assert!(analytic_epsilon(&m, &Tensor::zeros(vec![1, 2]), 0.0).is_err());
        assert!(analytic_epsilon(&m, &Tensor::zeros(vec![1, 3]), 0.5).is_err());
    }
}

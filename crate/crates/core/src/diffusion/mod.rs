//! Noise schedule, deterministic DDIM stepping and inversion, and
//! classifier-free guidance.

mod ddim;
mod gaussian;
mod schedule;

pub use ddim::{
    cfg_predict, ddim_invert_step, ddim_step, denoise_chain, denoise_with_eps, emit_cfg,
    emit_ddim_transfer, emit_denoise_chain, invert_chain, invert_chain_traced, Guidance,
};
pub use gaussian::{analytic_epsilon, GaussianAnalyticModel};
pub use schedule::{NoiseSchedule, ScheduleConfig, Timestep};

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// An ε-predictor that can emit its forward pass into a [`Graph`], which is
/// what makes it differentiable with respect to the latent.
pub trait EpsilonModel {
    fn latent_dim(&self) -> usize;

    /// Expected conditioning width; `None` when conditioning is ignored.
    fn cond_dim(&self) -> Option<usize>;

    /// Emit ε(z, t, cond) for a `[batch, latent_dim]` latent node.
    fn emit(&self, g: &mut Graph, z: Var, step: Timestep, cond: &Tensor) -> Result<Var>;

    /// Evaluate ε(z, t, cond) directly.
    fn predict(&self, z: &Tensor, step: Timestep, cond: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let zv = g.input(z.shape());
        let eps = self.emit(&mut g, zv, step, cond)?;
        let program = g.build(&[eps])?;
        Ok(program.eval(std::slice::from_ref(z))?.remove(0))
    }
}

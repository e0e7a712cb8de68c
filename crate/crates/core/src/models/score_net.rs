use std::sync::Arc;

use super::embedding::COND_WIDTH;
use super::layers::{affine, check_param_shapes, Linear, Parameterized};
use crate::autodiff::{Graph, Var};
use crate::diffusion::{EpsilonModel, Timestep};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const TIME_EMBED_WIDTH: usize = 32;
pub const HIDDEN_WIDTH: usize = 128;

/// Sinusoidal embedding `[sin(t f_0), …, sin(t f_15), cos(t f_0), …]` with
/// `f_i = 10000^(−i/16)`.
pub fn time_embedding(t: usize) -> Tensor {
    let half = TIME_EMBED_WIDTH / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp())
        .collect();
    let mut v: Vec<f64> = freqs.iter().map(|f| (t as f64 * f).sin()).collect();
    v.extend(freqs.iter().map(|f| (t as f64 * f).cos()));
    Tensor::vector(v)
}

/// ε-network: an MLP over `[z, time embedding, conditioning]` with two
/// SiLU hidden layers. The first layer is split by input block so the
/// time and conditioning contributions can be computed once per batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNet {
    latent_dim: usize,
    input_z: Linear,
    input_t: Arc<Tensor>,
    input_c: Arc<Tensor>,
    hidden: Linear,
    output: Linear,
}

/// Parameter nodes bound into a graph, in [`Parameterized::params`] order.
pub(crate) struct ScoreNodes {
    wz: Var,
    b1: Var,
    wt: Var,
    wc: Var,
    w2: Var,
    b2: Var,
    w3: Var,
    b3: Var,
}

impl ScoreNodes {
    pub(crate) fn from_vars(v: &[Var]) -> Self {
        Self {
            wz: v[0],
            b1: v[1],
            wt: v[2],
            wc: v[3],
            w2: v[4],
            b2: v[5],
            w3: v[6],
            b3: v[7],
        }
    }
}

impl ScoreNet {
    pub fn init(rng: &mut Rng, latent_dim: usize) -> Self {
        let fan_in = latent_dim + TIME_EMBED_WIDTH + COND_WIDTH;
        let gain = ((latent_dim) as f64 / fan_in as f64).sqrt();
        let input_z = Linear::init(rng, latent_dim, HIDDEN_WIDTH, gain);
        let t = Linear::init(
            rng,
            TIME_EMBED_WIDTH,
            HIDDEN_WIDTH,
            (TIME_EMBED_WIDTH as f64 / fan_in as f64).sqrt(),
        );
        let c = Linear::init(
            rng,
            COND_WIDTH,
            HIDDEN_WIDTH,
            (COND_WIDTH as f64 / fan_in as f64).sqrt(),
        );
        Self {
            latent_dim,
            input_z,
            input_t: t.weight,
            input_c: c.weight,
            hidden: Linear::init(rng, HIDDEN_WIDTH, HIDDEN_WIDTH, 1.0),
            output: Linear::init(rng, HIDDEN_WIDTH, latent_dim, 0.1),
        }
    }

    pub fn zeros(latent_dim: usize) -> Self {
        Self {
            latent_dim,
            input_z: Linear::zeros(latent_dim, HIDDEN_WIDTH),
            input_t: Arc::new(Tensor::zeros(vec![TIME_EMBED_WIDTH, HIDDEN_WIDTH])),
            input_c: Arc::new(Tensor::zeros(vec![COND_WIDTH, HIDDEN_WIDTH])),
            hidden: Linear::zeros(HIDDEN_WIDTH, HIDDEN_WIDTH),
            output: Linear::zeros(HIDDEN_WIDTH, latent_dim),
        }
    }

    /// Forward pass on bound parameters. `temb` and `cond` are either single
    /// `[1, k]` rows shared by the batch or per-row `[batch, k]` blocks.
    pub(crate) fn emit_with(
        &self,
        g: &mut Graph,
        p: &ScoreNodes,
        z: Var,
        temb: Var,
        cond: Var,
        shared_rows: bool,
    ) -> Var {
        let mut h = affine(g, z, p.wz, p.b1);
        for (x, w) in [(temb, p.wt), (cond, p.wc)] {
            let mut term = g.matmul(x, w);
            if shared_rows {
                term = g.reshape(term, &[HIDDEN_WIDTH]);
            }
            h = g.add(h, term);
        }
        let h = g.silu(h);
        let h = affine(g, h, p.w2, p.b2);
        let h = g.silu(h);
        affine(g, h, p.w3, p.b3)
    }

    /// ε for a single `(z, t, c)` triple evaluated directly.
    pub fn score_forward(&self, z: &Tensor, t: usize, cond: &Tensor) -> Result<Tensor> {
        self.predict(z, Timestep { t, alpha_bar: 1.0 }, cond)
    }
}

impl EpsilonModel for ScoreNet {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn cond_dim(&self) -> Option<usize> {
        Some(COND_WIDTH)
    }

    fn emit(&self, g: &mut Graph, z: Var, step: Timestep, cond: &Tensor) -> Result<Var> {
        if cond.len() != COND_WIDTH {
            return Err(Error::Shape(format!(
                "conditioning width {} but the network expects {COND_WIDTH}",
                cond.len()
            )));
        }
        let nodes = ScoreNodes::from_vars(&self.bind_constants(g));
        let temb = g.constant(time_embedding(step.t).reshape(vec![1, TIME_EMBED_WIDTH])?);
        let c = g.constant(cond.reshape(vec![1, COND_WIDTH])?);
        Ok(self.emit_with(g, &nodes, z, temb, c, true))
    }
}

impl Parameterized for ScoreNet {
    fn params(&self) -> Vec<(String, Arc<Tensor>)> {
        let [wz, b1] = self.input_z.named("score.input_z");
        let [w2, b2] = self.hidden.named("score.hidden");
        let [w3, b3] = self.output.named("score.output");
        vec![
            wz,
            b1,
            ("score.input_t.weight".into(), self.input_t.clone()),
            ("score.input_c.weight".into(), self.input_c.clone()),
            w2,
            b2,
            w3,
            b3,
        ]
    }

    fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        check_param_shapes(&self.params(), &params)?;
        let mut it = params.into_iter();
        let mut next = || it.next().unwrap();
        self.input_z.replace(next(), next());
        self.input_t = Arc::new(next());
        self.input_c = Arc::new(next());
        self.hidden.replace(next(), next());
        self.output.replace(next(), next());
        Ok(())
    }
}

//! Training loops for the codec, score network and classifiers, plus the
//! admission checks that gate attacks.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::SplitView;
use crate::diffusion::{denoise_chain, invert_chain, Guidance, NoiseSchedule};
use crate::error::{Error, Result};
use crate::models::{
    ClassifierNet, Codec, EmbeddingTable, Parameterized, ScoreNet, COND_WIDTH, NULL_INDEX, PIXELS,
    TIME_EMBED_WIDTH,
};
use crate::models::time_embedding;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Losses above this are treated as divergence.
const DIVERGENCE_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    MomentumSgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            batch_size: 64,
            epochs: 30,
            seed: 0,
            optimizer: OptimizerKind::MomentumSgd,
            momentum: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Invalid(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Loss of the first batch before any update.
    pub initial_loss: f64,
    /// Mean batch loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Loss and gradients for the leading trainable parameters of a model.
type BatchLoss<'a, M> = dyn FnMut(&M, &[usize], &mut Rng) -> Result<(f64, Vec<Tensor>)> + 'a;

/// Mini-batch descent over `n` examples. Batches follow a fresh shuffle per
/// epoch; `batch_loss` returns gradients for the first `trainable`
/// parameters, which are the only ones updated.
fn fit<M: Parameterized>(
    what: &'static str,
    model: &mut M,
    trainable: usize,
    n: usize,
    cfg: &TrainConfig,
    batch_loss: &mut BatchLoss<'_, M>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Invalid(format!("{what}: empty training set")));
    }
    let mut order_rng = rng::stream(cfg.seed, 1);
    let mut draw_rng = rng::stream(cfg.seed, 2);
    let mut velocity: Vec<Tensor> = model.params()[..trainable]
        .iter()
        .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
        .collect();
    let mu = match cfg.optimizer {
        OptimizerKind::Sgd => 0.0,
        OptimizerKind::MomentumSgd => cfg.momentum,
    };
    let mut report = TrainReport {
        initial_loss: f64::NAN,
        epoch_losses: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 0..cfg.epochs {
        let order = rng::permutation(&mut order_rng, n);
        let mut total = 0.0;
        let mut batches = 0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = batch_loss(model, batch, &mut draw_rng)?;
            if !loss.is_finite() || loss.abs() > DIVERGENCE_LIMIT || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { what, epoch, step, loss });
            }
            if report.initial_loss.is_nan() {
                report.initial_loss = loss;
            }
            total += loss;
            batches += 1;
            let mut params = model.param_values();
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grads) {
                for ((pi, vi), gi) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                    *vi = mu * *vi + gi;
                    *pi -= cfg.lr * *vi;
                }
            }
            model.set_params(params)?;
        }
        report.epoch_losses.push(total / batches as f64);
    }
    if report.initial_loss.is_nan() {
        let order: Vec<usize> = (0..n.min(cfg.batch_size)).collect();
        report.initial_loss = batch_loss(model, &order, &mut draw_rng)?.0;
    }
    Ok(report)
}

fn gather_rows(x: &Tensor, rows: &[usize]) -> Tensor {
    let w = x.len() / x.shape()[0];
    let mut data = Vec::with_capacity(rows.len() * w);
    for &r in rows {
        data.extend_from_slice(&x.data()[r * w..(r + 1) * w]);
    }
    Tensor::from_parts(vec![rows.len(), w], data)
}

fn pixel_means(x: &Tensor) -> Tensor {
    let (n, w) = (x.shape()[0], x.shape()[1]);
    let mut m = vec![0.0; w];
    for row in x.data().chunks(w) {
        m.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    Tensor::vector(m.into_iter().map(|v| v / n as f64).collect())
}

fn param_inputs<M: Parameterized>(model: &M, trainable: usize, g: &mut Graph) -> Vec<Var> {
    model
        .params()
        .into_iter()
        .enumerate()
        .map(|(i, (_, t))| if i < trainable { g.input(t.shape()) } else { g.constant(t) })
        .collect()
}

fn trainable_values<M: Parameterized>(model: &M, trainable: usize) -> Vec<Tensor> {
    model.param_values().into_iter().take(trainable).collect()
}

/// Fit the linear codec to the `[n, 768]` training images by per-pixel
/// mean-squared reconstruction error, then fit the latent standardization.
/// The identity codec is returned unchanged.
pub fn train_codec(codec: &mut Codec, train: &Tensor, cfg: &TrainConfig) -> Result<TrainReport> {
    if let Codec::Identity = codec {
        return Ok(TrainReport {
            initial_loss: 0.0,
            epoch_losses: vec![0.0; cfg.epochs],
        });
    }
    let n = train.shape()[0];
    if n == 0 {
        return Err(Error::Invalid("codec: empty training set".into()));
    }
    // zero epochs leave the codec exactly as given
    let training = cfg.epochs > 0;
    if training {
        codec.center(&pixel_means(train))?;
    }
    let trainable = crate::models::CODEC_TRAINABLE;
    let report = fit("codec", codec, trainable, n, cfg, &mut |c: &Codec, batch, _| {
        let x = gather_rows(train, batch);
        let mut g = Graph::new();
        let p = c.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let z = c.emit_encode_with(&mut g, &p, xv);
        let y = c.emit_decode_raw(&mut g, &p, z);
        let r = g.sub(y, xv);
        let sq = g.mul(r, r);
        let loss = g.mean(sq);
        let program = g.build(&[loss])?;
        program.value_and_grad(&trainable_values(c, trainable))
    })?;
    if training {
        codec.fit_standardization(train)?;
    }
    Ok(report)
}

/// Score network and conditioning table trained jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalScore {
    pub net: ScoreNet,
    pub table: EmbeddingTable,
}

impl Parameterized for ConditionalScore {
    fn params(&self) -> Vec<(String, Arc<Tensor>)> {
        let mut p = self.net.params();
        p.extend(self.table.params());
        p
    }

    fn set_params(&mut self, mut params: Vec<Tensor>) -> Result<()> {
        let split = self.net.params().len();
        if params.len() < split {
            return Err(Error::Shape(format!("expected {} parameters", split + 1)));
        }
        let table = params.split_off(split);
        self.net.set_params(params)?;
        self.table.set_params(table)
    }
}

/// Fraction of score-net batches trained with the null embedding.
pub const NULL_BATCH_RATE: f64 = 0.1;

/// Denoising score matching on standardized latents `[n, d]`:
/// minimize the mean of `(ε − ε_θ(√ᾱ_t z_0 + √(1 − ᾱ_t) ε, t, c))²` over
/// `t ∈ 1..=T`, stratified across each batch. `c` is the label-matched row (`label + 1`), or the null row
/// on a [`NULL_BATCH_RATE`] share of batches.
pub fn train_score_net(
    model: &mut ConditionalScore,
    latents: &Tensor,
    labels: &[usize],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let (n, d) = (latents.shape()[0], latents.shape()[1]);
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} latents", labels.len())));
    }
    let trainable = model.params().len();
    fit("score network", model, trainable, n, cfg, &mut |m: &ConditionalScore, batch, r| {
        let b = batch.len();
        let null = r.random::<f64>() < NULL_BATCH_RATE;
        let mut zt = Vec::with_capacity(b * d);
        let mut target = Vec::with_capacity(b * d);
        let mut temb = Vec::with_capacity(b * TIME_EMBED_WIDTH);
        let mut rows = Vec::with_capacity(b * COND_WIDTH);
        let steps = schedule.train_steps();
        for (j, &i) in batch.iter().enumerate() {
            // stratified: position j draws from the j-th slice of 1..=T
            let u = (j as f64 + r.random::<f64>()) / b as f64;
            let t = 1 + ((u * steps as f64) as usize).min(steps - 1);
            let abar = schedule.alpha_bar(t);
            let eps = rng::normals(r, d);
            let z0 = &latents.data()[i * d..(i + 1) * d];
            zt.extend(z0.iter().zip(&eps).map(|(z, e)| abar.sqrt() * z + (1.0 - abar).sqrt() * e));
            target.extend(eps);
            temb.extend_from_slice(time_embedding(t).data());
            let row = if null { NULL_INDEX } else { labels[i] + 1 };
            rows.extend((0..COND_WIDTH).map(|k| row * COND_WIDTH + k));
        }
        let mut g = Graph::new();
        let p = param_inputs(m, trainable, &mut g);
        let z = g.constant(Tensor::from_parts(vec![b, d], zt));
        let te = g.constant(Tensor::from_parts(vec![b, TIME_EMBED_WIDTH], temb));
        let table = *p.last().unwrap();
        let cond = g.gather(table, rows.into(), &[b, COND_WIDTH]);
        let nodes = crate::models::ScoreNodes::from_vars(&p);
        let pred = m.net.emit_with(&mut g, &nodes, z, te, cond, false);
        let tv = g.constant(Tensor::from_parts(vec![b, d], target));
        let r = g.sub(pred, tv);
        let sq = g.mul(r, r);
        let loss = g.mean(sq);
        let program = g.build(&[loss])?;
        program.value_and_grad(&m.param_values())
    })
}

/// Cross-entropy training of a detector on `[n, 768]` images.
pub fn train_classifier(
    net: &mut ClassifierNet,
    images: &Tensor,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let n = images.shape()[0];
    if labels.len() != n || images.shape()[1] != PIXELS {
        return Err(Error::Shape(format!(
            "classifier data {:?} with {} labels",
            images.shape(),
            labels.len()
        )));
    }
    let trainable = net.params().len();
    fit("classifier", net, trainable, n, cfg, &mut |c: &ClassifierNet, batch, _| {
        let x = gather_rows(images, batch);
        let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
        let mut g = Graph::new();
        let p = param_inputs(c, trainable, &mut g);
        let xv = g.constant(x);
        let logits = ClassifierNet::emit_with(&mut g, &p, xv);
        let loss = g.softmax_cross_entropy(logits, &y);
        let program = g.build(&[loss])?;
        program.value_and_grad(&c.param_values())
    })
}

/// Fraction of correctly labelled images.
pub fn accuracy(net: &ClassifierNet, view: &SplitView) -> Result<f64> {
    if view.is_empty() {
        return Err(Error::Invalid("accuracy over an empty split".into()));
    }
    let pred = net.predict_labels(&view.images)?;
    let hits = pred.iter().zip(&view.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / view.len() as f64)
}

/// Mean per-pixel squared error of `decode(encode(x))`.
pub fn codec_mse(codec: &Codec, images: &Tensor) -> Result<f64> {
    let recon = codec.decode(&codec.encode(images)?)?;
    Ok(recon.data().iter().zip(images.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        / images.len() as f64)
}

/// Largest pixel deviation between `decode(z_0)` and the decoded full
/// invert-then-denoise round trip through every DDIM step, with the
/// label-matched conditioning at guidance `w`.
pub fn reconstruction_linf(
    codec: &Codec,
    score: &ConditionalScore,
    schedule: &NoiseSchedule,
    view: &SplitView,
    w: f64,
) -> Result<f64> {
    let null = score.table.null();
    let mut worst = 0.0f64;
    for label in [0, 1] {
        let rows: Vec<usize> = (0..view.len()).filter(|&k| view.labels[k] == label).collect();
        if rows.is_empty() {
            continue;
        }
        let x = gather_rows(&view.images, &rows);
        let z0 = codec.encode(&x)?;
        let cond = score.table.for_label(label)?;
        let guidance = Guidance::new(&cond, &null, w);
        let steps = schedule.ddim_steps();
        let zt = invert_chain(&score.net, schedule, &z0, steps, &guidance)?.pop().unwrap();
        let back = denoise_chain(&score.net, schedule, &zt, steps, &guidance)?;
        let a = codec.decode(&z0)?;
        let b = codec.decode(&back)?;
        worst = worst.max(a.sub(&b)?.abs_max());
    }
    Ok(worst)
}

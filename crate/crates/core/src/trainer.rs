//! Adam with a triangular cyclic learning rate, and the walk-sampling
//! training loop.

use std::collections::VecDeque;

use rand::Rng;
use rayon::prelude::*;

use crate::dataset::PreparedShape;
use crate::error::{Error, Result};
use crate::neural::{self, ModelConfig, ModelParams};
use crate::rng::{self, Domain};
use crate::walker::{self, WalkSetup};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_min: f64,
    pub lr_max: f64,
    pub cycle_iters: usize,
    pub total_iters: usize,
    /// Walks per optimizer step.
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Emit a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_min: 1e-6,
            lr_max: 5e-4,
            cycle_iters: 20_000,
            total_iters: 100_000,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return bad(format!("need 0 <= lr_min <= lr_max, got {} / {}", self.lr_min, self.lr_max));
        }
        if self.cycle_iters == 0 {
            return bad("cycle_iters must be > 0".into());
        }
        if self.total_iters == 0 {
            return bad("total_iters must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("adam betas must lie in [0, 1) and eps be positive".into());
        }
        Ok(())
    }
}

/// Triangular schedule: `lr_min` at the start of every cycle, rising linearly
/// to `lr_max` at mid-cycle and falling back linearly.
pub fn cyclic_lr(iter: usize, cfg: &TrainConfig) -> f64 {
    let half = cfg.cycle_iters as f64 / 2.0;
    let pos = (iter % cfg.cycle_iters) as f64;
    let x = pos / half;
    // tri is exactly 0 at cycle start and exactly 1 at mid-cycle
    let tri = if x <= 1.0 { x } else { 2.0 - x };
    cfg.lr_min * (1.0 - tri) + cfg.lr_max * tri
}

/// Adam moment buffers, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        OptimizerState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of every trainable tensor.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.config != grads.config || params.config != state.m.config {
        return Err(Error::ShapeMismatch("adam: parameter/gradient configs differ".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let mut ms = state.m.tensors_mut();
    let mut vs = state.v.tensors_mut();
    let trainable: Vec<bool> = (0..ms.len()).map(|i| params.is_trainable(i)).collect();
    for (i, (theta, g)) in params.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
        if !trainable[i] {
            continue;
        }
        let (m, v) = (ms[i].data_mut(), vs[i].data_mut());
        for (j, th) in theta.data_mut().iter_mut().enumerate() {
            let gj = g.data()[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *th -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub lr: f64,
    /// Mean batch loss.
    pub loss: f64,
    /// Walk accuracy over the last [`ACC_WINDOW`] iterations.
    pub acc: f64,
}

pub const ACC_WINDOW: usize = 100;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub state: OptimizerState,
    pub log: Vec<LogRow>,
}

/// Loss and gradient of one batch of `(shape index, walk ordinal)` pairs,
/// averaged. Per-walk gradients are reduced in slot order, so the result does
/// not depend on how many threads computed them.
pub fn batch_gradient(
    params: &ModelParams,
    shapes: &[PreparedShape],
    setup: &WalkSetup,
    picks: &[(usize, u64)],
    walk_seed: u64,
) -> Result<(f64, usize, ModelParams)> {
    let per_walk: Vec<Result<(f64, bool, ModelParams)>> = picks
        .par_iter()
        .map(|&(si, ordinal)| {
            let shape = &shapes[si];
            let wp = setup.params_for(shape.cloud.len(), walk_seed);
            let mut rng = rng::stream(walk_seed, Domain::TrainWalk, ordinal);
            let walk = walker::generate_walk(&shape.cloud, &shape.tree, &wp, &mut rng)?;
            let bbox = params.config.use_bbox.then_some(shape.scale.bbox_diagonal);
            let fwd = neural::forward(params, &walk.coords(&shape.cloud), bbox)?;
            let correct = argmax(&fwd.probs) == shape.label;
            let (loss, grad) = neural::backward(params, &fwd, shape.label)?;
            Ok((loss, correct, grad))
        })
        .collect();

    let mut total = params.zeros_like();
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for r in per_walk {
        let (loss, ok, grad) = r?;
        loss_sum += loss;
        correct += usize::from(ok);
        total.add_assign(&grad);
    }
    let inv = 1.0 / picks.len() as f64;
    total.scale(inv);
    Ok((loss_sum * inv, correct, total))
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn check_shapes(shapes: &[PreparedShape], setup: &WalkSetup, classes: usize) -> Result<()> {
    if shapes.is_empty() {
        return Err(Error::EmptyInput("training dataset"));
    }
    for s in shapes {
        let n = s.cloud.len();
        let l = setup.length.resolve(n);
        if l > n {
            return Err(Error::WalkTooLong {
                cloud_id: s.id().to_string(),
                length: l,
                points: n,
            });
        }
        if l > 1 && setup.k + 1 > n {
            return Err(Error::InvalidParam(format!(
                "cloud `{}`: k = {} needs more than {n} points",
                s.id(),
                setup.k
            )));
        }
        if s.label >= classes {
            return Err(Error::ClassOutOfRange {
                index: s.label,
                classes,
            });
        }
    }
    Ok(())
}

/// Trains from a fresh Glorot initialization.
pub fn train(
    shapes: &[PreparedShape],
    model: &ModelConfig,
    setup: &WalkSetup,
    cfg: &TrainConfig,
    on_checkpoint: impl FnMut(usize, &ModelParams) -> Result<()>,
) -> Result<TrainOutcome> {
    let params = ModelParams::init(model, cfg.seed)?;
    train_from(params, shapes, setup, cfg, on_checkpoint)
}

/// Trains starting from `params`. Every iteration draws `batch_size` shapes
/// uniformly with replacement, one fresh walk each.
pub fn train_from(
    mut params: ModelParams,
    shapes: &[PreparedShape],
    setup: &WalkSetup,
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &ModelParams) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    setup.validate()?;
    check_shapes(shapes, setup, params.config.classes)?;

    let mut state = OptimizerState::new(&params);
    let mut log = Vec::with_capacity(cfg.total_iters);
    let mut window: VecDeque<usize> = VecDeque::with_capacity(ACC_WINDOW);
    let mut window_correct = 0;
    let batch = cfg.batch_size;

    for iter in 0..cfg.total_iters {
        let lr = cyclic_lr(iter, cfg);
        let mut picker = rng::stream(cfg.seed, Domain::Batch, iter as u64);
        let picks: Vec<(usize, u64)> = (0..batch)
            .map(|slot| (picker.gen_range(0..shapes.len()), (iter * batch + slot) as u64))
            .collect();
        let (loss, correct, grads) = batch_gradient(&params, shapes, setup, &picks, cfg.seed)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss {loss} at iteration {iter}")));
        }
        adam_step(&mut params, &grads, &mut state, lr, cfg)?;

        if window.len() == ACC_WINDOW {
            window_correct -= window.pop_front().unwrap();
        }
        window.push_back(correct);
        window_correct += correct;
        log.push(LogRow {
            iter,
            lr,
            loss,
            acc: window_correct as f64 / (window.len() * batch) as f64,
        });

        if cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 {
            on_checkpoint(iter + 1, &params)?;
        }
    }
    Ok(TrainOutcome { params, state, log })
}

/// Writes the training log as CSV `iter,lr,loss,acc`.
pub fn write_log<W: std::io::Write>(mut out: W, log: &[LogRow]) -> std::io::Result<()> {
    writeln!(out, "iter,lr,loss,acc")?;
    for row in log {
        writeln!(out, "{},{},{},{}", row.iter, row.lr, row.loss, row.acc)?;
    }
    Ok(())
}

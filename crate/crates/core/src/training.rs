//! Mini-batch training: rmsprop until the smoothed loss stops improving,
//! then plain SGD.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::derive_seed;
use crate::error::{Error, Result};
use crate::model::{parameter_group, ClipGradients, PreparedClip, ReharModel};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub lambda_weight: f64,
    pub rmsprop_lr: f64,
    pub sgd_lr: f64,
    pub fuzz: f64,
    pub decay_rho: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub switch_patience: usize,
    /// Relative improvement of the smoothed epoch loss below which an epoch
    /// counts towards the switch.
    pub switch_threshold: f64,
    /// Weight of the previous value in the loss moving average.
    pub ema_beta: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda_weight: crate::loss::DEFAULT_LAMBDA,
            rmsprop_lr: 1e-3,
            sgd_lr: 1e-4,
            fuzz: 1e-8,
            decay_rho: 0.9,
            batch_size: 8,
            max_epochs: 12,
            switch_patience: 3,
            switch_threshold: 0.01,
            ema_beta: 0.7,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rmsprop_lr", self.rmsprop_lr),
            ("sgd_lr", self.sgd_lr),
            ("fuzz", self.fuzz),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda_weight >= 0.0 && self.lambda_weight.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_weight must be ≥ 0, got {}",
                self.lambda_weight
            )));
        }
        for (name, v) in [("decay_rho", self.decay_rho), ("ema_beta", self.ema_beta)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.switch_patience == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs and switch_patience must be ≥ 1".into(),
            ));
        }
        if !(self.switch_threshold >= 0.0) {
            return Err(Error::Config("switch_threshold must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Rmsprop,
    Sgd,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Rmsprop => "rmsprop",
            Phase::Sgd => "sgd",
        })
    }
}

fn check_shapes<T: Scalar>(param: &Tensor<T>, grad: &Tensor<T>) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::Shape(format!(
            "gradient shape {:?} does not match parameter shape {:?}",
            grad.shape(),
            param.shape()
        )));
    }
    Ok(())
}

/// `acc ← ρ·acc + (1−ρ)·g²`, `w ← w − lr·g / (√acc + fuzz)`.
pub fn rmsprop_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    accumulator: &mut Tensor<T>,
    learning_rate: T,
    decay_rho: T,
    fuzz: T,
) -> Result<()> {
    check_shapes(param, grad)?;
    check_shapes(accumulator, grad)?;
    let keep = T::one() - decay_rho;
    for ((w, &g), a) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(accumulator.data_mut())
    {
        *a = decay_rho * *a + keep * g * g;
        *w -= learning_rate * g / (a.sqrt() + fuzz);
    }
    Ok(())
}

/// `w ← w − lr·g`.
pub fn sgd_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    learning_rate: T,
) -> Result<()> {
    check_shapes(param, grad)?;
    for (w, &g) in param.data_mut().iter_mut().zip(grad.data()) {
        *w -= learning_rate * g;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub phase: Phase,
    pub learning_rate: T,
    pub fuzz: T,
    pub decay_rho: T,
    /// Squared-gradient averages, one per parameter; empty for SGD.
    pub accumulators: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn rmsprop(learning_rate: T, decay_rho: T, fuzz: T, shapes: &[&[usize]]) -> Self {
        Self {
            phase: Phase::Rmsprop,
            learning_rate,
            fuzz,
            decay_rho,
            accumulators: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn sgd(learning_rate: T) -> Self {
        Self {
            phase: Phase::Sgd,
            learning_rate,
            fuzz: T::zero(),
            decay_rho: T::zero(),
            accumulators: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        match self.phase {
            Phase::Rmsprop => {
                if self.accumulators.len() != params.len() {
                    return Err(Error::Shape(
                        "accumulator count differs from parameter count".into(),
                    ));
                }
                for ((p, g), acc) in params.into_iter().zip(grads).zip(&mut self.accumulators) {
                    rmsprop_step(p, g, acc, self.learning_rate, self.decay_rho, self.fuzz)?;
                }
            }
            Phase::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    sgd_step(p, g, self.learning_rate)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// Means over the epoch's clips.
    pub total_loss: f64,
    pub loss1_sum: f64,
    pub loss2: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub const HEADER: &'static str = "epoch\tphase\ttotal_loss\tloss1_sum\tloss2\taccuracy";

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.epoch, r.phase, r.total_loss, r.loss1_sum, r.loss2, r.accuracy
            ));
        }
        out
    }

    /// Epoch (1-based) of the first SGD epoch, if any.
    pub fn switch_epoch(&self) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.phase == Phase::Sgd)
            .map(|r| r.epoch)
    }
}

/// Decides when rmsprop has converged: tracks an exponential moving average
/// of the epoch loss and counts consecutive epochs whose relative
/// improvement falls below the threshold.
#[derive(Clone, Debug)]
pub struct SwitchMonitor {
    beta: f64,
    threshold: f64,
    patience: usize,
    ema: Option<f64>,
    stalled: usize,
}

impl SwitchMonitor {
    pub fn new(beta: f64, threshold: f64, patience: usize) -> Self {
        Self {
            beta,
            threshold,
            patience,
            ema: None,
            stalled: 0,
        }
    }

    /// Feeds one epoch loss; returns true once the switch should happen.
    pub fn observe(&mut self, loss: f64) -> bool {
        match self.ema {
            None => self.ema = Some(loss),
            Some(prev) => {
                let ema = self.beta * prev + (1.0 - self.beta) * loss;
                let improvement = (prev - ema) / prev.abs().max(f64::MIN_POSITIVE);
                if improvement < self.threshold {
                    self.stalled += 1;
                } else {
                    self.stalled = 0;
                }
                self.ema = Some(ema);
            }
        }
        self.stalled >= self.patience
    }
}

fn clip_gradients<T: Scalar>(
    model: &ReharModel<T>,
    clips: &[&PreparedClip<T>],
    lambda: T,
    pool: Option<&rayon::ThreadPool>,
) -> Result<Vec<ClipGradients<T>>> {
    let run = |c: &&PreparedClip<T>| model.loss_and_gradients(&c.pairs, c.label, lambda);
    match pool {
        Some(pool) => pool.install(|| clips.par_iter().map(run).collect()),
        None => clips.iter().map(run).collect(),
    }
}

/// Trains `model` in place. `threads > 1` evaluates the clips of a batch
/// concurrently; their gradients are still summed in clip order, so the
/// result does not depend on the thread count.
pub fn train<T: Scalar>(
    model: &mut ReharModel<T>,
    clips: &[PreparedClip<T>],
    config: &TrainingConfig,
    threads: usize,
) -> Result<TrainingHistory> {
    train_with(model, clips, config, threads, |_, _| {})
}

/// [`train`] with a callback receiving each epoch's record and the model
/// as it stands after that epoch.
pub fn train_with<T: Scalar>(
    model: &mut ReharModel<T>,
    clips: &[PreparedClip<T>],
    config: &TrainingConfig,
    threads: usize,
    mut on_epoch: impl FnMut(&EpochRecord, &ReharModel<T>),
) -> Result<TrainingHistory> {
    config.validate()?;
    if clips.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let pool = if threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    let lambda = T::from_f64_lossy(config.lambda_weight);
    let names: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
    let shapes: Vec<Vec<usize>> = model
        .parameters()
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
    let mut optimizer = OptimizerState::rmsprop(
        T::from_f64_lossy(config.rmsprop_lr),
        T::from_f64_lossy(config.decay_rho),
        T::from_f64_lossy(config.fuzz),
        &shape_refs,
    );
    let mut monitor = SwitchMonitor::new(
        config.ema_beta,
        config.switch_threshold,
        config.switch_patience,
    );
    let mut history = TrainingHistory::default();

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..clips.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            config.seed,
            &[epoch as u64],
        )));

        let (mut total, mut loss1, mut loss2, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let members: Vec<&PreparedClip<T>> = batch.iter().map(|&i| &clips[i]).collect();
            let results = clip_gradients(model, &members, lambda, pool.as_ref())?;

            let mut grads: Vec<Tensor<T>> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
            for (r, clip) in results.iter().zip(&members) {
                for (acc, g) in grads.iter_mut().zip(&r.gradients) {
                    for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += v;
                    }
                }
                let b = &r.breakdown;
                total += b.total.to_f64_lossy();
                loss1 += b.frame_losses.iter().map(|l| l.to_f64_lossy()).sum::<f64>();
                loss2 += b.final_loss.to_f64_lossy();
                correct += usize::from(r.probs.argmax() == clip.label);
            }
            let scale = T::one() / T::from_usize(members.len()).unwrap();
            for g in &mut grads {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    group: parameter_group(&names[i]).to_string(),
                    epoch,
                });
            }
            if !total.is_finite() {
                return Err(Error::NonFinite(format!("training loss in epoch {epoch}")));
            }
            let params = model.parameters_mut().into_iter().map(|(_, p)| p).collect();
            optimizer.step(params, &grads)?;
        }

        let n = clips.len() as f64;
        let record = EpochRecord {
            epoch,
            phase: optimizer.phase,
            total_loss: total / n,
            loss1_sum: loss1 / n,
            loss2: loss2 / n,
            accuracy: correct as f64 / n,
        };
        on_epoch(&record, model);
        history.records.push(record);

        if optimizer.phase == Phase::Rmsprop && monitor.observe(total / n) {
            optimizer = OptimizerState::sgd(T::from_f64_lossy(config.sgd_lr));
        }
    }
    Ok(history)
}

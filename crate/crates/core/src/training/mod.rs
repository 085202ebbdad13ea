//! Staged multi-fidelity training with layer freezing.
//!
//! The first stage trains the whole network on low-fidelity data. Each later
//! stage freezes a block of layers and retrains the rest on higher-fidelity
//! data with a fresh optimizer state.

mod optim;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bayesnet::{loss_elbo_draws, Batch, BayesianNetwork};
use crate::data::{Fidelity, NormalizedSet};
use crate::error::{ensure, Error, Result};
use crate::inference::mc_predict_batch;
use crate::num::Real;

pub use optim::{optimizer_step, AdamState, Moments, BETA1, BETA2, EPSILON};

pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_VALIDATION_SAMPLES: usize = 50;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezeDirection {
    /// Freeze the last layers (closest to the output).
    #[default]
    FromOutput,
    FromInput,
}

/// Marks exactly `n_freeze` layers as frozen, counted from the chosen end,
/// and clears every other flag. Zero unfreezes everything.
pub fn freeze_layers<T: Real>(
    net: &mut BayesianNetwork<T>,
    n_freeze: usize,
    direction: FreezeDirection,
) -> Result<()> {
    let n = net.n_layers();
    ensure(n_freeze < n, || format!("cannot freeze {n_freeze} of {n} layers; at least one must stay trainable"))?;
    for (i, layer) in net.layers.iter_mut().enumerate() {
        layer.frozen = match direction {
            FreezeDirection::FromOutput => i >= n - n_freeze,
            FreezeDirection::FromInput => i < n_freeze,
        };
    }
    Ok(())
}

/// Hyperparameters of one training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub fidelity: Fidelity,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Layers frozen before this stage. Ignored on the low-fidelity stage.
    pub n_freeze: usize,
    #[serde(default)]
    pub freeze_direction: FreezeDirection,
    /// KL multiplier; `None` selects the default scaling (see [`default_kl_weight`]).
    #[serde(default)]
    pub kl_weight: Option<f64>,
    /// Weight draws per loss evaluation.
    #[serde(default = "one")]
    pub draws: usize,
    /// Monte Carlo samples for the validation MAE.
    #[serde(default = "default_validation_samples")]
    pub validation_samples: usize,
}

fn one() -> usize {
    1
}

fn default_validation_samples() -> usize {
    DEFAULT_VALIDATION_SAMPLES
}

impl StageConfig {
    pub fn new(fidelity: Fidelity, learning_rate: f64, epochs: usize, n_freeze: usize) -> Self {
        Self {
            fidelity,
            learning_rate,
            epochs,
            batch_size: DEFAULT_BATCH_SIZE,
            n_freeze,
            freeze_direction: FreezeDirection::FromOutput,
            kl_weight: None,
            draws: 1,
            validation_samples: DEFAULT_VALIDATION_SAMPLES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.learning_rate > 0.0 && self.learning_rate.is_finite(), || {
            format!("{} stage: learning rate must be positive, got {}", self.fidelity, self.learning_rate)
        })?;
        ensure(self.batch_size > 0, || format!("{} stage: batch size must be positive", self.fidelity))?;
        ensure(self.draws > 0, || format!("{} stage: need at least one weight draw", self.fidelity))?;
        ensure(self.validation_samples >= 2, || {
            format!("{} stage: need at least 2 validation samples", self.fidelity)
        })?;
        if let Some(w) = self.kl_weight {
            ensure(w >= 0.0 && w.is_finite(), || format!("{} stage: kl_weight must be >= 0", self.fidelity))?;
        }
        Ok(())
    }
}

/// KL multiplier used when a stage leaves `kl_weight` unset: `1 / n_train`.
pub fn default_kl_weight(n_train: usize) -> f64 {
    1.0 / n_train.max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub fidelity: Fidelity,
    /// Mean minibatch loss per epoch.
    pub losses: Vec<f64>,
    /// Mean absolute error of the MC mean on the validation set, normalized units.
    pub validation_mae: f64,
    pub kl_weight: f64,
    pub wall_time_secs: f64,
}

fn check_same_normalizer<T>(a: &NormalizedSet<T>, b: &NormalizedSet<T>) -> Result<()> {
    ensure(a.normalizer == b.normalizer, || {
        format!("{} training and validation data were normalized differently", a.fidelity)
    })
}

/// MAE between MC mean predictions and targets, averaged over all outputs.
pub fn validation_mae<T: Real, R: Rng + ?Sized>(
    net: &BayesianNetwork<T>,
    set: &NormalizedSet<T>,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Empty(format!("{} validation set", set.fidelity)));
    }
    let preds = mc_predict_batch(net, &set.inputs, n_samples, rng)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, y) in preds.iter().zip(&set.targets) {
        for (m, t) in p.mean.iter().zip(y) {
            sum += (*m - *t).abs().to_f64_lossy();
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Runs one stage: sets the freeze flags, then `epochs` passes of shuffled
/// minibatch ELBO descent.
pub fn train_stage<T: Real, R: Rng + ?Sized>(
    net: &mut BayesianNetwork<T>,
    dataset: &NormalizedSet<T>,
    cfg: &StageConfig,
    validation: &NormalizedSet<T>,
    rng: &mut R,
) -> Result<TrainReport> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty(format!("{} training set", dataset.fidelity)));
    }
    check_same_normalizer(dataset, validation)?;
    if dataset.normalizer.input_dim() != net.input_dim() {
        return Err(Error::Dimension { context: "stage inputs", expected: net.input_dim(), got: dataset.normalizer.input_dim() });
    }
    if dataset.normalizer.output_dim() != net.output_dim() {
        return Err(Error::Dimension { context: "stage targets", expected: net.output_dim(), got: dataset.normalizer.output_dim() });
    }

    let started = Instant::now();
    if cfg.fidelity == Fidelity::Low {
        freeze_layers(net, 0, cfg.freeze_direction)?;
    } else {
        freeze_layers(net, cfg.n_freeze, cfg.freeze_direction)?;
    }

    let kl_weight = cfg.kl_weight.unwrap_or_else(|| default_kl_weight(dataset.len()));
    let kl_t = T::lit(kl_weight);
    let lr = T::lit(cfg.learning_rate);
    let mut state = AdamState::new(net);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut xs: Vec<Vec<T>> = Vec::with_capacity(cfg.batch_size);
    let mut ys: Vec<Vec<T>> = Vec::with_capacity(cfg.batch_size);
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            xs.clear();
            ys.clear();
            xs.extend(chunk.iter().map(|&i| dataset.inputs[i].clone()));
            ys.extend(chunk.iter().map(|&i| dataset.targets[i].clone()));
            let (loss, grad) = loss_elbo_draws(net, Batch::new(&xs, &ys), kl_t, cfg.draws, rng)?;
            let value = loss.total.to_f64_lossy();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("{} stage loss at epoch {epoch}", cfg.fidelity)));
            }
            optimizer_step(net, &grad, &mut state, lr)?;
            total += value;
            batches += 1;
        }
        losses.push(total / batches as f64);
    }

    let validation_mae = validation_mae(net, validation, cfg.validation_samples, rng)?;
    Ok(TrainReport {
        fidelity: cfg.fidelity,
        losses,
        validation_mae,
        kl_weight,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// Training and validation data for one pipeline stage.
#[derive(Clone, Debug)]
pub struct StagePlan<T> {
    pub config: StageConfig,
    pub train: NormalizedSet<T>,
    pub validation: NormalizedSet<T>,
}

/// Checks stage order (low, mid, high) and that the high stage freezes
/// strictly fewer layers than the mid stage.
pub fn validate_pipeline(configs: &[&StageConfig], n_layers: usize) -> Result<()> {
    let tags: Vec<Fidelity> = configs.iter().map(|c| c.fidelity).collect();
    if tags != Fidelity::ALL {
        return Err(Error::Precondition(format!(
            "pipeline needs exactly one low, mid and high stage in that order, got {tags:?}"
        )));
    }
    let (mid, high) = (configs[1], configs[2]);
    ensure(high.n_freeze < mid.n_freeze, || {
        format!(
            "high-fidelity stage must freeze fewer layers than the mid stage ({} >= {})",
            high.n_freeze, mid.n_freeze
        )
    })?;
    ensure(mid.n_freeze < n_layers, || {
        format!("mid stage freezes {} of {n_layers} layers", mid.n_freeze)
    })?;
    for c in configs {
        c.validate()?;
    }
    Ok(())
}

pub fn run_pipeline<T: Real, R: Rng + ?Sized>(
    net: &mut BayesianNetwork<T>,
    stages: &[StagePlan<T>],
    rng: &mut R,
) -> Result<Vec<TrainReport>> {
    run_pipeline_with(net, stages, rng, |_, _| Ok(()))
}

/// Like [`run_pipeline`], calling `after_stage` with each report and the
/// network as it stands at the end of that stage.
pub fn run_pipeline_with<T, R, F>(
    net: &mut BayesianNetwork<T>,
    stages: &[StagePlan<T>],
    rng: &mut R,
    mut after_stage: F,
) -> Result<Vec<TrainReport>>
where
    T: Real,
    R: Rng + ?Sized,
    F: FnMut(&TrainReport, &BayesianNetwork<T>) -> Result<()>,
{
    let configs: Vec<&StageConfig> = stages.iter().map(|s| &s.config).collect();
    validate_pipeline(&configs, net.n_layers())?;
    for plan in stages {
        ensure(plan.train.fidelity == plan.config.fidelity, || {
            format!("{} stage was given {} data", plan.config.fidelity, plan.train.fidelity)
        })?;
    }
    check_same_normalizer(&stages[0].train, &stages[1].train)?;
    check_same_normalizer(&stages[0].train, &stages[2].train)?;

    let mut reports = Vec::with_capacity(stages.len());
    for plan in stages {
        let report = train_stage(net, &plan.train, &plan.config, &plan.validation, rng)?;
        after_stage(&report, net)?;
        reports.push(report);
    }
    Ok(reports)
}

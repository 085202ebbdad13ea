//! Run configuration, read from a TOML file. Every key has a default, unknown
//! keys are rejected and the whole tree is validated before any compute.

use std::path::{Path, PathBuf};

use mfbaynet_core::bayesnet::{ActivationKind, GaussianPrior, NetworkSpec};
use mfbaynet_core::data::{BenchmarkSizes, Fidelity};
use mfbaynet_core::hyperopt::{HyperPoint, TunerConfig, DEFAULT_CANDIDATES, DEFAULT_INITIAL_TRIALS};
use mfbaynet_core::inference::DEFAULT_MC_SAMPLES;
use mfbaynet_core::kriging::SearchBudget;
use mfbaynet_core::training::{FreezeDirection, StageConfig, DEFAULT_BATCH_SIZE, DEFAULT_VALIDATION_SAMPLES};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Weight draws per Monte Carlo prediction.
    pub mc_samples: usize,
    pub data: DataConfig,
    pub network: NetworkConfig,
    pub stages: StagesConfig,
    pub cokriging: CoKrigingConfig,
    pub tuner: TunerSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            mc_samples: DEFAULT_MC_SAMPLES,
            data: DataConfig::default(),
            network: NetworkConfig::default(),
            stages: StagesConfig::default(),
            cokriging: CoKrigingConfig::default(),
            tuner: TunerSettings::default(),
        }
    }
}

/// Where the datasets come from. Without `dir` the synthetic transonic
/// benchmark is generated from the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding `low.csv`, `mid.csv` and `high.csv`, as written by `gen-data`.
    pub dir: Option<PathBuf>,
    pub low_aoa: usize,
    pub low_mach: usize,
    pub mid: usize,
    pub high_total: usize,
    /// Leading rows of `high.csv` used for training; the rest form the test set.
    pub high_train: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = BenchmarkSizes::default();
        Self {
            dir: None,
            low_aoa: s.low_aoa,
            low_mach: s.low_mach,
            mid: s.mid,
            high_total: s.high_total,
            high_train: s.high_train,
        }
    }
}

impl DataConfig {
    pub fn sizes(&self) -> BenchmarkSizes {
        BenchmarkSizes {
            low_aoa: self.low_aoa,
            low_mach: self.low_mach,
            mid: self.mid,
            high_total: self.high_total,
            high_train: self.high_train,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub n_layers: usize,
    pub n_units: usize,
    pub activation: ActivationKind,
    pub mu_prior: f64,
    pub sigma_prior: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { n_layers: 4, n_units: 64, activation: ActivationKind::LeakyRelu, mu_prior: 0.0, sigma_prior: 0.001 }
    }
}

impl NetworkConfig {
    pub fn spec(&self, seed: u64) -> NetworkSpec<f64> {
        let prior = GaussianPrior { mu: self.mu_prior, sigma: self.sigma_prior };
        NetworkSpec::uniform(2, 2, self.n_layers, self.n_units, self.activation, prior, seed)
    }
}

/// Settings of one training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Layers frozen before the stage; must be 0 on the low stage.
    #[serde(default)]
    pub n_freeze: usize,
    /// Share of the stage's data held out for validation. Zero validates on
    /// the training data.
    #[serde(default)]
    pub validation_fraction: f64,
    /// KL multiplier; omitted means `1 / n_train`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_weight: Option<f64>,
    #[serde(default = "one")]
    pub draws: usize,
}

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}

fn one() -> usize {
    1
}

impl StageSettings {
    fn new(learning_rate: f64, epochs: usize, n_freeze: usize, validation_fraction: f64) -> Self {
        Self {
            learning_rate,
            epochs,
            batch_size: DEFAULT_BATCH_SIZE,
            n_freeze,
            validation_fraction,
            kl_weight: Some(DEFAULT_KL_WEIGHT),
            draws: 1,
        }
    }
}

/// KL multiplier of the shipped defaults. See the README for why it is not `1 / N`.
pub const DEFAULT_KL_WEIGHT: f64 = 0.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StagesConfig {
    pub freeze_direction: FreezeDirection,
    pub low: StageSettings,
    pub mid: StageSettings,
    pub high: StageSettings,
}

impl Default for StagesConfig {
    fn default() -> Self {
        Self {
            freeze_direction: FreezeDirection::FromOutput,
            low: StageSettings::new(0.005, 2000, 0, 0.2),
            mid: StageSettings::new(0.005, 2000, 1, 0.2),
            high: StageSettings::new(0.001, 1000, 0, 0.0),
        }
    }
}

impl StagesConfig {
    pub fn get(&self, f: Fidelity) -> &StageSettings {
        match f {
            Fidelity::Low => &self.low,
            Fidelity::Mid => &self.mid,
            Fidelity::High => &self.high,
        }
    }

    pub fn stage_config(&self, f: Fidelity) -> StageConfig {
        let s = self.get(f);
        StageConfig {
            fidelity: f,
            learning_rate: s.learning_rate,
            epochs: s.epochs,
            batch_size: s.batch_size,
            n_freeze: if f == Fidelity::Low { 0 } else { s.n_freeze },
            freeze_direction: self.freeze_direction,
            kl_weight: s.kl_weight,
            draws: s.draws,
            validation_samples: DEFAULT_VALIDATION_SAMPLES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoKrigingConfig {
    pub starts: usize,
    pub max_iters: u64,
    pub max_fit_points: usize,
    pub nugget: f64,
}

impl Default for CoKrigingConfig {
    fn default() -> Self {
        let b = SearchBudget::default();
        Self { starts: b.starts, max_iters: b.max_iters, max_fit_points: b.max_fit_points, nugget: b.nugget }
    }
}

impl CoKrigingConfig {
    pub fn budget(&self, seed: u64, threads: usize) -> SearchBudget {
        SearchBudget {
            starts: self.starts,
            max_iters: self.max_iters,
            max_fit_points: self.max_fit_points,
            nugget: self.nugget,
            seed,
            threads,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunerSettings {
    pub n_trials: usize,
    pub n_initial: usize,
    pub n_candidates: usize,
    /// Epochs per stage during tuning trials, as a fraction of the stage settings.
    pub epoch_scale: f64,
    /// Trial history file; defaults to `tune_history.ndjson` in the output directory.
    pub history: Option<PathBuf>,
}

impl Default for TunerSettings {
    fn default() -> Self {
        Self {
            n_trials: 300,
            n_initial: DEFAULT_INITIAL_TRIALS,
            n_candidates: DEFAULT_CANDIDATES,
            epoch_scale: 0.25,
            history: None,
        }
    }
}

impl TunerSettings {
    pub fn tuner_config(&self, seed: u64, threads: usize) -> TunerConfig {
        let mut cfg = TunerConfig::new(self.n_trials, seed);
        cfg.n_initial = self.n_initial;
        cfg.n_candidates = self.n_candidates;
        cfg.surrogate.threads = threads;
        cfg
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::new("config", msg)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new("io", format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| invalid(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.mc_samples < 2 {
            return Err(invalid("mc_samples must be at least 2"));
        }
        let d = &self.data;
        if d.dir.is_none() {
            if d.low_aoa < 2 || d.low_mach < 2 || d.mid < 2 || d.high_train == 0 || d.high_train >= d.high_total {
                return Err(invalid("data sizes must give a 2x2 low grid, 2 mid points and a proper high split"));
            }
        } else if d.high_train == 0 {
            return Err(invalid("data.high_train must be positive"));
        }
        let n = &self.network;
        if n.n_layers < 2 || n.n_units == 0 {
            return Err(invalid("network needs at least 2 layers and 1 unit"));
        }
        GaussianPrior::new(n.mu_prior, n.sigma_prior).map_err(|e| invalid(e.to_string()))?;
        for f in Fidelity::ALL {
            let s = self.stages.get(f);
            if !(0.0..1.0).contains(&s.validation_fraction) {
                return Err(invalid(format!("stages.{}.validation_fraction must lie in [0,1)", f.tag())));
            }
            self.stages.stage_config(f).validate().map_err(|e| invalid(e.to_string()))?;
        }
        if self.stages.low.n_freeze != 0 {
            return Err(invalid("stages.low.n_freeze must be 0"));
        }
        let (m, h) = (self.stages.mid.n_freeze, self.stages.high.n_freeze);
        if m >= n.n_layers || h >= m {
            return Err(invalid(format!(
                "freeze counts need high < mid < n_layers, got high={h} mid={m} n_layers={}",
                n.n_layers
            )));
        }
        let c = &self.cokriging;
        if c.starts == 0 || c.max_fit_points < 2 || !(c.nugget >= 0.0) {
            return Err(invalid("cokriging needs starts >= 1, max_fit_points >= 2 and a non-negative nugget"));
        }
        let t = &self.tuner;
        if t.n_trials == 0 || t.n_candidates == 0 || !(t.epoch_scale > 0.0 && t.epoch_scale <= 1.0) {
            return Err(invalid("tuner needs n_trials >= 1, n_candidates >= 1 and epoch_scale in (0,1]"));
        }
        Ok(())
    }

    /// Copy with the network and stage settings of a tuned point.
    pub fn with_hyperpoint(&self, p: &HyperPoint) -> RunConfig {
        let mut cfg = self.clone();
        cfg.network.n_layers = p.n_layers;
        cfg.network.n_units = p.n_units;
        cfg.network.activation = p.activation;
        cfg.network.mu_prior = p.mu_prior;
        cfg.network.sigma_prior = p.sigma_prior;
        cfg.stages.freeze_direction = FreezeDirection::FromOutput;
        cfg.stages.low.learning_rate = p.learning_rates[0];
        cfg.stages.mid.learning_rate = p.learning_rates[1];
        cfg.stages.high.learning_rate = p.learning_rates[2];
        cfg.stages.mid.n_freeze = p.n_freeze;
        cfg.stages.high.n_freeze = p.n_freeze - 1;
        cfg
    }

    /// Copy with every stage's epochs scaled by `tuner.epoch_scale`, at least 1.
    pub fn tuning_epochs(&self) -> RunConfig {
        let mut cfg = self.clone();
        for s in [&mut cfg.stages.low, &mut cfg.stages.mid, &mut cfg.stages.high] {
            s.epochs = ((s.epochs as f64 * self.tuner.epoch_scale).round() as usize).max(1);
        }
        cfg
    }
}

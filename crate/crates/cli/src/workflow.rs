//! Shared steps of the subcommands: loading data, training, evaluation and
//! checkpoint handling.

use std::fs;
use std::path::{Path, PathBuf};

use mfbaynet_core::bayesnet::{init_network, BayesianNetwork};
use mfbaynet_core::data::{
    load_csv, normalize, write_csv, Fidelity, FidelityDataset, NormalizedSet, Normalizer, TransonicBenchmark,
};
use mfbaynet_core::inference::{coverage_fraction, mc_predict_batch, MetricReport, PredictionResult};
use mfbaynet_core::kriging::{fit_cokriging_datasets, MultiOutputCoKriging};
use mfbaynet_core::training::{run_pipeline_with, train_stage, StagePlan, TrainReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{thread_budget, CliError, CliResult};

/// Random streams derived from the run seed, one per purpose.
pub mod stream {
    pub const TRAIN: u64 = 1;
    pub const PREDICT: u64 = 2;
    pub const NOISE: u64 = 3;
}

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The four datasets of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Datasets {
    pub low: FidelityDataset,
    pub mid: FidelityDataset,
    pub high_train: FidelityDataset,
    pub high_test: FidelityDataset,
}

impl Datasets {
    pub fn training(&self, f: Fidelity) -> &FidelityDataset {
        match f {
            Fidelity::Low => &self.low,
            Fidelity::Mid => &self.mid,
            Fidelity::High => &self.high_train,
        }
    }

    pub fn training_mut(&mut self, f: Fidelity) -> &mut FidelityDataset {
        match f {
            Fidelity::Low => &mut self.low,
            Fidelity::Mid => &mut self.mid,
            Fidelity::High => &mut self.high_train,
        }
    }

    /// Output scaling shared by all stages, taken from the low-fidelity set.
    pub fn normalizer(&self) -> CliResult<Normalizer> {
        Ok(Normalizer::from_low_fidelity(&self.low)?)
    }
}

pub const DATA_FILES: [(Fidelity, &str); 3] =
    [(Fidelity::Low, "low.csv"), (Fidelity::Mid, "mid.csv"), (Fidelity::High, "high.csv")];

fn load_level(dir: &Path, fidelity: Fidelity, file: &str) -> CliResult<FidelityDataset> {
    let path = dir.join(file);
    if !path.is_file() {
        return Err(CliError::new("config", format!("missing {fidelity} dataset: {} not found", path.display())));
    }
    let sets = load_csv(&path).map_err(|e| CliError::new(e.class(), format!("{}: {e}", path.display())))?;
    let mut matching: Vec<FidelityDataset> = sets.into_iter().filter(|d| d.fidelity == fidelity).collect();
    match matching.len() {
        1 => Ok(matching.remove(0)),
        _ => Err(CliError::new("config", format!("{} holds no {fidelity} rows", path.display()))),
    }
}

/// Loads the CSVs under `data.dir`, or generates the synthetic benchmark.
/// All files are checked before anything is returned.
pub fn load_datasets(cfg: &RunConfig) -> CliResult<Datasets> {
    let Some(dir) = &cfg.data.dir else {
        let b = TransonicBenchmark::generate(cfg.seed, cfg.data.sizes())?;
        return Ok(Datasets { low: b.low, mid: b.mid, high_train: b.high_train, high_test: b.high_test });
    };
    let low = load_level(dir, Fidelity::Low, DATA_FILES[0].1)?;
    let mid = load_level(dir, Fidelity::Mid, DATA_FILES[1].1)?;
    let high = load_level(dir, Fidelity::High, DATA_FILES[2].1)?;
    let n_train = cfg.data.high_train;
    if n_train >= high.len() {
        return Err(CliError::new(
            "config",
            format!("data.high_train = {n_train} leaves no test rows in a {}-row high-fidelity set", high.len()),
        ));
    }
    let (train, test) = high.samples.split_at(n_train);
    Ok(Datasets {
        low,
        mid,
        high_train: FidelityDataset::new(Fidelity::High, train.to_vec())?,
        high_test: FidelityDataset::new(Fidelity::High, test.to_vec())?,
    })
}

/// Writes `low.csv`, `mid.csv` and `high.csv` (training rows first).
pub fn write_datasets(dir: &Path, data: &Datasets) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut high = data.high_train.clone();
    high.samples.extend_from_slice(&data.high_test.samples);
    let mut paths = Vec::new();
    for (ds, (_, file)) in [&data.low, &data.mid, &high].into_iter().zip(DATA_FILES) {
        let path = dir.join(file);
        write_csv(&path, &[ds])?;
        paths.push(path);
    }
    Ok(paths)
}

/// A trained network with the scaling needed to use it on physical inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: String,
    /// Last stage the network was trained on.
    pub stage: Fidelity,
    pub normalizer: Normalizer,
    pub network: BayesianNetwork<f64>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> CliResult<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::new("io", format!("reading checkpoint {}: {e}", path.display())))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        ck.network.validate()?;
        Ok(ck)
    }
}

pub fn checkpoint_name(model_tag: &str, stage: Fidelity) -> String {
    format!("{model_tag}_{}.json", stage.tag())
}

fn split(
    ds: &FidelityDataset,
    fraction: f64,
    norm: &Normalizer,
    rng: &mut ChaCha8Rng,
) -> CliResult<(NormalizedSet<f64>, NormalizedSet<f64>)> {
    let (train, val) = ds.split_validation(fraction, rng)?;
    Ok((normalize(&train, norm)?, normalize(&val, norm)?))
}

/// Outcome of a training command.
#[derive(Clone, Debug)]
pub struct Trained {
    pub model: String,
    pub network: BayesianNetwork<f64>,
    pub normalizer: Normalizer,
    pub reports: Vec<TrainReport>,
    pub checkpoints: Vec<PathBuf>,
}

/// Runs the low, mid, high transfer pipeline. With `checkpoint_dir`, the
/// network is saved after every stage.
pub fn train_multi_fidelity(cfg: &RunConfig, data: &Datasets, checkpoint_dir: Option<&Path>) -> CliResult<Trained> {
    let norm = data.normalizer()?;
    let mut rng = seeded(cfg.seed, stream::TRAIN);
    let mut stages = Vec::with_capacity(3);
    for f in Fidelity::ALL {
        let (train, validation) = split(data.training(f), cfg.stages.get(f).validation_fraction, &norm, &mut rng)?;
        stages.push(StagePlan { config: cfg.stages.stage_config(f), train, validation });
    }
    let mut network = init_network(&cfg.network.spec(cfg.seed))?;
    let model = "MF-BayNet".to_string();
    let mut checkpoints = Vec::new();
    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(dir)?;
    }
    let mut save_error: Option<CliError> = None;
    let reports = run_pipeline_with(&mut network, &stages, &mut rng, |report, net| {
        if let Some(dir) = checkpoint_dir {
            let path = dir.join(checkpoint_name("mf", report.fidelity));
            let ck = Checkpoint { model: model.clone(), stage: report.fidelity, normalizer: norm.clone(), network: net.clone() };
            if let Err(e) = ck.save(&path) {
                save_error = Some(e);
                return Err(mfbaynet_core::Error::Precondition("checkpoint write failed".into()));
            }
            checkpoints.push(path);
        }
        Ok(())
    });
    if let Some(e) = save_error {
        return Err(e);
    }
    Ok(Trained { model, network, normalizer: norm, reports: reports?, checkpoints })
}

pub fn single_fidelity_name(f: Fidelity) -> String {
    format!("BNN {}", f.short())
}

/// Trains a fresh network on one fidelity only, with that stage's settings
/// and nothing frozen.
pub fn train_single_fidelity(
    cfg: &RunConfig,
    data: &Datasets,
    fidelity: Fidelity,
    checkpoint_dir: Option<&Path>,
) -> CliResult<Trained> {
    let norm = data.normalizer()?;
    let mut rng = seeded(cfg.seed, stream::TRAIN);
    let settings = cfg.stages.get(fidelity);
    let (train, validation) = split(data.training(fidelity), settings.validation_fraction, &norm, &mut rng)?;
    let mut stage = cfg.stages.stage_config(fidelity);
    stage.n_freeze = 0;
    let mut network = init_network(&cfg.network.spec(cfg.seed))?;
    let report = train_stage(&mut network, &train, &stage, &validation, &mut rng)?;
    let model = single_fidelity_name(fidelity);
    let mut checkpoints = Vec::new();
    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(dir)?;
        let path = dir.join(checkpoint_name(&format!("bnn_{}", fidelity.tag()), fidelity));
        Checkpoint { model: model.clone(), stage: fidelity, normalizer: norm.clone(), network: network.clone() }
            .save(&path)?;
        checkpoints.push(path);
    }
    Ok(Trained { model, network, normalizer: norm, reports: vec![report], checkpoints })
}

/// Physical-unit Monte Carlo predictions at `(aoa, mach)` points.
pub fn predict_physical(
    network: &BayesianNetwork<f64>,
    norm: &Normalizer,
    points: &[[f64; 2]],
    mc_samples: usize,
    seed: u64,
) -> CliResult<Vec<PredictionResult<f64>>> {
    let xs: Vec<Vec<f64>> = points.iter().map(|p| norm.normalize_input(p)).collect();
    let mut rng = seeded(seed, stream::PREDICT);
    let preds = mc_predict_batch(network, &xs, mc_samples, &mut rng)?;
    Ok(preds
        .into_iter()
        .map(|p| PredictionResult {
            mean: norm.denormalize_output(&p.mean),
            std: norm.denormalize_std(&p.std),
            n_samples: p.n_samples,
        })
        .collect())
}

/// Test-set metrics plus the coverage fraction at 1.96 predictive stds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: MetricReport,
    pub coverage_95: f64,
}

fn pair(v: &[f64]) -> [f64; 2] {
    [v[0], v[1]]
}

fn evaluate(preds: &[PredictionResult<f64>], test: &FidelityDataset) -> CliResult<Evaluation> {
    let means: Vec<[f64; 2]> = preds.iter().map(|p| pair(&p.mean)).collect();
    let stds: Vec<[f64; 2]> = preds.iter().map(|p| pair(&p.std)).collect();
    let truths: Vec<[f64; 2]> = test.samples.iter().map(|s| s.outputs()).collect();
    let truth_rows: Vec<Vec<f64>> = truths.iter().map(|t| t.to_vec()).collect();
    Ok(Evaluation {
        metrics: MetricReport::from_predictions(&means, &stds, &truths)?,
        coverage_95: coverage_fraction(preds, &truth_rows, 1.96)?,
    })
}

pub fn evaluate_network(trained: &Trained, test: &FidelityDataset, mc_samples: usize, seed: u64) -> CliResult<Evaluation> {
    let points: Vec<[f64; 2]> = test.samples.iter().map(|s| s.inputs()).collect();
    let preds = predict_physical(&trained.network, &trained.normalizer, &points, mc_samples, seed)?;
    evaluate(&preds, test)
}

pub fn fit_cokriging_run(cfg: &RunConfig, data: &Datasets) -> CliResult<MultiOutputCoKriging> {
    let norm = data.normalizer()?;
    let budget = cfg.cokriging.budget(cfg.seed, thread_budget());
    Ok(fit_cokriging_datasets(&[&data.low, &data.mid, &data.high_train], &norm, &budget)?)
}

pub fn evaluate_cokriging(model: &MultiOutputCoKriging, test: &FidelityDataset) -> CliResult<Evaluation> {
    let preds = test
        .samples
        .iter()
        .map(|s| {
            let (m, sd) = model.predict(s.aoa, s.mach)?;
            Ok(PredictionResult { mean: m.to_vec(), std: sd.to_vec(), n_samples: 0 })
        })
        .collect::<CliResult<Vec<_>>>()?;
    evaluate(&preds, test)
}

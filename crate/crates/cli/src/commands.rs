//! The subcommands. Each writes its outputs plus a `manifest.json` under the
//! output directory and returns what it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use mfbaynet_core::data::{inject_noise, Channel, Fidelity, TRANSONIC};
use mfbaynet_core::hyperopt::{run_tuning, HyperPoint, SearchSpace, TunerState};
use mfbaynet_core::inference::{MetricReport, METRIC_CSV_HEADER};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::workflow::{
    evaluate_cokriging, evaluate_network, fit_cokriging_run, load_datasets, predict_physical, seeded, stream,
    train_multi_fidelity, train_single_fidelity, write_datasets, Checkpoint, Datasets, Evaluation, Trained,
};
use crate::{thread_budget, CliError, CliResult};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Row labels of the noise study, in output order.
pub const NOISE_STUDY_LABELS: [&str; 7] = [
    "Vanilla",
    "Noisy C_L in LF",
    "Noisy C_L in MF",
    "Noisy C_L in HF",
    "Noisy C_M in LF",
    "Noisy C_M in MF",
    "Noisy C_M in HF",
];

fn write_manifest(out: &Path, command: &str, cfg: &RunConfig, extra: Value) -> CliResult<()> {
    let manifest = json!({
        "command": command,
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "details": extra,
    });
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Writes a metric table. Values are rounded so the file is stable across runs.
pub fn write_metrics_csv(path: &Path, rows: &[(String, MetricReport)]) -> CliResult<()> {
    let mut text = String::from(METRIC_CSV_HEADER);
    text.push('\n');
    for (name, m) in rows {
        text.push_str(&m.csv_row(name));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Parses a metric table written by [`write_metrics_csv`].
pub fn read_metrics_csv(path: &Path) -> CliResult<Vec<(String, MetricReport)>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(METRIC_CSV_HEADER) {
        return Err(CliError::new("csv", format!("{} does not start with the metric header", path.display())));
    }
    lines
        .map(|line| {
            let cols: Vec<&str> = line.split(',').collect();
            let bad = || CliError::new("csv", format!("malformed metric row `{line}`"));
            if cols.len() != 6 {
                return Err(bad());
            }
            let v: Vec<f64> = cols[1..].iter().map(|c| c.parse().map_err(|_| bad())).collect::<CliResult<_>>()?;
            let m = MetricReport { eps_cl: v[0], sigma_cl: v[1], eps_cm: v[2], sigma_cm: v[3], eps_tot: v[4] };
            Ok((cols[0].to_string(), m))
        })
        .collect()
}

fn prepare_out(cfg: &RunConfig) -> CliResult<PathBuf> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::new("io", format!("creating {}: {e}", cfg.out.display())))?;
    Ok(cfg.out.clone())
}

pub fn cmd_gen_data(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let out = prepare_out(cfg)?;
    let data = load_datasets(&RunConfig { data: crate::config::DataConfig { dir: None, ..cfg.data.clone() }, ..cfg.clone() })?;
    let files = write_datasets(&out, &data)?;
    write_manifest(
        &out,
        "gen-data",
        cfg,
        json!({
            "generator": "transonic2d",
            "constants": TRANSONIC,
            "rows": { "low": data.low.len(), "mid": data.mid.len(), "high": data.high_train.len() + data.high_test.len() },
            "high_train_rows": data.high_train.len(),
            "files": files,
        }),
    )?;
    Ok(files)
}

/// Result of `train`.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub trained: Trained,
    pub evaluation: Evaluation,
    pub metrics_csv: PathBuf,
}

fn train_and_evaluate(cfg: &RunConfig, data: &Datasets, single: Option<Fidelity>, ckpt: Option<&Path>) -> CliResult<(Trained, Evaluation)> {
    let trained = match single {
        Some(f) => train_single_fidelity(cfg, data, f, ckpt)?,
        None => train_multi_fidelity(cfg, data, ckpt)?,
    };
    let evaluation = evaluate_network(&trained, &data.high_test, cfg.mc_samples, cfg.seed)?;
    Ok((trained, evaluation))
}

pub fn cmd_train(cfg: &RunConfig, single: Option<Fidelity>) -> CliResult<TrainOutcome> {
    let data = load_datasets(cfg)?;
    let out = prepare_out(cfg)?;
    let (trained, evaluation) = train_and_evaluate(cfg, &data, single, Some(&out.join("checkpoints")))?;
    let metrics_csv = out.join(METRICS_FILE);
    write_metrics_csv(&metrics_csv, &[(trained.model.clone(), evaluation.metrics)])?;
    write_json(
        &out.join("train_report.json"),
        &json!({ "model": trained.model, "stages": trained.reports, "evaluation": evaluation }),
    )?;
    write_manifest(
        &out,
        "train",
        cfg,
        json!({ "model": trained.model, "single_fidelity": single, "checkpoints": trained.checkpoints }),
    )?;
    Ok(TrainOutcome { trained, evaluation, metrics_csv })
}

pub fn cmd_cokrige(cfg: &RunConfig) -> CliResult<Evaluation> {
    let data = load_datasets(cfg)?;
    let out = prepare_out(cfg)?;
    let model = fit_cokriging_run(cfg, &data)?;
    let evaluation = evaluate_cokriging(&model, &data.high_test)?;
    fs::write(out.join("cokriging_model.json"), model.to_json()?)?;
    write_metrics_csv(&out.join(METRICS_FILE), &[("CK LF/MF/HF".to_string(), evaluation.metrics)])?;
    write_json(&out.join("cokriging_report.json"), &evaluation)?;
    write_manifest(&out, "cokrige", cfg, json!({ "threads": thread_budget() }))?;
    Ok(evaluation)
}

/// Result of `tune`.
#[derive(Clone, Debug)]
pub struct TuneOutcome {
    pub best: HyperPoint,
    pub best_objective: f64,
    pub state: TunerState<HyperPoint>,
    pub best_config: PathBuf,
}

/// Tunes the network hyperparameters on the high-fidelity validation MAE
/// of the full pipeline. A history file left by an earlier run is resumed.
pub fn cmd_tune(cfg: &RunConfig) -> CliResult<TuneOutcome> {
    let data = load_datasets(cfg)?;
    let out = prepare_out(cfg)?;
    let history = cfg.tuner.history.clone().unwrap_or_else(|| out.join("tune_history.ndjson"));
    let base = cfg.tuning_epochs();
    let tuner = cfg.tuner.tuner_config(cfg.seed, thread_budget());
    let state = run_tuning(&SearchSpace, &tuner, Some(&history), |p, trial| {
        let trial_cfg = RunConfig { seed: cfg.seed.wrapping_add(trial as u64), ..base.with_hyperpoint(p) };
        trial_cfg.validate().map_err(|e| mfbaynet_core::Error::InvalidConfig(e.message))?;
        let trained = train_multi_fidelity(&trial_cfg, &data, None).map_err(|e| mfbaynet_core::Error::Precondition(e.message))?;
        Ok(trained.reports.last().expect("three stages").validation_mae)
    })?;
    let Some((best, best_objective)) = state.incumbent.clone() else {
        return Err(CliError::new("precondition", "every tuning trial failed"));
    };
    let best_cfg = cfg.with_hyperpoint(&best);
    #[derive(Serialize)]
    struct Fragment<'a> {
        network: &'a crate::config::NetworkConfig,
        stages: &'a crate::config::StagesConfig,
    }
    let fragment = toml::to_string(&Fragment { network: &best_cfg.network, stages: &best_cfg.stages })
        .map_err(|e| CliError::new("serialization", e.to_string()))?;
    let best_config = out.join("best_config.toml");
    fs::write(&best_config, fragment)?;
    write_manifest(
        &out,
        "tune",
        cfg,
        json!({ "history": history, "trials": state.history.len(), "completed": state.completed(), "best": best, "best_objective": best_objective }),
    )?;
    Ok(TuneOutcome { best, best_objective, state, best_config })
}

/// One perturbed configuration of the noise study.
#[derive(Clone, Debug, Serialize)]
pub struct NoiseRun {
    pub label: String,
    pub perturbed: Option<(Fidelity, Channel)>,
    pub dataset_size: Option<(usize, usize)>,
    pub noise_std: Option<f64>,
    pub metrics: MetricReport,
}

/// Augmented copy of `data` with one fidelity/column perturbed.
pub fn noisy_datasets(cfg: &RunConfig, data: &Datasets, fidelity: Fidelity, channel: Channel) -> CliResult<(Datasets, (usize, usize), f64)> {
    let index = NOISE_STUDY_LABELS
        .iter()
        .position(|l| *l == noise_label(fidelity, channel))
        .expect("label table covers every combination") as u64;
    let mut rng = seeded(cfg.seed, stream::NOISE + index);
    let original = data.training(fidelity);
    let injected = inject_noise(original, channel, &mut rng)?;
    let sizes = (original.len(), injected.dataset.len());
    let mut noisy = data.clone();
    *noisy.training_mut(fidelity) = injected.dataset;
    Ok((noisy, sizes, injected.noise_std))
}

pub fn noise_label(fidelity: Fidelity, channel: Channel) -> String {
    format!("Noisy {} in {}", channel.label(), fidelity.short())
}

/// Retrains the pipeline on the clean data and on each of the six noisy
/// variants, and writes one metric row per run.
pub fn cmd_noise_study(cfg: &RunConfig) -> CliResult<Vec<NoiseRun>> {
    let data = load_datasets(cfg)?;
    let out = prepare_out(cfg)?;
    let mut runs = Vec::with_capacity(NOISE_STUDY_LABELS.len());
    let (_, vanilla) = train_and_evaluate(cfg, &data, None, None)?;
    runs.push(NoiseRun {
        label: NOISE_STUDY_LABELS[0].to_string(),
        perturbed: None,
        dataset_size: None,
        noise_std: None,
        metrics: vanilla.metrics,
    });
    for channel in [Channel::Cl, Channel::Cm] {
        for fidelity in Fidelity::ALL {
            let (noisy, sizes, noise_std) = noisy_datasets(cfg, &data, fidelity, channel)?;
            let (_, eval) = train_and_evaluate(cfg, &noisy, None, None)?;
            runs.push(NoiseRun {
                label: noise_label(fidelity, channel),
                perturbed: Some((fidelity, channel)),
                dataset_size: Some(sizes),
                noise_std: Some(noise_std),
                metrics: eval.metrics,
            });
        }
    }
    let rows: Vec<(String, MetricReport)> = runs.iter().map(|r| (r.label.clone(), r.metrics)).collect();
    write_metrics_csv(&out.join("noise_study.csv"), &rows)?;
    write_manifest(&out, "noise-study", cfg, json!({ "runs": runs }))?;
    Ok(runs)
}

pub const PREDICTION_HEADER: &str = "aoa_deg,mach,cl_mean,cl_std,cm_mean,cm_std";

/// Reads `(aoa_deg, mach)` points from a CSV with those two header columns
/// (extra columns are ignored, so a dataset file works too).
pub fn read_points(path: &Path) -> CliResult<Vec<[f64; 2]>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::new("io", format!("reading {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| CliError::new("csv", format!("{} is empty", path.display())))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| CliError::new("csv", format!("{} has no `{name}` column", path.display())))
    };
    let (ia, im) = (find("aoa_deg")?, find("mach")?);
    let mut points = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |k: usize| -> CliResult<f64> {
            fields
                .get(k)
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::new("csv", format!("line {}: bad number in column {}", i + 1, k + 1)))
        };
        points.push([get(ia)?, get(im)?]);
    }
    Ok(points)
}

/// Predicts at every point of `inputs` and writes `predictions.csv`.
pub fn cmd_predict(cfg: &RunConfig, checkpoint: &Path, inputs: &Path) -> CliResult<PathBuf> {
    let ck = Checkpoint::load(checkpoint)?;
    let points = read_points(inputs)?;
    let out = prepare_out(cfg)?;
    let preds = predict_physical(&ck.network, &ck.normalizer, &points, cfg.mc_samples, cfg.seed)?;
    let mut text = String::from(PREDICTION_HEADER);
    text.push('\n');
    for (p, r) in points.iter().zip(&preds) {
        text.push_str(&format!("{},{},{},{},{},{}\n", p[0], p[1], r.mean[0], r.std[0], r.mean[1], r.std[1]));
    }
    let path = out.join("predictions.csv");
    fs::write(&path, text)?;
    write_manifest(
        &out,
        "predict",
        cfg,
        json!({ "checkpoint": checkpoint, "inputs": inputs, "model": ck.model, "stage": ck.stage, "points": points.len() }),
    )?;
    Ok(path)
}


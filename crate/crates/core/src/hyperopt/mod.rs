//! Bayesian optimization over gridded hyperparameter spaces: a kriging
//! surrogate on the encoded unit cube and expected improvement as the
//! acquisition. The objective is minimized.

mod space;

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{ensure, Error, Result};
use crate::kriging::{fit_kriging, KrigingModel, SearchBudget};

pub use space::{
    lr_coordinate, Axis, GridBox, HyperPoint, SearchSpace, LEARNING_RATE, LEARNING_RATE_RANGE, MU_PRIOR, N_LAYERS,
    N_UNITS, SIGMA_PRIOR,
};

pub const DEFAULT_CANDIDATES: usize = 2048;
pub const DEFAULT_INITIAL_TRIALS: usize = 10;

/// A search space whose points can be sampled and embedded in a unit cube.
pub trait Domain {
    type Point: Clone + PartialEq + std::fmt::Debug + Serialize + DeserializeOwned;

    fn encoded_dim(&self) -> usize;
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::Point;
    /// Unit-cube coordinates; errors for points off the grid.
    fn encode(&self, p: &Self::Point) -> Result<Vec<f64>>;
    /// The grid point nearest to `u`.
    fn decode(&self, u: &[f64]) -> Self::Point;
}

/// Expected improvement below `best` for a Gaussian prediction.
pub fn expected_improvement(mean: f64, std: f64, best: f64) -> f64 {
    let gap = best - mean;
    if !(std > 0.0) {
        return gap.max(0.0);
    }
    let z = gap / std;
    let n = Normal::standard();
    (gap * n.cdf(z) + std * n.pdf(z)).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrialStatus {
    Completed { objective: f64 },
    Failed { message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord<P> {
    pub trial: usize,
    pub point: P,
    #[serde(flatten)]
    pub status: TrialStatus,
    pub wall_time_secs: f64,
}

impl<P> TrialRecord<P> {
    pub fn objective(&self) -> Option<f64> {
        match self.status {
            TrialStatus::Completed { objective } => Some(objective),
            TrialStatus::Failed { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunerConfig {
    pub n_trials: usize,
    pub n_initial: usize,
    pub n_candidates: usize,
    pub seed: u64,
    pub surrogate: SearchBudget,
}

impl TunerConfig {
    pub fn new(n_trials: usize, seed: u64) -> Self {
        Self {
            n_trials,
            n_initial: DEFAULT_INITIAL_TRIALS,
            n_candidates: DEFAULT_CANDIDATES,
            seed,
            surrogate: SearchBudget { starts: 4, max_iters: 150, max_fit_points: 150, ..SearchBudget::default() },
        }
    }
}

/// Trial history, incumbent and the surrogate fitted on the history.
#[derive(Clone, Debug)]
pub struct TunerState<P> {
    pub history: Vec<TrialRecord<P>>,
    /// Best completed trial so far.
    pub incumbent: Option<(P, f64)>,
    pub surrogate: Option<KrigingModel<f64>>,
}

impl<P: Clone> Default for TunerState<P> {
    fn default() -> Self {
        Self { history: Vec::new(), incumbent: None, surrogate: None }
    }
}

impl<P: Clone + PartialEq> TunerState<P> {
    /// Appends a record and updates the incumbent on strict improvement.
    pub fn record(&mut self, rec: TrialRecord<P>) {
        if let Some(y) = rec.objective() {
            if self.incumbent.as_ref().is_none_or(|(_, best)| y < *best) {
                self.incumbent = Some((rec.point.clone(), y));
            }
        }
        self.history.push(rec);
    }

    pub fn completed(&self) -> usize {
        self.history.iter().filter(|r| r.objective().is_some()).count()
    }

    /// Incumbent objective after each trial (`None` until the first success).
    pub fn incumbent_trace(&self) -> Vec<Option<f64>> {
        let mut best: Option<f64> = None;
        self.history
            .iter()
            .map(|r| {
                if let Some(y) = r.objective() {
                    best = Some(best.map_or(y, |b| b.min(y)));
                }
                best
            })
            .collect()
    }
}

/// Refits the surrogate on the completed trials. Repeated points are merged
/// by averaging their objectives. Leaves `None` when fewer than two distinct
/// points exist or the fit fails.
pub fn refit_surrogate<D: Domain>(state: &mut TunerState<D::Point>, domain: &D, budget: &SearchBudget) -> Result<()> {
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for r in &state.history {
        if let Some(y) = r.objective() {
            let u = domain.encode(&r.point)?;
            match xs.iter().position(|x| *x == u) {
                Some(i) => {
                    sums[i].0 += y;
                    sums[i].1 += 1;
                }
                None => {
                    xs.push(u);
                    sums.push((y, 1));
                }
            }
        }
    }
    let ys: Vec<f64> = sums.iter().map(|(s, n)| s / *n as f64).collect();
    state.surrogate = if xs.len() >= 2 { fit_kriging(&xs, &ys, budget).ok() } else { None };
    Ok(())
}

/// Next point to evaluate: a uniform grid draw without a surrogate, otherwise
/// the expected-improvement maximizer among `n_candidates` grid draws.
pub fn suggest_next<D: Domain, R: Rng + ?Sized>(
    state: &TunerState<D::Point>,
    domain: &D,
    n_candidates: usize,
    rng: &mut R,
) -> Result<D::Point> {
    ensure(domain.encoded_dim() > 0, || "search space is empty".into())?;
    let (Some(model), Some((_, best))) = (&state.surrogate, &state.incumbent) else {
        return Ok(domain.sample(rng));
    };
    let mut chosen: Option<(D::Point, f64)> = None;
    for _ in 0..n_candidates.max(1) {
        let p = domain.sample(rng);
        let (mean, std) = model.predict(&domain.encode(&p)?)?;
        let ei = expected_improvement(mean, std, *best);
        if chosen.as_ref().is_none_or(|(_, b)| ei > *b) {
            chosen = Some((p, ei));
        }
    }
    Ok(chosen.expect("at least one candidate").0)
}

/// Per-trial random stream: trial `i` always sees the same draws, so a
/// resumed run proposes exactly what the uninterrupted run would have.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

pub fn read_history<P: DeserializeOwned>(path: &Path) -> Result<Vec<TrialRecord<P>>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Serialization(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

fn append_record<P: Serialize>(path: &Path, rec: &TrialRecord<P>) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(rec)?)?;
    f.flush()?;
    Ok(())
}

/// Runs the optimization loop for `cfg.n_trials` trials in total.
///
/// The objective receives the point and the trial index. Errors and
/// non-finite values are recorded as failed trials and the loop goes on.
/// With a `history` path, records already in the file are replayed instead of
/// re-evaluated and every new record is appended as one JSON line.
pub fn run_tuning<D, F>(
    domain: &D,
    cfg: &TunerConfig,
    history: Option<&Path>,
    mut objective: F,
) -> Result<TunerState<D::Point>>
where
    D: Domain,
    F: FnMut(&D::Point, usize) -> Result<f64>,
{
    ensure(cfg.n_trials >= 1, || "tuning needs at least one trial".into())?;
    let mut state = TunerState::default();
    let previous = match history {
        Some(p) => read_history::<D::Point>(p)?,
        None => Vec::new(),
    };
    for (i, rec) in previous.iter().enumerate() {
        ensure(rec.trial == i, || format!("history record {i} is labelled trial {}", rec.trial))?;
    }

    // History length the surrogate was last fitted on.
    let mut fitted_on = usize::MAX;
    for trial in 0..cfg.n_trials {
        if let Some(rec) = previous.get(trial) {
            state.record(rec.clone());
            continue;
        }
        let mut rng = trial_rng(cfg.seed, trial);
        let point = if trial < cfg.n_initial {
            domain.sample(&mut rng)
        } else {
            if fitted_on != state.history.len() {
                refit_surrogate(&mut state, domain, &cfg.surrogate)?;
                fitted_on = state.history.len();
            }
            suggest_next(&state, domain, cfg.n_candidates, &mut rng)?
        };
        let started = Instant::now();
        let status = match objective(&point, trial) {
            Ok(y) if y.is_finite() => TrialStatus::Completed { objective: y },
            Ok(y) => TrialStatus::Failed { message: format!("objective returned {y}") },
            Err(e) => TrialStatus::Failed { message: e.to_string() },
        };
        let rec = TrialRecord { trial, point, status, wall_time_secs: started.elapsed().as_secs_f64() };
        if let Some(p) = history {
            append_record(p, &rec)?;
        }
        state.record(rec);
    }
    if fitted_on != state.history.len() {
        refit_surrogate(&mut state, domain, &cfg.surrogate)?;
    }
    Ok(state)
}

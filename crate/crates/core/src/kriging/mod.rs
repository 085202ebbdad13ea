//! Ordinary kriging (Gaussian-process regression with a constant trend) and a
//! chained multi-level co-kriging baseline.
//!
//! The kernel is an anisotropic squared exponential plus a nugget on the
//! diagonal. Hyperparameters are fitted by multi-start Nelder–Mead on the
//! log-parameters, minimizing the negative log marginal likelihood with the
//! trend profiled out.

mod cokriging;
mod linalg;

use std::collections::HashMap;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::num::Real;

pub use cokriging::{fit_cokriging, fit_cokriging_datasets, predict_cokriging, CoKrigingLevel, CoKrigingModel, MultiOutputCoKriging};
pub use linalg::Cholesky;

pub const DEFAULT_NUGGET: f64 = 1e-10;
/// Nugget escalation stops above this value.
pub const MAX_NUGGET: f64 = 1e-4;
pub const LENGTH_SCALE_BOUNDS: (f64, f64) = (1e-2, 10.0);
pub const SIGNAL_VARIANCE_BOUNDS: (f64, f64) = (1e-4, 1e2);

/// Penalty returned to the local search when a parameter set cannot be factorized.
const FAILED_COST: f64 = 1e12;
const REFINE_STEPS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct KernelParams<T> {
    pub length_scales: Vec<T>,
    pub signal_variance: T,
    /// Added to the diagonal of the training kernel matrix.
    pub nugget: T,
}

impl<T: Real> KernelParams<T> {
    pub fn new(length_scales: Vec<T>, signal_variance: T) -> Result<Self> {
        let p = Self { length_scales, signal_variance, nugget: T::lit(DEFAULT_NUGGET) };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    pub fn validate(&self) -> Result<()> {
        ensure(!self.length_scales.is_empty(), || "kernel needs at least one length scale".into())?;
        ensure(self.length_scales.iter().all(|l| *l > T::zero() && l.is_finite()), || {
            format!("length scales must be positive and finite, got {:?}", self.length_scales)
        })?;
        ensure(self.signal_variance > T::zero() && self.signal_variance.is_finite(), || {
            format!("signal variance must be positive, got {}", self.signal_variance)
        })?;
        ensure(self.nugget >= T::zero() && self.nugget.is_finite(), || {
            format!("nugget must be non-negative, got {}", self.nugget)
        })
    }
}

/// Squared-exponential covariance between two points.
pub fn kernel<T: Real>(a: &[T], b: &[T], params: &KernelParams<T>) -> T {
    let half = T::lit(0.5);
    let mut s = T::zero();
    for ((x, y), l) in a.iter().zip(b).zip(&params.length_scales) {
        let d = (*x - *y) / *l;
        s += d * d;
    }
    params.signal_variance * (-half * s).exp()
}

fn check_dims<T>(x: &[Vec<T>], dim: usize, context: &'static str) -> Result<()> {
    match x.iter().find(|r| r.len() != dim) {
        Some(r) => Err(Error::Dimension { context, expected: dim, got: r.len() }),
        None => Ok(()),
    }
}

/// Kernel matrix between two point sets, rows indexed by `x1`. No nugget.
pub fn kernel_matrix<T: Real>(x1: &[Vec<T>], x2: &[Vec<T>], params: &KernelParams<T>) -> Result<Vec<Vec<T>>> {
    check_dims(x1, params.dim(), "kernel inputs")?;
    check_dims(x2, params.dim(), "kernel inputs")?;
    Ok(x1.iter().map(|a| x2.iter().map(|b| kernel(a, b, params)).collect()).collect())
}

fn gram<T: Real>(x: &[Vec<T>], params: &KernelParams<T>, nugget: T) -> Vec<T> {
    let n = x.len();
    let mut k = vec![T::zero(); n * n];
    for i in 0..n {
        k[i * n + i] = params.signal_variance + nugget;
        for j in 0..i {
            let v = kernel(&x[i], &x[j], params);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Factorizes `K + nugget·I`, multiplying the nugget by 10 on failure until it
/// exceeds [`MAX_NUGGET`]. Returns the factor and the nugget that worked.
fn factor_escalating<T: Real>(x: &[Vec<T>], params: &KernelParams<T>) -> Result<(Cholesky<T>, T)> {
    let mut nugget = params.nugget;
    let max = T::lit(MAX_NUGGET);
    loop {
        if let Some(c) = Cholesky::factor(&gram(x, params, nugget), x.len()) {
            return Ok((c, nugget));
        }
        nugget = if nugget == T::zero() { T::lit(DEFAULT_NUGGET) } else { nugget * T::lit(10.0) };
        if nugget > max * T::lit(1.000001) {
            return Err(Error::Factorization { nugget: (nugget / T::lit(10.0)).to_f64_lossy() });
        }
    }
}

struct Profiled<T> {
    beta: Vec<T>,
    weights: Vec<T>,
    nll: T,
}

/// Value of the trend basis (intercept, then the listed input coordinates).
fn basis<T: Real>(x: &[T], trend_dims: &[usize]) -> Vec<T> {
    std::iter::once(T::one()).chain(trend_dims.iter().map(|&d| x[d])).collect()
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

/// Generalized least-squares trend, residual weights and the profiled NLL.
/// `None` if the trend coefficients are not identifiable.
fn profile<T: Real>(factor: &Cholesky<T>, x: &[Vec<T>], y: &[T], trend_dims: &[usize]) -> Option<Profiled<T>> {
    let n = y.len();
    let p = 1 + trend_dims.len();
    let rows: Vec<Vec<T>> = x.iter().map(|r| basis(r, trend_dims)).collect();
    let cols: Vec<Vec<T>> = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let k_inv_cols: Vec<Vec<T>> = cols.iter().map(|c| factor.solve(c)).collect();
    let mut a = vec![T::zero(); p * p];
    for i in 0..p {
        for j in 0..p {
            a[i * p + j] = dot(&cols[i], &k_inv_cols[j]);
        }
    }
    let b: Vec<T> = k_inv_cols.iter().map(|c| dot(c, y)).collect();
    let beta = Cholesky::factor(&a, p)?.solve(&b);
    let r: Vec<T> = rows.iter().zip(y).map(|(f, v)| *v - dot(f, &beta)).collect();
    let weights = factor.solve(&r);
    let half = T::lit(0.5);
    let nll = half * dot(&r, &weights) + half * factor.log_det() + half * T::lit(n as f64) * T::TAU().ln();
    if !nll.is_finite() || beta.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(Profiled { beta, weights, nll })
}

/// Iterative refinement toward the nugget-free interpolant: the nugget only
/// stabilizes the factorization, so residuals are measured against the plain
/// kernel matrix. Stops as soon as a step fails to shrink the residual.
fn refine_weights<T: Real>(x: &[Vec<T>], r0: &[T], params: &KernelParams<T>, factor: &Cholesky<T>, w: &mut Vec<T>) {
    let n = x.len();
    let k = gram(x, params, T::zero());
    let residual = |w: &[T]| -> Vec<T> { (0..n).map(|i| r0[i] - dot(&k[i * n..(i + 1) * n], w)).collect() };
    let norm = |r: &[T]| r.iter().map(|v| v.abs()).fold(T::zero(), T::max);
    let mut r = residual(w);
    for _ in 0..REFINE_STEPS {
        let step = factor.solve(&r);
        let candidate: Vec<T> = w.iter().zip(&step).map(|(a, b)| *a + *b).collect();
        let r_new = residual(&candidate);
        if !(norm(&r_new) < norm(&r)) {
            break;
        }
        *w = candidate;
        r = r_new;
    }
}

/// Negative log marginal likelihood with the constant trend profiled out.
/// Uses `params.nugget` as given; fails if the matrix is not positive definite.
pub fn neg_log_marginal_likelihood<T: Real>(x: &[Vec<T>], y: &[T], params: &KernelParams<T>) -> Result<T> {
    params.validate()?;
    check_training(x, y, params.dim())?;
    let factor = Cholesky::factor(&gram(x, params, params.nugget), x.len())
        .ok_or(Error::Factorization { nugget: params.nugget.to_f64_lossy() })?;
    profile(&factor, x, y, &[])
        .map(|p| p.nll)
        .ok_or_else(|| Error::NonFinite("negative log marginal likelihood".into()))
}

fn check_trend_dims(dims: &[usize], dim: usize) -> Result<()> {
    match dims.iter().find(|&&d| d >= dim) {
        Some(&d) => Err(Error::Dimension { context: "trend coordinate", expected: dim, got: d }),
        None => Ok(()),
    }
}

fn check_training<T: Real>(x: &[Vec<T>], y: &[T], dim: usize) -> Result<()> {
    if x.is_empty() {
        return Err(Error::Empty("kriging training set".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Dimension { context: "kriging targets", expected: x.len(), got: y.len() });
    }
    check_dims(x, dim, "kriging inputs")?;
    ensure(x.iter().flatten().chain(y).all(|v| v.is_finite()), || "kriging data contains non-finite values".into())
}

/// Rejects repeated inputs with different targets; returns the number of
/// distinct input points.
fn check_duplicates<T: Real>(x: &[Vec<T>], y: &[T]) -> Result<usize> {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    for (i, row) in x.iter().enumerate() {
        let key: Vec<u64> = row.iter().map(|v| v.to_f64_lossy().to_bits()).collect();
        if let Some(&j) = seen.get(&key) {
            if y[i] != y[j] {
                return Err(Error::Precondition(format!(
                    "points {j} and {i} share inputs {:?} but have different targets",
                    row.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>()
                )));
            }
        } else {
            seen.insert(key, i);
        }
    }
    Ok(seen.len())
}

/// A fitted kriging model with its cached factorization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", into = "KrigingRecord<T>", try_from = "KrigingRecord<T>")]
pub struct KrigingModel<T: Real> {
    inputs: Vec<Vec<T>>,
    targets: Vec<T>,
    params: KernelParams<T>,
    trend_dims: Vec<usize>,
    beta: Vec<T>,
    factor: Cholesky<T>,
    weights: Vec<T>,
    nll: T,
}

/// What gets serialized: everything else is recomputed on load.
#[derive(Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct KrigingRecord<T> {
    inputs: Vec<Vec<T>>,
    targets: Vec<T>,
    params: KernelParams<T>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    trend_dims: Vec<usize>,
}

impl<T: Real> From<KrigingModel<T>> for KrigingRecord<T> {
    fn from(m: KrigingModel<T>) -> Self {
        Self { inputs: m.inputs, targets: m.targets, params: m.params, trend_dims: m.trend_dims }
    }
}

impl<T: Real> TryFrom<KrigingRecord<T>> for KrigingModel<T> {
    type Error = Error;

    fn try_from(r: KrigingRecord<T>) -> Result<Self> {
        KrigingModel::with_trend(r.inputs, r.targets, r.params, r.trend_dims)
    }
}

impl<T: Real> KrigingModel<T> {
    /// Conditions a model on data with fixed kernel parameters and a constant
    /// trend. The nugget is escalated if needed and the value used is stored
    /// in the parameters.
    pub fn from_parts(inputs: Vec<Vec<T>>, targets: Vec<T>, params: KernelParams<T>) -> Result<Self> {
        Self::with_trend(inputs, targets, params, Vec::new())
    }

    /// Like [`KrigingModel::from_parts`], with a trend that is linear in the
    /// listed input coordinates in addition to the intercept.
    pub fn with_trend(inputs: Vec<Vec<T>>, targets: Vec<T>, mut params: KernelParams<T>, trend_dims: Vec<usize>) -> Result<Self> {
        params.validate()?;
        check_training(&inputs, &targets, params.dim())?;
        check_trend_dims(&trend_dims, params.dim())?;
        let (factor, nugget) = factor_escalating(&inputs, &params)?;
        params.nugget = nugget;
        let Profiled { beta, mut weights, nll } = profile(&factor, &inputs, &targets, &trend_dims)
            .ok_or(Error::Factorization { nugget: nugget.to_f64_lossy() })?;
        let r0: Vec<T> = inputs.iter().zip(&targets).map(|(x, y)| *y - dot(&basis(x, &trend_dims), &beta)).collect();
        refine_weights(&inputs, &r0, &params, &factor, &mut weights);
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Factorization { nugget: nugget.to_f64_lossy() });
        }
        Ok(Self { inputs, targets, params, trend_dims, beta, factor, weights, nll })
    }

    pub fn params(&self) -> &KernelParams<T> {
        &self.params
    }

    /// Trend value at `x`.
    pub fn trend_at(&self, x: &[T]) -> T {
        dot(&basis(x, &self.trend_dims), &self.beta)
    }

    /// Trend coefficients, intercept first.
    pub fn trend_coefficients(&self) -> &[T] {
        &self.beta
    }

    pub fn inputs(&self) -> &[Vec<T>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[T] {
        &self.targets
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    /// Negative log marginal likelihood of the training data under this model.
    pub fn nll(&self) -> T {
        self.nll
    }

    /// Posterior mean and standard deviation at `x`.
    pub fn predict(&self, x: &[T]) -> Result<(T, T)> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { context: "kriging query", expected: self.dim(), got: x.len() });
        }
        let k: Vec<T> = self.inputs.iter().map(|xi| kernel(xi, x, &self.params)).collect();
        let mean = self.trend_at(x) + k.iter().zip(&self.weights).map(|(a, b)| *a * *b).sum::<T>();
        let v = self.factor.solve_lower(&k);
        let explained: T = v.iter().map(|e| *e * *e).sum();
        let var = (self.params.signal_variance - explained).max(T::zero());
        Ok((mean, var.sqrt()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn predict_kriging<T: Real>(model: &KrigingModel<T>, x: &[T]) -> Result<(T, T)> {
    model.predict(x)
}

/// Effort spent on hyperparameter fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchBudget {
    pub starts: usize,
    /// Nelder–Mead iterations per start.
    pub max_iters: u64,
    /// Larger training sets are subsampled (seeded) for the likelihood search;
    /// the final model is conditioned on all points.
    pub max_fit_points: usize,
    pub nugget: f64,
    pub seed: u64,
    /// Upper bound on concurrently running starts.
    pub threads: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self { starts: 8, max_iters: 200, max_fit_points: 200, nugget: DEFAULT_NUGGET, seed: 0, threads: 1 }
    }
}

impl SearchBudget {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Clone, Copy)]
struct NllCost<'a, T> {
    x: &'a [Vec<T>],
    y: &'a [T],
    trend_dims: &'a [usize],
    nugget: T,
}

impl<T: Real> NllCost<'_, T> {
    fn params(&self, theta: &[f64]) -> KernelParams<T> {
        let d = theta.len() - 1;
        let (lo, hi) = (LENGTH_SCALE_BOUNDS.0.ln(), LENGTH_SCALE_BOUNDS.1.ln());
        let (slo, shi) = (SIGNAL_VARIANCE_BOUNDS.0.ln(), SIGNAL_VARIANCE_BOUNDS.1.ln());
        KernelParams {
            length_scales: theta[..d].iter().map(|t| T::lit(t.clamp(lo, hi).exp())).collect(),
            signal_variance: T::lit(theta[d].clamp(slo, shi).exp()),
            nugget: self.nugget,
        }
    }

    fn eval(&self, theta: &[f64]) -> f64 {
        let p = self.params(theta);
        match factor_escalating(self.x, &p) {
            Ok((f, _)) => profile(&f, self.x, self.y, self.trend_dims).map_or(FAILED_COST, |p| p.nll.to_f64_lossy()),
            Err(_) => FAILED_COST,
        }
    }
}

impl<T: Real> CostFunction for NllCost<'_, T> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, theta: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.eval(theta))
    }
}

fn clamp_log(theta: &mut [f64]) {
    let d = theta.len() - 1;
    for t in &mut theta[..d] {
        *t = t.clamp(LENGTH_SCALE_BOUNDS.0.ln(), LENGTH_SCALE_BOUNDS.1.ln());
    }
    theta[d] = theta[d].clamp(SIGNAL_VARIANCE_BOUNDS.0.ln(), SIGNAL_VARIANCE_BOUNDS.1.ln());
}

fn local_search<T: Real>(cost: &NllCost<'_, T>, start: Vec<f64>, max_iters: u64) -> (Vec<f64>, f64) {
    let start_cost = cost.eval(&start);
    let mut simplex = vec![start.clone()];
    for i in 0..start.len() {
        let mut p = start.clone();
        p[i] += 0.7;
        let before = p[i];
        clamp_log(&mut p);
        if p[i] != before {
            p[i] = start[i] - 0.7;
        }
        simplex.push(p);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-7).expect("positive tolerance");
    let found = Executor::new(*cost, solver)
        .configure(|s| s.max_iters(max_iters))
        .timer(false)
        .run()
        .ok()
        .and_then(|r| {
            let best_cost = r.state().get_best_cost();
            r.state().get_best_param().cloned().map(|p| (p, best_cost))
        });
    match found {
        Some((mut p, _)) => {
            clamp_log(&mut p);
            let c = cost.eval(&p);
            if c <= start_cost { (p, c) } else { (start, start_cost) }
        }
        None => (start, start_cost),
    }
}

fn variance<T: Real>(y: &[T]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
    y.iter().map(|v| (v.to_f64_lossy() - mean).powi(2)).sum::<f64>() / n
}

/// Runs `f` over `0..n` on at most `threads` scoped threads, preserving order.
pub(crate) fn parallel_map<U: Send, F: Fn(usize) -> U + Sync>(n: usize, threads: usize, f: F) -> Vec<U> {
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| s.spawn(move || (t..n).step_by(threads).map(|i| (i, f(i))).collect::<Vec<_>>()))
            .collect();
        let mut out: Vec<(usize, U)> = handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect();
        out.sort_by_key(|(i, _)| *i);
        out.into_iter().map(|(_, u)| u).collect()
    })
}

/// Fits kernel hyperparameters by multi-start local search and conditions
/// the model on all data. Inputs are expected in roughly `[0, 1]` per dimension.
/// The search runs on standardized targets: the variance bounds and the
/// budget's nugget are in those units, and the returned parameters are scaled
/// back to the data's units.
pub fn fit_kriging<T: Real>(x: &[Vec<T>], y: &[T], budget: &SearchBudget) -> Result<KrigingModel<T>> {
    fit_kriging_with_trend(x, y, &[], budget)
}

/// [`fit_kriging`] with a trend linear in the `trend_dims` input coordinates.
pub fn fit_kriging_with_trend<T: Real>(
    x: &[Vec<T>],
    y: &[T],
    trend_dims: &[usize],
    budget: &SearchBudget,
) -> Result<KrigingModel<T>> {
    let dim = x.first().map(|r| r.len()).ok_or_else(|| Error::Empty("kriging training set".into()))?;
    ensure(dim > 0, || "kriging inputs have zero dimensions".into())?;
    check_training(x, y, dim)?;
    check_trend_dims(trend_dims, dim)?;
    ensure(check_duplicates(x, y)? >= 2, || "kriging needs at least 2 distinct points".into())?;
    ensure(budget.starts >= 1, || "search budget needs at least one start".into())?;
    ensure(budget.nugget >= 0.0, || "nugget must be non-negative".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let (fx, fy): (Vec<Vec<T>>, Vec<T>) = if x.len() > budget.max_fit_points.max(2) {
        let mut idx = sample(&mut rng, x.len(), budget.max_fit_points.max(2)).into_vec();
        idx.sort_unstable();
        (idx.iter().map(|&i| x[i].clone()).collect(), idx.iter().map(|&i| y[i]).collect())
    } else {
        (x.to_vec(), y.to_vec())
    };
    // Search in standardized target units so the variance bounds are scale free.
    let y_mean = fy.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / fy.len() as f64;
    let y_scale = match variance(&fy).sqrt() {
        s if s > 0.0 => s,
        _ => 1.0,
    };
    let fy: Vec<T> = fy.iter().map(|v| T::lit((v.to_f64_lossy() - y_mean) / y_scale)).collect();
    let cost = NllCost { x: &fx, y: &fy, trend_dims, nugget: T::lit(budget.nugget) };

    let (slo, shi) = (SIGNAL_VARIANCE_BOUNDS.0.ln(), SIGNAL_VARIANCE_BOUNDS.1.ln());
    let (llo, lhi) = (LENGTH_SCALE_BOUNDS.0.ln(), LENGTH_SCALE_BOUNDS.1.ln());
    let mut starts = Vec::with_capacity(budget.starts);
    let mut first = vec![0.3f64.ln(); dim];
    first.push(0.0);
    starts.push(first);
    while starts.len() < budget.starts {
        let mut s: Vec<f64> = (0..dim).map(|_| rng.random_range(llo..lhi)).collect();
        s.push(rng.random_range(slo..shi));
        starts.push(s);
    }

    let results = parallel_map(starts.len(), budget.threads, |i| local_search(&cost, starts[i].clone(), budget.max_iters));
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.1 < results[best].1 {
            best = i;
        }
    }
    let mut params = cost.params(&results[best].0);
    let s2 = T::lit(y_scale * y_scale);
    params.signal_variance *= s2;
    params.nugget = T::lit(budget.nugget) * s2;
    KrigingModel::with_trend(x.to_vec(), y.to_vec(), params, trend_dims.to_vec())
}

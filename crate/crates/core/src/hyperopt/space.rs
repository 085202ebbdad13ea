use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Domain;
use crate::bayesnet::ActivationKind;
use crate::error::{Error, Result};

/// Evenly spaced values `lo + k·step` for `k < count`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub step: f64,
    pub count: usize,
}

impl Axis {
    pub const fn new(lo: f64, step: f64, count: usize) -> Self {
        Self { lo, step, count }
    }

    pub fn value(&self, k: usize) -> f64 {
        self.lo + k as f64 * self.step
    }

    pub fn hi(&self) -> f64 {
        self.value(self.count - 1)
    }

    /// Grid index of `v`, if it lies on the grid (relative tolerance 1e-9 of a step).
    pub fn index_of(&self, v: f64) -> Option<usize> {
        let k = ((v - self.lo) / self.step).round();
        if !(0.0..self.count as f64).contains(&k) {
            return None;
        }
        let k = k as usize;
        ((self.value(k) - v).abs() <= 1e-9 * self.step).then_some(k)
    }

    fn nearest(&self, v: f64) -> usize {
        let k = ((v - self.lo) / self.step).round();
        k.clamp(0.0, (self.count - 1) as f64) as usize
    }

    fn unit(&self, k: usize) -> f64 {
        if self.count == 1 { 0.0 } else { k as f64 / (self.count - 1) as f64 }
    }

    fn from_unit(&self, u: f64) -> usize {
        (u.clamp(0.0, 1.0) * (self.count - 1) as f64).round() as usize
    }
}

pub const N_LAYERS: Axis = Axis::new(3.0, 1.0, 4);
pub const N_UNITS: Axis = Axis::new(16.0, 16.0, 11);
/// Learning rates from 1e-4 in steps of 5e-3; the last point is 0.0951.
pub const LEARNING_RATE: Axis = Axis::new(1e-4, 5e-3, 20);
pub const MU_PRIOR: Axis = Axis::new(-1.5, 0.05, 61);
/// Prior scales from 1e-4 in steps of 5e-4; the last point is 9.6e-3.
pub const SIGMA_PRIOR: Axis = Axis::new(1e-4, 5e-4, 20);
/// Nominal learning-rate range used for the log-scaled encoding.
pub const LEARNING_RATE_RANGE: (f64, f64) = (1e-4, 1e-1);

/// Log-scaled unit coordinate of a learning rate.
pub fn lr_coordinate(lr: f64) -> f64 {
    let (lo, hi) = LEARNING_RATE_RANGE;
    (lr.ln() - lo.ln()) / (hi.ln() - lo.ln())
}

fn lr_from_coordinate(u: f64) -> f64 {
    let (lo, hi) = LEARNING_RATE_RANGE;
    (lo.ln() + u.clamp(0.0, 1.0) * (hi.ln() - lo.ln())).exp()
}

/// One point of the network hyperparameter grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperPoint {
    pub n_layers: usize,
    pub n_units: usize,
    /// Learning rates of the low, mid and high stages.
    pub learning_rates: [f64; 3],
    pub mu_prior: f64,
    pub sigma_prior: f64,
    /// Layers frozen for the mid stage; the high stage freezes one fewer.
    pub n_freeze: usize,
    pub activation: ActivationKind,
}

/// The network hyperparameter grid. `N_frz` ranges over `1..=N_layers-1`
/// and is encoded as a fraction of that range.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace;

impl SearchSpace {
    fn indices(&self, p: &HyperPoint) -> Result<[usize; 7]> {
        let off = |what: &str, v: f64| Error::Precondition(format!("{what} = {v} is not on the search grid"));
        let layers = N_LAYERS.index_of(p.n_layers as f64).ok_or_else(|| off("n_layers", p.n_layers as f64))?;
        let units = N_UNITS.index_of(p.n_units as f64).ok_or_else(|| off("n_units", p.n_units as f64))?;
        let mut lr = [0; 3];
        for (slot, v) in lr.iter_mut().zip(p.learning_rates) {
            *slot = LEARNING_RATE.index_of(v).ok_or_else(|| off("learning_rate", v))?;
        }
        let mu = MU_PRIOR.index_of(p.mu_prior).ok_or_else(|| off("mu_prior", p.mu_prior))?;
        let sigma = SIGMA_PRIOR.index_of(p.sigma_prior).ok_or_else(|| off("sigma_prior", p.sigma_prior))?;
        if p.n_freeze < 1 || p.n_freeze >= p.n_layers {
            return Err(Error::Precondition(format!(
                "n_freeze = {} must lie in 1..={} for {} layers",
                p.n_freeze,
                p.n_layers - 1,
                p.n_layers
            )));
        }
        Ok([layers, units, lr[0], lr[1], lr[2], mu, sigma])
    }

    pub fn contains(&self, p: &HyperPoint) -> bool {
        self.indices(p).is_ok()
    }
}

fn activation_index(a: ActivationKind) -> usize {
    ActivationKind::ALL.iter().position(|k| *k == a).expect("listed")
}

impl Domain for SearchSpace {
    type Point = HyperPoint;

    fn encoded_dim(&self) -> usize {
        8 + ActivationKind::ALL.len()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> HyperPoint {
        let n_layers = N_LAYERS.value(rng.random_range(0..N_LAYERS.count)) as usize;
        let n_units = N_UNITS.value(rng.random_range(0..N_UNITS.count)) as usize;
        let learning_rates = [0; 3].map(|_| LEARNING_RATE.value(rng.random_range(0..LEARNING_RATE.count)));
        let mu_prior = MU_PRIOR.value(rng.random_range(0..MU_PRIOR.count));
        let sigma_prior = SIGMA_PRIOR.value(rng.random_range(0..SIGMA_PRIOR.count));
        let n_freeze = rng.random_range(1..n_layers);
        let activation = ActivationKind::ALL[rng.random_range(0..ActivationKind::ALL.len())];
        HyperPoint { n_layers, n_units, learning_rates, mu_prior, sigma_prior, n_freeze, activation }
    }

    fn encode(&self, p: &HyperPoint) -> Result<Vec<f64>> {
        let [layers, units, _, _, _, mu, sigma] = self.indices(p)?;
        let mut u = vec![N_LAYERS.unit(layers), N_UNITS.unit(units)];
        u.extend(p.learning_rates.iter().map(|v| lr_coordinate(*v)));
        u.push(MU_PRIOR.unit(mu));
        u.push(SIGMA_PRIOR.unit(sigma));
        u.push((p.n_freeze - 1) as f64 / (p.n_layers - 2) as f64);
        let mut one_hot = [0.0; 3];
        one_hot[activation_index(p.activation)] = 1.0;
        u.extend(one_hot);
        Ok(u)
    }

    fn decode(&self, u: &[f64]) -> HyperPoint {
        let n_layers = N_LAYERS.value(N_LAYERS.from_unit(u[0])) as usize;
        let n_units = N_UNITS.value(N_UNITS.from_unit(u[1])) as usize;
        let learning_rates = [u[2], u[3], u[4]].map(|c| LEARNING_RATE.value(LEARNING_RATE.nearest(lr_from_coordinate(c))));
        let mu_prior = MU_PRIOR.value(MU_PRIOR.from_unit(u[5]));
        let sigma_prior = SIGMA_PRIOR.value(SIGMA_PRIOR.from_unit(u[6]));
        let n_freeze = 1 + (u[7].clamp(0.0, 1.0) * (n_layers - 2) as f64).round() as usize;
        let mut best = 0;
        for i in 1..3 {
            if u[8 + i] > u[8 + best] {
                best = i;
            }
        }
        HyperPoint {
            n_layers,
            n_units,
            learning_rates,
            mu_prior,
            sigma_prior,
            n_freeze,
            activation: ActivationKind::ALL[best],
        }
    }
}

/// A rectangular grid over a box, with points held as per-axis indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridBox {
    pub axes: Vec<Axis>,
}

impl GridBox {
    /// `points[d]` evenly spaced values spanning `bounds[d]` inclusive.
    pub fn new(bounds: &[(f64, f64)], points: &[usize]) -> Result<Self> {
        if bounds.is_empty() || bounds.len() != points.len() {
            return Err(Error::InvalidConfig("grid needs one point count per bound".into()));
        }
        let mut axes = Vec::with_capacity(bounds.len());
        for (&(lo, hi), &n) in bounds.iter().zip(points) {
            if n < 2 || !(hi > lo) {
                return Err(Error::InvalidConfig(format!("grid axis [{lo}, {hi}] with {n} points")));
            }
            axes.push(Axis::new(lo, (hi - lo) / (n - 1) as f64, n));
        }
        Ok(Self { axes })
    }

    pub fn values(&self, p: &[usize]) -> Vec<f64> {
        self.axes.iter().zip(p).map(|(a, k)| a.value(*k)).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Domain for GridBox {
    type Point = Vec<usize>;

    fn encoded_dim(&self) -> usize {
        self.axes.len()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        self.axes.iter().map(|a| rng.random_range(0..a.count)).collect()
    }

    fn encode(&self, p: &Vec<usize>) -> Result<Vec<f64>> {
        if p.len() != self.axes.len() {
            return Err(Error::Dimension { context: "grid point", expected: self.axes.len(), got: p.len() });
        }
        p.iter()
            .zip(&self.axes)
            .map(|(k, a)| {
                if *k < a.count {
                    Ok(a.unit(*k))
                } else {
                    Err(Error::Precondition(format!("grid index {k} outside 0..{}", a.count)))
                }
            })
            .collect()
    }

    fn decode(&self, u: &[f64]) -> Vec<usize> {
        self.axes.iter().zip(u).map(|(a, v)| a.from_unit(*v)).collect()
    }
}

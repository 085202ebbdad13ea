use serde::{Deserialize, Serialize};

use super::{fit_kriging, fit_kriging_with_trend, KrigingModel, SearchBudget};
use crate::data::{FidelityDataset, Normalizer};
use crate::error::{ensure, Error, Result};
use crate::num::Real;

/// One link of the chain. Levels after the first see the previous level's
/// mean as an extra input, min-max scaled with the stored `(min, range)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CoKrigingLevel<T: Real> {
    pub model: KrigingModel<T>,
    pub augment: Option<(T, T)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CoKrigingModel<T: Real> {
    pub base_dim: usize,
    pub levels: Vec<CoKrigingLevel<T>>,
}

fn scale<T: Real>(v: T, (min, range): (T, T)) -> T {
    (v - min) / range
}

impl<T: Real> CoKrigingModel<T> {
    /// Mean and std of level `upto` (inclusive) at `x`.
    pub fn predict_level(&self, x: &[T], upto: usize) -> Result<(T, T)> {
        if x.len() != self.base_dim {
            return Err(Error::Dimension { context: "co-kriging query", expected: self.base_dim, got: x.len() });
        }
        ensure(upto < self.levels.len(), || format!("co-kriging has {} levels", self.levels.len()))?;
        let mut out = self.levels[0].model.predict(x)?;
        let mut aug = x.to_vec();
        aug.push(T::zero());
        for level in &self.levels[1..=upto] {
            let affine = level.augment.expect("levels after the first are augmented");
            aug[self.base_dim] = scale(out.0, affine);
            out = level.model.predict(&aug)?;
        }
        Ok(out)
    }

    pub fn predict(&self, x: &[T]) -> Result<(T, T)> {
        self.predict_level(x, self.levels.len() - 1)
    }
}

pub fn predict_cokriging<T: Real>(model: &CoKrigingModel<T>, x: &[T]) -> Result<(T, T)> {
    model.predict(x)
}

/// Fits the chain on `(inputs, targets)` pairs ordered from lowest to highest
/// fidelity. Level `k` is fitted with its seed offset by `k`. Levels after the
/// first use a trend linear in the augmented coordinate, so a scaled copy of
/// the previous level is captured by the trend and the kernel models the rest.
pub fn fit_cokriging<T: Real>(levels: &[(Vec<Vec<T>>, Vec<T>)], budget: &SearchBudget) -> Result<CoKrigingModel<T>> {
    ensure(levels.len() >= 2, || format!("co-kriging needs at least 2 fidelity levels, got {}", levels.len()))?;
    for (k, (x, y)) in levels.iter().enumerate() {
        ensure(x.len() >= 2 && x.len() == y.len(), || {
            format!("co-kriging level {k} needs at least 2 points with matching targets")
        })?;
    }
    let base_dim = levels[0].0[0].len();
    let level_budget = |k: usize| budget.clone().with_seed(budget.seed.wrapping_add(k as u64));

    let first = fit_kriging(&levels[0].0, &levels[0].1, &level_budget(0))?;
    let mut model = CoKrigingModel { base_dim, levels: vec![CoKrigingLevel { model: first, augment: None }] };
    for (k, (x, y)) in levels.iter().enumerate().skip(1) {
        let prev: Vec<T> = x
            .iter()
            .map(|xi| model.predict(xi).map(|p| p.0))
            .collect::<Result<_>>()?;
        let lo = prev.iter().copied().fold(T::infinity(), T::min);
        let hi = prev.iter().copied().fold(T::neg_infinity(), T::max);
        let range = if hi > lo { hi - lo } else { T::one() };
        let affine = (lo, range);
        let augmented: Vec<Vec<T>> = x
            .iter()
            .zip(&prev)
            .map(|(xi, p)| {
                let mut r = xi.clone();
                r.push(scale(*p, affine));
                r
            })
            .collect();
        let fitted = fit_kriging_with_trend(&augmented, y, &[base_dim], &level_budget(k))?;
        model.levels.push(CoKrigingLevel { model: fitted, augment: Some(affine) });
    }
    Ok(model)
}

/// Co-kriging chains for both aerodynamic coefficients on normalized data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiOutputCoKriging {
    pub normalizer: Normalizer,
    /// One chain per output column (`cl`, `cm`).
    pub channels: Vec<CoKrigingModel<f64>>,
}

impl MultiOutputCoKriging {
    /// Physical-unit means and stds at one flow condition.
    pub fn predict(&self, aoa: f64, mach: f64) -> Result<([f64; 2], [f64; 2])> {
        let u = self.normalizer.normalize_input(&[aoa, mach]);
        let mut m = [0.0; 2];
        let mut s = [0.0; 2];
        for (c, chain) in self.channels.iter().enumerate() {
            let (mean, std) = chain.predict(&u)?;
            m[c] = mean;
            s[c] = std;
        }
        let mean = self.normalizer.denormalize_output(&m);
        let std = self.normalizer.denormalize_std(&s);
        Ok(([mean[0], mean[1]], [std[0], std[1]]))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Fits one chain per output on datasets ordered low to high fidelity, in the
/// normalizer's units.
pub fn fit_cokriging_datasets(
    datasets: &[&FidelityDataset],
    normalizer: &Normalizer,
    budget: &SearchBudget,
) -> Result<MultiOutputCoKriging> {
    let mut channels = Vec::with_capacity(2);
    for c in 0..2 {
        let levels: Vec<(Vec<Vec<f64>>, Vec<f64>)> = datasets
            .iter()
            .map(|ds| {
                ds.samples
                    .iter()
                    .map(|s| (normalizer.normalize_input(&s.inputs()), normalizer.normalize_output(&s.outputs())[c]))
                    .unzip()
            })
            .collect();
        channels.push(fit_cokriging(&levels, budget)?);
    }
    Ok(MultiOutputCoKriging { normalizer: normalizer.clone(), channels })
}

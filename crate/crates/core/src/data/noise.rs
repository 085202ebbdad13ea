use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FidelityDataset, Sample};
use crate::error::{Error, Result};

/// Fraction of extra noisy rows appended to the dataset.
pub const AUGMENT_FRACTION: f64 = 0.3;
/// Noise std relative to the mean of the perturbed column.
pub const NOISE_REL_STD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Cl,
    Cm,
}

impl Channel {
    pub fn label(self) -> &'static str {
        match self {
            Channel::Cl => "C_L",
            Channel::Cm => "C_M",
        }
    }

    fn get(self, s: &Sample) -> f64 {
        match self {
            Channel::Cl => s.cl,
            Channel::Cm => s.cm,
        }
    }

    fn get_mut(self, s: &mut Sample) -> &mut f64 {
        match self {
            Channel::Cl => &mut s.cl,
            Channel::Cm => &mut s.cm,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseInjection {
    pub dataset: FidelityDataset,
    pub channel: Channel,
    /// Standard deviation of the added Gaussian noise.
    pub noise_std: f64,
    pub n_added: usize,
}

/// Appends `round(0.3 N)` resampled rows whose `channel` value carries
/// Gaussian noise with std equal to 1% of that column's mean. The original
/// rows and the other column are left untouched.
pub fn inject_noise<R: Rng + ?Sized>(
    dataset: &FidelityDataset,
    channel: Channel,
    rng: &mut R,
) -> Result<NoiseInjection> {
    if dataset.is_empty() {
        return Err(Error::Empty(format!("{} dataset for noise injection", dataset.fidelity)));
    }
    let n = dataset.len();
    let mean = dataset.samples.iter().map(|s| channel.get(s)).sum::<f64>() / n as f64;
    if mean == 0.0 || !mean.is_finite() {
        return Err(Error::Precondition(format!(
            "{} column of the {} dataset has zero mean; relative noise is undefined",
            channel.label(),
            dataset.fidelity
        )));
    }
    let noise_std = NOISE_REL_STD * mean.abs();
    let normal = Normal::new(0.0, noise_std).map_err(|e| Error::Precondition(e.to_string()))?;
    let n_added = (AUGMENT_FRACTION * n as f64).round() as usize;

    let mut samples = dataset.samples.clone();
    samples.reserve(n_added);
    for _ in 0..n_added {
        let mut s = dataset.samples[rng.random_range(0..n)];
        *channel.get_mut(&mut s) += normal.sample(rng);
        samples.push(s);
    }
    Ok(NoiseInjection {
        dataset: FidelityDataset::new_augmented(dataset.fidelity, samples)?,
        channel,
        noise_std,
        n_added,
    })
}

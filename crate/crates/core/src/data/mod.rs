//! Fidelity-tagged aerodynamic datasets, normalization, CSV I/O, synthetic
//! multi-fidelity generators and noise augmentation.

mod csvio;
mod noise;
mod synth;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::num::Real;

pub use csvio::{load_csv, read_csv, write_csv, write_csv_to, CSV_HEADER};
pub use noise::{inject_noise, Channel, NoiseInjection};
pub use synth::{
    critical_mach, make_grid, synth_forrester, synth_transonic2d, BenchmarkSizes, ForresterLevel,
    TransonicBenchmark, TransonicConstants, TRANSONIC,
};

pub const AOA_RANGE: (f64, f64) = (0.0, 4.0);
pub const MACH_RANGE: (f64, f64) = (0.70, 0.84);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    Low,
    Mid,
    High,
}

impl Fidelity {
    pub const ALL: [Fidelity; 3] = [Fidelity::Low, Fidelity::Mid, Fidelity::High];

    pub fn tag(self) -> &'static str {
        match self {
            Fidelity::Low => "low",
            Fidelity::Mid => "mid",
            Fidelity::High => "high",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Fidelity::Low => "LF",
            Fidelity::Mid => "MF",
            Fidelity::High => "HF",
        }
    }
}

impl std::str::FromStr for Fidelity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(Fidelity::Low),
            "mid" => Ok(Fidelity::Mid),
            "high" => Ok(Fidelity::High),
            other => Err(Error::InvalidConfig(format!("unknown fidelity tag `{other}`"))),
        }
    }
}

impl std::fmt::Display for Fidelity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// One flow condition and its coefficients. Angles in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub aoa: f64,
    pub mach: f64,
    pub cl: f64,
    pub cm: f64,
}

impl Sample {
    pub fn inputs(&self) -> [f64; 2] {
        [self.aoa, self.mach]
    }

    pub fn outputs(&self) -> [f64; 2] {
        [self.cl, self.cm]
    }

    fn is_finite(&self) -> bool {
        self.aoa.is_finite() && self.mach.is_finite() && self.cl.is_finite() && self.cm.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityDataset {
    pub fidelity: Fidelity,
    pub samples: Vec<Sample>,
}

impl FidelityDataset {
    /// Validates finiteness and rejects repeated `(aoa, mach)` pairs.
    pub fn new(fidelity: Fidelity, samples: Vec<Sample>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("{fidelity} sample {i}")));
        }
        let dups = duplicate_pairs(&samples);
        if let Some((a, b)) = dups.first() {
            return Err(Error::Precondition(format!(
                "{fidelity} dataset repeats (aoa, mach) at samples {a} and {b}"
            )));
        }
        Ok(Self { fidelity, samples })
    }

    /// Skips the duplicate check; used for noise-augmented data whose appended
    /// rows repeat existing inputs by construction.
    pub fn new_augmented(fidelity: Fidelity, samples: Vec<Sample>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("{fidelity} sample {i}")));
        }
        Ok(Self { fidelity, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn with_fidelity(mut self, fidelity: Fidelity) -> Self {
        self.fidelity = fidelity;
        self
    }

    /// Seeded shuffle, then the first `round(fraction * n)` samples become the
    /// validation set. A zero fraction validates on the training data itself.
    pub fn split_validation<R: Rng + ?Sized>(
        &self,
        fraction: f64,
        rng: &mut R,
    ) -> Result<(FidelityDataset, FidelityDataset)> {
        ensure((0.0..1.0).contains(&fraction), || {
            format!("validation fraction must lie in [0,1), got {fraction}")
        })?;
        if self.is_empty() {
            return Err(Error::Empty(format!("{} dataset", self.fidelity)));
        }
        let n_val = (fraction * self.len() as f64).round() as usize;
        if n_val == 0 {
            return Ok((self.clone(), self.clone()));
        }
        ensure(n_val < self.len(), || "validation split leaves no training data".into())?;
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let pick = |ids: &[usize]| {
            let mut ids = ids.to_vec();
            ids.sort_unstable();
            FidelityDataset {
                fidelity: self.fidelity,
                samples: ids.iter().map(|&i| self.samples[i]).collect(),
            }
        };
        Ok((pick(&idx[n_val..]), pick(&idx[..n_val])))
    }
}

fn duplicate_pairs(samples: &[Sample]) -> Vec<(usize, usize)> {
    let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
    let mut dups = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        if let Some(&j) = seen.get(&(s.aoa.to_bits(), s.mach.to_bits())) {
            dups.push((j, i));
        } else {
            seen.insert((s.aoa.to_bits(), s.mach.to_bits()), i);
        }
    }
    dups
}

/// Min-max scaling of inputs to `[0,1]` and standardization of outputs.
///
/// Output statistics come from the low-fidelity training set and are then
/// frozen, so every transfer stage regresses onto the same target scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub input_min: Vec<f64>,
    pub input_max: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_std: Vec<f64>,
}

impl Normalizer {
    pub fn new(
        input_min: Vec<f64>,
        input_max: Vec<f64>,
        output_mean: Vec<f64>,
        output_std: Vec<f64>,
    ) -> Result<Self> {
        ensure(input_min.len() == input_max.len(), || "input bound lengths differ".into())?;
        ensure(output_mean.len() == output_std.len(), || "output stat lengths differ".into())?;
        for (d, (lo, hi)) in input_min.iter().zip(&input_max).enumerate() {
            ensure(hi > lo, || format!("input {d}: max {hi} must exceed min {lo}"))?;
        }
        for (d, s) in output_std.iter().enumerate() {
            ensure(*s > 0.0 && s.is_finite(), || format!("output {d}: std must be positive, got {s}"))?;
        }
        Ok(Self { input_min, input_max, output_mean, output_std })
    }

    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_min: vec![0.0; input_dim],
            input_max: vec![1.0; input_dim],
            output_mean: vec![0.0; output_dim],
            output_std: vec![1.0; output_dim],
        }
    }

    /// Design-box input ranges with output statistics taken from `low`.
    pub fn from_low_fidelity(low: &FidelityDataset) -> Result<Self> {
        if low.is_empty() {
            return Err(Error::Empty("low-fidelity dataset for normalization".into()));
        }
        let n = low.len() as f64;
        let mut mean = [0.0; 2];
        for s in &low.samples {
            for (m, v) in mean.iter_mut().zip(s.outputs()) {
                *m += v / n;
            }
        }
        let mut var = [0.0; 2];
        for s in &low.samples {
            for ((acc, v), m) in var.iter_mut().zip(s.outputs()).zip(mean) {
                *acc += (v - m) * (v - m) / n;
            }
        }
        Self::new(
            vec![AOA_RANGE.0, MACH_RANGE.0],
            vec![AOA_RANGE.1, MACH_RANGE.1],
            mean.to_vec(),
            var.iter().map(|v| v.sqrt()).collect(),
        )
    }

    pub fn input_dim(&self) -> usize {
        self.input_min.len()
    }

    pub fn output_dim(&self) -> usize {
        self.output_mean.len()
    }

    pub fn normalize_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.input_min.iter().zip(&self.input_max))
            .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
            .collect()
    }

    pub fn denormalize_input(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.input_min.iter().zip(&self.input_max))
            .map(|(v, (lo, hi))| lo + v * (hi - lo))
            .collect()
    }

    pub fn normalize_output(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.output_mean.iter().zip(&self.output_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize_output(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.output_mean.iter().zip(&self.output_std))
            .map(|(v, (m, s))| m + v * s)
            .collect()
    }

    /// Scales a standard deviation from normalized to physical output units.
    pub fn denormalize_std(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.output_std).map(|(v, s)| v * s).collect()
    }

    /// Checks that every input of `dataset` lies within the normalizer's box.
    pub fn check_covers(&self, dataset: &FidelityDataset) -> Result<()> {
        const SLACK: f64 = 1e-12;
        let offenders: Vec<String> = dataset
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| {
                s.inputs().iter().zip(self.input_min.iter().zip(&self.input_max)).any(|(v, (lo, hi))| {
                    *v < lo - SLACK * (hi - lo) || *v > hi + SLACK * (hi - lo)
                })
            })
            .map(|(i, s)| format!("#{i} (aoa={}, mach={})", s.aoa, s.mach))
            .collect();
        if offenders.is_empty() {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "{} samples outside the normalization box: {}",
                dataset.fidelity,
                offenders.join(", ")
            )))
        }
    }
}

/// A dataset mapped into network coordinates, remembering the normalizer it
/// was mapped with.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedSet<T> {
    pub fidelity: Fidelity,
    pub normalizer: Normalizer,
    pub inputs: Vec<Vec<T>>,
    pub targets: Vec<Vec<T>>,
}

impl<T: Real> NormalizedSet<T> {
    pub fn from_rows(
        fidelity: Fidelity,
        normalizer: Normalizer,
        inputs: Vec<Vec<T>>,
        targets: Vec<Vec<T>>,
    ) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Dimension { context: "normalized rows", expected: inputs.len(), got: targets.len() });
        }
        for x in &inputs {
            if x.len() != normalizer.input_dim() {
                return Err(Error::Dimension { context: "normalized input", expected: normalizer.input_dim(), got: x.len() });
            }
        }
        for y in &targets {
            if y.len() != normalizer.output_dim() {
                return Err(Error::Dimension { context: "normalized target", expected: normalizer.output_dim(), got: y.len() });
            }
        }
        Ok(Self { fidelity, normalizer, inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Targets mapped back to physical units.
    pub fn physical_targets(&self) -> Vec<Vec<f64>> {
        self.targets
            .iter()
            .map(|y| {
                let z: Vec<f64> = y.iter().map(|v| v.to_f64_lossy()).collect();
                self.normalizer.denormalize_output(&z)
            })
            .collect()
    }
}

pub fn normalize<T: Real>(dataset: &FidelityDataset, normalizer: &Normalizer) -> Result<NormalizedSet<T>> {
    ensure(normalizer.input_dim() == 2 && normalizer.output_dim() == 2, || {
        "aerodynamic datasets need a 2-in/2-out normalizer".into()
    })?;
    normalizer.check_covers(dataset)?;
    let conv = |v: Vec<f64>| v.into_iter().map(T::lit).collect::<Vec<T>>();
    let inputs = dataset.samples.iter().map(|s| conv(normalizer.normalize_input(&s.inputs()))).collect();
    let targets = dataset.samples.iter().map(|s| conv(normalizer.normalize_output(&s.outputs()))).collect();
    Ok(NormalizedSet { fidelity: dataset.fidelity, normalizer: normalizer.clone(), inputs, targets })
}

pub fn denormalize<T: Real>(set: &NormalizedSet<T>) -> FidelityDataset {
    let samples = set
        .inputs
        .iter()
        .zip(&set.targets)
        .map(|(x, y)| {
            let x: Vec<f64> = x.iter().map(|v| v.to_f64_lossy()).collect();
            let y: Vec<f64> = y.iter().map(|v| v.to_f64_lossy()).collect();
            let p = set.normalizer.denormalize_input(&x);
            let o = set.normalizer.denormalize_output(&y);
            Sample { aoa: p[0], mach: p[1], cl: o[0], cm: o[1] }
        })
        .collect();
    FidelityDataset { fidelity: set.fidelity, samples }
}

//! Synthetic multi-fidelity test problems.
//!
//! `synth_transonic2d` is a closed-form stand-in for panel-method / coarse RANS /
//! fine RANS wing data over the `(AoA, Mach)` design box. The low level is a
//! thin-airfoil analog: linear in incidence and blind to Mach. The high level
//! adds Prandtl-Glauert compressibility and a tanh-shaped shock onset whose
//! critical Mach drops with incidence; the mid level smooths that onset and
//! carries a small systematic bias.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Fidelity, FidelityDataset, Sample, AOA_RANGE, MACH_RANGE};
use crate::error::{ensure, Error, Result};

/// Cartesian grid over the design box, AoA-major, endpoints included exactly.
pub fn make_grid(n_aoa: usize, n_mach: usize) -> Result<Vec<(f64, f64)>> {
    ensure(n_aoa >= 2 && n_mach >= 2, || format!("grid needs at least 2x2 points, got {n_aoa}x{n_mach}"))?;
    let aoa = linspace(AOA_RANGE.0, AOA_RANGE.1, n_aoa);
    let mach = linspace(MACH_RANGE.0, MACH_RANGE.1, n_mach);
    Ok(aoa.iter().flat_map(|&a| mach.iter().map(move |&m| (a, m))).collect())
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForresterLevel {
    Low,
    High,
}

/// The one-dimensional Forrester pair on `[0,1]`.
pub fn synth_forrester(x: f64, level: ForresterLevel) -> Result<f64> {
    ensure((0.0..=1.0).contains(&x), || format!("Forrester input must lie in [0,1], got {x}"))?;
    let high = (6.0 * x - 2.0).powi(2) * (12.0 * x - 4.0).sin();
    Ok(match level {
        ForresterLevel::High => high,
        ForresterLevel::Low => 0.5 * high + 10.0 * (x - 0.5) - 5.0,
    })
}

/// Constants of the transonic generator. Recorded verbatim in data manifests.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransonicConstants {
    /// Critical Mach at zero incidence.
    pub mach_crit0: f64,
    /// Drop of the critical Mach per degree of incidence.
    pub mach_crit_slope: f64,
    /// Shock-onset sharpness of the high level; the mid level uses half.
    pub shock_sharpness: f64,
    /// Relative lift change across the shock onset.
    pub shock_lift: f64,
    pub cm0: f64,
    /// Moment slope per radian.
    pub cm_alpha: f64,
    /// Nose-down moment increment across the shock.
    pub shock_moment: f64,
    /// Multiplicative bias of the mid level.
    pub mid_bias: f64,
}

pub const TRANSONIC: TransonicConstants = TransonicConstants {
    mach_crit0: 0.82,
    mach_crit_slope: 0.01,
    shock_sharpness: 20.0,
    shock_lift: 0.3,
    cm0: -0.05,
    cm_alpha: -0.5,
    shock_moment: 0.02,
    mid_bias: 1.02,
};

pub fn critical_mach(aoa_deg: f64) -> f64 {
    TRANSONIC.mach_crit0 - TRANSONIC.mach_crit_slope * aoa_deg
}

/// `(cl, cm)` at one flow condition. Pure and deterministic.
pub fn synth_transonic2d(aoa_deg: f64, mach: f64, level: Fidelity) -> Result<(f64, f64)> {
    const SLACK: f64 = 1e-12;
    if !(AOA_RANGE.0 - SLACK..=AOA_RANGE.1 + SLACK).contains(&aoa_deg)
        || !(MACH_RANGE.0 - SLACK..=MACH_RANGE.1 + SLACK).contains(&mach)
    {
        return Err(Error::Precondition(format!(
            "(aoa={aoa_deg}, mach={mach}) outside the design box [0,4]x[0.70,0.84]"
        )));
    }
    let c = &TRANSONIC;
    let a = aoa_deg.to_radians();
    let thin_cl = 2.0 * PI * a;
    let thin_cm = c.cm0 + c.cm_alpha * a;
    if level == Fidelity::Low {
        return Ok((thin_cl, thin_cm));
    }
    let (sharpness, bias) = match level {
        Fidelity::High => (c.shock_sharpness, 1.0),
        _ => (0.5 * c.shock_sharpness, c.mid_bias),
    };
    let pg = 1.0 / (1.0 - mach * mach).sqrt();
    let onset = (sharpness * (mach - critical_mach(aoa_deg))).tanh();
    let cl = thin_cl * (1.0 + c.shock_lift * onset) * pg;
    let cm = thin_cm * pg - c.shock_moment * (1.0 + onset) * (0.5 + aoa_deg / AOA_RANGE.1);
    Ok((bias * cl, bias * cm))
}

fn sample_at(aoa: f64, mach: f64, level: Fidelity) -> Result<Sample> {
    let (cl, cm) = synth_transonic2d(aoa, mach, level)?;
    Ok(Sample { aoa, mach, cl, cm })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSizes {
    pub low_aoa: usize,
    pub low_mach: usize,
    pub mid: usize,
    pub high_total: usize,
    pub high_train: usize,
}

impl Default for BenchmarkSizes {
    fn default() -> Self {
        Self { low_aoa: 25, low_mach: 25, mid: 49, high_total: 58, high_train: 7 }
    }
}

/// The default desk-scale benchmark: a full low-fidelity grid, mid-fidelity
/// points clustered toward high incidence and Mach, and a high-fidelity set
/// split into a small training subset and a held-out test set.
#[derive(Clone, Debug, PartialEq)]
pub struct TransonicBenchmark {
    pub low: FidelityDataset,
    pub mid: FidelityDataset,
    pub high_train: FidelityDataset,
    pub high_test: FidelityDataset,
}

impl TransonicBenchmark {
    pub fn generate(seed: u64, sizes: BenchmarkSizes) -> Result<Self> {
        ensure(sizes.mid >= 2, || "need at least 2 mid-fidelity samples".into())?;
        ensure(sizes.high_train >= 1 && sizes.high_train < sizes.high_total, || {
            format!("high-fidelity split {}/{} is invalid", sizes.high_train, sizes.high_total)
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let low = make_grid(sizes.low_aoa, sizes.low_mach)?
            .into_iter()
            .map(|(a, m)| sample_at(a, m, Fidelity::Low))
            .collect::<Result<Vec<_>>>()?;

        let mid = clustered_points(sizes.mid, &mut rng)
            .into_iter()
            .map(|(a, m)| sample_at(a, m, Fidelity::Mid))
            .collect::<Result<Vec<_>>>()?;

        let high_points = latin_hypercube(sizes.high_total, &mut rng);
        let train_idx = maximin_subset(&high_points, sizes.high_train);
        let mut high_train = Vec::with_capacity(sizes.high_train);
        let mut high_test = Vec::with_capacity(sizes.high_total - sizes.high_train);
        for (i, &(a, m)) in high_points.iter().enumerate() {
            let s = sample_at(a, m, Fidelity::High)?;
            if train_idx.contains(&i) {
                high_train.push(s);
            } else {
                high_test.push(s);
            }
        }

        Ok(Self {
            low: FidelityDataset::new(Fidelity::Low, low)?,
            mid: FidelityDataset::new(Fidelity::Mid, mid)?,
            high_train: FidelityDataset::new(Fidelity::High, high_train)?,
            high_test: FidelityDataset::new(Fidelity::High, high_test)?,
        })
    }
}

fn to_physical(u: f64, v: f64) -> (f64, f64) {
    (
        AOA_RANGE.0 + u * (AOA_RANGE.1 - AOA_RANGE.0),
        MACH_RANGE.0 + v * (MACH_RANGE.1 - MACH_RANGE.0),
    )
}

/// Rejection sampling with density proportional to `1 + 3 s`, where `s` is
/// `aoa * mach` rescaled to `[0,1]` over the box.
fn clustered_points<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<(f64, f64)> {
    let s_max = AOA_RANGE.1 * MACH_RANGE.1;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (a, m) = to_physical(rng.random(), rng.random());
        let s = (a * m) / s_max;
        if rng.random::<f64>() * 4.0 <= 1.0 + 3.0 * s {
            out.push((a, m));
        }
    }
    out
}

fn latin_hypercube<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<(f64, f64)> {
    let mut strata_u: Vec<usize> = (0..n).collect();
    let mut strata_v: Vec<usize> = (0..n).collect();
    strata_u.shuffle(rng);
    strata_v.shuffle(rng);
    strata_u
        .into_iter()
        .zip(strata_v)
        .map(|(i, j)| {
            let u = (i as f64 + rng.random::<f64>()) / n as f64;
            let v = (j as f64 + rng.random::<f64>()) / n as f64;
            to_physical(u, v)
        })
        .collect()
}

/// Greedy maximin selection in normalized coordinates, seeded with the point
/// closest to the high-incidence / high-Mach corner.
fn maximin_subset(points: &[(f64, f64)], k: usize) -> Vec<usize> {
    let unit: Vec<(f64, f64)> = points
        .iter()
        .map(|&(a, m)| {
            (
                (a - AOA_RANGE.0) / (AOA_RANGE.1 - AOA_RANGE.0),
                (m - MACH_RANGE.0) / (MACH_RANGE.1 - MACH_RANGE.0),
            )
        })
        .collect();
    let d2 = |p: (f64, f64), q: (f64, f64)| (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2);
    let corner = (0..unit.len())
        .min_by(|&i, &j| d2(unit[i], (1.0, 1.0)).total_cmp(&d2(unit[j], (1.0, 1.0))))
        .expect("non-empty point set");
    let mut chosen = vec![corner];
    let mut nearest: Vec<f64> = unit.iter().map(|&p| d2(p, unit[corner])).collect();
    while chosen.len() < k {
        let next = (0..unit.len())
            .filter(|i| !chosen.contains(i))
            .max_by(|&i, &j| nearest[i].total_cmp(&nearest[j]).then(j.cmp(&i)))
            .expect("enough points");
        chosen.push(next);
        for (i, n) in nearest.iter_mut().enumerate() {
            *n = n.min(d2(unit[i], unit[next]));
        }
    }
    chosen.sort_unstable();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_corners_and_counts() {
        let g = make_grid(2, 2).unwrap();
        assert_eq!(g, vec![(0.0, 0.70), (0.0, 0.84), (4.0, 0.70), (4.0, 0.84)]);
        let g = make_grid(25, 25).unwrap();
        assert_eq!(g.len(), 625);
        assert!((g[25].0 - g[0].0 - 4.0 / 24.0).abs() < 1e-15);
        assert!((g[25].0 - 0.1667).abs() < 1e-4);
        assert_eq!(g.last().copied(), Some((4.0, 0.84)));
        assert!(make_grid(1, 5).is_err());
    }

    #[test]
    fn forrester_reference_values() {
        let h0 = synth_forrester(0.0, ForresterLevel::High).unwrap();
        assert!((h0 - 4.0 * (-4.0f64).sin()).abs() < 1e-12);
        assert!((h0 - 3.0272).abs() < 1e-4);
        let h1 = synth_forrester(1.0, ForresterLevel::High).unwrap();
        assert!((h1 - 15.8297).abs() < 1e-4);
        let l0 = synth_forrester(0.0, ForresterLevel::Low).unwrap();
        assert!((l0 - (0.5 * h0 - 10.0)).abs() < 1e-12);
        assert!((l0 - (-8.4864)).abs() < 1e-4);
        assert!(synth_forrester(1.5, ForresterLevel::Low).is_err());
    }

    #[test]
    fn transonic_low_level_properties() {
        assert_eq!(synth_transonic2d(0.0, 0.77, Fidelity::Low).unwrap().0, 0.0);
        assert_eq!(
            synth_transonic2d(2.0, 0.70, Fidelity::Low).unwrap(),
            synth_transonic2d(2.0, 0.84, Fidelity::Low).unwrap()
        );
        assert!(synth_transonic2d(4.5, 0.77, Fidelity::High).is_err());
        assert!(synth_transonic2d(2.0, 0.9, Fidelity::Mid).is_err());
    }

    #[test]
    fn fidelity_gap_grows_in_nonlinear_corner() {
        let gap = |a, m| {
            let h = synth_transonic2d(a, m, Fidelity::High).unwrap().0;
            let l = synth_transonic2d(a, m, Fidelity::Low).unwrap().0;
            (h - l).abs()
        };
        assert!(gap(4.0, 0.84) > gap(1.0, 0.70));
    }

    #[test]
    fn generators_are_pure() {
        for level in Fidelity::ALL {
            let a = synth_transonic2d(3.1, 0.81, level).unwrap();
            let b = synth_transonic2d(3.1, 0.81, level).unwrap();
            assert_eq!(a.0.to_bits(), b.0.to_bits());
            assert_eq!(a.1.to_bits(), b.1.to_bits());
        }
    }

    #[test]
    fn benchmark_sizes_and_determinism() {
        let a = TransonicBenchmark::generate(7, BenchmarkSizes::default()).unwrap();
        assert_eq!(a.low.len(), 625);
        assert_eq!(a.mid.len(), 49);
        assert_eq!(a.high_train.len(), 7);
        assert_eq!(a.high_test.len(), 51);
        assert_eq!(a, TransonicBenchmark::generate(7, BenchmarkSizes::default()).unwrap());
        // corner point forced into the training subset
        assert!(a.high_train.samples.iter().any(|s| s.aoa > 3.5 && s.mach > 0.82));
    }

    #[test]
    fn mid_points_cluster_toward_high_corner() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = clustered_points(4000, &mut rng);
        let upper = pts.iter().filter(|(a, m)| *a > 2.0 && *m > 0.77).count();
        let lower = pts.iter().filter(|(a, m)| *a < 2.0 && *m < 0.77).count();
        assert!(upper as f64 > 1.6 * lower as f64, "upper {upper} lower {lower}");
    }
}

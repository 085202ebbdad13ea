//! Monte Carlo predictive distribution and the error/uncertainty metrics.
//!
//! The predictive standard deviation is the total predictive uncertainty.
//! Epistemic and aleatoric parts are not separated.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bayesnet::{forward_draw, BayesianNetwork};
use crate::error::{ensure, Error, Result};
use crate::num::Real;

pub const DEFAULT_MC_SAMPLES: usize = 500;

/// Header of the comparison table rows, in column order.
pub const METRIC_CSV_HEADER: &str = "model,eps_cl,sigma_cl,eps_cm,sigma_cm,eps_tot";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult<T> {
    pub mean: Vec<T>,
    /// Unbiased sample std per output.
    pub std: Vec<T>,
    pub n_samples: usize,
}

pub fn mc_predict<T: Real, R: Rng + ?Sized>(
    net: &BayesianNetwork<T>,
    x: &[T],
    n_samples: usize,
    rng: &mut R,
) -> Result<PredictionResult<T>> {
    let mut out = mc_predict_batch(net, std::slice::from_ref(&x.to_vec()), n_samples, rng)?;
    Ok(out.remove(0))
}

/// Predictions for many inputs. Each weight draw is shared by all inputs,
/// so the result is one ensemble of `n_samples` networks.
pub fn mc_predict_batch<T: Real, R: Rng + ?Sized>(
    net: &BayesianNetwork<T>,
    xs: &[Vec<T>],
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<PredictionResult<T>>> {
    ensure(n_samples >= 2, || format!("need at least 2 Monte Carlo samples, got {n_samples}"))?;
    let in_dim = net.input_dim();
    if let Some(x) = xs.iter().find(|x| x.len() != in_dim) {
        return Err(Error::Dimension { context: "prediction input", expected: in_dim, got: x.len() });
    }
    let out_dim = net.output_dim();
    // Welford accumulators per (point, output)
    let mut mean = vec![vec![T::zero(); out_dim]; xs.len()];
    let mut m2 = vec![vec![T::zero(); out_dim]; xs.len()];
    for k in 0..n_samples {
        let draw = net.realize(net.sample_noise(rng));
        let count = T::from_usize(k + 1).expect("sample count");
        for (p, x) in xs.iter().enumerate() {
            let y = forward_draw(&draw, x);
            for (o, v) in y.into_iter().enumerate() {
                let delta = v - mean[p][o];
                mean[p][o] += delta / count;
                m2[p][o] += delta * (v - mean[p][o]);
            }
        }
    }
    let denom = T::from_usize(n_samples - 1).expect("sample count");
    Ok(mean
        .into_iter()
        .zip(m2)
        .map(|(mean, m2)| PredictionResult {
            mean,
            std: m2.into_iter().map(|s| (s / denom).max(T::zero()).sqrt()).collect(),
            n_samples,
        })
        .collect())
}

fn check_pair<T: Real>(a: &[T], truths: &[T]) -> Result<T> {
    if a.is_empty() {
        return Err(Error::Empty("metric inputs".into()));
    }
    if a.len() != truths.len() {
        return Err(Error::Dimension { context: "metric inputs", expected: truths.len(), got: a.len() });
    }
    let total: T = truths.iter().map(|t| t.abs()).sum();
    ensure(total > T::zero(), || "truth vector is all zeros; relative error undefined".into())?;
    Ok(total)
}

/// `100 * sum|pred - truth| / sum|truth|`.
pub fn error_metric<T: Real>(preds: &[T], truths: &[T]) -> Result<T> {
    let total = check_pair(preds, truths)?;
    let abs_err: T = preds.iter().zip(truths).map(|(p, t)| (*p - *t).abs()).sum();
    Ok(T::lit(100.0) * abs_err / total)
}

/// `100 * mean(std) / mean|truth|`.
pub fn sigma_metric<T: Real>(stds: &[T], truths: &[T]) -> Result<T> {
    let total = check_pair(stds, truths)?;
    let sum_std: T = stds.iter().copied().sum();
    Ok(T::lit(100.0) * sum_std / total)
}

/// Quadratic mean of the two channel errors.
pub fn aggregate_total_error<T: Real>(eps_cl: T, eps_cm: T) -> T {
    ((eps_cl * eps_cl + eps_cm * eps_cm) / T::lit(2.0)).sqrt()
}

/// Fraction of `(point, output)` pairs whose truth lies inside `mean ± k std`.
pub fn coverage_fraction<T: Real>(preds: &[PredictionResult<T>], truths: &[Vec<T>], k: T) -> Result<f64> {
    ensure(k > T::zero(), || format!("coverage multiplier must be positive, got {k}"))?;
    if preds.len() != truths.len() {
        return Err(Error::Dimension { context: "coverage inputs", expected: truths.len(), got: preds.len() });
    }
    let mut hit = 0usize;
    let mut total = 0usize;
    for (p, t) in preds.iter().zip(truths) {
        for ((m, s), y) in p.mean.iter().zip(&p.std).zip(t) {
            total += 1;
            if (*y - *m).abs() <= k * *s {
                hit += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Empty("coverage inputs".into()));
    }
    Ok(hit as f64 / total as f64)
}

/// One row of the model comparison table. All values are percentages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub eps_cl: f64,
    pub sigma_cl: f64,
    pub eps_cm: f64,
    pub sigma_cm: f64,
    pub eps_tot: f64,
}

impl MetricReport {
    /// Metrics from physical-unit predictions `(mean, std)` per `[cl, cm]`.
    pub fn from_predictions(means: &[[f64; 2]], stds: &[[f64; 2]], truths: &[[f64; 2]]) -> Result<Self> {
        let col = |v: &[[f64; 2]], c: usize| v.iter().map(|r| r[c]).collect::<Vec<f64>>();
        let eps_cl = error_metric(&col(means, 0), &col(truths, 0))?;
        let eps_cm = error_metric(&col(means, 1), &col(truths, 1))?;
        Ok(Self {
            eps_cl,
            sigma_cl: sigma_metric(&col(stds, 0), &col(truths, 0))?,
            eps_cm,
            sigma_cm: sigma_metric(&col(stds, 1), &col(truths, 1))?,
            eps_tot: aggregate_total_error(eps_cl, eps_cm),
        })
    }

    /// CSV row matching [`METRIC_CSV_HEADER`], fixed to four decimals.
    pub fn csv_row(&self, model: &str) -> String {
        format!(
            "{model},{:.4},{:.4},{:.4},{:.4},{:.4}",
            self.eps_cl, self.sigma_cl, self.eps_cm, self.sigma_cm, self.eps_tot
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayesnet::{BayesianLayer, GaussianPrior, GaussianVariational};
    use proptest::collection::vec as pvec;
    use proptest::prelude::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_net(weight_std: f64) -> BayesianNetwork<f64> {
        BayesianNetwork {
            layers: vec![BayesianLayer {
                in_dim: 1,
                out_dim: 1,
                weights: vec![GaussianVariational::with_std(0.7, weight_std).unwrap()],
                biases: vec![GaussianVariational::new(0.2, -1000.0)],
                prior: GaussianPrior { mu: 0.0, sigma: 1.0 },
                activation: None,
                frozen: false,
            }],
        }
    }

    #[test]
    fn zero_variance_predictions() {
        let net = linear_net(1e-300);
        let p = mc_predict(&net, &[0.5], 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(p.std, vec![0.0]);
        assert!((p.mean[0] - 0.55).abs() < 1e-15);
        assert!(mc_predict(&net, &[0.5], 1, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn linear_propagation_of_weight_std() {
        let net = linear_net(0.1);
        let p = mc_predict(&net, &[1.0], 10_000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!((p.std[0] - 0.1).abs() < 0.005, "{}", p.std[0]);
        assert!((p.mean[0] - 0.9).abs() < 4.0 * 0.1 / 100.0);
    }

    #[test]
    fn mc_convergence_rate() {
        // error of the mean estimate shrinks roughly like 1/sqrt(n)
        let net = linear_net(0.1);
        let err = |n: usize| {
            (0..40u64)
                .map(|s| {
                    let p = mc_predict(&net, &[1.0], n, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
                    (p.mean[0] - 0.9).powi(2)
                })
                .sum::<f64>()
                .sqrt()
        };
        let ratio = err(100) / err(1600);
        assert!(ratio > 2.5 && ratio < 6.5, "ratio {ratio}");
    }

    #[test]
    fn seeded_predictions_repeat() {
        let net = linear_net(0.2);
        let a = mc_predict(&net, &[0.3], 50, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = mc_predict(&net, &[0.3], 50, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn error_metric_cases() {
        assert_eq!(error_metric(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let e: f64 = error_metric(&[1.1, 0.9, 1.1, 0.9], &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((e - 10.0).abs() < 1e-12);
        let e10: f64 = error_metric(&[11.0, 9.0, 11.0, 9.0], &[10.0, 10.0, 10.0, 10.0]).unwrap();
        assert!((e - e10).abs() < 1e-12);
        assert!(error_metric(&[1.0], &[0.0]).is_err());
        assert!(error_metric::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn sigma_metric_cases() {
        assert_eq!(sigma_metric(&[0.0, 0.0], &[0.4, -0.4]).unwrap(), 0.0);
        let s: f64 = sigma_metric(&[0.02; 4], &[0.4, -0.4, 0.4, 0.4]).unwrap();
        assert!((s - 5.0).abs() < 1e-12);
        let s2: f64 = sigma_metric(&[0.04; 4], &[0.4, -0.4, 0.4, 0.4]).unwrap();
        assert!((s2 - 2.0 * s).abs() < 1e-12);
    }

    #[test]
    fn total_error_reproduces_table_rows() {
        let rows = [
            (14.43, 42.02, 31.42),
            (12.63, 7.73, 10.47),
            (15.29, 5.62, 11.52),
            (7.53, 7.70, 7.61),
            (4.24, 5.50, 4.91),
        ];
        for (cl, cm, tot) in rows {
            assert!((aggregate_total_error::<f64>(cl, cm) - tot).abs() <= 0.01, "{cl} {cm}");
        }
        assert_eq!(aggregate_total_error(3.5, 3.5), 3.5);
    }

    #[test]
    fn coverage_extremes_and_calibration() {
        let truths: Vec<Vec<f64>> = vec![vec![1.0], vec![2.0]];
        let wide: Vec<_> = truths
            .iter()
            .map(|t| PredictionResult { mean: vec![t[0] + 5.0], std: vec![1e9], n_samples: 2 })
            .collect();
        assert_eq!(coverage_fraction(&wide, &truths, 1.0).unwrap(), 1.0);
        let tight: Vec<_> = truths
            .iter()
            .map(|t| PredictionResult { mean: vec![t[0] + 0.1], std: vec![0.0], n_samples: 2 })
            .collect();
        assert_eq!(coverage_fraction(&tight, &truths, 1.96).unwrap(), 0.0);

        // truths drawn from the predictive Gaussian itself
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut preds = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..10_000 {
            let m: f64 = rng.random_range(-2.0..2.0);
            let s: f64 = rng.random_range(0.1..1.0);
            let z = f64::sample_standard_normal(&mut rng);
            preds.push(PredictionResult { mean: vec![m], std: vec![s], n_samples: 100 });
            ys.push(vec![m + s * z]);
        }
        let c = coverage_fraction(&preds, &ys, 1.96).unwrap();
        assert!((c - 0.95).abs() < 0.03, "{c}");
    }

    #[test]
    fn csv_row_format() {
        let r = MetricReport { eps_cl: 4.24, sigma_cl: 1.37, eps_cm: 5.5, sigma_cm: 0.71, eps_tot: 4.91 };
        assert_eq!(r.csv_row("MF-BayNet"), "MF-BayNet,4.2400,1.3700,5.5000,0.7100,4.9100");
        assert_eq!(METRIC_CSV_HEADER.split(',').count(), 6);
    }

    proptest! {
        #[test]
        fn error_metric_scale_invariant(
            pairs in pvec((-5.0f64..5.0, 0.1f64..5.0), 1..30),
            scale in 0.01f64..100.0,
        ) {
            let preds: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let truths: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let a = error_metric(&preds, &truths).unwrap();
            let sp: Vec<f64> = preds.iter().map(|v| v * scale).collect();
            let st: Vec<f64> = truths.iter().map(|v| v * scale).collect();
            let b = error_metric(&sp, &st).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn coverage_monotone_in_k(
            rows in pvec((-1.0f64..1.0, 0.0f64..1.0, -1.0f64..1.0), 1..40),
            k1 in 0.01f64..3.0,
            dk in 0.0f64..3.0,
        ) {
            let preds: Vec<_> = rows.iter().map(|r| PredictionResult { mean: vec![r.0], std: vec![r.1], n_samples: 2 }).collect();
            let truths: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.2]).collect();
            let a = coverage_fraction(&preds, &truths, k1).unwrap();
            let b = coverage_fraction(&preds, &truths, k1 + dk).unwrap();
            prop_assert!(b >= a);
        }
    }
}

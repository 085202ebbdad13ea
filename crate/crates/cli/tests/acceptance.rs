//! The acceptance criteria, each checked at its stated tolerance and budget.
//! Runs without the test harness so the PASS/FAIL line of every criterion is
//! always printed. Failures are listed at the end; with `ACCEPTANCE_STRICT=1`
//! they also make the process exit nonzero.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use mfbaynet_cli::commands::{noisy_datasets, read_metrics_csv};
use mfbaynet_cli::config::RunConfig;
use mfbaynet_cli::workflow::{
    evaluate_cokriging, evaluate_network, fit_cokriging_run, load_datasets, train_multi_fidelity,
    train_single_fidelity, Evaluation,
};
use mfbaynet_cli::{cmd_noise_study, cmd_train, NOISE_STUDY_LABELS};
use mfbaynet_core::bayesnet::{
    init_network, kl_gaussian, loss_with_noise, Activation, ActivationKind, Batch, BayesianNetwork, GaussianPrior,
    GaussianVariational, NetworkSpec,
};
use mfbaynet_core::data::{normalize, synth_forrester, Channel, Fidelity, ForresterLevel};
use mfbaynet_core::hyperopt::{run_tuning, Domain, GridBox, TunerConfig};
use mfbaynet_core::inference::aggregate_total_error;
use mfbaynet_core::kriging::{fit_cokriging, fit_kriging, SearchBudget};
use mfbaynet_core::training::{train_stage, FreezeDirection, StageConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Check = Result<String, String>;

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit_secs as f64 {
        Ok(())
    } else {
        Err(format!("took {:.1}s, budget {limit_secs}s", elapsed.as_secs_f64()))
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

fn kl_closed_form() -> Check {
    let t = Instant::now();
    let q = |mu: f64, sigma: f64| GaussianVariational::with_std(mu, sigma).unwrap();
    let p = |mu: f64, sigma: f64| GaussianPrior::new(mu, sigma).unwrap();
    // KL(N(m1,s1²) || N(m2,s2²)) = ln(s2/s1) + (s1² + (m1-m2)²)/(2 s2²) - 1/2
    let cases = [
        (q(0.0, 1.0), p(0.0, 1.0), 0.0),
        (q(1.0, 1.0), p(0.0, 1.0), 0.5),
        (q(0.0, 2.0), p(0.0, 1.0), (0.5f64).ln() + 2.0 - 0.5),
    ];
    for (qq, pp, want) in &cases {
        let got = kl_gaussian(qq, pp).map_err(|e| e.to_string())?;
        if (got - want).abs() > 1e-10 {
            return Err(format!("KL = {got}, expected {want}"));
        }
    }
    if ((0.5f64).ln() + 1.5 - 0.80685).abs() > 1e-5 {
        return Err("hand value drifted".into());
    }

    let (qq, pp) = (q(0.3, 0.7), p(-0.2, 1.3));
    let exact = kl_gaussian(&qq, &pp).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dq = Normal::new(0.3, 0.7).unwrap();
    let log_pdf = |x: f64, m: f64, s: f64| -0.5 * ((x - m) / s).powi(2) - s.ln();
    let n = 1_000_000;
    let mc = (0..n)
        .map(|_| {
            let x = dq.sample(&mut rng);
            log_pdf(x, 0.3, 0.7) - log_pdf(x, -0.2, 1.3)
        })
        .sum::<f64>()
        / n as f64;
    if (mc - exact).abs() > 1e-2 {
        return Err(format!("Monte Carlo KL {mc} vs closed form {exact}"));
    }
    within(t.elapsed(), 5)?;
    Ok(format!("MC {mc:.5} vs {exact:.5}"))
}

fn random_small_network(seed: u64) -> (BayesianNetwork<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_layers = rng.random_range(1..=3);
    let mut widths = vec![rng.random_range(1..=3)];
    for _ in 1..n_layers {
        widths.push(rng.random_range(1..=8));
    }
    widths.push(rng.random_range(1..=3));
    let spec = NetworkSpec {
        widths: widths.clone(),
        activation: ActivationKind::ALL[rng.random_range(0..3)],
        prior: GaussianPrior { mu: rng.random_range(-0.5..0.5), sigma: rng.random_range(0.05..0.5) },
        init_jitter: 0.6,
        seed,
    };
    let mut net = init_network(&spec).unwrap();
    for l in &mut net.layers {
        for q in l.weights.iter_mut().chain(l.biases.iter_mut()) {
            q.rho = rng.random_range(-4.0..0.0);
        }
    }
    let n = rng.random_range(1..=6);
    let xs = (0..n).map(|_| (0..widths[0]).map(|_| rng.random()).collect()).collect();
    let ys = (0..n).map(|_| (0..*widths.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    (net, xs, ys, rng.random_range(0.0..0.05))
}

fn gradient_correctness() -> Check {
    let t = Instant::now();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for seed in 0..20u64 {
        let (net, xs, ys, kl_weight) = random_small_network(seed);
        let noise = net.sample_noise(&mut ChaCha8Rng::seed_from_u64(500 + seed));
        let batch = Batch::new(&xs, &ys);
        let (_, grad) = loss_with_noise(&net, &noise, batch, kl_weight).map_err(|e| e.to_string())?;
        let loss = |n: &BayesianNetwork<f64>| loss_with_noise(n, &noise, batch, kl_weight).unwrap().0.total;
        for (li, layer) in net.layers.iter().enumerate() {
            let g = &grad.layers[li];
            let mut params: Vec<(f64, Box<dyn Fn(&mut BayesianNetwork<f64>) -> &mut f64>)> = Vec::new();
            for i in 0..layer.weights.len() {
                params.push((g.weight_mu[i], Box::new(move |n| &mut n.layers[li].weights[i].mu)));
                params.push((g.weight_rho[i], Box::new(move |n| &mut n.layers[li].weights[i].rho)));
            }
            for i in 0..layer.biases.len() {
                params.push((g.bias_mu[i], Box::new(move |n| &mut n.layers[li].biases[i].mu)));
                params.push((g.bias_rho[i], Box::new(move |n| &mut n.layers[li].biases[i].rho)));
            }
            if matches!(layer.activation, Some(Activation::Prelu { .. })) {
                params.push((
                    g.alpha,
                    Box::new(move |n| match n.layers[li].activation.as_mut() {
                        Some(Activation::Prelu { alpha }) => alpha,
                        _ => unreachable!(),
                    }),
                ));
            }
            for (analytic, slot) in &params {
                let mut plus = net.clone();
                *slot(&mut plus) += h;
                let mut minus = net.clone();
                *slot(&mut minus) -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
                checked += 1;
                if rel > 1e-4 {
                    return Err(format!("seed {seed} layer {li}: analytic {analytic} vs fd {fd}"));
                }
            }
        }
    }
    within(t.elapsed(), 30)?;
    Ok(format!("{checked} partials, worst relative error {worst:.1e}"))
}

fn table_aggregation() -> Check {
    let rows = [
        (14.43, 42.02, 31.42),
        (12.63, 7.73, 10.47),
        (15.29, 5.62, 11.52),
        (7.53, 7.70, 7.61),
        (4.24, 5.50, 4.91),
    ];
    let mut worst = 0.0f64;
    for (cl, cm, tot) in rows {
        let got: f64 = aggregate_total_error(cl, cm);
        worst = worst.max((got - tot).abs());
        if (got - tot).abs() > 0.01 {
            return Err(format!("({cl}, {cm}) -> {got:.4}, table says {tot}"));
        }
    }
    Ok(format!("max deviation {worst:.4}"))
}

fn freezing_invariant() -> Check {
    let t = Instant::now();
    let cfg = RunConfig::default();
    let data = load_datasets(&cfg).map_err(|e| e.to_string())?;
    let norm = data.normalizer().map_err(|e| e.to_string())?;
    let low = normalize::<f64>(&data.low, &norm).unwrap();
    let mid = normalize::<f64>(&data.mid, &norm).unwrap();
    let mut net = init_network(&cfg.network.spec(3)).unwrap();
    if net.n_layers() != 4 {
        return Err(format!("default network has {} layers", net.n_layers()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    train_stage(&mut net, &low, &StageConfig::new(Fidelity::Low, 0.005, 200, 0), &low, &mut rng)
        .map_err(|e| e.to_string())?;
    let params = |n: &BayesianNetwork<f64>, i: usize| {
        let l = &n.layers[i];
        serde_json::to_string(&(&l.weights, &l.biases, &l.activation)).unwrap()
    };
    let before: Vec<String> = (0..4).map(|i| params(&net, i)).collect();
    let mut stage = StageConfig::new(Fidelity::Mid, 0.005, 300, 2);
    stage.freeze_direction = FreezeDirection::FromOutput;
    train_stage(&mut net, &mid, &stage, &mid, &mut rng).map_err(|e| e.to_string())?;
    let after: Vec<String> = (0..4).map(|i| params(&net, i)).collect();
    if net.frozen_flags() != [false, false, true, true] {
        return Err(format!("frozen flags {:?}", net.frozen_flags()));
    }
    for i in 2..4 {
        if before[i] != after[i] {
            return Err(format!("frozen layer {i} changed"));
        }
    }
    for i in 0..2 {
        if before[i] == after[i] {
            return Err(format!("trainable layer {i} did not change"));
        }
    }
    within(t.elapsed(), 120)?;
    Ok("layers 2,3 bit-identical, layers 0,1 updated".into())
}

/// Per-seed evaluations of the three models compared in the ordering check.
struct OrderingRuns {
    mf: Vec<Evaluation>,
    ck: Vec<Evaluation>,
    hf: Vec<Evaluation>,
    elapsed: Duration,
}

fn ordering_runs() -> OrderingRuns {
    let t = Instant::now();
    let (mut mf, mut ck, mut hf) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..5u64 {
        let cfg = RunConfig { seed, ..RunConfig::default() };
        let data = load_datasets(&cfg).unwrap();
        let trained = train_multi_fidelity(&cfg, &data, None).unwrap();
        mf.push(evaluate_network(&trained, &data.high_test, cfg.mc_samples, seed).unwrap());
        let model = fit_cokriging_run(&cfg, &data).unwrap();
        ck.push(evaluate_cokriging(&model, &data.high_test).unwrap());
        let single = train_single_fidelity(&cfg, &data, Fidelity::High, None).unwrap();
        hf.push(evaluate_network(&single, &data.high_test, cfg.mc_samples, seed).unwrap());
    }
    OrderingRuns { mf, ck, hf, elapsed: t.elapsed() }
}

fn fidelity_ordering(runs: &OrderingRuns) -> Check {
    let tot = |v: &[Evaluation]| median(v.iter().map(|e| e.metrics.eps_tot).collect());
    let (mf, ck, hf) = (tot(&runs.mf), tot(&runs.ck), tot(&runs.hf));
    let per_seed = |v: &[Evaluation]| v.iter().map(|e| format!("{:.2}", e.metrics.eps_tot)).collect::<Vec<_>>().join("/");
    let detail = format!(
        "median eps_tot MF-BayNet {mf:.3}, CK {ck:.3}, BNN HF {hf:.3} (MF {}, CK {}, HF {})",
        per_seed(&runs.mf),
        per_seed(&runs.ck),
        per_seed(&runs.hf)
    );
    within(runs.elapsed, 1800)?;
    if mf < ck && mf < hf {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn forrester_cokriging() -> Check {
    let t = Instant::now();
    let level = |xs: &[f64], l| -> (Vec<Vec<f64>>, Vec<f64>) {
        (xs.iter().map(|v| vec![*v]).collect(), xs.iter().map(|v| synth_forrester(*v, l).unwrap()).collect())
    };
    let lf: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
    let levels = vec![level(&lf, ForresterLevel::Low), level(&[0.0, 0.4, 0.6, 1.0], ForresterLevel::High)];
    let budget = SearchBudget::default();
    let ck = fit_cokriging(&levels, &budget).map_err(|e| e.to_string())?;
    let hf = fit_kriging(&levels[1].0, &levels[1].1, &budget).map_err(|e| e.to_string())?;
    let grid: Vec<f64> = (0..=200).map(|i| i as f64 / 200.0).collect();
    let truth: Vec<f64> = grid.iter().map(|x| synth_forrester(*x, ForresterLevel::High).unwrap()).collect();
    let range = truth.iter().copied().fold(f64::MIN, f64::max) - truth.iter().copied().fold(f64::MAX, f64::min);
    let mae = |f: &dyn Fn(f64) -> f64| {
        grid.iter().zip(&truth).map(|(x, y)| (f(*x) - y).abs()).sum::<f64>() / grid.len() as f64 / range
    };
    let e_ck = mae(&|x| ck.predict(&[x]).unwrap().0);
    let e_hf = mae(&|x| hf.predict(&[x]).unwrap().0);
    within(t.elapsed(), 10)?;
    let detail = format!("normalized MAE co-kriging {e_ck:.4}, HF-only {e_hf:.4}, ratio {:.1}", e_hf / e_ck);
    if e_hf >= 2.0 * e_ck {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn kriging_interpolation() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for k in 0..50u64 {
        let d = rng.random_range(1..=3);
        let n = rng.random_range(4..=25);
        let freq: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..4.0)).collect();
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random()).collect()).collect();
        let raw: Vec<f64> =
            x.iter().map(|r| r.iter().zip(&freq).map(|(v, f)| (f * v).sin()).sum::<f64>() + 0.3 * r[0] * r[0]).collect();
        let mean = raw.iter().sum::<f64>() / n as f64;
        let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt().max(1e-12);
        let y: Vec<f64> = raw.iter().map(|v| (v - mean) / sd).collect();
        let budget = SearchBudget { starts: 4, max_iters: 150, ..SearchBudget::default() }.with_seed(k);
        let model = fit_kriging(&x, &y, &budget).map_err(|e| e.to_string())?;
        for (xi, yi) in x.iter().zip(&y) {
            let err = (model.predict(xi).unwrap().0 - yi).abs();
            worst = worst.max(err);
            if err > 1e-6 {
                return Err(format!("dataset {k}: residual {err:e} at a training point"));
            }
        }
    }
    within(t.elapsed(), 10)?;
    Ok(format!("worst residual {worst:.1e} over 50 datasets"))
}

fn tuner_efficacy() -> Check {
    let t = Instant::now();
    let grid = GridBox::new(&[(-3.0, 3.0), (-2.0, 2.0)], &[61, 41]).unwrap();
    let camel = |p: &Vec<usize>| {
        let v = grid.values(p);
        let (x, y) = (v[0], v[1]);
        (4.0 - 2.1 * x * x + x.powi(4) / 3.0) * x * x + x * y + (-4.0 + 4.0 * y * y) * y * y
    };
    let mut wins = 0;
    for seed in 0..20u64 {
        let state = run_tuning(&grid, &TunerConfig::new(60, seed), None, |p, _| Ok(camel(p))).map_err(|e| e.to_string())?;
        let trace = state.incumbent_trace();
        if trace.windows(2).any(|w| w[1].unwrap() > w[0].unwrap()) {
            return Err(format!("seed {seed}: incumbent trace increased"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1 << 32));
        let random = (0..60).map(|_| camel(&grid.sample(&mut rng))).fold(f64::INFINITY, f64::min);
        if state.incumbent.unwrap().1 <= random {
            wins += 1;
        }
    }
    within(t.elapsed(), 300)?;
    if wins >= 14 {
        Ok(format!("Bayesian tuner won {wins}/20 paired seeds"))
    } else {
        Err(format!("Bayesian tuner won only {wins}/20 paired seeds"))
    }
}

/// Short-epoch configuration for checks about procedure rather than accuracy.
fn quick_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig { out: out.to_path_buf(), mc_samples: 100, ..RunConfig::default() };
    cfg.stages.low.epochs = 60;
    cfg.stages.mid.epochs = 40;
    cfg.stages.high.epochs = 40;
    cfg
}

fn noise_study_procedure() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let runs = cmd_noise_study(&cfg).map_err(|e| e.to_string())?;
    let rows = read_metrics_csv(&dir.path().join("noise_study.csv")).map_err(|e| e.to_string())?;
    let labels: Vec<&str> = rows.iter().map(|(l, _)| l.as_str()).collect();
    if labels != NOISE_STUDY_LABELS {
        return Err(format!("row labels {labels:?}"));
    }
    let data = load_datasets(&cfg).unwrap();
    for run in &runs[1..] {
        let (fidelity, channel) = run.perturbed.ok_or("noisy run without a perturbation record")?;
        let original = data.training(fidelity);
        let n = original.len();
        let (_, augmented) = run.dataset_size.unwrap();
        let want = (1.3 * n as f64).round() as usize;
        if augmented != want {
            return Err(format!("{}: {augmented} rows, expected {want}", run.label));
        }
        let col = |s: &mfbaynet_core::data::Sample| if channel == Channel::Cl { s.cl } else { s.cm };
        let mean = original.samples.iter().map(col).sum::<f64>() / n as f64;
        let std = run.noise_std.unwrap();
        if (std - 0.01 * mean.abs()).abs() > 1e-12 * mean.abs().max(1.0) {
            return Err(format!("{}: noise std {std}, expected {}", run.label, 0.01 * mean.abs()));
        }
        let (noisy, _, _) = noisy_datasets(&cfg, &data, fidelity, channel).map_err(|e| e.to_string())?;
        let rows = &noisy.training(fidelity).samples;
        if rows[..n] != original.samples[..] || rows.len() != want {
            return Err(format!("{}: original rows altered", run.label));
        }
    }
    Ok("7 rows with the expected labels, sizes round(1.3 N), noise std 1% of column mean".into())
}

fn calibration(runs: &OrderingRuns) -> Check {
    let coverage = runs.mf[0].coverage_95;
    let all = runs.mf.iter().map(|e| format!("{:.2}", e.coverage_95)).collect::<Vec<_>>().join("/");
    let detail = format!("coverage at 1.96 std {coverage:.3} (seeds 0-4: {all})");
    if (0.75..=1.0).contains(&coverage) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn determinism() -> Check {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = cmd_train(&quick_config(a.path()), None).map_err(|e| e.to_string())?;
    let rb = cmd_train(&quick_config(b.path()), None).map_err(|e| e.to_string())?;
    let fa = std::fs::read(&ra.metrics_csv).unwrap();
    let fb = std::fs::read(&rb.metrics_csv).unwrap();
    if fa == fb {
        Ok(format!("{} identical bytes", fa.len()))
    } else {
        Err("metric CSVs differ".into())
    }
}

fn guarded(f: impl FnOnce() -> Check) -> Check {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() {
    let ordering = catch_unwind(ordering_runs).ok();
    let needs_runs = |f: fn(&OrderingRuns) -> Check| {
        let runs = ordering.as_ref();
        move || runs.map_or(Err("ordering runs panicked".to_string()), f)
    };
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Check + '_>)> = vec![
        ("KL closed form", Box::new(kl_closed_form)),
        ("gradient correctness", Box::new(gradient_correctness)),
        ("total error aggregation", Box::new(table_aggregation)),
        ("freezing invariant", Box::new(freezing_invariant)),
        ("fidelity ordering", Box::new(needs_runs(fidelity_ordering))),
        ("Forrester co-kriging", Box::new(forrester_cokriging)),
        ("kriging interpolation", Box::new(kriging_interpolation)),
        ("tuner efficacy", Box::new(tuner_efficacy)),
        ("noise-study procedure", Box::new(noise_study_procedure)),
        ("calibration sanity", Box::new(needs_runs(calibration))),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        match guarded(check) {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                println!("FAIL {:>2} {name}: {detail}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}

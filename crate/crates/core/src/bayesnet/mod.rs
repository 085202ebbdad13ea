//! Gaussian-variational Bayesian dense networks.
//!
//! Every weight and bias carries an independent Gaussian posterior
//! `N(mu, softplus(rho)^2)`. A forward pass first realizes one concrete set of
//! weights through the reparameterization `w = mu + softplus(rho) * eps`, then
//! runs an ordinary affine/activation chain on it.

mod backprop;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::num::{inv_softplus, softplus, Real};

pub use backprop::{
    loss_elbo, loss_elbo_draws, loss_with_noise, Batch, ElboLoss, LayerGrad, NetworkGrad,
};

/// Default symmetry-breaking jitter on the initial posterior means.
pub const DEFAULT_INIT_JITTER: f64 = 0.05;
pub const DEFAULT_PRELU_ALPHA: f64 = 0.25;
pub const DEFAULT_LEAKY_ALPHA: f64 = 0.01;

/// Posterior of one scalar parameter. The effective standard deviation is
/// `softplus(rho)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianVariational<T> {
    pub mu: T,
    pub rho: T,
}

impl<T: Real> GaussianVariational<T> {
    pub fn new(mu: T, rho: T) -> Self {
        Self { mu, rho }
    }

    /// Builds the posterior with the given standard deviation.
    pub fn with_std(mu: T, sigma: T) -> Result<Self> {
        ensure(sigma > T::zero(), || format!("posterior std must be positive, got {sigma}"))?;
        Ok(Self { mu, rho: inv_softplus(sigma) })
    }

    #[inline]
    pub fn std(&self) -> T {
        softplus(self.rho)
    }

    #[inline]
    pub fn realize(&self, eps: T) -> T {
        self.mu + self.std() * eps
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior<T> {
    pub mu: T,
    pub sigma: T,
}

impl<T: Real> GaussianPrior<T> {
    pub fn new(mu: T, sigma: T) -> Result<Self> {
        ensure(sigma > T::zero() && sigma.is_finite(), || {
            format!("prior sigma must be positive and finite, got {sigma}")
        })?;
        ensure(mu.is_finite(), || format!("prior mu must be finite, got {mu}"))?;
        Ok(Self { mu, sigma })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    Prelu,
    LeakyRelu,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 3] =
        [ActivationKind::Relu, ActivationKind::Prelu, ActivationKind::LeakyRelu];

    pub fn instantiate<T: Real>(self) -> Activation<T> {
        match self {
            ActivationKind::Relu => Activation::Relu,
            ActivationKind::Prelu => Activation::Prelu { alpha: T::lit(DEFAULT_PRELU_ALPHA) },
            ActivationKind::LeakyRelu => {
                Activation::LeakyRelu { alpha: T::lit(DEFAULT_LEAKY_ALPHA) }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Prelu => "prelu",
            ActivationKind::LeakyRelu => "leaky_relu",
        }
    }
}

impl std::str::FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(ActivationKind::Relu),
            "prelu" => Ok(ActivationKind::Prelu),
            "leaky_relu" | "leakyrelu" => Ok(ActivationKind::LeakyRelu),
            other => Err(Error::InvalidConfig(format!("unknown activation `{other}`"))),
        }
    }
}

/// Activation with its parameter. PReLU's slope is a deterministic learnable
/// scalar shared by the whole layer; LeakyReLU's is fixed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation<T> {
    Relu,
    Prelu { alpha: T },
    LeakyRelu { alpha: T },
}

impl<T: Real> Activation<T> {
    pub fn kind(&self) -> ActivationKind {
        match self {
            Activation::Relu => ActivationKind::Relu,
            Activation::Prelu { .. } => ActivationKind::Prelu,
            Activation::LeakyRelu { .. } => ActivationKind::LeakyRelu,
        }
    }

    #[inline]
    fn negative_slope(&self) -> T {
        match *self {
            Activation::Relu => T::zero(),
            Activation::Prelu { alpha } | Activation::LeakyRelu { alpha } => alpha,
        }
    }

    #[inline]
    pub fn apply(&self, z: T) -> T {
        if z > T::zero() {
            z
        } else {
            self.negative_slope() * z
        }
    }

    #[inline]
    pub fn derivative(&self, z: T) -> T {
        if z > T::zero() {
            T::one()
        } else {
            self.negative_slope()
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Activation::Relu => Ok(()),
            Activation::Prelu { alpha } => ensure(alpha.is_finite(), || {
                format!("PReLU alpha must be finite, got {alpha}")
            }),
            Activation::LeakyRelu { alpha } => {
                ensure(alpha > T::zero() && alpha < T::one(), || {
                    format!("LeakyReLU alpha must lie in (0,1), got {alpha}")
                })
            }
        }
    }
}

/// One dense layer. `weights` is row-major `out_dim x in_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesianLayer<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<GaussianVariational<T>>,
    pub biases: Vec<GaussianVariational<T>>,
    pub prior: GaussianPrior<T>,
    /// `None` on the output layer.
    pub activation: Option<Activation<T>>,
    pub frozen: bool,
}

impl<T: Real> BayesianLayer<T> {
    pub fn n_params(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn kl(&self) -> T {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .map(|q| kl_unchecked(q, &self.prior))
            .sum()
    }

    fn validate(&self) -> Result<()> {
        ensure(self.in_dim > 0 && self.out_dim > 0, || "layer sizes must be positive".into())?;
        if self.weights.len() != self.in_dim * self.out_dim {
            return Err(Error::Dimension {
                context: "layer weights",
                expected: self.in_dim * self.out_dim,
                got: self.weights.len(),
            });
        }
        if self.biases.len() != self.out_dim {
            return Err(Error::Dimension {
                context: "layer biases",
                expected: self.out_dim,
                got: self.biases.len(),
            });
        }
        GaussianPrior::new(self.prior.mu, self.prior.sigma)?;
        if let Some(act) = &self.activation {
            act.validate()?;
        }
        Ok(())
    }
}

/// Architecture, prior and seed needed to build a fresh network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec<T> {
    /// `[input, hidden.., output]`; the network has `widths.len() - 1` layers.
    pub widths: Vec<usize>,
    pub activation: ActivationKind,
    pub prior: GaussianPrior<T>,
    pub init_jitter: T,
    pub seed: u64,
}

impl<T: Real> NetworkSpec<T> {
    /// `n_layers` dense layers, all hidden layers `n_units` wide.
    pub fn uniform(
        input_dim: usize,
        output_dim: usize,
        n_layers: usize,
        n_units: usize,
        activation: ActivationKind,
        prior: GaussianPrior<T>,
        seed: u64,
    ) -> Self {
        let mut widths = Vec::with_capacity(n_layers + 1);
        widths.push(input_dim);
        widths.extend(std::iter::repeat_n(n_units, n_layers.saturating_sub(1)));
        widths.push(output_dim);
        Self { widths, activation, prior, init_jitter: T::lit(DEFAULT_INIT_JITTER), seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesianNetwork<T> {
    pub layers: Vec<BayesianLayer<T>>,
}

pub fn init_network<T: Real>(spec: &NetworkSpec<T>) -> Result<BayesianNetwork<T>> {
    ensure(spec.widths.len() >= 2, || "a network needs at least one layer".into())?;
    ensure(spec.widths.iter().all(|&w| w > 0), || {
        format!("layer sizes must be positive, got {:?}", spec.widths)
    })?;
    let prior = GaussianPrior::new(spec.prior.mu, spec.prior.sigma)?;
    ensure(spec.init_jitter >= T::zero(), || "init jitter must be non-negative".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rho = inv_softplus(prior.sigma);
    let n_layers = spec.widths.len() - 1;
    let init = |n: usize, rng: &mut ChaCha8Rng| -> Vec<GaussianVariational<T>> {
        (0..n)
            .map(|_| {
                let jitter = spec.init_jitter * T::sample_standard_normal(rng);
                GaussianVariational::new(prior.mu + jitter, rho)
            })
            .collect()
    };
    let layers = spec
        .widths
        .windows(2)
        .enumerate()
        .map(|(l, pair)| {
            let (in_dim, out_dim) = (pair[0], pair[1]);
            let weights = init(in_dim * out_dim, &mut rng);
            let biases = init(out_dim, &mut rng);
            BayesianLayer {
                in_dim,
                out_dim,
                weights,
                biases,
                prior,
                activation: (l + 1 < n_layers).then(|| spec.activation.instantiate()),
                frozen: false,
            }
        })
        .collect();
    Ok(BayesianNetwork { layers })
}

/// Standard-normal noise for every weight and bias of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct Noise<T> {
    pub layers: Vec<LayerNoise<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNoise<T> {
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

/// Concrete weights realized from the posterior, together with the noise that
/// produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightDraw<T> {
    pub layers: Vec<LayerDraw<T>>,
    pub noise: Noise<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerDraw<T> {
    pub weights: Vec<T>,
    pub biases: Vec<T>,
    pub activation: Option<Activation<T>>,
}

impl<T: Real> LayerDraw<T> {
    /// `out = act(W x + b)`, also returning the pre-activation.
    #[inline]
    fn affine_into(&self, x: &[T], pre: &mut [T]) {
        let in_dim = x.len();
        for (o, z) in pre.iter_mut().enumerate() {
            let row = &self.weights[o * in_dim..(o + 1) * in_dim];
            let mut acc = self.biases[o];
            for (w, xi) in row.iter().zip(x) {
                acc += *w * *xi;
            }
            *z = acc;
        }
    }
}

impl<T: Real> BayesianNetwork<T> {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(BayesianLayer::n_params).sum()
    }

    pub fn frozen_flags(&self) -> Vec<bool> {
        self.layers.iter().map(|l| l.frozen).collect()
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Noise<T> {
        let mut draw = |n: usize| (0..n).map(|_| T::sample_standard_normal(rng)).collect();
        Noise {
            layers: self
                .layers
                .iter()
                .map(|l| LayerNoise { weights: draw(l.weights.len()), biases: draw(l.biases.len()) })
                .collect(),
        }
    }

    /// Deterministic weights `mu + softplus(rho) * eps` for the given noise.
    pub fn realize(&self, noise: Noise<T>) -> WeightDraw<T> {
        let layers = self
            .layers
            .iter()
            .zip(&noise.layers)
            .map(|(l, n)| LayerDraw {
                weights: l.weights.iter().zip(&n.weights).map(|(q, e)| q.realize(*e)).collect(),
                biases: l.biases.iter().zip(&n.biases).map(|(q, e)| q.realize(*e)).collect(),
                activation: l.activation,
            })
            .collect();
        WeightDraw { layers, noise }
    }

    /// Posterior means as a draw (all noise zero).
    pub fn mean_draw(&self) -> WeightDraw<T> {
        let noise = Noise {
            layers: self
                .layers
                .iter()
                .map(|l| LayerNoise {
                    weights: vec![T::zero(); l.weights.len()],
                    biases: vec![T::zero(); l.biases.len()],
                })
                .collect(),
        };
        let mut draw = self.realize(noise);
        for (d, l) in draw.layers.iter_mut().zip(&self.layers) {
            d.weights = l.weights.iter().map(|q| q.mu).collect();
            d.biases = l.biases.iter().map(|q| q.mu).collect();
        }
        draw
    }

    pub fn validate(&self) -> Result<()> {
        ensure(!self.layers.is_empty(), || "network has no layers".into())?;
        for (i, l) in self.layers.iter().enumerate() {
            l.validate()?;
            if i > 0 && l.in_dim != self.layers[i - 1].out_dim {
                return Err(Error::Dimension {
                    context: "adjacent layers",
                    expected: self.layers[i - 1].out_dim,
                    got: l.in_dim,
                });
            }
            let last = i + 1 == self.layers.len();
            ensure(l.activation.is_none() == last, || {
                format!("layer {i}: only the output layer may omit its activation")
            })?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let net: Self = serde_json::from_str(s)?;
        net.validate()?;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn sample_weights<T: Real, R: Rng + ?Sized>(
    net: &BayesianNetwork<T>,
    rng: &mut R,
) -> WeightDraw<T> {
    net.realize(net.sample_noise(rng))
}

pub fn forward<T: Real>(net: &BayesianNetwork<T>, draw: &WeightDraw<T>, x: &[T]) -> Result<Vec<T>> {
    if x.len() != net.input_dim() {
        return Err(Error::Dimension { context: "network input", expected: net.input_dim(), got: x.len() });
    }
    Ok(forward_draw(draw, x))
}

/// Forward pass through a realized draw. The caller guarantees `x` matches the
/// first layer's input width.
pub(crate) fn forward_draw<T: Real>(draw: &WeightDraw<T>, x: &[T]) -> Vec<T> {
    let mut a = x.to_vec();
    for layer in &draw.layers {
        let mut z = vec![T::zero(); layer.biases.len()];
        layer.affine_into(&a, &mut z);
        if let Some(act) = &layer.activation {
            for v in z.iter_mut() {
                *v = act.apply(*v);
            }
        }
        a = z;
    }
    a
}

/// Closed-form `KL(q || p)` for scalar Gaussians.
pub fn kl_gaussian<T: Real>(q: &GaussianVariational<T>, p: &GaussianPrior<T>) -> Result<T> {
    let sq = q.std();
    ensure(sq > T::zero(), || format!("posterior std must be positive, got {sq}"))?;
    ensure(p.sigma > T::zero(), || format!("prior sigma must be positive, got {}", p.sigma))?;
    Ok(kl_unchecked(q, p))
}

#[inline]
pub(crate) fn kl_terms<T: Real>(mu_q: T, sigma_q: T, p: &GaussianPrior<T>) -> T {
    let half = T::lit(0.5);
    let d = mu_q - p.mu;
    (p.sigma / sigma_q).ln() + (sigma_q * sigma_q + d * d) / (T::lit(2.0) * p.sigma * p.sigma) - half
}

#[inline]
fn kl_unchecked<T: Real>(q: &GaussianVariational<T>, p: &GaussianPrior<T>) -> T {
    kl_terms(q.mu, q.std(), p)
}

/// Sum of the KL term over every weight and bias, frozen layers included.
pub fn kl_network<T: Real>(net: &BayesianNetwork<T>) -> T {
    net.layers.iter().map(BayesianLayer::kl).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn spec(sigma: f64, seed: u64) -> NetworkSpec<f64> {
        NetworkSpec::uniform(
            2,
            2,
            3,
            16,
            ActivationKind::Relu,
            GaussianPrior { mu: 0.0, sigma },
            seed,
        )
    }

    fn single_weight(mu: f64, sigma: f64) -> BayesianNetwork<f64> {
        BayesianNetwork {
            layers: vec![BayesianLayer {
                in_dim: 1,
                out_dim: 1,
                weights: vec![GaussianVariational::with_std(mu, sigma).unwrap()],
                biases: vec![GaussianVariational::with_std(0.0, 1e-300).unwrap()],
                prior: GaussianPrior { mu: 0.0, sigma: 1.0 },
                activation: None,
                frozen: false,
            }],
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_network(&spec(0.01, 42)).unwrap();
        let b = init_network(&spec(0.01, 42)).unwrap();
        assert_eq!(a, b);
        let c = init_network(&spec(0.01, 43)).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.n_layers(), 3);
        assert_eq!(a.input_dim(), 2);
        assert_eq!(a.output_dim(), 2);
        assert!(a.layers.iter().all(|l| !l.frozen));
        assert!(a.layers[2].activation.is_none());
    }

    #[test]
    fn init_rejects_bad_specs() {
        assert!(init_network(&spec(0.0, 1)).is_err());
        assert!(init_network(&spec(-1.0, 1)).is_err());
        let mut s = spec(0.01, 1);
        s.widths[1] = 0;
        assert!(init_network(&s).is_err());
    }

    #[test]
    fn init_scale_matches_prior_sigma() {
        let net = init_network(&spec(0.005, 9)).unwrap();
        for l in &net.layers {
            for q in l.weights.iter().chain(&l.biases) {
                assert!((q.std() - 0.005).abs() <= 1e-12);
                // independent inversion: sigma = ln(1 + e^rho)
                assert!(((1.0 + q.rho.exp()).ln() - 0.005).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_variance_draw_equals_means() {
        let mut net = init_network(&spec(0.01, 5)).unwrap();
        for l in &mut net.layers {
            for q in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                q.rho = -1000.0;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draw = sample_weights(&net, &mut rng);
        for (d, l) in draw.layers.iter().zip(&net.layers) {
            for (w, q) in d.weights.iter().zip(&l.weights) {
                assert_eq!(*w, q.mu);
            }
        }
    }

    #[test]
    fn draws_are_reproducible() {
        let net = init_network(&spec(0.01, 5)).unwrap();
        let a = sample_weights(&net, &mut ChaCha8Rng::seed_from_u64(77));
        let b = sample_weights(&net, &mut ChaCha8Rng::seed_from_u64(77));
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_std_of_draws() {
        let net = single_weight(0.3, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let ws: Vec<f64> =
            (0..n).map(|_| sample_weights(&net, &mut rng).layers[0].weights[0]).collect();
        let mean = ws.iter().sum::<f64>() / n as f64;
        let var = ws.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var.sqrt() - 0.01).abs() < 3e-4, "std {}", var.sqrt());
        assert!((mean - 0.3).abs() < 4.0 * 0.01 / (n as f64).sqrt());
    }

    #[test]
    fn identity_layer_forward() {
        let mut layer = single_weight(1.0, 1.0).layers.remove(0);
        layer.in_dim = 2;
        layer.out_dim = 2;
        let q = |mu: f64| GaussianVariational::new(mu, -1000.0);
        layer.weights = vec![q(1.0), q(0.0), q(0.0), q(1.0)];
        layer.biases = vec![q(0.0), q(0.0)];
        let net = BayesianNetwork { layers: vec![layer] };
        let out = forward(&net, &net.mean_draw(), &[0.3, 0.7]).unwrap();
        assert_eq!(out, vec![0.3, 0.7]);
        assert!(forward(&net, &net.mean_draw(), &[0.3]).is_err());
    }

    #[test]
    fn relu_kills_negative_preactivations() {
        let mut net = init_network(&spec(0.01, 3)).unwrap();
        let first = &mut net.layers[0];
        for q in first.weights.iter_mut().chain(first.biases.iter_mut()) {
            q.mu = -1.0;
        }
        let draw = net.mean_draw();
        let mut z = vec![0.0; 16];
        draw.layers[0].affine_into(&[0.2, 0.4], &mut z);
        let act = net.layers[0].activation.unwrap();
        assert!(z.iter().all(|v| act.apply(*v) == 0.0));
    }

    /// Straight-line reimplementation: explicit nested loops over the
    /// posterior parameters, no shared helpers.
    fn reference_forward(net: &BayesianNetwork<f64>, noise: &Noise<f64>, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for (l, n) in net.layers.iter().zip(&noise.layers) {
            let mut out = Vec::new();
            for o in 0..l.out_dim {
                let b = &l.biases[o];
                let mut s = b.mu + (1.0 + b.rho.exp()).ln() * n.biases[o];
                for i in 0..l.in_dim {
                    let q = &l.weights[o * l.in_dim + i];
                    s += (q.mu + (1.0 + q.rho.exp()).ln() * n.weights[o * l.in_dim + i]) * a[i];
                }
                out.push(match l.activation {
                    None => s,
                    Some(Activation::Relu) => s.max(0.0),
                    Some(Activation::Prelu { alpha }) | Some(Activation::LeakyRelu { alpha }) => {
                        if s > 0.0 {
                            s
                        } else {
                            alpha * s
                        }
                    }
                });
            }
            a = out;
        }
        a
    }

    #[test]
    fn forward_matches_reference_chain() {
        for (seed, kind) in [(1, ActivationKind::Relu), (2, ActivationKind::Prelu), (3, ActivationKind::LeakyRelu)] {
            let mut s = spec(0.1, seed);
            s.activation = kind;
            s.init_jitter = 0.5;
            let net = init_network(&s).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let noise = net.sample_noise(&mut rng);
            let draw = net.realize(noise.clone());
            let x = [0.25, 0.8];
            let got = forward(&net, &draw, &x).unwrap();
            let want = reference_forward(&net, &noise, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kl_closed_form_values() {
        let p = GaussianPrior::new(0.0f64, 0.01).unwrap();
        let q = GaussianVariational::with_std(0.0, 0.01).unwrap();
        assert!(kl_gaussian(&q, &p).unwrap().abs() < 1e-10);

        let p1 = GaussianPrior::new(0.0f64, 1.0).unwrap();
        let q1 = GaussianVariational::with_std(1.0, 1.0).unwrap();
        assert!((kl_gaussian(&q1, &p1).unwrap() - 0.5).abs() < 1e-10);

        let q2 = GaussianVariational::with_std(0.0, 2.0).unwrap();
        let want = (0.5f64).ln() + 2.0 - 0.5;
        assert!((kl_gaussian(&q2, &p1).unwrap() - want).abs() < 1e-10);
        assert!((want - 0.80685).abs() < 1e-5);
    }

    #[test]
    fn kl_rejects_zero_scale() {
        let q = GaussianVariational::new(0.0, -1000.0);
        assert!(kl_gaussian(&q, &GaussianPrior { mu: 0.0, sigma: 1.0 }).is_err());
        let q = GaussianVariational::with_std(0.0, 1.0).unwrap();
        assert!(kl_gaussian(&q, &GaussianPrior { mu: 0.0, sigma: 0.0 }).is_err());
    }

    #[test]
    fn kl_network_cases() {
        let mut s = spec(0.01, 8);
        s.init_jitter = 0.0;
        let net = init_network(&s).unwrap();
        assert!(kl_network(&net).abs() < 1e-9);

        let mut one = single_weight(1.0, 1.0);
        // bias at the prior so only the weight contributes
        one.layers[0].biases[0] = GaussianVariational::with_std(0.0, 1.0).unwrap();
        assert!((kl_network(&one) - 0.5).abs() < 1e-12);

        let net = init_network(&spec(0.02, 8)).unwrap();
        let per_layer: f64 = net.layers.iter().map(|l| l.kl()).sum();
        assert!((kl_network(&net) - per_layer).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut s = spec(0.0037, 11);
        s.activation = ActivationKind::Prelu;
        let mut net = init_network(&s).unwrap();
        net.layers[1].frozen = true;
        let back = BayesianNetwork::<f64>::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(net, back);
        for (a, b) in net.layers.iter().zip(&back.layers) {
            for (qa, qb) in a.weights.iter().zip(&b.weights) {
                assert_eq!(qa.mu.to_bits(), qb.mu.to_bits());
                assert_eq!(qa.rho.to_bits(), qb.rho.to_bits());
            }
        }

        let s32 = NetworkSpec::<f32>::uniform(2, 2, 4, 8, ActivationKind::LeakyRelu, GaussianPrior { mu: 0.1, sigma: 0.003 }, 4);
        let net32 = init_network(&s32).unwrap();
        assert_eq!(net32, BayesianNetwork::<f32>::from_json(&net32.to_json().unwrap()).unwrap());
    }

    #[test]
    fn checkpoint_rejects_inconsistent_layers() {
        let mut net = init_network(&spec(0.01, 1)).unwrap();
        net.layers[1].in_dim = 3;
        let json = serde_json::to_string(&net).unwrap();
        assert!(BayesianNetwork::<f64>::from_json(&json).is_err());
    }
}

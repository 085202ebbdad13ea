//! Composite MSE + KL objective and its reverse-mode gradient.
//!
//! The gradient flows through the reparameterized draw: for a weight
//! `w = mu + softplus(rho) * eps` we have `dw/dmu = 1` and
//! `dw/drho = eps * sigmoid(rho)`. The KL term contributes its closed-form
//! partials on top. Frozen layers still propagate the error signal to the
//! layers below them, but their own gradient entries are exactly zero.

use rand::Rng;

use super::{kl_network, Activation, BayesianNetwork, GaussianVariational, Noise};
use crate::error::{ensure, Error, Result};
use crate::num::{sigmoid, Real};

/// Inputs and targets of one minibatch, row by row.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a, T> {
    pub inputs: &'a [Vec<T>],
    pub targets: &'a [Vec<T>],
}

impl<'a, T> Batch<'a, T> {
    pub fn new(inputs: &'a [Vec<T>], targets: &'a [Vec<T>]) -> Self {
        Self { inputs, targets }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboLoss<T> {
    /// `mse + kl_weight * kl`.
    pub total: T,
    pub mse: T,
    pub kl: T,
}

/// Gradient entries laid out exactly like the layer they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad<T> {
    pub weight_mu: Vec<T>,
    pub weight_rho: Vec<T>,
    pub bias_mu: Vec<T>,
    pub bias_rho: Vec<T>,
    /// PReLU slope; always zero for other activations.
    pub alpha: T,
}

impl<T: Real> LayerGrad<T> {
    pub fn zeros(n_weights: usize, n_biases: usize) -> Self {
        Self {
            weight_mu: vec![T::zero(); n_weights],
            weight_rho: vec![T::zero(); n_weights],
            bias_mu: vec![T::zero(); n_biases],
            bias_rho: vec![T::zero(); n_biases],
            alpha: T::zero(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.alpha == T::zero()
            && self
                .weight_mu
                .iter()
                .chain(&self.weight_rho)
                .chain(&self.bias_mu)
                .chain(&self.bias_rho)
                .all(|g| *g == T::zero())
    }

    fn scale(&mut self, s: T) {
        for g in self
            .weight_mu
            .iter_mut()
            .chain(self.weight_rho.iter_mut())
            .chain(self.bias_mu.iter_mut())
            .chain(self.bias_rho.iter_mut())
        {
            *g *= s;
        }
        self.alpha *= s;
    }

    fn add(&mut self, other: &Self) {
        let pairs = [
            (&mut self.weight_mu, &other.weight_mu),
            (&mut self.weight_rho, &other.weight_rho),
            (&mut self.bias_mu, &other.bias_mu),
            (&mut self.bias_rho, &other.bias_rho),
        ];
        for (dst, src) in pairs {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += *s;
            }
        }
        self.alpha += other.alpha;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGrad<T> {
    pub layers: Vec<LayerGrad<T>>,
}

impl<T: Real> NetworkGrad<T> {
    pub fn zeros_like(net: &BayesianNetwork<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad::zeros(l.weights.len(), l.biases.len()))
                .collect(),
        }
    }
}

/// Loss and gradient for a fixed noise realization.
pub fn loss_with_noise<T: Real>(
    net: &BayesianNetwork<T>,
    noise: &Noise<T>,
    batch: Batch<'_, T>,
    kl_weight: T,
) -> Result<(ElboLoss<T>, NetworkGrad<T>)> {
    if batch.is_empty() {
        return Err(Error::Empty("loss batch".into()));
    }
    ensure(kl_weight >= T::zero(), || format!("kl_weight must be non-negative, got {kl_weight}"))?;
    if batch.targets.len() != batch.inputs.len() {
        return Err(Error::Dimension {
            context: "batch targets",
            expected: batch.inputs.len(),
            got: batch.targets.len(),
        });
    }
    let (in_dim, out_dim) = (net.input_dim(), net.output_dim());
    for (x, y) in batch.inputs.iter().zip(batch.targets) {
        if x.len() != in_dim {
            return Err(Error::Dimension { context: "batch input", expected: in_dim, got: x.len() });
        }
        if y.len() != out_dim {
            return Err(Error::Dimension { context: "batch target", expected: out_dim, got: y.len() });
        }
    }

    let draw = net.realize(noise.clone());
    let mut grad = NetworkGrad::zeros_like(net);
    // dL/dw and dL/db w.r.t. the realized values; mapped onto (mu, rho) at the end.
    let mut dw: Vec<Vec<T>> = net.layers.iter().map(|l| vec![T::zero(); l.weights.len()]).collect();
    let mut db: Vec<Vec<T>> = net.layers.iter().map(|l| vec![T::zero(); l.biases.len()]).collect();

    let n_layers = net.layers.len();
    let mut pre: Vec<Vec<T>> = net.layers.iter().map(|l| vec![T::zero(); l.out_dim]).collect();
    let mut post: Vec<Vec<T>> = pre.clone();
    let scale = T::lit(2.0) / T::from_usize(batch.len() * out_dim).expect("batch size");
    let mut sq_err = T::zero();

    for (x, y) in batch.inputs.iter().zip(batch.targets) {
        for l in 0..n_layers {
            let layer = &draw.layers[l];
            let input: &[T] = if l == 0 { x } else { &post[l - 1] };
            let mut z = std::mem::take(&mut pre[l]);
            layer.affine_into(input, &mut z);
            let a = &mut post[l];
            match &layer.activation {
                Some(act) => {
                    for (ai, zi) in a.iter_mut().zip(&z) {
                        *ai = act.apply(*zi);
                    }
                }
                None => a.copy_from_slice(&z),
            }
            pre[l] = z;
        }

        let mut delta: Vec<T> = post[n_layers - 1]
            .iter()
            .zip(y)
            .map(|(p, t)| {
                let e = *p - *t;
                sq_err += e * e;
                scale * e
            })
            .collect();

        for l in (0..n_layers).rev() {
            let layer = &draw.layers[l];
            if let Some(act) = &layer.activation {
                if matches!(act, Activation::Prelu { .. }) {
                    let mut ga = T::zero();
                    for (d, z) in delta.iter().zip(&pre[l]) {
                        if *z <= T::zero() {
                            ga += *d * *z;
                        }
                    }
                    grad.layers[l].alpha += ga;
                }
                for (d, z) in delta.iter_mut().zip(&pre[l]) {
                    *d *= act.derivative(*z);
                }
            }
            let input: &[T] = if l == 0 { x } else { &post[l - 1] };
            let in_dim = input.len();
            for (o, d) in delta.iter().enumerate() {
                db[l][o] += *d;
                let row = &mut dw[l][o * in_dim..(o + 1) * in_dim];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += *d * *a;
                }
            }
            if l > 0 {
                let mut next = vec![T::zero(); in_dim];
                for (o, d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * in_dim..(o + 1) * in_dim];
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += *w * *d;
                    }
                }
                delta = next;
            }
        }
    }

    let mse = sq_err / T::from_usize(batch.len() * out_dim).expect("batch size");
    let kl = kl_network(net);
    let use_kl = kl_weight > T::zero();

    for (l, layer) in net.layers.iter().enumerate() {
        let g = &mut grad.layers[l];
        if layer.frozen {
            *g = LayerGrad::zeros(layer.weights.len(), layer.biases.len());
            continue;
        }
        let prior = &layer.prior;
        let inv_var_p = T::one() / (prior.sigma * prior.sigma);
        let map = |q: &GaussianVariational<T>, dval: T, eps: T| -> (T, T) {
            let sig = sigmoid(q.rho);
            if !use_kl {
                return (dval, dval * eps * sig);
            }
            let sigma_q = q.std();
            let dkl_dmu = (q.mu - prior.mu) * inv_var_p;
            let dkl_dsigma = -T::one() / sigma_q + sigma_q * inv_var_p;
            (dval + kl_weight * dkl_dmu, (dval * eps + kl_weight * dkl_dsigma) * sig)
        };
        let ln = &draw.noise.layers[l];
        for (i, q) in layer.weights.iter().enumerate() {
            let (gm, gr) = map(q, dw[l][i], ln.weights[i]);
            g.weight_mu[i] = gm;
            g.weight_rho[i] = gr;
        }
        for (i, q) in layer.biases.iter().enumerate() {
            let (gm, gr) = map(q, db[l][i], ln.biases[i]);
            g.bias_mu[i] = gm;
            g.bias_rho[i] = gr;
        }
    }

    let total = if use_kl { mse + kl_weight * kl } else { mse };
    Ok((ElboLoss { total, mse, kl }, grad))
}

/// Single-draw ELBO estimate: MSE under one weight sample plus `kl_weight` times the KL.
pub fn loss_elbo<T: Real, R: Rng + ?Sized>(
    net: &BayesianNetwork<T>,
    batch: Batch<'_, T>,
    kl_weight: T,
    rng: &mut R,
) -> Result<(ElboLoss<T>, NetworkGrad<T>)> {
    let noise = net.sample_noise(rng);
    loss_with_noise(net, &noise, batch, kl_weight)
}

/// Average of `n_draws` independent single-draw estimates.
pub fn loss_elbo_draws<T: Real, R: Rng + ?Sized>(
    net: &BayesianNetwork<T>,
    batch: Batch<'_, T>,
    kl_weight: T,
    n_draws: usize,
    rng: &mut R,
) -> Result<(ElboLoss<T>, NetworkGrad<T>)> {
    ensure(n_draws >= 1, || "need at least one weight draw".into())?;
    let (mut loss, mut grad) = loss_elbo(net, batch, kl_weight, rng)?;
    for _ in 1..n_draws {
        let (l, g) = loss_elbo(net, batch, kl_weight, rng)?;
        loss.total += l.total;
        loss.mse += l.mse;
        for (a, b) in grad.layers.iter_mut().zip(&g.layers) {
            a.add(b);
        }
    }
    let inv = T::one() / T::from_usize(n_draws).expect("draw count");
    loss.total *= inv;
    loss.mse *= inv;
    for g in &mut grad.layers {
        g.scale(inv);
    }
    Ok((loss, grad))
}

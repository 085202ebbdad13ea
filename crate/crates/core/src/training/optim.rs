//! Adaptive-moment (Adam) updates for the variational parameters.

use crate::bayesnet::{Activation, BayesianNetwork, LayerGrad, NetworkGrad};
use crate::error::{Error, Result};
use crate::num::Real;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment accumulators for one flat parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Real> Moments<T> {
    pub fn new(n: usize) -> Self {
        Self { m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0 }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [T], grads: &[T], learning_rate: T) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Dimension { context: "optimizer state", expected: self.m.len(), got: grads.len() });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i}")));
        }
        self.t += 1;
        let (bc1, bc2) = bias_corrections::<T>(self.t);
        adam_update(params, grads, &mut self.m, &mut self.v, learning_rate, bc1, bc2);
        Ok(())
    }
}

fn bias_corrections<T: Real>(t: u64) -> (T, T) {
    let t = t.min(i32::MAX as u64) as i32;
    (T::one() - T::lit(BETA1).powi(t), T::one() - T::lit(BETA2).powi(t))
}

#[inline]
fn adam_update<T: Real>(params: &mut [T], grads: &[T], m: &mut [T], v: &mut [T], lr: T, bc1: T, bc2: T) {
    let (b1, b2, eps) = (T::lit(BETA1), T::lit(BETA2), T::lit(EPSILON));
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + (T::one() - b1) * *g;
        *v = b2 * *v + (T::one() - b2) * *g * *g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Optimizer state mirroring a network's parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    m: NetworkGrad<T>,
    v: NetworkGrad<T>,
    t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(net: &BayesianNetwork<T>) -> Self {
        Self { m: NetworkGrad::zeros_like(net), v: NetworkGrad::zeros_like(net), t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

fn check_finite<T: Real>(layer: usize, g: &LayerGrad<T>) -> Result<()> {
    let groups: [(&str, &[T]); 4] = [
        ("weight_mu", &g.weight_mu),
        ("weight_rho", &g.weight_rho),
        ("bias_mu", &g.bias_mu),
        ("bias_rho", &g.bias_rho),
    ];
    for (name, vals) in groups {
        if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of layer {layer} {name}[{i}]")));
        }
    }
    if !g.alpha.is_finite() {
        return Err(Error::NonFinite(format!("gradient of layer {layer} alpha")));
    }
    Ok(())
}

/// Applies one Adam step to every unfrozen layer. Frozen layers are not
/// read or written. The network is untouched if any gradient is non-finite.
pub fn optimizer_step<T: Real>(
    net: &mut BayesianNetwork<T>,
    grads: &NetworkGrad<T>,
    state: &mut AdamState<T>,
    learning_rate: T,
) -> Result<()> {
    if grads.layers.len() != net.layers.len() || state.m.layers.len() != net.layers.len() {
        return Err(Error::Dimension { context: "optimizer layers", expected: net.layers.len(), got: grads.layers.len() });
    }
    for (l, (layer, g)) in net.layers.iter().zip(&grads.layers).enumerate() {
        if layer.frozen {
            continue;
        }
        if g.weight_mu.len() != layer.weights.len() || g.bias_mu.len() != layer.biases.len() {
            return Err(Error::Dimension { context: "optimizer layer shape", expected: layer.weights.len(), got: g.weight_mu.len() });
        }
        check_finite(l, g)?;
    }

    state.t += 1;
    let (bc1, bc2) = bias_corrections::<T>(state.t);
    for (l, layer) in net.layers.iter_mut().enumerate() {
        if layer.frozen {
            continue;
        }
        let g = &grads.layers[l];
        let (m, v) = (&mut state.m.layers[l], &mut state.v.layers[l]);

        let mut scratch: Vec<T> = layer.weights.iter().map(|q| q.mu).collect();
        adam_update(&mut scratch, &g.weight_mu, &mut m.weight_mu, &mut v.weight_mu, learning_rate, bc1, bc2);
        layer.weights.iter_mut().zip(&scratch).for_each(|(q, p)| q.mu = *p);

        scratch.clear();
        scratch.extend(layer.weights.iter().map(|q| q.rho));
        adam_update(&mut scratch, &g.weight_rho, &mut m.weight_rho, &mut v.weight_rho, learning_rate, bc1, bc2);
        layer.weights.iter_mut().zip(&scratch).for_each(|(q, p)| q.rho = *p);

        scratch.clear();
        scratch.extend(layer.biases.iter().map(|q| q.mu));
        adam_update(&mut scratch, &g.bias_mu, &mut m.bias_mu, &mut v.bias_mu, learning_rate, bc1, bc2);
        layer.biases.iter_mut().zip(&scratch).for_each(|(q, p)| q.mu = *p);

        scratch.clear();
        scratch.extend(layer.biases.iter().map(|q| q.rho));
        adam_update(&mut scratch, &g.bias_rho, &mut m.bias_rho, &mut v.bias_rho, learning_rate, bc1, bc2);
        layer.biases.iter_mut().zip(&scratch).for_each(|(q, p)| q.rho = *p);

        if let Some(Activation::Prelu { alpha }) = layer.activation.as_mut() {
            let mut a = [*alpha];
            adam_update(
                &mut a,
                &[g.alpha],
                std::slice::from_mut(&mut m.alpha),
                std::slice::from_mut(&mut v.alpha),
                learning_rate,
                bc1,
                bc2,
            );
            *alpha = a[0];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayesnet::{init_network, ActivationKind, GaussianPrior, NetworkSpec};

    #[test]
    fn zero_gradient_leaves_params() {
        let mut m = Moments::<f64>::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        m.step(&mut p, &[0.0; 3], 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = 1, v_hat = 1 after bias correction: step = lr / (1 + 1e-8)
        let mut m = Moments::<f64>::new(1);
        let mut p = vec![0.0];
        m.step(&mut p, &[1.0], 0.1).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-8, "{}", p[0]);
    }

    #[test]
    fn nan_gradient_is_named() {
        let spec = NetworkSpec::uniform(2, 2, 3, 4, ActivationKind::Prelu, GaussianPrior { mu: 0.0, sigma: 0.01 }, 1);
        let mut net = init_network(&spec).unwrap();
        let before = net.clone();
        let mut g = NetworkGrad::zeros_like(&net);
        g.layers[1].bias_rho[2] = f64::NAN;
        let mut st = AdamState::new(&net);
        let err = optimizer_step(&mut net, &g, &mut st, 0.01).unwrap_err().to_string();
        assert!(err.contains("layer 1 bias_rho[2]"), "{err}");
        assert_eq!(net, before);
        assert!(Moments::<f64>::new(1).step(&mut [0.0], &[f64::NAN], 0.1).is_err());
    }

    #[test]
    fn frozen_layers_untouched_and_runs_repeat() {
        let spec = NetworkSpec::uniform(2, 2, 3, 4, ActivationKind::Prelu, GaussianPrior { mu: 0.0, sigma: 0.01 }, 1);
        let run = || {
            let mut net = init_network(&spec).unwrap();
            net.layers[0].frozen = true;
            let mut g = NetworkGrad::zeros_like(&net);
            for lg in &mut g.layers {
                lg.weight_mu.iter_mut().for_each(|v| *v = 0.3);
                lg.bias_rho.iter_mut().for_each(|v| *v = -0.2);
                lg.alpha = 0.1;
            }
            let mut st = AdamState::new(&net);
            for _ in 0..5 {
                optimizer_step(&mut net, &g, &mut st, 0.01).unwrap();
            }
            net
        };
        let a = run();
        let fresh = init_network(&spec).unwrap();
        assert_eq!(a.layers[0].weights, fresh.layers[0].weights);
        assert_ne!(a.layers[1].weights, fresh.layers[1].weights);
        assert_eq!(a, run());
    }
}

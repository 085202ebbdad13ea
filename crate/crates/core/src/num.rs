//! Scalar abstraction shared by the numerical modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar the networks, kriging models and metrics are generic over.
///
/// Implemented for `f32` and `f64`. Everything that touches physical data
/// (CSV, generators, the tuner's objective values) stays in `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Lossy for `f32`.
    fn lit(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    /// One standard normal draw.
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn lit(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn to_f64_lossy(self) -> f64 {
                self as f64
            }

            #[inline]
            fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.sample::<$t, _>(StandardNormal)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// `ln(1 + exp(x))` without overflow for large `x`.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::lit(30.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for strictly positive `y`.
#[inline]
pub fn inv_softplus<T: Real>(y: T) -> T {
    if y > T::lit(30.0) {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Derivative of [`softplus`], the logistic sigmoid.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_round_trip() {
        for &s in &[1e-4, 5e-3, 0.01, 0.3, 1.0, 7.5, 40.0] {
            let rho = inv_softplus(s);
            assert!((softplus(rho) - s).abs() <= 1e-12 * s.max(1.0), "sigma {s}");
        }
    }

    #[test]
    fn softplus_limits() {
        assert_eq!(softplus(-1000.0f64), 0.0);
        assert!(softplus(-30.0f64) > 0.0);
        assert_eq!(softplus(100.0f64), 100.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn f32_normal_draws_are_finite() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert!(f32::sample_standard_normal(&mut rng).is_finite());
        }
    }
}

//! Symmetrised Yeo-Johnson transform and standardisation.
//!
//! `psi_l(x) = sgn(x) ((|x| + 1)^l - 1) / l` for `l != 0` and
//! `sgn(x) ln(|x| + 1)` for `l = 0`. The transform is odd, strictly
//! increasing and invertible; `l = 1` is the identity.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::math;

/// Below this magnitude the logarithmic branch is used.
pub const LAMBDA_ZERO: f64 = 1e-12;

/// Lower end of the maximum-likelihood search interval.
pub const LAMBDA_SEARCH_MIN: f64 = -2.0;
/// Upper end of the maximum-likelihood search interval.
pub const LAMBDA_SEARCH_MAX: f64 = 3.0;
const COARSE_STEP: f64 = 0.05;

/// Default transform parameter for target data.
pub const DEFAULT_TARGET_LAMBDA: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PowerTransform {
    pub lambda: f64,
}

impl PowerTransform {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() {
            bail!(Domain, "transform parameter must be finite, got {lambda}");
        }
        Ok(Self { lambda })
    }

    pub const fn identity() -> Self {
        Self { lambda: 1.0 }
    }

    fn is_log(&self) -> bool {
        math::abs(self.lambda) < LAMBDA_ZERO
    }

    /// `psi_lambda(x)`.
    pub fn apply(&self, x: f64) -> f64 {
        if self.lambda == 1.0 {
            return x;
        }
        let a = math::abs(x);
        let mag = if self.is_log() {
            math::ln_1p(a)
        } else {
            // (a + 1)^l - 1 without cancellation near a = 0
            math::exp_m1(self.lambda * math::ln_1p(a)) / self.lambda
        };
        if x < 0.0 {
            -mag
        } else {
            mag
        }
    }

    /// `psi_lambda^{-1}(y)`; requires `lambda |y| + 1 > 0`.
    pub fn invert(&self, y: f64) -> Result<f64> {
        if self.lambda == 1.0 {
            return Ok(y);
        }
        let a = math::abs(y);
        let mag = if self.is_log() {
            math::exp_m1(a)
        } else {
            let base = self.lambda * a;
            if base <= -1.0 {
                bail!(Domain, "cannot invert {y} with lambda {}: lambda*|y| + 1 <= 0", self.lambda);
            }
            math::exp_m1(math::ln_1p(base) / self.lambda)
        };
        Ok(if y < 0.0 { -mag } else { mag })
    }

    /// `d psi / dx = (|x| + 1)^(lambda - 1)`.
    pub fn derivative(&self, x: f64) -> f64 {
        if self.lambda == 1.0 {
            return 1.0;
        }
        math::exp((self.lambda - 1.0) * math::ln_1p(math::abs(x)))
    }

    /// Gaussian profile log-likelihood of the transformed sample including the
    /// log-Jacobian: `-n/2 ln(var(psi(x))) + (lambda - 1) sum ln(1 + |x|)`.
    pub fn log_likelihood(lambda: f64, samples: &[f64]) -> f64 {
        let t = PowerTransform { lambda };
        let n = samples.len() as f64;
        let mut sum = 0.0;
        let mut jac = 0.0;
        for &x in samples {
            sum += t.apply(x);
            jac += math::ln_1p(math::abs(x));
        }
        let mean = sum / n;
        let var = samples
            .iter()
            .map(|&x| {
                let d = t.apply(x) - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        if var <= 0.0 || !var.is_finite() {
            return f64::NEG_INFINITY;
        }
        -0.5 * n * math::ln(var) + (lambda - 1.0) * jac
    }

    /// Maximum-likelihood `lambda` on `[-2, 3]`: coarse grid then golden-section
    /// refinement around the best grid point.
    pub fn fit(samples: &[f64]) -> Result<Self> {
        if samples.len() < 10 {
            bail!(Estimation, "need at least 10 samples to fit lambda, got {}", samples.len());
        }
        if samples.iter().any(|x| !x.is_finite()) {
            bail!(Estimation, "non-finite sample while fitting lambda");
        }
        let first = samples[0];
        if samples.iter().all(|x| *x == first) {
            bail!(Estimation, "zero-variance sample while fitting lambda");
        }
        let steps = math::round((LAMBDA_SEARCH_MAX - LAMBDA_SEARCH_MIN) / COARSE_STEP) as usize;
        let mut best = (LAMBDA_SEARCH_MIN, f64::NEG_INFINITY);
        for s in 0..=steps {
            let l = LAMBDA_SEARCH_MIN + s as f64 * COARSE_STEP;
            let ll = Self::log_likelihood(l, samples);
            if ll > best.1 {
                best = (l, ll);
            }
        }
        if !best.1.is_finite() {
            bail!(Estimation, "log-likelihood not finite anywhere on the search grid");
        }
        let lo = (best.0 - COARSE_STEP).max(LAMBDA_SEARCH_MIN);
        let hi = (best.0 + COARSE_STEP).min(LAMBDA_SEARCH_MAX);
        let refined = golden_max(|l| Self::log_likelihood(l, samples), lo, hi, 1e-7);
        let lambda = if Self::log_likelihood(refined, samples) >= best.1 { refined } else { best.0 };
        Ok(Self { lambda })
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (math::sqrt(5.0) - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Affine map to zero mean and unit variance.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
            bail!(Domain, "standardizer needs finite mean and std > 0 (got {mean}, {std})");
        }
        Ok(Self { mean, std })
    }

    pub const fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    /// Population mean and standard deviation of `samples`.
    pub fn fit(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            bail!(Estimation, "cannot fit a standardizer to no samples");
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        if !(var > 0.0) {
            bail!(Estimation, "zero-variance sample cannot be standardized");
        }
        Self::new(mean, math::sqrt(var))
    }

    #[inline]
    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    #[inline]
    pub fn destandardize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Transform followed by standardisation, the full scaling of one covariate.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scaling {
    pub transform: PowerTransform,
    pub standardizer: Standardizer,
}

impl Scaling {
    pub const fn identity() -> Self {
        Self { transform: PowerTransform::identity(), standardizer: Standardizer::identity() }
    }

    /// Fit the standardizer on `psi(samples)` for a fixed transform.
    pub fn fit_with(transform: PowerTransform, samples: &[f64]) -> Result<Self> {
        let t: Vec<f64> = samples.iter().map(|&x| transform.apply(x)).collect();
        Ok(Self { transform, standardizer: Standardizer::fit(&t)? })
    }

    /// Fit both the transform parameter and the standardizer.
    pub fn fit(samples: &[f64]) -> Result<Self> {
        Self::fit_with(PowerTransform::fit(samples)?, samples)
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        self.standardizer.standardize(self.transform.apply(x))
    }

    /// `d apply / dx`.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        self.transform.derivative(x) / self.standardizer.std
    }

    pub fn invert(&self, y: f64) -> Result<f64> {
        self.transform.invert(self.standardizer.destandardize(y))
    }
}

impl core::fmt::Display for PowerTransform {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&format!("psi[{}]", self.lambda))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn pt(l: f64) -> PowerTransform {
        PowerTransform::new(l).unwrap()
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(pt(1.0).apply(-3.25), -3.25);
        assert!((pt(0.0).apply(core::f64::consts::E - 1.0) - 1.0).abs() < 1e-15);
        assert!((pt(0.5).apply(3.0) - 2.0).abs() < 1e-14);
        assert_eq!(pt(1.0).invert(7.0).unwrap(), 7.0);
        assert!((pt(0.0).invert(1.0).unwrap() - (core::f64::consts::E - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn invert_domain_error() {
        // lambda = -1: psi saturates at 1
        assert!(pt(-1.0).invert(1.5).is_err());
        assert!(pt(-1.0).invert(0.5).is_ok());
    }

    #[test]
    fn round_trip_lambda_07() {
        let t = pt(0.7);
        let mut xs = vec![0.0];
        for e in -3..=6 {
            for m in [1.0, 2.5, 7.0] {
                let x = m * 10f64.powi(e);
                if x <= 1e6 {
                    xs.push(x);
                }
                if x <= 1e3 {
                    xs.push(-x);
                }
            }
        }
        for x in xs {
            let back = t.invert(t.apply(x)).unwrap();
            assert!((back - x).abs() <= 1e-10 * x.abs(), "{x} -> {back}");
        }
    }

    #[test]
    fn continuity_at_zero() {
        for x in [0.1, 1.0, 10.0, 1e4] {
            assert!((pt(1e-8).apply(x) - pt(0.0).apply(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        for l in [-0.5, 0.0, 0.3, 0.7, 1.0, 2.0] {
            for x in [-5.0, -0.3, 0.4, 12.0] {
                let h = 1e-6;
                let fd = (pt(l).apply(x + h) - pt(l).apply(x - h)) / (2.0 * h);
                assert!((fd - pt(l).derivative(x)).abs() < 1e-6, "l={l} x={x}");
            }
        }
    }

    /// Independent grid-search maximiser at 0.01 resolution.
    fn grid_oracle(samples: &[f64]) -> f64 {
        let ll = |l: f64| {
            let n = samples.len() as f64;
            let y: Vec<f64> = samples
                .iter()
                .map(|&x| {
                    let a = x.abs();
                    let m = if l.abs() < 1e-12 { (a + 1.0).ln() } else { ((a + 1.0).powf(l) - 1.0) / l };
                    m * x.signum()
                })
                .collect();
            let mean = y.iter().sum::<f64>() / n;
            let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            -0.5 * n * var.ln() + (l - 1.0) * samples.iter().map(|x| (x.abs() + 1.0).ln()).sum::<f64>()
        };
        let mut best = (-2.0, f64::NEG_INFINITY);
        for s in 0..=500 {
            let l = -2.0 + 0.01 * s as f64;
            let v = ll(l);
            if v > best.1 {
                best = (l, v);
            }
        }
        best.0
    }

    #[test]
    fn fit_normal_sample_near_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let fitted = PowerTransform::fit(&xs).unwrap().lambda;
        assert!((fitted - 1.0).abs() < 0.2, "lambda {fitted}");
        assert!((fitted - grid_oracle(&xs)).abs() <= 0.011);
    }

    #[test]
    fn fit_lognormal_sample_near_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let xs: Vec<f64> = (0..10_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (3.0 + z).exp() - 1.0
            })
            .collect();
        let fitted = PowerTransform::fit(&xs).unwrap().lambda;
        assert!(fitted.abs() < 0.1, "lambda {fitted}");
        assert!((fitted - grid_oracle(&xs)).abs() <= 0.011);
        let at = PowerTransform::log_likelihood(fitted, &xs);
        assert!(at >= PowerTransform::log_likelihood(fitted + 0.05, &xs));
        assert!(at >= PowerTransform::log_likelihood(fitted - 0.05, &xs));
    }

    #[test]
    fn fit_errors() {
        assert!(PowerTransform::fit(&[1.0; 5]).is_err());
        assert!(PowerTransform::fit(&[2.0; 20]).is_err());
        let mut xs = [1.0; 20];
        xs[3] = f64::NAN;
        assert!(PowerTransform::fit(&xs).is_err());
    }

    #[test]
    fn standardizer_cases() {
        let s = Standardizer::fit(&[-1.0, 1.0]).unwrap();
        assert_eq!((s.mean, s.std), (0.0, 1.0));
        let s = Standardizer::fit(&[0.0, 10.0]).unwrap();
        assert_eq!(s.standardize(0.0), -1.0);
        assert_eq!(s.standardize(10.0), 1.0);
        assert!(Standardizer::fit(&[3.0, 3.0]).is_err());
    }

    #[test]
    fn standardized_sample_moments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..1000).map(|_| 5.0 + 3.0 * { let v: f64 = StandardNormal.sample(&mut rng); v }).collect();
        let s = Standardizer::fit(&xs).unwrap();
        let z: Vec<f64> = xs.iter().map(|&x| s.standardize(x)).collect();
        let m = z.iter().sum::<f64>() / z.len() as f64;
        let v = z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / z.len() as f64;
        assert!(m.abs() < 1e-9);
        assert!((v - 1.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn odd_and_increasing(l in -1.5f64..3.0, a in 0.0f64..1e5, b in 0.0f64..1e5) {
            let t = pt(l);
            prop_assert_eq!(t.apply(-a), -t.apply(a));
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if lo < hi {
                prop_assert!(t.apply(lo) < t.apply(hi) || (t.apply(hi) - t.apply(lo)).abs() < 1e-15 * hi);
                prop_assert!(t.apply(-hi) <= t.apply(-lo));
            }
        }

        #[test]
        fn destandardize_round_trip(m in -1e3f64..1e3, s in 1e-3f64..1e3, x in -1e4f64..1e4) {
            let st = Standardizer::new(m, s).unwrap();
            prop_assert!((st.destandardize(st.standardize(x)) - x).abs() <= 1e-12 * (1.0 + x.abs() + m.abs()));
        }
    }
}

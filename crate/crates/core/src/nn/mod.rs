//! The recurrent estimator `u(chi, z) = (log T, z')`.
//!
//! A dense feed-forward network: `depth` linear layers, a hidden activation
//! after every layer but the last, and CeLU with a (negative) `alpha` after the
//! last. The input is the covariate vector followed by the latent state; the
//! output is the log-flow followed by the next latent state.
//!
//! Parameters live in one flat buffer. Layer `l` stores its weight matrix
//! input-major (`in x out`, row `r` holds the weights leaving input `r`)
//! followed by its `out` biases. The same layout is used for gradients, the
//! optimiser state and checkpoints.

mod adam;
pub(crate) mod gemm;
mod net;

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::math;

pub use adam::{Adam, AdamConfig};
pub(crate) use net::forward_batch_unchecked;
pub use net::{
    backward, backward_batch, forward, forward_batch, project_covariate_rows,
    project_covariates, covariate_rows_backward, BatchInputGrads, BatchTape, GradientTape, Gradients,
};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => math::tanh(x),
            Activation::Sigmoid => 1.0 / (1.0 + math::exp(-x)),
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    /// In-place application with the dispatch hoisted out of the loop.
    pub fn apply_slice(self, xs: &mut [f64]) {
        match self {
            Activation::Tanh => xs.iter_mut().for_each(|v| *v = math::tanh(*v)),
            Activation::Sigmoid => xs.iter_mut().for_each(|v| *v = 1.0 / (1.0 + math::exp(-*v))),
            Activation::Relu => xs.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Linear => {}
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "sigmoid" => Some(Activation::Sigmoid),
            "relu" => Some(Activation::Relu),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// `max(0, x) + min(0, alpha (exp(x / alpha) - 1))`, which for either sign of
/// `alpha` is `x` on `x > 0` and `alpha (exp(x / alpha) - 1)` otherwise.
#[inline]
pub fn celu(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * math::exp_m1(x / alpha)
    }
}

#[inline]
pub fn celu_derivative(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        math::exp(x / alpha)
    }
}

/// Shape of the network.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Architecture {
    /// Length of the covariate vector `chi`.
    pub covariate_dim: usize,
    /// Latent dimension `Z`.
    pub latent_dim: usize,
    pub hidden_width: usize,
    /// Number of linear layers (hidden layers + output layer).
    pub depth: usize,
    pub hidden_activation: Activation,
    pub celu_alpha: f64,
}

impl Architecture {
    pub const DEFAULT_DEPTH: usize = 7;
    pub const DEFAULT_WIDTH: usize = 60;
    pub const DEFAULT_LATENT: usize = 100;
    pub const DEFAULT_CELU_ALPHA: f64 = -12.0;

    /// Production defaults for a given covariate length.
    pub fn with_defaults(covariate_dim: usize) -> Self {
        Self {
            covariate_dim,
            latent_dim: Self::DEFAULT_LATENT,
            hidden_width: Self::DEFAULT_WIDTH,
            depth: Self::DEFAULT_DEPTH,
            hidden_activation: Activation::Tanh,
            celu_alpha: Self::DEFAULT_CELU_ALPHA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            bail!(Structural, "network depth must be at least 1");
        }
        if self.depth > 1 && self.hidden_width == 0 {
            bail!(Structural, "hidden width must be positive");
        }
        if self.covariate_dim + self.latent_dim == 0 {
            bail!(Structural, "network has no inputs");
        }
        if !self.celu_alpha.is_finite() || self.celu_alpha == 0.0 {
            bail!(Structural, "CeLU alpha must be finite and nonzero");
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.covariate_dim + self.latent_dim
    }

    pub fn output_dim(&self) -> usize {
        1 + self.latent_dim
    }

    /// `(fan_in, fan_out)` of every layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|l| {
                let fan_in = if l == 0 { self.input_dim() } else { self.hidden_width };
                let fan_out = if l + 1 == self.depth { self.output_dim() } else { self.hidden_width };
                (fan_in, fan_out)
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Offsets of each layer's weights and biases in the flat buffer.
    pub fn layer_offsets(&self) -> Vec<LayerOffsets> {
        let mut at = 0;
        self.layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let w = at..at + fan_in * fan_out;
                let b = w.end..w.end + fan_out;
                at = b.end;
                LayerOffsets { fan_in, fan_out, weights: w, bias: b }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerOffsets {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
}

/// Network weights in the flat layout described at module level.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetworkParameters {
    arch: Architecture,
    data: Vec<f64>,
}

impl NetworkParameters {
    pub fn from_flat(arch: Architecture, data: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if data.len() != arch.param_count() {
            bail!(Structural, "architecture needs {} parameters, got {}", arch.param_count(), data.len());
        }
        if let Some(p) = data.iter().position(|x| !x.is_finite()) {
            bail!(Numeric, "parameter {p} is not finite");
        }
        Ok(Self { arch, data })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(Self { arch, data: vec![0.0; arch.param_count()] })
    }

    /// Glorot-uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in arch.layer_offsets() {
            let limit = math::sqrt(6.0 / (layer.fan_in + layer.fan_out) as f64);
            for w in &mut p.data[layer.weights] {
                *w = rng.random_range(-limit..=limit);
            }
        }
        Ok(p)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn layer_weights(&self, l: usize) -> &[f64] {
        let o = &self.arch.layer_offsets()[l];
        &self.data[o.weights.clone()]
    }

    pub fn layer_bias(&self, l: usize) -> &[f64] {
        let o = &self.arch.layer_offsets()[l];
        &self.data[o.bias.clone()]
    }
}

/// Per-edge latent memory, one length-`Z` vector per edge, zero at start.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    dim: usize,
    data: Vec<f64>,
}

impl LatentState {
    pub fn zeros(edges: usize, dim: usize) -> Self {
        Self { dim, data: vec![0.0; edges * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn edge(&self, e: usize) -> &[f64] {
        &self.data[e * self.dim..(e + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(cov: usize, z: usize, width: usize, depth: usize) -> Architecture {
        Architecture {
            covariate_dim: cov,
            latent_dim: z,
            hidden_width: width,
            depth,
            hidden_activation: Activation::Tanh,
            celu_alpha: -12.0,
        }
    }

    #[test]
    fn default_architecture() {
        let a = Architecture::with_defaults(38);
        assert_eq!((a.depth, a.hidden_width, a.latent_dim), (7, 60, 100));
        assert_eq!(a.input_dim(), 138);
        assert_eq!(a.output_dim(), 101);
        let dims = a.layer_dims();
        assert_eq!(dims.first(), Some(&(138, 60)));
        assert_eq!(dims.last(), Some(&(60, 101)));
        assert_eq!(dims.len(), 7);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = arch(5, 3, 8, 3);
        let p1 = NetworkParameters::init(a, 7).unwrap();
        let p2 = NetworkParameters::init(a, 7).unwrap();
        let p3 = NetworkParameters::init(a, 8).unwrap();
        assert_eq!(p1.as_slice(), p2.as_slice());
        assert_ne!(p1.as_slice(), p3.as_slice());
        assert!(p1.layer_bias(1).iter().all(|b| *b == 0.0));
    }

    #[test]
    fn init_moments_match_uniform() {
        let a = arch(60, 0, 60, 2);
        let p = NetworkParameters::init(a, 1).unwrap();
        let w = p.layer_weights(0);
        assert_eq!(w.len(), 3600);
        let limit = (6.0f64 / 120.0).sqrt();
        assert!(w.iter().all(|x| x.abs() <= limit));
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sd = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        // Uniform(-l, l) has std l / sqrt(3) = sqrt(2 / (fan_in + fan_out)).
        let expected = limit / 3f64.sqrt();
        assert!((sd - expected).abs() < 0.2 * expected, "sd {sd} vs {expected}");
    }

    #[test]
    fn celu_shape() {
        assert_eq!(celu(0.0, -12.0), 0.0);
        assert_eq!(celu(2.0, -12.0), 2.0);
        // negative alpha: faster-than-linear decrease for x < 0
        let v = celu(-12.0, -12.0);
        assert!((v - (-12.0 * (1f64.exp() - 1.0))).abs() < 1e-12);
        // standard positive alpha saturates at -alpha
        assert!((celu(-50.0, 1.0) + 1.0).abs() < 1e-12);
        for x in [-3.0, -0.5, 0.5, 3.0] {
            for a in [-12.0, 1.0] {
                let h = 1e-6;
                let fd = (celu(x + h, a) - celu(x - h, a)) / (2.0 * h);
                assert!((fd - celu_derivative(x, a)).abs() < 1e-6);
            }
        }
    }
}

//! Forward and reverse passes over batches of edges.
//!
//! The first layer is split: the caller supplies the covariate part of its
//! pre-activation (`chi * W0[covariates]`), which lets rollouts build it from
//! per-country and per-pair projections instead of full per-edge vectors. The
//! latent rows, the bias and every later layer are handled here.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use super::gemm::{gemm, gemm_at, gemm_bt};
use super::{celu, celu_derivative, Architecture, NetworkParameters};
use crate::error::{bail, Result};

/// Intermediates of one batched forward call.
#[derive(Debug, Clone)]
pub struct BatchTape {
    arch: Architecture,
    rows: usize,
    latent: Vec<f64>,
    /// Post-activation outputs of every hidden layer.
    hidden: Vec<Vec<f64>>,
    /// Pre-activation of the output layer.
    pre_out: Vec<f64>,
}

impl BatchTape {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// Gradients with respect to the inputs of a batched call.
#[derive(Debug, Clone)]
pub struct BatchInputGrads {
    /// `dL / d(covariate pre-activation)`, `rows x width0`.
    pub cov_proj: Vec<f64>,
    /// `dL / dz`, `rows x Z`.
    pub latent: Vec<f64>,
}

/// `x (rows x C) * W0[covariate rows]`.
pub fn project_covariates(params: &NetworkParameters, x: &[f64], rows: usize) -> Vec<f64> {
    project_covariate_rows(params, 0..params.arch().covariate_dim, x, rows)
}

/// Projection of a contiguous block of covariates: `x (rows x block) * W0[block]`.
pub fn project_covariate_rows(
    params: &NetworkParameters,
    block: Range<usize>,
    x: &[f64],
    rows: usize,
) -> Vec<f64> {
    let o = &params.arch().layer_offsets()[0];
    let width = o.fan_out;
    let len = block.end - block.start;
    let w = &params.as_slice()[o.weights.start + block.start * width..o.weights.start + block.end * width];
    let mut out = vec![0.0; rows * width];
    gemm(rows, len, width, x, w, 0.0, &mut out);
    out
}

/// Reverse of [`project_covariate_rows`]: adds `x^T g` into the weight
/// gradient of the block and, if asked, returns `g W0[block]^T`.
pub fn covariate_rows_backward(
    params: &NetworkParameters,
    block: Range<usize>,
    x: &[f64],
    g: &[f64],
    rows: usize,
    grads: &mut [f64],
    input_grads: bool,
) -> Option<Vec<f64>> {
    let o = &params.arch().layer_offsets()[0];
    let width = o.fan_out;
    let len = block.end - block.start;
    let range = o.weights.start + block.start * width..o.weights.start + block.end * width;
    gemm_at(len, rows, width, x, g, 1.0, &mut grads[range.clone()]);
    input_grads.then(|| {
        let mut gx = vec![0.0; rows * len];
        gemm_bt(rows, width, len, g, &params.as_slice()[range], 0.0, &mut gx);
        gx
    })
}

/// Batched forward pass. `cov_proj` is the covariate part of the first
/// pre-activation (`rows x width0`), `latent` is `rows x Z`. Returns the
/// outputs (`rows x (1 + Z)`) and the tape.
pub fn forward_batch(
    params: &NetworkParameters,
    cov_proj: Vec<f64>,
    latent: &[f64],
    rows: usize,
) -> Result<(Vec<f64>, BatchTape)> {
    let (out, tape) = forward_batch_unchecked(params, cov_proj, latent, rows)?;
    if let Some(pos) = out.iter().position(|v| !v.is_finite()) {
        bail!(Numeric, "non-finite network output at row {}", pos / params.arch().output_dim());
    }
    Ok((out, tape))
}

/// [`forward_batch`] without the finiteness check on the outputs.
pub(crate) fn forward_batch_unchecked(
    params: &NetworkParameters,
    cov_proj: Vec<f64>,
    latent: &[f64],
    rows: usize,
) -> Result<(Vec<f64>, BatchTape)> {
    let arch = *params.arch();
    let offsets = arch.layer_offsets();
    let z = arch.latent_dim;
    if cov_proj.len() != rows * offsets[0].fan_out || latent.len() != rows * z {
        bail!(Structural, "batch buffers do not match {rows} rows of the architecture");
    }
    let p = params.as_slice();
    let depth = arch.depth;
    let mut hidden = Vec::with_capacity(depth.saturating_sub(1));
    let mut act = cov_proj;
    for (l, o) in offsets.iter().enumerate() {
        let mut pre = if l == 0 {
            let lat = &p[o.weights.start + arch.covariate_dim * o.fan_out..o.weights.end];
            gemm(rows, z, o.fan_out, latent, lat, 1.0, &mut act);
            act
        } else {
            let mut pre = vec![0.0; rows * o.fan_out];
            gemm(rows, o.fan_in, o.fan_out, &act, &p[o.weights.clone()], 0.0, &mut pre);
            hidden.push(act);
            pre
        };
        let bias = &p[o.bias.clone()];
        for row in pre.chunks_exact_mut(o.fan_out) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        if l + 1 < depth {
            arch.hidden_activation.apply_slice(&mut pre);
        }
        act = pre;
    }
    let pre_out = act;
    let out: Vec<f64> = pre_out.iter().map(|&x| celu(x, arch.celu_alpha)).collect();
    Ok((out, BatchTape { arch, rows, latent: latent.to_vec(), hidden, pre_out }))
}

/// Batched reverse pass. Parameter gradients are added into `grads` (flat
/// layout); the covariate rows of the first layer are left to the caller,
/// which receives `dL / d cov_proj`.
pub fn backward_batch(
    params: &NetworkParameters,
    tape: BatchTape,
    out_grads: &[f64],
    grads: &mut [f64],
) -> Result<BatchInputGrads> {
    let arch = *params.arch();
    if tape.arch != arch {
        bail!(Usage, "tape was recorded with a different architecture");
    }
    if grads.len() != arch.param_count() {
        bail!(Structural, "gradient buffer has {} entries, need {}", grads.len(), arch.param_count());
    }
    let rows = tape.rows;
    if out_grads.len() != rows * arch.output_dim() {
        bail!(Structural, "output gradient needs {} entries", rows * arch.output_dim());
    }
    let p = params.as_slice();
    let offsets = arch.layer_offsets();
    let mut g: Vec<f64> = out_grads
        .iter()
        .zip(&tape.pre_out)
        .map(|(go, &x)| go * celu_derivative(x, arch.celu_alpha))
        .collect();
    let mut hidden = tape.hidden;
    for l in (0..arch.depth).rev() {
        let o = &offsets[l];
        {
            let gb = &mut grads[o.bias.clone()];
            for row in g.chunks_exact(o.fan_out) {
                for (acc, v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        if l == 0 {
            break;
        }
        let h = hidden.pop().expect("hidden activations recorded for every hidden layer");
        gemm_at(o.fan_in, rows, o.fan_out, &h, &g, 1.0, &mut grads[o.weights.clone()]);
        let mut gp = vec![0.0; rows * o.fan_in];
        gemm_bt(rows, o.fan_out, o.fan_in, &g, &p[o.weights.clone()], 0.0, &mut gp);
        let f = arch.hidden_activation;
        for (gv, &y) in gp.iter_mut().zip(&h) {
            *gv *= f.derivative_from_output(y);
        }
        g = gp;
    }
    let o = &offsets[0];
    let z = arch.latent_dim;
    let lat = o.weights.start + arch.covariate_dim * o.fan_out..o.weights.end;
    gemm_at(z, rows, o.fan_out, &tape.latent, &g, 1.0, &mut grads[lat.clone()]);
    let mut gz = vec![0.0; rows * z];
    gemm_bt(rows, o.fan_out, z, &g, &p[lat], 0.0, &mut gz);
    Ok(BatchInputGrads { cov_proj: g, latent: gz })
}

/// Record of a single-edge forward call, consumed by [`backward`]. Taking it
/// by value means one tape feeds exactly one reverse pass.
#[derive(Debug, Clone)]
pub struct GradientTape {
    chi: Vec<f64>,
    inner: BatchTape,
}

/// Exact gradients of one forward call.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub chi: Vec<f64>,
    pub latent: Vec<f64>,
}

/// `u(chi, z) -> (log_flow, z_next, tape)`.
pub fn forward(
    params: &NetworkParameters,
    chi: &[f64],
    z: &[f64],
) -> Result<(f64, Vec<f64>, GradientTape)> {
    let arch = params.arch();
    if chi.len() != arch.covariate_dim || z.len() != arch.latent_dim {
        bail!(
            Structural,
            "input is {} covariates + {} latent, network expects {} + {}",
            chi.len(),
            z.len(),
            arch.covariate_dim,
            arch.latent_dim
        );
    }
    if chi.iter().chain(z).any(|v| !v.is_finite()) {
        bail!(Numeric, "non-finite network input");
    }
    let proj = project_covariates(params, chi, 1);
    let (out, inner) = forward_batch(params, proj, z, 1)?;
    Ok((out[0], out[1..].to_vec(), GradientTape { chi: chi.to_vec(), inner }))
}

/// Reverse pass for one forward call. `output_grads` has length `1 + Z`
/// (`dL / d log_flow` followed by `dL / dz_next`).
pub fn backward(
    tape: GradientTape,
    params: &NetworkParameters,
    output_grads: &[f64],
) -> Result<Gradients> {
    let arch = *params.arch();
    let mut grads = vec![0.0; arch.param_count()];
    let chi = tape.chi;
    let inner = backward_batch(params, tape.inner, output_grads, &mut grads)?;
    let gchi = covariate_rows_backward(
        params,
        0..arch.covariate_dim,
        &chi,
        &inner.cov_proj,
        1,
        &mut grads,
        true,
    )
    .unwrap_or_default();
    Ok(Gradients { params: grads, chi: gchi, latent: inner.latent })
}

#[cfg(test)]
mod tests {
    use super::super::{Activation, Architecture, NetworkParameters};
    use super::*;
    use rand::{Rng, SeedableRng};

    fn arch(cov: usize, z: usize, width: usize, depth: usize, act: Activation) -> Architecture {
        Architecture { covariate_dim: cov, latent_dim: z, hidden_width: width, depth, hidden_activation: act, celu_alpha: -12.0 }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = NetworkParameters::zeros(arch(4, 3, 5, 3, Activation::Tanh)).unwrap();
        let (lf, zn, _) = forward(&p, &[1.0, -2.0, 3.0, 0.5], &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(lf, 0.0);
        assert_eq!(zn, vec![0.0; 3]);
    }

    #[test]
    fn hand_network_two_layers() {
        // 1 input, 1 hidden unit, 1 output: w = 1, b = 0 everywhere.
        let a = arch(1, 0, 1, 2, Activation::Tanh);
        let p = NetworkParameters::from_flat(a, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let (lf, _, _) = forward(&p, &[0.5], &[]).unwrap();
        let h = 0.5f64.tanh();
        assert!((h - 0.46211715726000974).abs() < 1e-15);
        assert!((lf - h).abs() < 1e-15); // CeLU is the identity on positive inputs
        let (lf, _, _) = forward(&p, &[-0.5], &[]).unwrap();
        assert!((lf - (-12.0 * ((-h) / -12.0f64).exp_m1())).abs() < 1e-15);
    }

    #[test]
    fn saturating_inputs_stay_finite() {
        let a = arch(6, 2, 8, 3, Activation::Tanh);
        let p = NetworkParameters::init(a, 3).unwrap();
        let (lf, zn, _) = forward(&p, &[1e6, -1e6, 1e6, 5e5, -3e5, 1e6], &[1e6, -1e6]).unwrap();
        assert!(lf.is_finite() && zn.iter().all(|v| v.is_finite()));
        assert!(forward(&p, &[f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradient() {
        let a = arch(3, 2, 4, 3, Activation::Tanh);
        let p = NetworkParameters::init(a, 5).unwrap();
        let (_, _, tape) = forward(&p, &[0.1, 0.2, 0.3], &[0.0, 0.5]).unwrap();
        let g = backward(tape, &p, &[0.0; 3]).unwrap();
        assert!(g.params.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batched_path_matches_single_edges() {
        let a = arch(4, 3, 6, 3, Activation::Tanh);
        let p = NetworkParameters::init(a, 9).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let rows = 5;
        let x: Vec<f64> = (0..rows * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..rows * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let og: Vec<f64> = (0..rows * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let proj = project_covariates(&p, &x, rows);
        let (out, tape) = forward_batch(&p, proj, &z, rows).unwrap();
        let mut gb = vec![0.0; a.param_count()];
        let ig = backward_batch(&p, tape, &og, &mut gb).unwrap();
        covariate_rows_backward(&p, 0..4, &x, &ig.cov_proj, rows, &mut gb, false);
        let mut gs = vec![0.0; a.param_count()];
        for r in 0..rows {
            let (lf, zn, t) = forward(&p, &x[r * 4..r * 4 + 4], &z[r * 3..r * 3 + 3]).unwrap();
            assert!((lf - out[r * 4]).abs() < 1e-14);
            for q in 0..3 {
                assert!((zn[q] - out[r * 4 + 1 + q]).abs() < 1e-14);
            }
            let g = backward(t, &p, &og[r * 4..r * 4 + 4]).unwrap();
            for (acc, v) in gs.iter_mut().zip(&g.params) {
                *acc += v;
            }
            for q in 0..3 {
                assert!((g.latent[q] - ig.latent[r * 3 + q]).abs() < 1e-13);
            }
        }
        for (u, v) in gb.iter().zip(&gs) {
            assert!((u - v).abs() < 1e-12 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn gradient_of_two_calls_is_additive() {
        let a = arch(2, 1, 3, 2, Activation::Tanh);
        let p = NetworkParameters::init(a, 2).unwrap();
        let (_, _, t1) = forward(&p, &[0.3, -0.1], &[0.2]).unwrap();
        let (_, _, t2) = forward(&p, &[-0.4, 0.9], &[0.7]).unwrap();
        let g1 = backward(t1, &p, &[1.0, 0.5]).unwrap();
        let g2 = backward(t2, &p, &[1.0, 0.5]).unwrap();
        let proj = project_covariates(&p, &[0.3, -0.1, -0.4, 0.9], 2);
        let (_, tape) = forward_batch(&p, proj, &[0.2, 0.7], 2).unwrap();
        let mut g = vec![0.0; a.param_count()];
        let ig = backward_batch(&p, tape, &[1.0, 0.5, 1.0, 0.5], &mut g).unwrap();
        covariate_rows_backward(&p, 0..2, &[0.3, -0.1, -0.4, 0.9], &ig.cov_proj, 2, &mut g, false);
        for i in 0..g.len() {
            assert!((g[i] - (g1.params[i] + g2.params[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn mismatched_tape_is_usage_error() {
        let p1 = NetworkParameters::init(arch(2, 1, 3, 2, Activation::Tanh), 1).unwrap();
        let p2 = NetworkParameters::init(arch(2, 1, 4, 2, Activation::Tanh), 1).unwrap();
        let (_, _, t) = forward(&p1, &[0.1, 0.2], &[0.0]).unwrap();
        assert!(matches!(backward(t, &p2, &[1.0, 0.0]), Err(crate::Error::Usage(_))));
    }
}

//! Hand-derived reverse-mode pass through the unfolded layers.
//!
//! Each layer is `x_{i+1} = x_i - G_i z_i` with
//! `z_i = H^T Diag(c) eta(Diag(c)(b - H x_i))`, `c_j = r_j / sigma_j`.
//! Given an upstream vector `v = dJ/dx_L`, the recursion below produces
//! exact derivatives of `J` with respect to H, sigma, and every W_i,
//! using only the stored trace and `eta'(u) = -u eta(u) - eta(u)^2`.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::likelihood::{eta_prime_from_eta, OneBitObservation, SystemParams};

use super::{ForwardTrace, LayerWeight, UnfoldedWeights};

/// Gradients of a scalar contracted against the network output.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_h: Array2<f64>,
    /// Derivative with respect to each sigma_i (chain through the log
    /// parameterization at the call site when training C).
    pub d_sigma: Array1<f64>,
    /// Per-layer derivative with respect to the W factor, matching the
    /// layer's representation (diagonal vector or full matrix, flattened
    /// into the same shape as the weight).
    pub d_w: Vec<LayerWeight>,
}

impl Gradients {
    pub fn zeros_like(theta: &SystemParams, phi: &UnfoldedWeights) -> Self {
        Gradients {
            d_h: Array2::zeros((theta.m(), theta.n())),
            d_sigma: Array1::zeros(theta.m()),
            d_w: phi
                .layers
                .iter()
                .map(|l| match l {
                    LayerWeight::Diag(w) => LayerWeight::Diag(Array1::zeros(w.len())),
                    LayerWeight::Full(w) => LayerWeight::Full(Array2::zeros(w.dim())),
                })
                .collect(),
        }
    }

    /// Accumulates `other` into `self` (fixed order; used for batch sums).
    pub fn add_assign(&mut self, other: &Gradients) {
        self.d_h += &other.d_h;
        self.d_sigma += &other.d_sigma;
        for (a, b) in self.d_w.iter_mut().zip(other.d_w.iter()) {
            match (a, b) {
                (LayerWeight::Diag(x), LayerWeight::Diag(y)) => *x += y,
                (LayerWeight::Full(x), LayerWeight::Full(y)) => *x += y,
                _ => unreachable!("mismatched weight representations"),
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.d_h *= factor;
        self.d_sigma *= factor;
        for w in &mut self.d_w {
            match w {
                LayerWeight::Diag(x) => *x *= factor,
                LayerWeight::Full(x) => *x *= factor,
            }
        }
    }
}

/// Reverse-mode derivatives of `upstream . x_L` with respect to H, sigma,
/// and the per-layer W factors.
pub fn backward(
    trace: &ForwardTrace,
    theta: &SystemParams,
    r: &OneBitObservation,
    phi: &UnfoldedWeights,
    upstream: &Array1<f64>,
) -> Result<Gradients> {
    let num_layers = phi.num_layers();
    let (m, n) = (theta.m(), theta.n());
    if trace.x_layers.len() != num_layers + 1
        || trace.u_layers.len() != num_layers
        || trace.eta_layers.len() != num_layers
    {
        return Err(Error::Shape {
            context: "backward",
            expected: format!("trace for {num_layers} layers"),
            got: format!(
                "x_layers {}, u_layers {}",
                trace.x_layers.len(),
                trace.u_layers.len()
            ),
        });
    }
    if upstream.len() != n || r.len() != m {
        return Err(Error::Shape {
            context: "backward",
            expected: format!("upstream of length {n}, r of length {m}"),
            got: format!("upstream {}, r {}", upstream.len(), r.len()),
        });
    }

    let c = Array1::from_shape_fn(m, |i| r.signs()[i] / theta.sigma[i]);
    let mut grads = Gradients::zeros_like(theta, phi);
    let mut g = upstream.clone(); // dJ/dx_{i+1}, walking backwards

    for i in (0..num_layers).rev() {
        let x_i = &trace.x_layers[i];
        let u = &trace.u_layers[i];
        let e = &trace.eta_layers[i];
        let layer = &phi.layers[i];

        // a = G_i g
        let a = layer.apply(&g);

        // z_i = H^T (c .* eta), reconstructed from the trace.
        let weighted = Array1::from_shape_fn(m, |j| c[j] * e[j]);
        let z = theta.h.t().dot(&weighted);

        // dJ/dW_i from x_{i+1} = x_i - G_i z_i, G_i linear in itself:
        // M = dJ/dG_i = -g z^T; dW = (M + M^T) W.
        match (&mut grads.d_w[i], layer) {
            (LayerWeight::Diag(dw), LayerWeight::Diag(w)) => {
                for k in 0..n {
                    dw[k] += -2.0 * w[k] * g[k] * z[k];
                }
            }
            (LayerWeight::Full(dw), LayerWeight::Full(w)) => {
                let mut msym = Array2::<f64>::zeros((n, n));
                for p in 0..n {
                    for q in 0..n {
                        msym[[p, q]] = -(g[p] * z[q] + g[q] * z[p]);
                    }
                }
                *dw += &msym.dot(w);
            }
            _ => unreachable!(),
        }

        let etap = Array1::from_shape_fn(m, |j| eta_prime_from_eta(u[j], e[j]));
        let ha = theta.h.dot(&a);
        // p = R~ D R~ H a  (elementwise: c^2 * eta' * (Ha))
        let p = Array1::from_shape_fn(m, |j| c[j] * c[j] * etap[j] * ha[j]);

        // dJ/dH layer contribution: -(c .* eta) a^T + p x_i^T
        for row in 0..m {
            let w_row = weighted[row];
            let p_row = p[row];
            for col in 0..n {
                grads.d_h[[row, col]] += -w_row * a[col] + p_row * x_i[col];
            }
        }

        // dJ/dsigma_j = dJ/dc_j * (-r_j / sigma_j^2),
        // dJ/dc_j = -(eta_j + u_j eta'_j) (H a)_j
        for j in 0..m {
            let dc = -(e[j] + u[j] * etap[j]) * ha[j];
            grads.d_sigma[j] += dc * (-r.signs()[j] / (theta.sigma[j] * theta.sigma[j]));
        }

        // dJ/dx_i = g + H^T p
        g = &g + &theta.h.t().dot(&p);
    }

    Ok(grads)
}

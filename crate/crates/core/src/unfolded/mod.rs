//! The unfolded detector: each layer is one preconditioned gradient step
//! on the relaxed one-bit likelihood, with per-layer preconditioners
//! `G_i = W_i W_i^T` kept positive semidefinite by construction.

mod backward;
mod checkpoint;
mod variants;

pub use backward::{backward, Gradients};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use variants::{variant_forward, variant_param_count, VariantLayer, VariantWeights};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::likelihood::{eta, Constellation, OneBitObservation, SystemParams};

/// One layer's preconditioner factor W, either a strictly positive
/// diagonal (the default) or a full n x n matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerWeight {
    /// G = Diag(w^2)
    Diag(Array1<f64>),
    /// G = W W^T
    Full(Array2<f64>),
}

impl LayerWeight {
    /// Applies the realized preconditioner: returns `G v`.
    pub fn apply(&self, v: &Array1<f64>) -> Array1<f64> {
        match self {
            LayerWeight::Diag(w) => Array1::from_shape_fn(v.len(), |i| w[i] * w[i] * v[i]),
            LayerWeight::Full(w) => w.dot(&w.t().dot(v)),
        }
    }

    /// The realized `G = W W^T` as a dense matrix.
    pub fn realize(&self, n: usize) -> Array2<f64> {
        match self {
            LayerWeight::Diag(w) => Array2::from_diag(&w.mapv(|v| v * v)),
            LayerWeight::Full(w) => {
                let _ = n;
                w.dot(&w.t())
            }
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            LayerWeight::Diag(w) => w.len(),
            LayerWeight::Full(w) => w.len(),
        }
    }
}

/// The per-layer preconditioners of an L-layer unfolded detector.
#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldedWeights {
    pub layers: Vec<LayerWeight>,
}

impl UnfoldedWeights {
    /// Diagonal weights reproducing the basic policy `G_i = delta I`.
    pub fn delta_policy(n: usize, num_layers: usize, delta: f64) -> Self {
        let w = Array1::from_elem(n, delta.sqrt());
        Self {
            layers: vec![LayerWeight::Diag(w); num_layers],
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.num_params()).sum()
    }
}

/// Per-layer intermediates from one forward pass: layer inputs/outputs
/// `x_0..x_L`, pre-nonlinearity arguments, and eta evaluations. Consumed
/// by backpropagation and per-layer BER analysis.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub x_layers: Vec<Array1<f64>>,
    pub u_layers: Vec<Array1<f64>>,
    pub eta_layers: Vec<Array1<f64>>,
}

fn check_layer_dims(theta: &SystemParams, r: &OneBitObservation, x: &Array1<f64>) -> Result<()> {
    if x.len() != theta.n() || r.len() != theta.m() {
        return Err(Error::Shape {
            context: "layer_forward",
            expected: format!("x of length {}, r of length {}", theta.n(), theta.m()),
            got: format!("x {}, r {}", x.len(), r.len()),
        });
    }
    Ok(())
}

/// One unfolded layer: `x_next = x - G z` with
/// `z = H^T R~ eta(R~ (b - H x))`. Also returns `(u, eta(u))` for the trace.
pub fn layer_forward(
    x: &Array1<f64>,
    theta: &SystemParams,
    r: &OneBitObservation,
    g: &LayerWeight,
) -> Result<(Array1<f64>, Array1<f64>, Array1<f64>)> {
    check_layer_dims(theta, r, x)?;
    let m = theta.m();
    let hx = theta.h.dot(x);
    let mut u = Array1::<f64>::zeros(m);
    let mut e = Array1::<f64>::zeros(m);
    let mut weighted = Array1::<f64>::zeros(m);
    for i in 0..m {
        let c = r.signs()[i] / theta.sigma[i];
        u[i] = c * (theta.b[i] - hx[i]);
        e[i] = eta(u[i])?;
        weighted[i] = c * e[i];
    }
    let z = theta.h.t().dot(&weighted);
    let x_next = x - &g.apply(&z);
    Ok((x_next, u, e))
}

/// Full L-layer forward pass; returns the final iterate and the trace.
pub fn forward(
    x0: &Array1<f64>,
    theta: &SystemParams,
    r: &OneBitObservation,
    phi: &UnfoldedWeights,
) -> Result<(Array1<f64>, ForwardTrace)> {
    let num_layers = phi.num_layers();
    let mut trace = ForwardTrace {
        x_layers: Vec::with_capacity(num_layers + 1),
        u_layers: Vec::with_capacity(num_layers),
        eta_layers: Vec::with_capacity(num_layers),
    };
    trace.x_layers.push(x0.clone());
    let mut x = x0.clone();
    for g in &phi.layers {
        let (x_next, u, e) = layer_forward(&x, theta, r, g)?;
        trace.u_layers.push(u);
        trace.eta_layers.push(e);
        trace.x_layers.push(x_next.clone());
        x = x_next;
    }
    Ok((x, trace))
}

/// Elementwise nearest constellation point; ties go to the larger point,
/// so the BPSK case is exactly sign-with-tie-at-+1.
pub fn project(x: &Array1<f64>, constellation: &Constellation) -> Array1<f64> {
    let points = constellation.points();
    Array1::from_shape_fn(x.len(), |i| {
        let mut best = points[0];
        let mut best_d = (x[i] - points[0]).abs();
        for &p in &points[1..] {
            let d = (x[i] - p).abs();
            if d <= best_d {
                best = p;
                best_d = d;
            }
        }
        best
    })
}

/// Runs the unfolded network from `x_0 = 0` and projects the output once.
pub fn detect(
    r: &OneBitObservation,
    theta: &SystemParams,
    phi: &UnfoldedWeights,
    constellation: &Constellation,
) -> Result<Array1<f64>> {
    let x0 = Array1::zeros(theta.n());
    let (x_final, _) = forward(&x0, theta, r, phi)?;
    Ok(project(&x_final, constellation))
}

/// Trainable parameter count for the diagonal-preconditioner detector:
/// `n*L` weights, plus `m*n` when H is trained, plus `m` when the noise
/// covariance is trained.
pub fn unfolded_param_count(
    m: usize,
    n: usize,
    num_layers: usize,
    train_h: bool,
    train_c: bool,
) -> usize {
    n * num_layers + if train_h { m * n } else { 0 } + if train_c { m } else { 0 }
}

//! Conventional unfolded benchmark variants: per-layer dynamics
//! `x_{i+1} = x_i - A_i R eta(R (b - B_i x_i))` with `R = Diag(r)`.
//! The full variant learns `A_i, B_i` directly; the low-rank variant
//! realizes them as `A_i = P_i Q_i`, `B_i = R_i S_i` with rank r.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::likelihood::{eta, OneBitObservation};

/// One layer of a benchmark variant.
#[derive(Debug, Clone, PartialEq)]
pub enum VariantLayer {
    /// A: n x m, B: m x n.
    Full { a: Array2<f64>, b: Array2<f64> },
    /// A = P Q (n x r, r x m), B = R S (m x r, r x n), rank r < min(m, n).
    LowRank {
        p: Array2<f64>,
        q: Array2<f64>,
        r: Array2<f64>,
        s: Array2<f64>,
    },
}

impl VariantLayer {
    fn effective_a(&self) -> Array2<f64> {
        match self {
            VariantLayer::Full { a, .. } => a.clone(),
            VariantLayer::LowRank { p, q, .. } => p.dot(q),
        }
    }

    fn effective_b(&self) -> Array2<f64> {
        match self {
            VariantLayer::Full { b, .. } => b.clone(),
            VariantLayer::LowRank { r, s, .. } => r.dot(s),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            VariantLayer::Full { a, b } => a.len() + b.len(),
            VariantLayer::LowRank { p, q, r, s } => p.len() + q.len() + r.len() + s.len(),
        }
    }

    fn check_shapes(&self, m: usize, n: usize) -> Result<()> {
        let ok = match self {
            VariantLayer::Full { a, b } => a.dim() == (n, m) && b.dim() == (m, n),
            VariantLayer::LowRank { p, q, r, s } => {
                let rank = p.ncols();
                rank >= 1
                    && p.dim() == (n, rank)
                    && q.dim() == (rank, m)
                    && r.dim() == (m, rank)
                    && s.dim() == (rank, n)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape {
                context: "variant_forward",
                expected: format!("layer matrices consistent with m={m}, n={n}"),
                got: "inconsistent variant layer shapes".into(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantWeights {
    pub layers: Vec<VariantLayer>,
}

impl VariantWeights {
    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.num_params()).sum()
    }
}

/// Trainable parameter counts: `2Lnm` for the full variant, `2Lr(m+n)`
/// for the rank-r variant.
pub fn variant_param_count(m: usize, n: usize, num_layers: usize, rank: Option<usize>) -> usize {
    match rank {
        None => 2 * num_layers * n * m,
        Some(r) => 2 * num_layers * r * (m + n),
    }
}

/// L-layer composition of the benchmark dynamics.
pub fn variant_forward(
    x0: &Array1<f64>,
    r: &OneBitObservation,
    weights: &VariantWeights,
    b: &Array1<f64>,
) -> Result<Array1<f64>> {
    let m = r.len();
    let n = x0.len();
    if b.len() != m {
        return Err(Error::Shape {
            context: "variant_forward",
            expected: format!("thresholds of length {m}"),
            got: format!("{}", b.len()),
        });
    }
    let mut x = x0.clone();
    for layer in &weights.layers {
        layer.check_shapes(m, n)?;
        let a_mat = layer.effective_a();
        let b_mat = layer.effective_b();
        let bx = b_mat.dot(&x);
        let mut weighted = Array1::<f64>::zeros(m);
        for j in 0..m {
            let u = r.signs()[j] * (b[j] - bx[j]);
            weighted[j] = r.signs()[j] * eta(u)?;
        }
        x = &x - &a_mat.dot(&weighted);
    }
    Ok(x)
}

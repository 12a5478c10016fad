//! Numerically stable primitives for the one-bit Gaussian likelihood.
//!
//! Everything here is built around the standard normal tail probability
//! `Q(u) = P(Z >= u)` and the nonlinearity `eta(u) = -pdf(u)/Q(u)` that
//! shows up in the gradient of the negative log-likelihood. Naive pdf/cdf
//! division underflows near `u ~ 38`; the positive-tail paths go through
//! the scaled complementary error function instead.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
/// sqrt(2/pi) = pdf(0)/Q(0)
const SQRT_2_OVER_PI: f64 = 0.7978845608028653558798921198687637;
const LN_HALF: f64 = -0.6931471805599453094172321214581766;
/// 1/sqrt(2*pi)
const INV_SQRT_2PI: f64 = 0.3989422804014326779399460599343819;

/// Asymptotic switch-over for `eta`; beyond this the closed forms are used.
const ETA_ASYMPTOTIC_CUT: f64 = 40.0;

fn check_finite(func: &'static str, u: f64) -> Result<()> {
    if u.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain { func, value: u })
    }
}

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(u: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

/// Scaled complementary error function `erfcx(x) = exp(x^2) * erfc(x)` for x >= 0.
///
/// For moderate x the product form is exact enough; past the point where
/// `exp(x^2)` would overflow we use the asymptotic expansion
/// `erfcx(x) ~ 1/(x sqrt(pi)) * sum_k (-1)^k (2k-1)!!/(2x^2)^k`.
fn erfcx_nonneg(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 25.0 {
        (x * x).exp() * libm::erfc(x)
    } else {
        let inv2x2 = 1.0 / (2.0 * x * x);
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 0u32;
        // Terms shrink rapidly for x >= 25; eight are far below f64 epsilon.
        while k < 8 {
            k += 1;
            term *= -((2 * k - 1) as f64) * inv2x2;
            sum += term;
        }
        sum / (x * std::f64::consts::PI.sqrt())
    }
}

/// Standard normal tail probability `Q(u) = P(Z >= u)`.
pub fn q_tail(u: f64) -> Result<f64> {
    check_finite("q_tail", u)?;
    Ok(0.5 * libm::erfc(u / SQRT_2))
}

/// `ln Q(u)`, stable far into the positive tail where `Q(u)` underflows.
pub fn log_q_tail(u: f64) -> Result<f64> {
    check_finite("log_q_tail", u)?;
    if u <= 0.0 {
        // Q(u) = 1 - Q(-u) with Q(-u) <= 1/2.
        let tail = 0.5 * libm::erfc(-u / SQRT_2);
        Ok((-tail).ln_1p())
    } else {
        // Q(u) = 1/2 erfcx(u/sqrt(2)) exp(-u^2/2)
        Ok(LN_HALF + erfcx_nonneg(u / SQRT_2).ln() - 0.5 * u * u)
    }
}

/// The gradient nonlinearity `eta(u) = Q'(u)/Q(u) = -pdf(u)/Q(u)`.
///
/// Always negative; behaves like `-u` for large positive u and vanishes
/// for large negative u. Outside `|u| <= 40` the asymptotic forms are used
/// so extreme mis-scaled parameters still produce finite gradients.
pub fn eta(u: f64) -> Result<f64> {
    check_finite("eta", u)?;
    if u > ETA_ASYMPTOTIC_CUT {
        Ok(-(u + 1.0 / u))
    } else if u < -ETA_ASYMPTOTIC_CUT {
        // Q(u) ~ 1, so eta(u) ~ -pdf(u) (underflows to -0.0 well past -38).
        Ok(-std_normal_pdf(u))
    } else if u <= 0.0 {
        // Q(u) >= 1/2: the naive ratio is stable here.
        Ok(-std_normal_pdf(u) / (0.5 * libm::erfc(u / SQRT_2)))
    } else {
        // pdf(u)/Q(u) = sqrt(2/pi) / erfcx(u/sqrt(2))
        Ok(-SQRT_2_OVER_PI / erfcx_nonneg(u / SQRT_2))
    }
}

/// Derivative of [`eta`], via the identity `eta'(u) = -u*eta(u) - eta(u)^2`.
pub fn eta_prime(u: f64) -> Result<f64> {
    check_finite("eta_prime", u)?;
    let e = eta(u)?;
    Ok(eta_prime_from_eta(u, e))
}

/// Same identity, reusing an already computed `eta(u)`. Hot path for
/// backpropagation, where the forward trace stores the eta values.
#[inline]
pub fn eta_prime_from_eta(u: f64, eta_u: f64) -> f64 {
    -u * eta_u - eta_u * eta_u
}

/// The system parameters: channel matrix, per-dimension noise standard
/// deviations (square roots of the diagonal noise covariance), and
/// quantization thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    /// m x n channel gains.
    pub h: Array2<f64>,
    /// Length-m noise standard deviations, all strictly positive.
    pub sigma: Array1<f64>,
    /// Length-m quantization thresholds.
    pub b: Array1<f64>,
}

impl SystemParams {
    pub fn new(h: Array2<f64>, sigma: Array1<f64>, b: Array1<f64>) -> Result<Self> {
        let (m, _n) = h.dim();
        if sigma.len() != m || b.len() != m {
            return Err(Error::Shape {
                context: "SystemParams::new",
                expected: format!("sigma and b of length {m}"),
                got: format!("sigma {}, b {}", sigma.len(), b.len()),
            });
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("channel matrix has non-finite entries".into()));
        }
        if sigma.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Validation("sigma entries must be strictly positive".into()));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("thresholds have non-finite entries".into()));
        }
        Ok(Self { h, sigma, b })
    }

    pub fn m(&self) -> usize {
        self.h.nrows()
    }

    pub fn n(&self) -> usize {
        self.h.ncols()
    }
}

/// A finite symbol alphabet, sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<f64>,
}

impl Constellation {
    pub fn new(mut points: Vec<f64>) -> Result<Self> {
        points.sort_by(|a, b| a.partial_cmp(b).expect("non-finite constellation point"));
        points.dedup();
        if points.len() < 2 {
            return Err(Error::Config(
                "constellation needs at least 2 distinct points".into(),
            ));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("constellation points must be finite".into()));
        }
        Ok(Self { points })
    }

    /// BPSK alphabet {-1, +1}.
    pub fn bpsk() -> Self {
        Self {
            points: vec![-1.0, 1.0],
        }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, v: f64) -> bool {
        self.points.iter().any(|&p| p == v)
    }
}

/// One vector of sign measurements, entries exactly -1 or +1.
#[derive(Debug, Clone, PartialEq)]
pub struct OneBitObservation {
    r: Array1<f64>,
}

impl OneBitObservation {
    pub fn new(r: Array1<f64>) -> Result<Self> {
        if let Some((i, &v)) = r.iter().enumerate().find(|(_, &v)| v != 1.0 && v != -1.0) {
            return Err(Error::Validation(format!(
                "observation entry {i} is {v}, expected exactly -1 or +1"
            )));
        }
        Ok(Self { r })
    }

    pub fn signs(&self) -> &Array1<f64> {
        &self.r
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

fn check_dims(
    context: &'static str,
    x: &Array1<f64>,
    r: &OneBitObservation,
    theta: &SystemParams,
) -> Result<()> {
    if x.len() != theta.n() || r.len() != theta.m() {
        return Err(Error::Shape {
            context,
            expected: format!("x of length {}, r of length {}", theta.n(), theta.m()),
            got: format!("x {}, r {}", x.len(), r.len()),
        });
    }
    Ok(())
}

/// Negative log-likelihood of observing `r` given symbols `x`:
/// `-sum_i ln Q((r_i/sigma_i)(b_i - h_i^T x))`. Convex in `x`.
pub fn nll(x: &Array1<f64>, r: &OneBitObservation, theta: &SystemParams) -> Result<f64> {
    check_dims("nll", x, r, theta)?;
    let hx = theta.h.dot(x);
    let mut total = 0.0;
    for i in 0..theta.m() {
        let u = r.signs()[i] / theta.sigma[i] * (theta.b[i] - hx[i]);
        total -= log_q_tail(u)?;
    }
    Ok(total)
}

/// Gradient of [`nll`] with respect to `x`:
/// `H^T R~ eta(R~ (b - Hx))` with `R~ = Diag(r_i/sigma_i)`.
pub fn nll_grad(
    x: &Array1<f64>,
    r: &OneBitObservation,
    theta: &SystemParams,
) -> Result<Array1<f64>> {
    check_dims("nll_grad", x, r, theta)?;
    let hx = theta.h.dot(x);
    let mut weighted = Array1::<f64>::zeros(theta.m());
    for i in 0..theta.m() {
        let c = r.signs()[i] / theta.sigma[i];
        let u = c * (theta.b[i] - hx[i]);
        weighted[i] = c * eta(u)?;
    }
    Ok(theta.h.t().dot(&weighted))
}

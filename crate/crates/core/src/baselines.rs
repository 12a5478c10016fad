//! Model-based reference detectors: the iterative near-ML detector with
//! perfect CSI, the plain relaxed-MLE gradient detector, and the exact
//! exhaustive MLE for small symbol dimensions.

use ndarray::Array1;

use crate::channel::Dataset;
use crate::error::{Error, Result};
use crate::harness::ber;
use crate::likelihood::{nll, nll_grad, Constellation, OneBitObservation, SystemParams};
use crate::unfolded::project;

/// Hard cap on the exhaustive search space.
pub const BRUTE_FORCE_GUARD: u64 = 1 << 20;

/// Default logarithmic grid for the step-size search.
pub const DEFAULT_STEP_GRID: [f64; 6] = [0.001, 0.003, 0.01, 0.03, 0.1, 0.3];

/// Plain gradient descent on the negative log-likelihood from `x_0 = 0`,
/// returning both the unprojected iterate and the projected symbols.
pub fn relaxed_mle_detect(
    r: &OneBitObservation,
    theta: &SystemParams,
    constellation: &Constellation,
    iters: usize,
    step: f64,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let mut x = Array1::<f64>::zeros(theta.n());
    for it in 0..iters {
        // An overflowed iterate surfaces as a domain error inside the
        // likelihood primitives; report it as descent divergence.
        let g = nll_grad(&x, r, theta).map_err(|e| match e {
            Error::Domain { .. } => Error::Numerical {
                context: "relaxed_mle_detect",
                step: it,
            },
            other => other,
        })?;
        x = &x - &(g * step);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                context: "relaxed_mle_detect",
                step: it,
            });
        }
    }
    let symbols = project(&x, constellation);
    Ok((x, symbols))
}

/// Iterative near-ML detection with known system parameters: first-order
/// descent on the relaxed MLE objective for `iters` iterations, then one
/// projection. 700 iterations by convention; pick the step with
/// [`grid_search_step`] when none is given.
pub fn nml_detect(
    r: &OneBitObservation,
    theta_true: &SystemParams,
    constellation: &Constellation,
    iters: usize,
    step: f64,
) -> Result<Array1<f64>> {
    let (_, symbols) = relaxed_mle_detect(r, theta_true, constellation, iters, step)?;
    Ok(symbols)
}

/// Picks the grid point with the lowest BER on a labeled validation batch;
/// ties break toward the smaller step.
pub fn grid_search_step(
    theta_true: &SystemParams,
    validation: &Dataset,
    constellation: &Constellation,
    iters: usize,
    grid: &[f64],
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Config("step-size grid must be non-empty".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite grid point"));
    let mut best_step = sorted[0];
    let mut best_ber = f64::INFINITY;
    'grid: for &step in &sorted {
        let mut estimates = ndarray::Array2::<f64>::zeros(validation.x_true.dim());
        for p in 0..validation.len() {
            let obs = validation.observation(p)?;
            // A step that makes the descent blow up is simply not a
            // candidate; only genuine data errors propagate.
            let sym = match nml_detect(&obs, theta_true, constellation, iters, step) {
                Ok(sym) => sym,
                Err(Error::Numerical { .. }) => continue 'grid,
                Err(e) => return Err(e),
            };
            estimates.row_mut(p).assign(&sym);
        }
        let b = ber(&estimates, &validation.x_true)?;
        // Strict inequality keeps the smallest step on ties.
        if b < best_ber {
            best_ber = b;
            best_step = step;
        }
    }
    Ok(best_step)
}

/// Exact MLE by exhaustive enumeration of the symbol lattice in
/// lexicographic order (ascending per coordinate, last coordinate fastest);
/// ties keep the lexicographically earliest candidate.
pub fn brute_force_mle(
    r: &OneBitObservation,
    theta: &SystemParams,
    constellation: &Constellation,
) -> Result<Array1<f64>> {
    let n = theta.n();
    let k = constellation.len() as u64;
    let total = k
        .checked_pow(n as u32)
        .filter(|&t| t <= BRUTE_FORCE_GUARD)
        .ok_or(Error::Capacity {
            size: k.saturating_pow(n as u32),
            guard: BRUTE_FORCE_GUARD,
        })?;
    let points = constellation.points();
    let mut indices = vec![0usize; n];
    let mut best: Option<(f64, Array1<f64>)> = None;
    for _ in 0..total {
        let candidate = Array1::from_shape_fn(n, |j| points[indices[j]]);
        let value = nll(&candidate, r, theta)?;
        let better = match &best {
            None => true,
            Some((bv, _)) => value < *bv,
        };
        if better {
            best = Some((value, candidate));
        }
        // Odometer increment, last coordinate fastest.
        for j in (0..n).rev() {
            indices[j] += 1;
            if indices[j] < points.len() {
                break;
            }
            indices[j] = 0;
        }
    }
    Ok(best.expect("non-empty candidate set").1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_dataset, ground_truth_params, sample_rayleigh_channel, ChannelKind};
    use crate::unfolded::{forward, UnfoldedWeights};
    use ndarray::array;

    #[test]
    fn brute_force_single_coordinate() {
        let theta = SystemParams::new(array![[1.0]], array![1.0], array![0.0]).unwrap();
        let r = OneBitObservation::new(array![1.0]).unwrap();
        let x = brute_force_mle(&r, &theta, &Constellation::bpsk()).unwrap();
        assert_eq!(x.to_vec(), vec![1.0]);
    }

    #[test]
    fn brute_force_matches_independent_enumeration() {
        // Literal 4-candidate loop written separately from the odometer.
        let h = sample_rayleigh_channel(5, 2, 77).unwrap();
        let theta = ground_truth_params(h, 5.0).unwrap();
        let r = OneBitObservation::new(array![1.0, -1.0, 1.0, 1.0, -1.0]).unwrap();
        let got = brute_force_mle(&r, &theta, &Constellation::bpsk()).unwrap();
        let mut best_val = f64::INFINITY;
        let mut best = array![0.0, 0.0];
        for &a in &[-1.0, 1.0] {
            for &b in &[-1.0, 1.0] {
                let cand = array![a, b];
                let v = nll(&cand, &r, &theta).unwrap();
                if v < best_val {
                    best_val = v;
                    best = cand;
                }
            }
        }
        assert_eq!(got, best);
    }

    #[test]
    fn brute_force_guard() {
        let h = sample_rayleigh_channel(2, 25, 1).unwrap();
        let theta = ground_truth_params(h, 5.0).unwrap();
        let r = OneBitObservation::new(array![1.0, -1.0]).unwrap();
        assert!(matches!(
            brute_force_mle(&r, &theta, &Constellation::bpsk()),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn brute_force_scale_invariant() {
        let h = sample_rayleigh_channel(6, 3, 78).unwrap();
        let theta = ground_truth_params(h.clone(), 2.0).unwrap();
        let alpha = 3.7;
        let scaled = SystemParams::new(
            theta.h.mapv(|v| alpha * v),
            theta.sigma.mapv(|v| alpha * v),
            theta.b.mapv(|v| alpha * v),
        )
        .unwrap();
        let r = OneBitObservation::new(array![1.0, 1.0, -1.0, 1.0, -1.0, -1.0]).unwrap();
        let a = brute_force_mle(&r, &theta, &Constellation::bpsk()).unwrap();
        let b = brute_force_mle(&r, &scaled, &Constellation::bpsk()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_iterations_projects_origin() {
        let h = sample_rayleigh_channel(4, 2, 79).unwrap();
        let theta = ground_truth_params(h, 10.0).unwrap();
        let r = OneBitObservation::new(array![1.0, -1.0, 1.0, -1.0]).unwrap();
        let out = nml_detect(&r, &theta, &Constellation::bpsk(), 0, 0.01).unwrap();
        assert_eq!(out.to_vec(), vec![1.0, 1.0]);
    }

    #[test]
    fn relaxed_matches_delta_policy_forward() {
        let h = sample_rayleigh_channel(8, 3, 80).unwrap();
        let theta = ground_truth_params(h, 10.0).unwrap();
        let r = OneBitObservation::new(Array1::from_shape_fn(8, |i| {
            if i % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        }))
        .unwrap();
        let (x_bar, _) =
            relaxed_mle_detect(&r, &theta, &Constellation::bpsk(), 25, 0.01).unwrap();
        let phi = UnfoldedWeights::delta_policy(3, 25, 0.01);
        let (x_net, _) = forward(&Array1::zeros(3), &theta, &r, &phi).unwrap();
        for (a, b) in x_bar.iter().zip(x_net.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn nml_nll_non_increasing_on_seeded_instances() {
        for seed in 0..20u64 {
            let h = sample_rayleigh_channel(8, 3, 100 + seed).unwrap();
            let theta = ground_truth_params(h, 8.0).unwrap();
            let ds = generate_dataset(&theta, &Constellation::bpsk(), 1, 8.0, seed, ChannelKind::Rayleigh)
                .unwrap();
            let r = ds.observation(0).unwrap();
            let mut x = Array1::<f64>::zeros(3);
            let mut prev = nll(&x, &r, &theta).unwrap();
            for _ in 0..200 {
                let g = nll_grad(&x, &r, &theta).unwrap();
                x = &x - &(g * 0.005);
                let v = nll(&x, &r, &theta).unwrap();
                assert!(v <= prev + 1e-12, "seed {seed}");
                prev = v;
            }
        }
    }

    #[test]
    fn grid_search_rules() {
        let h = sample_rayleigh_channel(8, 2, 81).unwrap();
        let theta = ground_truth_params(h, 10.0).unwrap();
        let val = generate_dataset(&theta, &Constellation::bpsk(), 16, 10.0, 4, ChannelKind::Rayleigh)
            .unwrap();
        let c = Constellation::bpsk();
        // Singleton grid returns that value.
        let s = grid_search_step(&theta, &val, &c, 10, &[0.02]).unwrap();
        assert_eq!(s, 0.02);
        // Equal-BER tie breaks to the smaller step (zero iterations make
        // every step equivalent).
        let s = grid_search_step(&theta, &val, &c, 0, &[0.3, 0.1]).unwrap();
        assert_eq!(s, 0.1);
        assert!(grid_search_step(&theta, &val, &c, 10, &[]).is_err());
    }

    #[test]
    fn high_snr_nml_matches_brute_force() {
        // 16 x 2 at 25 dB with a grid-searched step: the relaxed detector
        // should agree with the exhaustive MLE nearly always.
        let c = Constellation::bpsk();
        let h = sample_rayleigh_channel(16, 2, 200).unwrap();
        let theta = ground_truth_params(h, 25.0).unwrap();
        let val = generate_dataset(&theta, &c, 32, 25.0, 77, ChannelKind::Rayleigh).unwrap();
        let step = grid_search_step(&theta, &val, &c, 700, &DEFAULT_STEP_GRID).unwrap();
        let trials = 100;
        let ds = generate_dataset(&theta, &c, trials, 25.0, 78, ChannelKind::Rayleigh).unwrap();
        let mut agree = 0;
        for p in 0..trials {
            let r = ds.observation(p).unwrap();
            let nml = nml_detect(&r, &theta, &c, 700, step).unwrap();
            let bf = brute_force_mle(&r, &theta, &c).unwrap();
            if nml == bf {
                agree += 1;
            }
        }
        assert!(agree >= 95, "agreement {agree}/{trials}");
    }
}

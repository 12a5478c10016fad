//! Monte-Carlo evaluation: BER computation, BER-vs-SNR and
//! BER-vs-training-size sweeps, and per-layer BER traces.

use std::collections::HashSet;
use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::baselines::{grid_search_step, nml_detect, relaxed_mle_detect, DEFAULT_STEP_GRID};
use crate::channel::{
    generate_dataset, ground_truth_params, sample_rayleigh_channel, ChannelKind, Dataset,
};
use crate::error::{Error, Result};
use crate::likelihood::{Constellation, SystemParams};
use crate::training::{train, TrainConfig};
use crate::unfolded::{detect, forward, project, UnfoldedWeights};

/// Which quantity varies along a report's axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportAxis {
    SnrDb,
    TrainSize,
    Layer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub axis_value: f64,
    pub ber: f64,
    pub num_bits: u64,
    pub num_errors: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportContext {
    pub m: usize,
    pub n: usize,
    pub layers: usize,
    pub detector_name: String,
    pub seed: u64,
}

/// BER measurements along one axis, with enough bookkeeping to compute
/// confidence intervals downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerReport {
    pub format_version: u32,
    pub axis: ReportAxis,
    pub points: Vec<BerPoint>,
    pub context: ReportContext,
}

pub const REPORT_FORMAT_VERSION: u32 = 1;

impl BerReport {
    /// CSV rows: axis_value, ber, num_errors, num_bits, detector, seed.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis_value,ber,num_errors,num_bits,detector,seed\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                p.axis_value, p.ber, p.num_errors, p.num_bits, self.context.detector_name,
                self.context.seed
            );
        }
        out
    }
}

/// Fraction of mismatched symbol entries.
pub fn ber(estimates: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    let (errors, bits) = count_errors(estimates, truth)?;
    Ok(errors as f64 / bits as f64)
}

/// Integer error bookkeeping behind [`ber`]; exact and order-independent.
pub fn count_errors(estimates: &Array2<f64>, truth: &Array2<f64>) -> Result<(u64, u64)> {
    if estimates.dim() != truth.dim() {
        return Err(Error::Shape {
            context: "ber",
            expected: format!("{:?}", truth.dim()),
            got: format!("{:?}", estimates.dim()),
        });
    }
    let errors = estimates
        .iter()
        .zip(truth.iter())
        .filter(|(a, b)| a != b)
        .count() as u64;
    Ok((errors, estimates.len() as u64))
}

/// Detector behaviors the sweeps can evaluate. Learned detectors are
/// retrained per sweep point; model-based ones read the true parameters.
#[derive(Debug, Clone)]
pub enum DetectorSpec {
    /// Two-stage (or one-stage/alternating, per the config) unfolded
    /// detector trained on each point's training set.
    Unfolded(TrainConfig),
    /// Fixed `delta I` policy with the true parameters (no training).
    DeltaPolicy { layers: usize, delta: f64 },
    /// Iterative near-ML with perfect CSI; step from a grid search on a
    /// validation batch when not supplied.
    Nml { iters: usize, step: Option<f64> },
    /// Plain relaxed-MLE descent with the true parameters.
    Relaxed { iters: usize, step: f64 },
}

impl DetectorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DetectorSpec::Unfolded(_) => "unfolded",
            DetectorSpec::DeltaPolicy { .. } => "delta-policy",
            DetectorSpec::Nml { .. } => "nml",
            DetectorSpec::Relaxed { .. } => "relaxed",
        }
    }
}

/// Shared sweep geometry: one channel realization per experiment run,
/// per-point seeds derived from the master seed.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub m: usize,
    pub n: usize,
    pub train_size: usize,
    pub seed: u64,
}

fn derive_seed(master: u64, index: u64) -> u64 {
    // splitmix64 step keeps per-point streams well separated.
    let mut z = master ^ index.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Evaluates one detector on a labeled test set, returning exact counts.
fn evaluate_detector(
    spec: &DetectorSpec,
    theta_true: &SystemParams,
    train_set: &Dataset,
    test_set: &Dataset,
    constellation: &Constellation,
) -> Result<(u64, u64)> {
    let mut estimates = Array2::<f64>::zeros(test_set.x_true.dim());
    match spec {
        DetectorSpec::Unfolded(config) => {
            let model = train(train_set, config, None)?;
            for p in 0..test_set.len() {
                let r = test_set.observation(p)?;
                estimates
                    .row_mut(p)
                    .assign(&detect(&r, &model.theta, &model.phi, constellation)?);
            }
        }
        DetectorSpec::DeltaPolicy { layers, delta } => {
            let phi = UnfoldedWeights::delta_policy(theta_true.n(), *layers, *delta);
            for p in 0..test_set.len() {
                let r = test_set.observation(p)?;
                estimates
                    .row_mut(p)
                    .assign(&detect(&r, theta_true, &phi, constellation)?);
            }
        }
        DetectorSpec::Nml { iters, step } => {
            let step = match step {
                Some(s) => *s,
                None => {
                    // Grid-search the step on a slice of the training set
                    // (validation), never on the test set.
                    let val_len = train_set.len().min(128);
                    let validation = train_set.slice(0, val_len);
                    grid_search_step(theta_true, &validation, constellation, *iters, &DEFAULT_STEP_GRID)?
                }
            };
            for p in 0..test_set.len() {
                let r = test_set.observation(p)?;
                estimates
                    .row_mut(p)
                    .assign(&nml_detect(&r, theta_true, constellation, *iters, step)?);
            }
        }
        DetectorSpec::Relaxed { iters, step } => {
            for p in 0..test_set.len() {
                let r = test_set.observation(p)?;
                let (_, sym) = relaxed_mle_detect(&r, theta_true, constellation, *iters, *step)?;
                estimates.row_mut(p).assign(&sym);
            }
        }
    }
    count_errors(&estimates, &test_set.x_true)
}

/// BER versus SNR: one channel realization for the run; per-SNR train and
/// test sets generated at that SNR; learned detectors retrained per point.
pub fn sweep_snr(
    spec: &DetectorSpec,
    snr_list: &[f64],
    trials: usize,
    config: &SweepConfig,
) -> Result<BerReport> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    if snr_list.is_empty() {
        return Err(Error::Config("SNR list must be non-empty".into()));
    }
    let constellation = Constellation::bpsk();
    let h = sample_rayleigh_channel(config.m, config.n, config.seed)?;
    let mut points = Vec::with_capacity(snr_list.len());
    let mut layers = 0;
    for (idx, &snr_db) in snr_list.iter().enumerate() {
        let point_seed = derive_seed(config.seed, idx as u64 + 1);
        let theta_true = ground_truth_params(h.clone(), snr_db)?;
        let train_set = generate_dataset(
            &theta_true,
            &constellation,
            config.train_size,
            snr_db,
            point_seed,
            ChannelKind::Rayleigh,
        )?;
        let test_set = generate_dataset(
            &theta_true,
            &constellation,
            trials,
            snr_db,
            derive_seed(point_seed, 0xa11ce),
            ChannelKind::Rayleigh,
        )?;
        let (errors, bits) =
            evaluate_detector(spec, &theta_true, &train_set, &test_set, &constellation)?;
        if let DetectorSpec::Unfolded(c) = spec {
            layers = c.layers;
        } else if let DetectorSpec::DeltaPolicy { layers: l, .. } = spec {
            layers = *l;
        }
        points.push(BerPoint {
            axis_value: snr_db,
            ber: errors as f64 / bits as f64,
            num_bits: bits,
            num_errors: errors,
        });
    }
    Ok(BerReport {
        format_version: REPORT_FORMAT_VERSION,
        axis: ReportAxis::SnrDb,
        points,
        context: ReportContext {
            m: config.m,
            n: config.n,
            layers,
            detector_name: spec.name().to_string(),
            seed: config.seed,
        },
    })
}

/// BER versus training-set size at a fixed SNR, with one shared test set.
pub fn sweep_train_size(
    spec: &DetectorSpec,
    size_list: &[usize],
    snr_db: f64,
    trials: usize,
    config: &SweepConfig,
) -> Result<BerReport> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let unique: HashSet<usize> = size_list.iter().copied().collect();
    if unique.len() != size_list.len() {
        return Err(Error::Config("duplicate training sizes in sweep".into()));
    }
    if size_list.is_empty() {
        return Err(Error::Config("training-size list must be non-empty".into()));
    }
    let constellation = Constellation::bpsk();
    let h = sample_rayleigh_channel(config.m, config.n, config.seed)?;
    let theta_true = ground_truth_params(h, snr_db)?;
    let test_set = generate_dataset(
        &theta_true,
        &constellation,
        trials,
        snr_db,
        derive_seed(config.seed, 0xa11ce),
        ChannelKind::Rayleigh,
    )?;
    let mut points = Vec::with_capacity(size_list.len());
    let mut layers = 0;
    for (idx, &size) in size_list.iter().enumerate() {
        let point_seed = derive_seed(config.seed, idx as u64 + 1);
        let train_set = generate_dataset(
            &theta_true,
            &constellation,
            size,
            snr_db,
            point_seed,
            ChannelKind::Rayleigh,
        )?;
        let (errors, bits) =
            evaluate_detector(spec, &theta_true, &train_set, &test_set, &constellation)?;
        if let DetectorSpec::Unfolded(c) = spec {
            layers = c.layers;
        }
        points.push(BerPoint {
            axis_value: size as f64,
            ber: errors as f64 / bits as f64,
            num_bits: bits,
            num_errors: errors,
        });
    }
    Ok(BerReport {
        format_version: REPORT_FORMAT_VERSION,
        axis: ReportAxis::TrainSize,
        points,
        context: ReportContext {
            m: config.m,
            n: config.n,
            layers,
            detector_name: spec.name().to_string(),
            seed: config.seed,
        },
    })
}

/// Projects every intermediate iterate of the trained network and reports
/// BER per layer index 0..=L on a labeled test set.
pub fn per_layer_ber(
    theta: &SystemParams,
    phi: &UnfoldedWeights,
    test_set: &Dataset,
    seed: u64,
) -> Result<BerReport> {
    let constellation = Constellation::bpsk();
    let num_layers = phi.num_layers();
    let mut errors = vec![0u64; num_layers + 1];
    let x0 = Array1::zeros(theta.n());
    for p in 0..test_set.len() {
        let r = test_set.observation(p)?;
        let (_, trace) = forward(&x0, theta, &r, phi)?;
        let truth = test_set.x_true.row(p);
        for (layer, x) in trace.x_layers.iter().enumerate() {
            let sym = project(x, &constellation);
            errors[layer] += sym
                .iter()
                .zip(truth.iter())
                .filter(|(a, b)| a != b)
                .count() as u64;
        }
    }
    let bits = (test_set.len() * theta.n()) as u64;
    let points = errors
        .iter()
        .enumerate()
        .map(|(layer, &e)| BerPoint {
            axis_value: layer as f64,
            ber: e as f64 / bits as f64,
            num_bits: bits,
            num_errors: e,
        })
        .collect();
    Ok(BerReport {
        format_version: REPORT_FORMAT_VERSION,
        axis: ReportAxis::Layer,
        points,
        context: ReportContext {
            m: theta.m(),
            n: theta.n(),
            layers: num_layers,
            detector_name: "unfolded-per-layer".to_string(),
            seed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ber_counting() {
        let a = array![[1.0, -1.0], [1.0, 1.0]];
        assert_eq!(ber(&a, &a).unwrap(), 0.0);
        let flipped = a.mapv(|v| -v);
        assert_eq!(ber(&flipped, &a).unwrap(), 1.0);
        let mut one_err = Array2::from_elem((2, 5), 1.0);
        let truth = Array2::from_elem((2, 5), 1.0);
        one_err[[0, 3]] = -1.0;
        assert_eq!(ber(&one_err, &truth).unwrap(), 0.1);
        assert!(ber(&a, &truth).is_err());
    }

    #[test]
    fn ber_bookkeeping_is_exact() {
        let truth = Array2::from_elem((3, 4), 1.0);
        let mut est = truth.clone();
        est[[1, 2]] = -1.0;
        est[[2, 0]] = -1.0;
        let (errors, bits) = count_errors(&est, &truth).unwrap();
        assert_eq!((errors, bits), (2, 12));
        assert_eq!(ber(&est, &truth).unwrap(), errors as f64 / bits as f64);
    }

    #[test]
    fn single_point_sweep_reproducible() {
        let spec = DetectorSpec::DeltaPolicy {
            layers: 20,
            delta: 0.01,
        };
        let cfg = SweepConfig {
            m: 8,
            n: 2,
            train_size: 16,
            seed: 3,
        };
        let a = sweep_snr(&spec, &[10.0], 32, &cfg).unwrap();
        let b = sweep_snr(&spec, &[10.0], 32, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points.len(), 1);
        assert_eq!(a.points[0].num_bits, 64);
    }

    #[test]
    fn high_snr_tall_channel_near_zero_errors() {
        // The fixed delta step is unstable at this curvature (1/sigma^2 is
        // large at 25 dB), so evaluate the grid-searched nML baseline.
        let spec = DetectorSpec::Nml {
            iters: 700,
            step: None,
        };
        let cfg = SweepConfig {
            m: 16,
            n: 2,
            train_size: 64,
            seed: 4,
        };
        let report = sweep_snr(&spec, &[25.0], 64, &cfg).unwrap();
        assert!(
            report.points[0].ber <= 0.05,
            "ber {}",
            report.points[0].ber
        );
    }

    #[test]
    fn duplicate_train_sizes_rejected() {
        let spec = DetectorSpec::DeltaPolicy {
            layers: 10,
            delta: 0.01,
        };
        let cfg = SweepConfig {
            m: 8,
            n: 2,
            train_size: 16,
            seed: 5,
        };
        assert!(matches!(
            sweep_train_size(&spec, &[32, 64, 32], 8.0, 16, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn per_layer_report_shape_and_layer0() {
        use crate::channel::{generate_dataset, ground_truth_params, sample_rayleigh_channel};
        let h = sample_rayleigh_channel(8, 2, 6).unwrap();
        let theta = ground_truth_params(h, 10.0).unwrap();
        let phi = UnfoldedWeights::delta_policy(2, 12, 0.01);
        let test_set = generate_dataset(
            &theta,
            &Constellation::bpsk(),
            64,
            10.0,
            7,
            ChannelKind::Rayleigh,
        )
        .unwrap();
        let report = per_layer_ber(&theta, &phi, &test_set, 7).unwrap();
        assert_eq!(report.points.len(), 13);
        // Layer 0 projects x_0 = 0 to all +1 under the tie rule.
        let all_plus = Array2::from_elem(test_set.x_true.dim(), 1.0);
        let want = ber(&all_plus, &test_set.x_true).unwrap();
        assert_eq!(report.points[0].ber, want);
    }

    #[test]
    fn csv_output_columns() {
        let report = BerReport {
            format_version: REPORT_FORMAT_VERSION,
            axis: ReportAxis::SnrDb,
            points: vec![BerPoint {
                axis_value: 8.0,
                ber: 0.25,
                num_bits: 4,
                num_errors: 1,
            }],
            context: ReportContext {
                m: 4,
                n: 2,
                layers: 10,
                detector_name: "nml".into(),
                seed: 9,
            },
        };
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "axis_value,ber,num_errors,num_bits,detector,seed"
        );
        assert_eq!(lines.next().unwrap(), "8,0.25,1,4,nml,9");
    }
}

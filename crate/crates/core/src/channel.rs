//! Channel and dataset generation at controlled SNR, plus the portable
//! text formats for datasets and imported channel matrices.
//!
//! All randomness is counter-based: every sample derives its own stream
//! from `(dataset seed, sample index)`, so generation is reproducible
//! regardless of how the work is split across threads.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{Constellation, OneBitObservation, SystemParams};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// How a dataset's channel matrix came to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Rayleigh,
    Imported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub m: usize,
    pub n: usize,
    pub num_samples: usize,
    pub snr_db: f64,
    pub seed: u64,
    pub channel_kind: ChannelKind,
    pub constellation: Vec<f64>,
    /// Quantization thresholds used during generation (length m).
    pub thresholds: Vec<f64>,
}

/// Labeled pairs of transmitted symbols and one-bit observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// num_samples x n, entries in the constellation.
    pub x_true: Array2<f64>,
    /// num_samples x m, entries in {-1, +1}.
    pub r_obs: Array2<f64>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.meta.num_samples
    }

    pub fn is_empty(&self) -> bool {
        self.meta.num_samples == 0
    }

    pub fn observation(&self, idx: usize) -> Result<OneBitObservation> {
        OneBitObservation::new(self.r_obs.row(idx).to_owned())
    }

    /// A new dataset containing rows `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        let x = self.x_true.slice(ndarray::s![start..end, ..]).to_owned();
        let r = self.r_obs.slice(ndarray::s![start..end, ..]).to_owned();
        let mut meta = self.meta.clone();
        meta.num_samples = end - start;
        Dataset {
            x_true: x,
            r_obs: r,
            meta,
        }
    }
}

/// Per-sample RNG: one ChaCha8 stream per `(seed, sample index)` pair.
fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws an i.i.d. standard normal m x n channel matrix.
pub fn sample_rayleigh_channel(m: usize, n: usize, seed: u64) -> Result<Array2<f64>> {
    if m == 0 || n == 0 {
        return Err(Error::Config(format!(
            "channel dimensions must be positive, got {m}x{n}"
        )));
    }
    let mut rng = sample_rng(seed, 0);
    Ok(Array2::from_shape_fn((m, n), |_| rng.sample(StandardNormal)))
}

/// Noise standard deviation realizing a target SNR under unit-variance
/// i.i.d. channel entries and unit-power symbols: `sigma^2 = n / 10^(snr/10)`.
pub fn sigma_for_snr(snr_db: f64, n: usize) -> f64 {
    (n as f64 / 10f64.powf(snr_db / 10.0)).sqrt()
}

/// One-bit quantizer: `r_i = +1` iff `y_i - b_i >= 0`, else `-1`.
pub fn quantize(y: &Array1<f64>, b: &Array1<f64>) -> Result<OneBitObservation> {
    if y.len() != b.len() {
        return Err(Error::Shape {
            context: "quantize",
            expected: format!("b of length {}", y.len()),
            got: format!("{}", b.len()),
        });
    }
    let r = Array1::from_shape_fn(y.len(), |i| if y[i] - b[i] >= 0.0 { 1.0 } else { -1.0 });
    OneBitObservation::new(r)
}

/// Generates `num_samples` labeled pairs: symbols uniform over the
/// constellation, Gaussian noise with the theta's sigma, then quantization.
pub fn generate_dataset(
    theta: &SystemParams,
    constellation: &Constellation,
    num_samples: usize,
    snr_db: f64,
    seed: u64,
    channel_kind: ChannelKind,
) -> Result<Dataset> {
    if num_samples == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    let (m, n) = (theta.m(), theta.n());
    let mut x_true = Array2::<f64>::zeros((num_samples, n));
    let mut r_obs = Array2::<f64>::zeros((num_samples, m));
    let points = constellation.points();
    for p in 0..num_samples {
        // Stream 0 is reserved for channel sampling.
        let mut rng = sample_rng(seed, 1 + p as u64);
        let x = Array1::from_shape_fn(n, |_| points[rng.gen_range(0..points.len())]);
        let mut y = theta.h.dot(&x);
        for i in 0..m {
            let z: f64 = rng.sample(StandardNormal);
            y[i] += theta.sigma[i] * z;
        }
        let r = quantize(&y, &theta.b)?;
        x_true.row_mut(p).assign(&x);
        r_obs.row_mut(p).assign(r.signs());
    }
    Ok(Dataset {
        x_true,
        r_obs,
        meta: DatasetMeta {
            format_version: DATASET_FORMAT_VERSION,
            m,
            n,
            num_samples,
            snr_db,
            seed,
            channel_kind,
            constellation: points.to_vec(),
            thresholds: theta.b.to_vec(),
        },
    })
}

fn fmt_f64(v: f64) -> String {
    // 17 significant digits round-trips every f64 bit pattern.
    format!("{v:.16e}")
}

/// Writes a dataset: one JSON header line, then one line per sample with
/// the n symbol values followed by the m sign values.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(
        &serde_json::to_string(&ds.meta).map_err(|e| Error::Parse(format!("meta encode: {e}")))?,
    );
    out.push('\n');
    for p in 0..ds.len() {
        let mut line = String::new();
        for j in 0..ds.meta.n {
            if j > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{}", fmt_f64(ds.x_true[[p, j]]));
        }
        for i in 0..ds.meta.m {
            let _ = write!(line, " {}", if ds.r_obs[[p, i]] >= 0.0 { "1" } else { "-1" });
        }
        out.push_str(&line);
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty dataset file".into()))??;
    let meta: DatasetMeta =
        serde_json::from_str(&header).map_err(|e| Error::Parse(format!("dataset header: {e}")))?;
    if meta.thresholds.len() != meta.m {
        return Err(Error::Parse(format!(
            "thresholds length {} does not match m={}",
            meta.thresholds.len(),
            meta.m
        )));
    }
    let constellation = Constellation::new(meta.constellation.clone())
        .map_err(|e| Error::Parse(format!("dataset constellation: {e}")))?;
    let mut x_true = Array2::<f64>::zeros((meta.num_samples, meta.n));
    let mut r_obs = Array2::<f64>::zeros((meta.num_samples, meta.m));
    let mut rows = 0usize;
    for (p, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if p >= meta.num_samples {
            return Err(Error::Parse(format!(
                "more data rows than declared num_samples={}",
                meta.num_samples
            )));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != meta.n + meta.m {
            return Err(Error::Parse(format!(
                "row {p}: expected {} values, got {}",
                meta.n + meta.m,
                tokens.len()
            )));
        }
        for j in 0..meta.n {
            let v: f64 = tokens[j]
                .parse()
                .map_err(|e| Error::Parse(format!("row {p}, x[{j}]: {e}")))?;
            if !constellation.contains(v) {
                return Err(Error::Parse(format!(
                    "row {p}, x[{j}] = {v} is not a constellation point"
                )));
            }
            x_true[[p, j]] = v;
        }
        for i in 0..meta.m {
            let v: f64 = tokens[meta.n + i]
                .parse()
                .map_err(|e| Error::Parse(format!("row {p}, r[{i}]: {e}")))?;
            if v != 1.0 && v != -1.0 {
                return Err(Error::Parse(format!(
                    "row {p}, r[{i}] = {v}, expected exactly -1 or +1"
                )));
            }
            r_obs[[p, i]] = v;
        }
        rows += 1;
    }
    if rows != meta.num_samples {
        return Err(Error::Parse(format!(
            "declared num_samples={} but file contains {rows} rows",
            meta.num_samples
        )));
    }
    Ok(Dataset { x_true, r_obs, meta })
}

#[derive(Debug, Serialize, Deserialize)]
struct ChannelHeader {
    m: usize,
    n: usize,
}

/// Writes a channel matrix: JSON header `{m, n}` then m lines of n values.
pub fn export_channel(h: &Array2<f64>, path: &Path) -> Result<()> {
    let (m, n) = h.dim();
    let mut out = serde_json::to_string(&ChannelHeader { m, n })
        .map_err(|e| Error::Parse(format!("channel header encode: {e}")))?;
    out.push('\n');
    for i in 0..m {
        let mut line = String::new();
        for j in 0..n {
            if j > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{}", fmt_f64(h[[i, j]]));
        }
        out.push_str(&line);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Imports an externally generated channel matrix (e.g. a COST-2100 export).
pub fn import_channel(path: &Path) -> Result<Array2<f64>> {
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty channel file".into()))??;
    let hdr: ChannelHeader =
        serde_json::from_str(&header).map_err(|e| Error::Parse(format!("channel header: {e}")))?;
    if hdr.m == 0 || hdr.n == 0 {
        return Err(Error::Validation(format!(
            "channel dimensions must be positive, got {}x{}",
            hdr.m, hdr.n
        )));
    }
    let mut values = Vec::with_capacity(hdr.m * hdr.n);
    for line in lines {
        let line = line?;
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|e| Error::Parse(format!("channel value {tok:?}: {e}")))?;
            if !v.is_finite() {
                return Err(Error::Validation(format!("non-finite channel entry {v}")));
            }
            values.push(v);
        }
    }
    if values.len() != hdr.m * hdr.n {
        return Err(Error::Validation(format!(
            "channel file declares {}x{} = {} values but contains {}",
            hdr.m,
            hdr.n,
            hdr.m * hdr.n,
            values.len()
        )));
    }
    Array2::from_shape_vec((hdr.m, hdr.n), values)
        .map_err(|e| Error::Validation(format!("channel shape: {e}")))
}

/// Ground-truth parameters for a generated experiment: sampled H, sigma
/// from the SNR mapping, zero thresholds.
pub fn ground_truth_params(h: Array2<f64>, snr_db: f64) -> Result<SystemParams> {
    let (m, n) = h.dim();
    let sigma = sigma_for_snr(snr_db, n);
    SystemParams::new(h, Array1::from_elem(m, sigma), Array1::zeros(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rayleigh_deterministic_and_shaped() {
        let a = sample_rayleigh_channel(4, 2, 7).unwrap();
        let b = sample_rayleigh_channel(4, 2, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_rayleigh_channel(2, 3, 11).unwrap();
        assert_eq!(c.dim(), (2, 3));
        assert!(c.iter().all(|v| v.is_finite()));
        assert!(sample_rayleigh_channel(0, 3, 1).is_err());
    }

    #[test]
    fn rayleigh_moments() {
        let h = sample_rayleigh_channel(1000, 1, 3).unwrap();
        let mean = h.iter().sum::<f64>() / 1000.0;
        let var = h.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 1000.0;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((var - 1.0).abs() < 0.15, "var {var}");
    }

    #[test]
    fn snr_mapping() {
        assert!((sigma_for_snr(0.0, 1) - 1.0).abs() < 1e-15);
        assert!((sigma_for_snr(10.0, 10) - 1.0).abs() < 1e-15);
        let s = sigma_for_snr(-10.0, 4);
        assert!((s * s - 40.0).abs() < 1e-12);
    }

    #[test]
    fn snr_monte_carlo() {
        // Empirical E||Hx||^2 / E||n||^2 at (m, n) = (16, 4) over 1e4 draws.
        let (m, n) = (16usize, 4usize);
        let snr_db = 6.0;
        let sigma = sigma_for_snr(snr_db, n);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut sig_energy = 0.0;
        let mut noise_energy = 0.0;
        for _ in 0..10_000 {
            let h = Array2::from_shape_fn((m, n), |_| rng.sample::<f64, _>(StandardNormal));
            let x = Array1::from_shape_fn(n, |_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
            let hx = h.dot(&x);
            sig_energy += hx.iter().map(|v| v * v).sum::<f64>();
            let nz = Array1::from_shape_fn(m, |_| sigma * rng.sample::<f64, _>(StandardNormal));
            noise_energy += nz.iter().map(|v| v * v).sum::<f64>();
        }
        let ratio = sig_energy / noise_energy;
        let target = 10f64.powf(snr_db / 10.0);
        assert!(
            (ratio - target).abs() / target < 0.05,
            "empirical snr {ratio} vs target {target}"
        );
    }

    #[test]
    fn quantize_rules() {
        let r = quantize(&array![0.0], &array![0.0]).unwrap();
        assert_eq!(r.signs()[0], 1.0); // sign(0) = +1
        let r = quantize(&array![3.0, -2.0], &array![0.0, 0.0]).unwrap();
        assert_eq!(r.signs().to_vec(), vec![1.0, -1.0]);
        let r = quantize(&array![1.0, 1.0], &array![2.0, 0.0]).unwrap();
        assert_eq!(r.signs().to_vec(), vec![-1.0, 1.0]);
        assert!(quantize(&array![1.0], &array![0.0, 0.0]).is_err());
    }

    fn small_theta(snr_db: f64) -> SystemParams {
        let h = sample_rayleigh_channel(4, 2, 5).unwrap();
        ground_truth_params(h, snr_db).unwrap()
    }

    #[test]
    fn dataset_deterministic() {
        let theta = small_theta(8.0);
        let c = Constellation::bpsk();
        let a = generate_dataset(&theta, &c, 32, 8.0, 17, ChannelKind::Rayleigh).unwrap();
        let b = generate_dataset(&theta, &c, 32, 8.0, 17, ChannelKind::Rayleigh).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dataset_noiseless_signs() {
        // sigma ~ 0: r must equal sign(Hx).
        let h = array![[1.0, 0.0], [0.0, 1.0]];
        let theta =
            SystemParams::new(h, array![1e-12, 1e-12], array![0.0, 0.0]).unwrap();
        let ds = generate_dataset(&theta, &Constellation::bpsk(), 16, 120.0, 3, ChannelKind::Rayleigh)
            .unwrap();
        for p in 0..16 {
            for i in 0..2 {
                let want = if ds.x_true[[p, i]] >= 0.0 { 1.0 } else { -1.0 };
                assert_eq!(ds.r_obs[[p, i]], want);
            }
        }
    }

    #[test]
    fn dataset_symbol_frequencies() {
        let theta = small_theta(8.0);
        let ds = generate_dataset(&theta, &Constellation::bpsk(), 10_000, 8.0, 23, ChannelKind::Rayleigh)
            .unwrap();
        let ones = ds.x_true.iter().filter(|&&v| v == 1.0).count() as f64;
        let freq = ones / (10_000.0 * 2.0);
        assert!((0.47..=0.53).contains(&freq), "freq {freq}");
    }

    #[test]
    fn dataset_round_trip() {
        let theta = small_theta(4.0);
        let ds = generate_dataset(&theta, &Constellation::bpsk(), 10, 4.0, 9, ChannelKind::Rayleigh)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ds");
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn dataset_parse_errors() {
        let theta = small_theta(4.0);
        let ds = generate_dataset(&theta, &Constellation::bpsk(), 3, 4.0, 9, ChannelKind::Rayleigh)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ds");
        save_dataset(&ds, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();

        // Corrupt one r entry to 0.
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut toks: Vec<String> = lines[1].split_whitespace().map(String::from).collect();
        let last = toks.len() - 1;
        toks[last] = "0".into();
        lines[1] = toks.join(" ");
        let bad = dir.path().join("bad.ds");
        fs::write(&bad, lines.join("\n")).unwrap();
        let err = load_dataset(&bad).unwrap_err();
        assert!(err.to_string().contains("r["), "{err}");

        // Drop a row: declared count no longer matches.
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines.pop();
        fs::write(&bad, lines.join("\n")).unwrap();
        let err = load_dataset(&bad).unwrap_err();
        assert!(err.to_string().contains("rows"), "{err}");
    }

    #[test]
    fn channel_round_trip_and_validation() {
        let h = sample_rayleigh_channel(4, 2, 31).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.ch");
        export_channel(&h, &path).unwrap();
        let back = import_channel(&path).unwrap();
        assert_eq!(h, back);

        fs::write(&path, "{\"m\":2,\"n\":2}\n1 0\n0 1\n").unwrap();
        let id = import_channel(&path).unwrap();
        assert_eq!(id, array![[1.0, 0.0], [0.0, 1.0]]);

        fs::write(&path, "{\"m\":4,\"n\":2}\n1 2 3 4 5 6 7\n").unwrap();
        assert!(import_channel(&path).is_err());
    }
}

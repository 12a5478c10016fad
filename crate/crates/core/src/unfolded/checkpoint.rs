//! Model checkpoint serialization: JSON with row-major matrices.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::SystemParams;

use super::{LayerWeight, UnfoldedWeights, VariantLayer, VariantWeights};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaDoc {
    /// Row-major m x n channel matrix.
    pub h: Vec<f64>,
    pub sigma: Vec<f64>,
    pub b: Vec<f64>,
    /// Which parameter groups were trained ("H", "C").
    pub trainable_flags: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PhiDoc {
    Diag { w_diag: Vec<Vec<f64>> },
    Full { w: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum VariantDoc {
    Full {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
    },
    LowRank {
        rank: usize,
        p: Vec<Vec<f64>>,
        q: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
        s: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub m: usize,
    pub n: usize,
    #[serde(rename = "L")]
    pub num_layers: usize,
    pub theta: ThetaDoc,
    pub phi: PhiDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<VariantDoc>,
    /// Optimizer settings recorded alongside the parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_meta: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn from_model(
        theta: &SystemParams,
        phi: &UnfoldedWeights,
        trainable_flags: &[&str],
        train_meta: Option<serde_json::Value>,
    ) -> Self {
        let phi_doc = if phi
            .layers
            .iter()
            .all(|l| matches!(l, LayerWeight::Diag(_)))
        {
            PhiDoc::Diag {
                w_diag: phi
                    .layers
                    .iter()
                    .map(|l| match l {
                        LayerWeight::Diag(w) => w.to_vec(),
                        _ => unreachable!(),
                    })
                    .collect(),
            }
        } else {
            PhiDoc::Full {
                w: phi
                    .layers
                    .iter()
                    .map(|l| match l {
                        LayerWeight::Full(w) => w.iter().copied().collect(),
                        LayerWeight::Diag(w) => {
                            Array2::from_diag(w).iter().copied().collect()
                        }
                    })
                    .collect(),
            }
        };
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            m: theta.m(),
            n: theta.n(),
            num_layers: phi.num_layers(),
            theta: ThetaDoc {
                h: theta.h.iter().copied().collect(),
                sigma: theta.sigma.to_vec(),
                b: theta.b.to_vec(),
                trainable_flags: trainable_flags.iter().map(|s| s.to_string()).collect(),
            },
            phi: phi_doc,
            variant: None,
            train_meta,
        }
    }

    pub fn to_model(&self) -> Result<(SystemParams, UnfoldedWeights)> {
        if self.theta.h.len() != self.m * self.n {
            return Err(Error::Parse(format!(
                "checkpoint H has {} entries, expected {}",
                self.theta.h.len(),
                self.m * self.n
            )));
        }
        let h = Array2::from_shape_vec((self.m, self.n), self.theta.h.clone())
            .map_err(|e| Error::Parse(format!("checkpoint H shape: {e}")))?;
        let theta = SystemParams::new(
            h,
            Array1::from_vec(self.theta.sigma.clone()),
            Array1::from_vec(self.theta.b.clone()),
        )?;
        let layers = match &self.phi {
            PhiDoc::Diag { w_diag } => {
                if w_diag.len() != self.num_layers {
                    return Err(Error::Parse(format!(
                        "checkpoint declares L={} but has {} weight layers",
                        self.num_layers,
                        w_diag.len()
                    )));
                }
                w_diag
                    .iter()
                    .map(|w| {
                        if w.len() != self.n {
                            Err(Error::Parse(format!(
                                "diagonal weight length {} != n={}",
                                w.len(),
                                self.n
                            )))
                        } else {
                            Ok(LayerWeight::Diag(Array1::from_vec(w.clone())))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            PhiDoc::Full { w } => {
                if w.len() != self.num_layers {
                    return Err(Error::Parse(format!(
                        "checkpoint declares L={} but has {} weight layers",
                        self.num_layers,
                        w.len()
                    )));
                }
                w.iter()
                    .map(|flat| {
                        Array2::from_shape_vec((self.n, self.n), flat.clone())
                            .map(LayerWeight::Full)
                            .map_err(|e| Error::Parse(format!("full weight shape: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        Ok((theta, UnfoldedWeights { layers }))
    }

    pub fn variant_weights(&self) -> Result<Option<VariantWeights>> {
        let Some(doc) = &self.variant else {
            return Ok(None);
        };
        let layer = match doc {
            VariantDoc::Full { a, b } => {
                let layers = a
                    .iter()
                    .zip(b.iter())
                    .map(|(av, bv)| {
                        Ok(VariantLayer::Full {
                            a: Array2::from_shape_vec((self.n, self.m), av.clone())
                                .map_err(|e| Error::Parse(format!("variant A: {e}")))?,
                            b: Array2::from_shape_vec((self.m, self.n), bv.clone())
                                .map_err(|e| Error::Parse(format!("variant B: {e}")))?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                layers
            }
            VariantDoc::LowRank { rank, p, q, r, s } => {
                let mut layers = Vec::with_capacity(p.len());
                for i in 0..p.len() {
                    layers.push(VariantLayer::LowRank {
                        p: Array2::from_shape_vec((self.n, *rank), p[i].clone())
                            .map_err(|e| Error::Parse(format!("variant P: {e}")))?,
                        q: Array2::from_shape_vec((*rank, self.m), q[i].clone())
                            .map_err(|e| Error::Parse(format!("variant Q: {e}")))?,
                        r: Array2::from_shape_vec((self.m, *rank), r[i].clone())
                            .map_err(|e| Error::Parse(format!("variant R: {e}")))?,
                        s: Array2::from_shape_vec((*rank, self.n), s[i].clone())
                            .map_err(|e| Error::Parse(format!("variant S: {e}")))?,
                    });
                }
                layers
            }
        };
        Ok(Some(VariantWeights { layers: layer }))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(ckpt)
        .map_err(|e| Error::Parse(format!("checkpoint encode: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("checkpoint decode: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ground_truth_params, sample_rayleigh_channel};

    #[test]
    fn checkpoint_round_trip() {
        let h = sample_rayleigh_channel(4, 2, 55).unwrap();
        let theta = ground_truth_params(h, 8.0).unwrap();
        let phi = UnfoldedWeights::delta_policy(2, 5, 0.01);
        let ckpt = Checkpoint::from_model(&theta, &phi, &["H"], None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let (theta2, phi2) = loaded.to_model().unwrap();
        assert_eq!(theta, theta2);
        assert_eq!(phi, phi2);
    }

    #[test]
    fn checkpoint_rejects_bad_shapes() {
        let h = sample_rayleigh_channel(4, 2, 55).unwrap();
        let theta = ground_truth_params(h, 8.0).unwrap();
        let phi = UnfoldedWeights::delta_policy(2, 5, 0.01);
        let mut ckpt = Checkpoint::from_model(&theta, &phi, &["H"], None);
        ckpt.theta.h.pop();
        assert!(ckpt.to_model().is_err());
    }
}

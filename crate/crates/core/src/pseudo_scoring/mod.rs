//! Unsupervised appearance scorers and their combination into the pseudo
//! anomaly score.

mod iforest;
mod lof;
mod meb;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use iforest::{average_path_length, score_from_path, IsolationForest, IsolationTree, Node};
pub use lof::{lof_score, LofModel};
pub use meb::{ocsvm_score, Hypersphere};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, PcaModel};
use crate::ingest::{push_u32, Reader, SegmentId};

/// Pseudo scores attached to one segment; both in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoScore {
    pub segment_id: SegmentId,
    pub y_s_hat: f64,
    pub y_d_hat: f64,
}

/// Which scorer is paired with the isolation forest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompanionScorer {
    /// Minimum enclosing hypersphere distance.
    #[default]
    Ocsvm,
    Lof,
    PcaRecon,
}

impl std::str::FromStr for CompanionScorer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ocsvm" => Ok(CompanionScorer::Ocsvm),
            "lof" => Ok(CompanionScorer::Lof),
            "pca-recon" | "pca" => Ok(CompanionScorer::PcaRecon),
            other => Err(Error::InvalidArgument(format!("unknown scorer {other:?}"))),
        }
    }
}

impl std::fmt::Display for CompanionScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CompanionScorer::Ocsvm => "ocsvm",
            CompanionScorer::Lof => "lof",
            CompanionScorer::PcaRecon => "pca-recon",
        })
    }
}

/// Reconstruction error of `f` outside the model's retained components.
pub fn pca_recon_score(model: &PcaModel, f: &FeatureVector) -> Result<f64> {
    model.reconstruction_error(f)
}

/// Min-max normalizes a batch to [0, 1]; a constant batch maps to 0.5.
pub fn min_max_normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Empty("score batch"));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Ok(vec![0.5; values.len()]);
    }
    Ok(values.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// Element-wise mean of the two min-max normalized score lists.
pub fn combine_scores(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let na = min_max_normalize(a)?;
    let nb = min_max_normalize(b)?;
    Ok(na.iter().zip(&nb).map(|(x, y)| (x + y) / 2.0).collect())
}

const PSM_MAGIC: &[u8; 4] = b"PSM1";
const TAG_FOREST: u8 = 1;
const TAG_SPHERE: u8 = 2;

/// A persisted scorer. Container layout: `PSM1`, one tag byte, payload.
///
/// Forest payload (tag 1): u32 tree count, u32 subsample size, u32 dim; per
/// tree u32 height limit, u32 node count, then nodes in preorder, each a tag
/// byte (0 leaf: u32 size; 1 internal: u32 feature, f64 split, u32 right
/// child index).
///
/// Sphere payload (tag 2): u32 dim, f64 radius, dim f64 center coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredScorer {
    Forest(IsolationForest),
    Sphere(Hypersphere),
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn read_f64(r: &mut Reader<'_>) -> Result<f64> {
    let b = r.bytes(8)?;
    let v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
    if !v.is_finite() {
        return Err(Error::NonFinite(0));
    }
    Ok(v)
}

impl StoredScorer {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = PSM_MAGIC.to_vec();
        match self {
            StoredScorer::Forest(forest) => {
                out.push(TAG_FOREST);
                push_u32(&mut out, forest.trees.len())?;
                push_u32(&mut out, forest.subsample_size)?;
                push_u32(&mut out, forest.dim)?;
                for t in &forest.trees {
                    push_u32(&mut out, t.height_limit)?;
                    push_u32(&mut out, t.nodes.len())?;
                    for n in &t.nodes {
                        match *n {
                            Node::Leaf { size } => {
                                out.push(0);
                                push_u32(&mut out, size)?;
                            }
                            Node::Internal { feature, split, right } => {
                                out.push(1);
                                push_u32(&mut out, feature)?;
                                push_f64(&mut out, split);
                                push_u32(&mut out, right)?;
                            }
                        }
                    }
                }
            }
            StoredScorer::Sphere(s) => {
                out.push(TAG_SPHERE);
                push_u32(&mut out, s.center.len())?;
                push_f64(&mut out, s.radius);
                for &c in &s.center {
                    push_f64(&mut out, c);
                }
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(PSM_MAGIC)?;
        let scorer = match r.u8()? {
            TAG_FOREST => {
                let n_trees = r.u32()? as usize;
                let subsample_size = r.u32()? as usize;
                let dim = r.u32()? as usize;
                let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
                for _ in 0..n_trees {
                    let height_limit = r.u32()? as usize;
                    let count = r.u32()? as usize;
                    let mut nodes = Vec::with_capacity(count.min(1 << 20));
                    for i in 0..count {
                        nodes.push(match r.u8()? {
                            0 => Node::Leaf { size: r.u32()? as usize },
                            1 => {
                                let feature = r.u32()? as usize;
                                let split = read_f64(&mut r)?;
                                let right = r.u32()? as usize;
                                if feature >= dim || right <= i + 1 || right >= count {
                                    return Err(Error::MalformedHeader(format!("bad node {i}")));
                                }
                                Node::Internal { feature, split, right }
                            }
                            t => return Err(Error::MalformedHeader(format!("node tag {t}"))),
                        });
                    }
                    if nodes.is_empty() {
                        return Err(Error::MalformedHeader("empty tree".into()));
                    }
                    trees.push(IsolationTree { nodes, height_limit });
                }
                StoredScorer::Forest(IsolationForest {
                    trees,
                    subsample_size,
                    dim,
                })
            }
            TAG_SPHERE => {
                let dim = r.u32()? as usize;
                let radius = read_f64(&mut r)?;
                let center = (0..dim).map(|_| read_f64(&mut r)).collect::<Result<_>>()?;
                StoredScorer::Sphere(Hypersphere { center, radius })
            }
            t => return Err(Error::MalformedHeader(format!("unknown scorer tag {t}"))),
        };
        r.finish()?;
        Ok(scorer)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Settings for [`pseudo_anomaly_scores`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringParams {
    pub n_trees: usize,
    pub subsample: usize,
    pub meb_epsilon: f64,
    pub lof_k: usize,
    pub recon_components: usize,
    pub companion: CompanionScorer,
    pub seed: u64,
}

/// Fitted models and per-segment pseudo anomaly scores for one batch.
#[derive(Debug, Clone)]
pub struct PseudoAnomaly {
    pub forest: IsolationForest,
    pub sphere: Option<Hypersphere>,
    pub forest_scores: Vec<f64>,
    pub companion_scores: Vec<f64>,
    pub y_s_hat: Vec<f64>,
}

/// Fits the isolation forest and the companion scorer on the batch and
/// combines their scores into `y_s_hat`.
pub fn pseudo_anomaly_scores(features: &[FeatureVector], p: &ScoringParams) -> Result<PseudoAnomaly> {
    let forest = IsolationForest::fit(features, p.n_trees, p.subsample, p.seed)?;
    let forest_scores = features.iter().map(|f| forest.score(f)).collect::<Result<Vec<_>>>()?;
    let mut sphere = None;
    let companion_scores = match p.companion {
        CompanionScorer::Ocsvm => {
            let s = Hypersphere::fit(features, p.meb_epsilon)?;
            let scores = features.iter().map(|f| s.score(f)).collect::<Result<Vec<_>>>()?;
            sphere = Some(s);
            scores
        }
        CompanionScorer::Lof => {
            let m = LofModel::fit(features, p.lof_k)?;
            (0..features.len()).map(|i| m.score_training(i)).collect()
        }
        CompanionScorer::PcaRecon => {
            let k = p.recon_components.min(features[0].dim());
            let m = PcaModel::fit(features, k)?;
            features.iter().map(|f| pca_recon_score(&m, f)).collect::<Result<Vec<_>>>()?
        }
    };
    let y_s_hat = combine_scores(&forest_scores, &companion_scores)?;
    Ok(PseudoAnomaly {
        forest,
        sphere,
        forest_scores,
        companion_scores,
        y_s_hat,
    })
}

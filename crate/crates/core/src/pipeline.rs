//! Stage-by-stage orchestration, both in memory and against a work
//! directory on disk.
//!
//! Work directory files:
//! `segments.csv`, `appearance_raw.fv32`, `pca.pca1`, `appearance.fv32`,
//! `motion.fv32`, `dynamicity.csv` (features); `iforest.psm1`,
//! `hypersphere.psm1`, `pseudo_scores.csv` (pseudo); `ensemble/` (train);
//! `scores.csv` (score); `eval/` (eval).

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::dynamicity::{motion_features, normalize_dynamicity, segment_dynamicity, segment_flows, FlowField};
use crate::error::{Error, Result};
use crate::eval::{false_alarm_rate, interpolate_to_frames, roc_auc, RocCurve};
use crate::features::{extract_handcrafted, FeatureVector, PcaModel};
use crate::ingest::{load_features, load_flow, read_ground_truth, read_gv8, split_segments, store_features, DatasetManifest, SegmentId, SegmentView};
use crate::pseudo_scoring::{pseudo_anomaly_scores, PseudoAnomaly, PseudoScore, StoredScorer};
use crate::trainer::{rescore, run_training, RegressorEnsemble, SegmentScore, TrainingSet};

/// Everything the features stage produces for one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureArtifacts {
    pub views: Vec<SegmentView>,
    pub raw: Vec<FeatureVector>,
    pub pca: PcaModel,
    pub appearance: Vec<FeatureVector>,
    pub motion: Vec<FeatureVector>,
    pub dynamicity: Vec<f64>,
    pub y_d_hat: Vec<f64>,
}

impl FeatureArtifacts {
    pub fn ids(&self) -> Vec<SegmentId> {
        (0..self.views.len() as u32).map(SegmentId).collect()
    }
}

struct VideoFeatures {
    views: Vec<SegmentView>,
    raw: Vec<FeatureVector>,
    motion: Vec<FeatureVector>,
    dynamicity: Vec<f64>,
}

fn video_features(video_id: u32, entry: &crate::ingest::ManifestEntry, segments: usize, cfg: &PipelineConfig) -> Result<VideoFeatures> {
    let video = read_gv8(&entry.video)?;
    let views = split_segments(video_id, &video, segments)?;
    let base = video_id * segments as u32;
    let id = |i: usize| SegmentId(base + i as u32);

    let raw = match &entry.features {
        Some(path) => {
            let imported = load_features(path)?;
            if imported.len() != segments {
                return Err(Error::CoverageMismatch(format!(
                    "{}: {} feature vectors for {segments} segments",
                    path.display(),
                    imported.len()
                )));
            }
            imported
                .into_iter()
                .enumerate()
                .map(|(i, f)| FeatureVector::new(id(i), f.values))
                .collect()
        }
        None => views
            .iter()
            .map(|v| extract_handcrafted(id(v.index), video.segment_frames(v)))
            .collect::<Result<Vec<_>>>()?,
    };

    let flows: Vec<Vec<FlowField>> = match &entry.flow {
        Some(path) => {
            let pairs = load_flow(path)?;
            if pairs.len() + 1 != video.frame_count() {
                return Err(Error::CoverageMismatch(format!(
                    "{}: {} flow pairs for {} frames",
                    path.display(),
                    pairs.len(),
                    video.frame_count()
                )));
            }
            views.iter().map(|v| pairs[v.start..v.end - 1].to_vec()).collect()
        }
        None => views
            .par_iter()
            .map(|v| segment_flows(video.segment_frames(v), video.width, video.height, cfg.flow_block, cfg.flow_search))
            .collect::<Result<Vec<_>>>()?,
    };
    let motion = views
        .iter()
        .zip(&flows)
        .map(|(v, f)| motion_features(id(v.index), f))
        .collect::<Result<Vec<_>>>()?;
    let dynamicity = flows
        .iter()
        .map(|f| segment_dynamicity(f).map(|d| d.segment_value))
        .collect::<Result<Vec<_>>>()?;
    Ok(VideoFeatures {
        views,
        raw,
        motion,
        dynamicity,
    })
}

/// Extracts appearance and motion features for every segment of the
/// manifest. PCA is fitted on this dataset unless `pca` is supplied.
pub fn compute_features(manifest: &DatasetManifest, cfg: &PipelineConfig, pca: Option<&PcaModel>) -> Result<FeatureArtifacts> {
    if manifest.entries.is_empty() {
        return Err(Error::Empty("manifest has no entries"));
    }
    let segments = manifest.segment_count_per_video;
    let per_video = manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| video_features(i as u32, e, segments, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut views = Vec::new();
    let mut raw = Vec::new();
    let mut motion = Vec::new();
    let mut dynamicity = Vec::new();
    for v in per_video {
        views.extend(v.views);
        raw.extend(v.raw);
        motion.extend(v.motion);
        dynamicity.extend(v.dynamicity);
    }
    let pca = match pca {
        Some(p) => p.clone(),
        None => PcaModel::fit(&raw, cfg.pca_k)?,
    };
    let appearance = raw.iter().map(|f| pca.transform(f)).collect::<Result<Vec<_>>>()?;
    let y_d_hat = normalize_dynamicity(&dynamicity)?;
    Ok(FeatureArtifacts {
        views,
        raw,
        pca,
        appearance,
        motion,
        dynamicity,
        y_d_hat,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentRow {
    segment_id: u32,
    video_id: u32,
    index: usize,
    start: usize,
    end: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct DynamicityRow {
    segment_id: u32,
    #[serde(rename = "D_mean")]
    d_mean: f64,
    y_d_hat: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PseudoRow {
    segment_id: u32,
    y_s_hat: f64,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path, what: &'static str) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::Missing {
            what,
            path: path.to_path_buf(),
        });
    }
    csv::Reader::from_path(path)?
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

fn check_ids(ids: impl Iterator<Item = u32>, n: usize, file: &Path) -> Result<()> {
    let mut count = 0;
    for (i, id) in ids.enumerate() {
        if id as usize != i {
            return Err(Error::CoverageMismatch(format!("{}: row {i} has segment {id}", file.display())));
        }
        count += 1;
    }
    if count != n {
        return Err(Error::CoverageMismatch(format!("{}: {count} rows for {n} segments", file.display())));
    }
    Ok(())
}

pub fn write_features(work: &Path, art: &FeatureArtifacts) -> Result<()> {
    fs::create_dir_all(work).map_err(|e| Error::io(work, e))?;
    write_rows(
        &work.join("segments.csv"),
        art.views.iter().enumerate().map(|(i, v)| SegmentRow {
            segment_id: i as u32,
            video_id: v.video_id,
            index: v.index,
            start: v.start,
            end: v.end,
        }),
    )?;
    store_features(work.join("appearance_raw.fv32"), &art.raw)?;
    art.pca.save(work.join("pca.pca1"))?;
    store_features(work.join("appearance.fv32"), &art.appearance)?;
    store_features(work.join("motion.fv32"), &art.motion)?;
    write_rows(
        &work.join("dynamicity.csv"),
        art.dynamicity.iter().zip(&art.y_d_hat).enumerate().map(|(i, (&d, &y))| DynamicityRow {
            segment_id: i as u32,
            d_mean: d,
            y_d_hat: y,
        }),
    )
}

fn require(path: PathBuf, what: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::Missing { what, path })
    }
}

fn renumber(features: Vec<FeatureVector>) -> Vec<FeatureVector> {
    features
        .into_iter()
        .enumerate()
        .map(|(i, f)| FeatureVector::new(SegmentId(i as u32), f.values))
        .collect()
}

pub fn read_features(work: &Path) -> Result<FeatureArtifacts> {
    let seg_path = work.join("segments.csv");
    let rows: Vec<SegmentRow> = read_rows(&seg_path, "segments")?;
    check_ids(rows.iter().map(|r| r.segment_id), rows.len(), &seg_path)?;
    let views: Vec<SegmentView> = rows
        .iter()
        .map(|r| SegmentView {
            video_id: r.video_id,
            index: r.index,
            start: r.start,
            end: r.end,
        })
        .collect();
    let n = views.len();
    let raw = renumber(load_features(require(work.join("appearance_raw.fv32"), "raw appearance features")?)?);
    let pca = PcaModel::load(require(work.join("pca.pca1"), "pca model")?)?;
    let appearance = renumber(load_features(require(work.join("appearance.fv32"), "appearance features")?)?);
    let motion = renumber(load_features(require(work.join("motion.fv32"), "motion features")?)?);
    let dyn_path = work.join("dynamicity.csv");
    let dyn_rows: Vec<DynamicityRow> = read_rows(&dyn_path, "dynamicity")?;
    check_ids(dyn_rows.iter().map(|r| r.segment_id), n, &dyn_path)?;
    for (what, len) in [("appearance", appearance.len()), ("motion", motion.len()), ("raw", raw.len())] {
        if len != n {
            return Err(Error::CoverageMismatch(format!("{len} {what} vectors for {n} segments")));
        }
    }
    Ok(FeatureArtifacts {
        views,
        raw,
        pca,
        appearance,
        motion,
        dynamicity: dyn_rows.iter().map(|r| r.d_mean).collect(),
        y_d_hat: dyn_rows.iter().map(|r| r.y_d_hat).collect(),
    })
}

pub fn compute_pseudo(art: &FeatureArtifacts, cfg: &PipelineConfig) -> Result<PseudoAnomaly> {
    pseudo_anomaly_scores(&art.appearance, &cfg.scoring())
}

pub fn write_pseudo(work: &Path, pseudo: &PseudoAnomaly) -> Result<()> {
    StoredScorer::Forest(pseudo.forest.clone()).save(work.join("iforest.psm1"))?;
    let sphere = work.join("hypersphere.psm1");
    match &pseudo.sphere {
        Some(s) => StoredScorer::Sphere(s.clone()).save(&sphere)?,
        None if sphere.exists() => fs::remove_file(&sphere).map_err(|e| Error::io(&sphere, e))?,
        None => {}
    }
    write_rows(
        &work.join("pseudo_scores.csv"),
        pseudo.y_s_hat.iter().enumerate().map(|(i, &y)| PseudoRow {
            segment_id: i as u32,
            y_s_hat: y,
        }),
    )
}

pub fn read_pseudo(work: &Path, n: usize) -> Result<Vec<f64>> {
    let path = work.join("pseudo_scores.csv");
    let rows: Vec<PseudoRow> = read_rows(&path, "pseudo scores")?;
    check_ids(rows.iter().map(|r| r.segment_id), n, &path)?;
    Ok(rows.iter().map(|r| r.y_s_hat).collect())
}

pub fn training_set(art: &FeatureArtifacts, y_s_hat: &[f64]) -> Result<TrainingSet> {
    if y_s_hat.len() != art.y_d_hat.len() {
        return Err(Error::LengthMismatch {
            left: y_s_hat.len(),
            right: art.y_d_hat.len(),
        });
    }
    let pseudo = y_s_hat
        .iter()
        .zip(&art.y_d_hat)
        .enumerate()
        .map(|(i, (&s, &d))| PseudoScore {
            segment_id: SegmentId(i as u32),
            y_s_hat: s,
            y_d_hat: d,
        })
        .collect();
    Ok(TrainingSet {
        appearance: art.appearance.clone(),
        motion: art.motion.clone(),
        pseudo,
    })
}

/// Frame-level ground truth and segment layout of an evaluation set.
#[derive(Debug, Clone)]
pub struct EvalData {
    pub views: Vec<SegmentView>,
    /// Ground truth per video, in manifest order.
    pub labels: Vec<Vec<u8>>,
}

impl EvalData {
    pub fn load(manifest: &DatasetManifest, views: Vec<SegmentView>) -> Result<Self> {
        let labels = manifest
            .entries
            .iter()
            .map(|e| match &e.ground_truth {
                Some(p) => read_ground_truth(p),
                None => Err(Error::Missing {
                    what: "ground truth",
                    path: e.video.clone(),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        let data = EvalData { views, labels };
        for (v, l) in data.labels.iter().enumerate() {
            let frames = data.video_views(v).map(|(_, s)| s.end).max().unwrap_or(0);
            if frames != l.len() {
                return Err(Error::LengthMismatch { left: frames, right: l.len() });
            }
        }
        Ok(data)
    }

    fn video_views(&self, video: usize) -> impl Iterator<Item = (usize, &SegmentView)> + '_ {
        self.views
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.video_id as usize == video)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub far: f64,
    pub tau: f64,
    pub frames: usize,
    pub per_video_auc: Vec<Option<f64>>,
    #[serde(skip)]
    pub roc: Option<RocCurve>,
    #[serde(skip)]
    pub frame_y_s: Vec<f64>,
    #[serde(skip)]
    pub frame_y_d: Vec<f64>,
    #[serde(skip)]
    pub frame_labels: Vec<u8>,
}

/// Upsamples segment scores to frames per video and computes ROC/AUC and
/// FAR on the anomaly stream.
pub fn evaluate(data: &EvalData, y_s: &[f64], y_d: &[f64], tau: f64) -> Result<EvalReport> {
    if y_s.len() != data.views.len() || y_d.len() != data.views.len() {
        return Err(Error::LengthMismatch {
            left: y_s.len(),
            right: data.views.len(),
        });
    }
    let mut frame_y_s = Vec::new();
    let mut frame_y_d = Vec::new();
    let mut frame_labels = Vec::new();
    let mut per_video_auc = Vec::new();
    for (v, labels) in data.labels.iter().enumerate() {
        let (idx, views): (Vec<usize>, Vec<SegmentView>) = data.video_views(v).map(|(i, s)| (i, *s)).unzip();
        let s: Vec<f64> = idx.iter().map(|&i| y_s[i]).collect();
        let d: Vec<f64> = idx.iter().map(|&i| y_d[i]).collect();
        let fs = interpolate_to_frames(&s, &views)?;
        let fd = interpolate_to_frames(&d, &views)?;
        per_video_auc.push(match roc_auc(&fs, labels) {
            Ok(r) => Some(r.auc),
            Err(Error::SingleClass) => None,
            Err(e) => return Err(e),
        });
        frame_y_s.extend(fs);
        frame_y_d.extend(fd);
        frame_labels.extend_from_slice(labels);
    }
    let roc = roc_auc(&frame_y_s, &frame_labels)?;
    let far = false_alarm_rate(&frame_y_s, &frame_labels, tau)?;
    Ok(EvalReport {
        auc: roc.auc,
        far,
        tau,
        frames: frame_labels.len(),
        per_video_auc,
        roc: Some(roc),
        frame_y_s,
        frame_y_d,
        frame_labels,
    })
}

/// Held-out set scored after every pass with that pass's anomaly regressor.
pub struct HeldOut<'a> {
    pub appearance: &'a [FeatureVector],
    pub motion: &'a [FeatureVector],
    pub eval: &'a EvalData,
}

pub fn train(art: &FeatureArtifacts, y_s_hat: &[f64], cfg: &PipelineConfig, held_out: Option<&HeldOut<'_>>) -> Result<RegressorEnsemble> {
    let data = training_set(art, y_s_hat)?;
    let tc = cfg.trainer();
    run_training(&data, &tc, |ens, pass| {
        let Some(h) = held_out else {
            return Ok(None);
        };
        let inputs = ens.inputs(h.appearance, h.motion)?;
        let scores = rescore(&pass.omega, &pass.psi, &inputs)?;
        let y_s: Vec<f64> = scores.iter().map(|s| s.y_s_hat).collect();
        let y_d: Vec<f64> = scores.iter().map(|s| s.y_d_hat).collect();
        Ok(Some(evaluate(h.eval, &y_s, &y_d, tc.tau)?.auc))
    })
}

/// Scores every segment of `art` with the full ensemble.
pub fn score(ens: &RegressorEnsemble, art: &FeatureArtifacts) -> Result<Vec<SegmentScore>> {
    ens.score(&art.appearance, &art.motion)
}

pub fn write_scores(path: &Path, scores: &[SegmentScore]) -> Result<()> {
    write_rows(path, scores.iter())
}

pub fn read_scores(path: &Path) -> Result<Vec<SegmentScore>> {
    if !path.exists() {
        return Err(Error::Missing {
            what: "scores",
            path: path.to_path_buf(),
        });
    }
    read_rows(path, "scores")
}

#[derive(Serialize)]
struct RocRow {
    fpr: f64,
    tpr: f64,
}

#[derive(Serialize)]
struct FrameRow {
    frame_index: usize,
    y_s: f64,
    y_d: f64,
    label: u8,
}

/// Writes `roc.csv`, `summary.json` and `frames.csv` into `out`.
pub fn write_eval(out: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    if let Some(roc) = &report.roc {
        write_rows(&out.join("roc.csv"), roc.points.iter().map(|&(fpr, tpr)| RocRow { fpr, tpr }))?;
    }
    write_rows(
        &out.join("frames.csv"),
        (0..report.frames).map(|i| FrameRow {
            frame_index: i,
            y_s: report.frame_y_s[i],
            y_d: report.frame_y_d[i],
            label: report.frame_labels[i],
        }),
    )?;
    let path = out.join("summary.json");
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Runs every stage in memory: features, pseudo scores, training, scoring
/// and evaluation on the same dataset.
pub fn run_in_memory(manifest: &DatasetManifest, cfg: &PipelineConfig) -> Result<(RegressorEnsemble, EvalReport)> {
    let art = compute_features(manifest, cfg, None)?;
    let pseudo = compute_pseudo(&art, cfg)?;
    let ens = train(&art, &pseudo.y_s_hat, cfg, None)?;
    let scores = score(&ens, &art)?;
    let eval = EvalData::load(manifest, art.views.clone())?;
    let y_s: Vec<f64> = scores.iter().map(|s| s.y_s).collect();
    let y_d: Vec<f64> = scores.iter().map(|s| s.y_d).collect();
    let report = evaluate(&eval, &y_s, &y_d, cfg.tau)?;
    Ok((ens, report))
}

//! Pipeline and synthetic-dataset configuration (JSON, unknown keys rejected).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pseudo_scoring::{CompanionScorer, ScoringParams};
use crate::trainer::TrainerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub segments: usize,
    pub pca_k: usize,
    pub iforest_trees: usize,
    pub iforest_subsample: usize,
    pub meb_epsilon: f64,
    pub scorer: CompanionScorer,
    pub lof_k: usize,
    pub recon_components: usize,
    /// When false, every dynamicity score is replaced by 1 for labeling.
    pub use_dynamicity: bool,
    pub flow_block: usize,
    pub flow_search: usize,
    pub tau: f64,
    pub hidden: [usize; 2],
    pub learning_rate: f64,
    pub passes: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub work_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            segments: 32,
            pca_k: 16,
            iforest_trees: 100,
            iforest_subsample: 256,
            meb_epsilon: 1e-3,
            scorer: CompanionScorer::Ocsvm,
            lof_k: 20,
            recon_components: 4,
            use_dynamicity: true,
            flow_block: 8,
            flow_search: 4,
            tau: 0.5,
            hidden: [32, 8],
            learning_rate: crate::regressor::DEFAULT_LEARNING_RATE,
            passes: 10,
            iterations: 30,
            batch_size: 32,
            seed: 0,
            manifest: None,
            work_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("segments", self.segments),
            ("pca_k", self.pca_k),
            ("iforest_trees", self.iforest_trees),
            ("lof_k", self.lof_k),
            ("recon_components", self.recon_components),
            ("flow_block", self.flow_block),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if self.iforest_subsample < 2 {
            return Err(Error::Config("iforest_subsample must be >= 2".into()));
        }
        if !(self.meb_epsilon > 0.0 && self.meb_epsilon < 1.0) {
            return Err(Error::Config(format!("meb_epsilon {} outside (0, 1)", self.meb_epsilon)));
        }
        self.trainer().validate()
    }

    pub fn scoring(&self) -> ScoringParams {
        ScoringParams {
            n_trees: self.iforest_trees,
            subsample: self.iforest_subsample,
            meb_epsilon: self.meb_epsilon,
            lof_k: self.lof_k,
            recon_components: self.recon_components,
            companion: self.scorer,
            seed: self.seed,
        }
    }

    pub fn trainer(&self) -> TrainerConfig {
        TrainerConfig {
            passes: self.passes,
            iterations_per_pass: self.iterations,
            batch_size: self.batch_size,
            tau: self.tau,
            learning_rate: self.learning_rate,
            hidden: self.hidden,
            use_dynamicity: self.use_dynamicity,
            seed: self.seed,
        }
    }
}

/// Parameters of the synthetic dataset generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub videos: usize,
    pub frames_per_video: usize,
    pub width: usize,
    pub height: usize,
    pub segments_per_video: usize,
    /// Fraction of all segments that are anomalous.
    pub anomaly_rate: f64,
    /// Intensity offset multiplier of anomalous patches.
    pub separation: f64,
    /// Per-frame displacement (pixels) of anomalous patches.
    pub motion_burst: f64,
    /// Fraction of normal segments with a static global illumination shift.
    pub distractor_rate: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            videos: 8,
            frames_per_video: 128,
            width: 32,
            height: 32,
            segments_per_video: 32,
            anomaly_rate: 0.25,
            separation: 3.0,
            motion_burst: 4.0,
            distractor_rate: 0.0,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.videos == 0 || self.segments_per_video == 0 {
            return Err(Error::Config("videos and segments_per_video must be >= 1".into()));
        }
        if self.frames_per_video < 2 * self.segments_per_video {
            return Err(Error::Config(format!(
                "{} frames cannot hold {} segments",
                self.frames_per_video, self.segments_per_video
            )));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::Config("frames must be at least 16x16".into()));
        }
        if !(self.anomaly_rate > 0.0 && self.anomaly_rate < 1.0) {
            return Err(Error::Config(format!("anomaly_rate {} outside (0, 1)", self.anomaly_rate)));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::Config(format!("separation {} must be >= 0", self.separation)));
        }
        if !(self.motion_burst >= 0.0 && self.motion_burst.is_finite()) {
            return Err(Error::Config(format!("motion_burst {} must be >= 0", self.motion_burst)));
        }
        if !(0.0..1.0).contains(&self.distractor_rate) {
            return Err(Error::Config(format!("distractor_rate {} outside [0, 1)", self.distractor_rate)));
        }
        Ok(())
    }
}

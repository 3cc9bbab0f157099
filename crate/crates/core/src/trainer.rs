//! Iterative self-training: fit both regressors on the current bags, rescore
//! every segment with the fresh models, rebuild the bags, repeat. Each
//! pass's models are kept and averaged at inference.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bagging::{assign_label, check_tau, form_bags, remap_bags, Bags};
use crate::error::{Error, Result};
use crate::features::{common_dim, FeatureVector};
use crate::pseudo_scoring::PseudoScore;
use crate::regressor::{train_iterations, AdaGradState, MlpRegressor, Sampling};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub passes: usize,
    pub iterations_per_pass: usize,
    pub batch_size: usize,
    pub tau: f64,
    pub learning_rate: f64,
    pub hidden: [usize; 2],
    /// When false, dynamicity scores are taken as 1 wherever labels are
    /// assigned, leaving the anomaly score alone to decide.
    #[serde(default = "default_true")]
    pub use_dynamicity: bool,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            passes: 10,
            iterations_per_pass: 30,
            batch_size: 32,
            tau: 0.5,
            learning_rate: crate::regressor::DEFAULT_LEARNING_RATE,
            hidden: [32, 8],
            use_dynamicity: true,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    /// Applies the dynamicity switch to a score batch.
    pub fn gate(&self, mut scores: Vec<PseudoScore>) -> Vec<PseudoScore> {
        if !self.use_dynamicity {
            scores.iter_mut().for_each(|s| s.y_d_hat = 1.0);
        }
        scores
    }

    pub fn validate(&self) -> Result<()> {
        if self.passes == 0 || self.iterations_per_pass == 0 || self.batch_size == 0 {
            return Err(Error::Config("passes, iterations and batch size must be >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        check_tau(self.tau).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Per-dimension z-scoring fitted on the training batch; zero-variance
/// dimensions are only centered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &[FeatureVector]) -> Result<Self> {
        let d = common_dim(features)?;
        let n = features.len() as f64;
        let mut mean = vec![0.0; d];
        for f in features {
            for (m, x) in mean.iter_mut().zip(&f.values) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for f in features {
            for ((v, x), m) in var.iter_mut().zip(&f.values).zip(&mean) {
                *v += (x - m).powi(2);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn apply(&self, f: &FeatureVector) -> Result<Vec<f64>> {
        if f.dim() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                got: f.dim(),
            });
        }
        Ok(f.values
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect())
    }

    fn apply_all(&self, features: &[FeatureVector]) -> Result<Vec<Vec<f64>>> {
        features.iter().map(|f| self.apply(f)).collect()
    }
}

/// One segment's appearance and motion inputs, standardized and aligned.
#[derive(Debug, Clone)]
pub struct SegmentInputs {
    pub ids: Vec<crate::ingest::SegmentId>,
    pub appearance: Vec<Vec<f64>>,
    pub motion: Vec<Vec<f64>>,
}

impl SegmentInputs {
    pub fn new(
        appearance: &[FeatureVector],
        motion: &[FeatureVector],
        appearance_norm: &Standardizer,
        motion_norm: &Standardizer,
    ) -> Result<Self> {
        if appearance.len() != motion.len() {
            return Err(Error::LengthMismatch {
                left: appearance.len(),
                right: motion.len(),
            });
        }
        if let Some((a, m)) = appearance.iter().zip(motion).find(|(a, m)| a.segment_id != m.segment_id) {
            return Err(Error::CoverageMismatch(format!(
                "appearance segment {} paired with motion segment {}",
                a.segment_id, m.segment_id
            )));
        }
        Ok(SegmentInputs {
            ids: appearance.iter().map(|f| f.segment_id).collect(),
            appearance: appearance_norm.apply_all(appearance)?,
            motion: motion_norm.apply_all(motion)?,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Regressors and their optimizer state, carried from pass to pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub omega: MlpRegressor,
    pub psi: MlpRegressor,
    pub omega_opt: AdaGradState,
    pub psi_opt: AdaGradState,
}

impl TrainingState {
    pub fn new(appearance_dim: usize, motion_dim: usize, config: &TrainerConfig) -> Result<Self> {
        let [h1, h2] = config.hidden;
        let omega = MlpRegressor::new(&[appearance_dim, h1, h2, 1], SeededRng::derive(config.seed, 1_000_001))?;
        let psi = MlpRegressor::new(&[motion_dim, h1, h2, 1], SeededRng::derive(config.seed, 1_000_002))?;
        Ok(TrainingState {
            omega_opt: AdaGradState::new(&omega, config.learning_rate),
            psi_opt: AdaGradState::new(&psi, config.learning_rate),
            omega,
            psi,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassRecord {
    pub pass_index: usize,
    pub omega: MlpRegressor,
    pub psi: MlpRegressor,
    /// Bags the regressors were trained on.
    pub bags_before: Bags,
    /// Bags rebuilt from this pass's rescoring.
    pub bags_after: Bags,
    pub omega_losses: Vec<f64>,
    pub psi_losses: Vec<f64>,
    /// Optional held-out metric; never used for training.
    pub metric: Option<f64>,
}

/// Trains both regressors for one pass on the bag labels (A -> 1, N -> 0)
/// with balanced batches. `bags_after` is left equal to `bags` until
/// [`run_training`] rescoring fills it.
pub fn run_pass(
    state: &mut TrainingState,
    inputs: &SegmentInputs,
    bags: &Bags,
    config: &TrainerConfig,
    pass_index: usize,
) -> Result<PassRecord> {
    if bags.is_empty() {
        return Err(Error::EmptyBags);
    }
    if !bags.partitions(&inputs.ids) {
        return Err(Error::CoverageMismatch("bags do not cover the feature set".into()));
    }
    let targets: Vec<f64> = inputs
        .ids
        .iter()
        .map(|id| f64::from(bags.label_of(*id).unwrap_or(0)))
        .collect();
    let app: Vec<&[f64]> = inputs.appearance.iter().map(Vec::as_slice).collect();
    let mot: Vec<&[f64]> = inputs.motion.iter().map(Vec::as_slice).collect();
    let omega_seed = SeededRng::derive(config.seed, 2 * pass_index as u64);
    let psi_seed = SeededRng::derive(config.seed, 2 * pass_index as u64 + 1);
    let iters = config.iterations_per_pass;
    let batch = config.batch_size;

    let TrainingState {
        omega,
        psi,
        omega_opt,
        psi_opt,
    } = state;
    let (omega_losses, psi_losses) = rayon::join(
        || train_iterations(omega, omega_opt, &app, &targets, iters, batch, Sampling::Balanced, omega_seed),
        || train_iterations(psi, psi_opt, &mot, &targets, iters, batch, Sampling::Balanced, psi_seed),
    );
    Ok(PassRecord {
        pass_index,
        omega: state.omega.clone(),
        psi: state.psi.clone(),
        bags_before: bags.clone(),
        bags_after: bags.clone(),
        omega_losses: omega_losses?,
        psi_losses: psi_losses?,
        metric: None,
    })
}

/// Fresh scores from one pass's models; prior scores play no part.
pub fn rescore(omega: &MlpRegressor, psi: &MlpRegressor, inputs: &SegmentInputs) -> Result<Vec<PseudoScore>> {
    inputs
        .ids
        .iter()
        .zip(inputs.appearance.iter().zip(&inputs.motion))
        .map(|(&segment_id, (a, m))| {
            Ok(PseudoScore {
                segment_id,
                y_s_hat: omega.forward_values(a)?,
                y_d_hat: psi.forward_values(m)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorEnsemble {
    pub config: TrainerConfig,
    pub appearance_norm: Standardizer,
    pub motion_norm: Standardizer,
    pub initial_bags: Bags,
    pub passes: Vec<PassRecord>,
}

/// Appearance/motion features and initial pseudo scores, aligned by index.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub appearance: Vec<FeatureVector>,
    pub motion: Vec<FeatureVector>,
    pub pseudo: Vec<PseudoScore>,
}

/// Full self-training loop. `observe` is called after each pass and may
/// return a held-out metric to record; it cannot influence training.
pub fn run_training(
    data: &TrainingSet,
    config: &TrainerConfig,
    mut observe: impl FnMut(&RegressorEnsemble, &PassRecord) -> Result<Option<f64>>,
) -> Result<RegressorEnsemble> {
    config.validate()?;
    if data.appearance.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if data.pseudo.len() != data.appearance.len() {
        return Err(Error::LengthMismatch {
            left: data.pseudo.len(),
            right: data.appearance.len(),
        });
    }
    if data.pseudo.iter().zip(&data.appearance).any(|(p, a)| p.segment_id != a.segment_id) {
        return Err(Error::CoverageMismatch("pseudo scores out of order with features".into()));
    }
    let appearance_norm = Standardizer::fit(&data.appearance)?;
    let motion_norm = Standardizer::fit(&data.motion)?;
    let inputs = SegmentInputs::new(&data.appearance, &data.motion, &appearance_norm, &motion_norm)?;
    let mut state = TrainingState::new(
        inputs.appearance[0].len(),
        inputs.motion[0].len(),
        config,
    )?;

    let initial_bags = form_bags(&config.gate(data.pseudo.clone()), config.tau)?;
    let mut ensemble = RegressorEnsemble {
        config: *config,
        appearance_norm,
        motion_norm,
        initial_bags: initial_bags.clone(),
        passes: Vec::with_capacity(config.passes),
    };
    let mut bags = initial_bags;
    for i in 0..config.passes {
        let mut record = run_pass(&mut state, &inputs, &bags, config, i)?;
        let scores = config.gate(rescore(&record.omega, &record.psi, &inputs)?);
        bags = remap_bags(&bags, &scores, config.tau)?;
        record.bags_after = bags.clone();
        ensemble.passes.push(record);
        let metric = observe(&ensemble, ensemble.passes.last().unwrap())?;
        ensemble.passes.last_mut().unwrap().metric = metric;
    }
    Ok(ensemble)
}

/// Per-segment ensemble output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentScore {
    pub segment_id: crate::ingest::SegmentId,
    pub y_s: f64,
    pub y_d: f64,
    pub label: u8,
}

impl RegressorEnsemble {
    pub fn k(&self) -> usize {
        self.passes.len()
    }

    pub fn inputs(&self, appearance: &[FeatureVector], motion: &[FeatureVector]) -> Result<SegmentInputs> {
        SegmentInputs::new(appearance, motion, &self.appearance_norm, &self.motion_norm)
    }

    /// Mean over the first `upto` passes of each regressor's output.
    pub fn score_inputs(&self, inputs: &SegmentInputs, upto: usize) -> Result<Vec<SegmentScore>> {
        if upto == 0 || upto > self.k() {
            return Err(Error::InvalidArgument(format!("cannot average {upto} of {} passes", self.k())));
        }
        let passes = &self.passes[..upto];
        (0..inputs.len())
            .into_par_iter()
            .map(|i| {
                let mut y_s = 0.0;
                let mut y_d = 0.0;
                for p in passes {
                    y_s += p.omega.forward_values(&inputs.appearance[i])?;
                    y_d += p.psi.forward_values(&inputs.motion[i])?;
                }
                y_s /= upto as f64;
                y_d /= upto as f64;
                Ok(SegmentScore {
                    segment_id: inputs.ids[i],
                    y_s,
                    y_d,
                    label: final_label(y_s, if self.config.use_dynamicity { y_d } else { 1.0 }, self.config.tau)?,
                })
            })
            .collect()
    }

    pub fn score(&self, appearance: &[FeatureVector], motion: &[FeatureVector]) -> Result<Vec<SegmentScore>> {
        if self.passes.is_empty() {
            return Err(Error::Empty("ensemble has no passes"));
        }
        self.score_inputs(&self.inputs(appearance, motion)?, self.k())
    }

    /// Writes `pass_<i>/{omega,psi}.mlp1`, `pass_<i>/bags.csv` and
    /// `ensemble.json` (config, input normalization, per-pass metrics).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for p in &self.passes {
            let pd = dir.join(format!("pass_{}", p.pass_index + 1));
            fs::create_dir_all(&pd).map_err(|e| Error::io(&pd, e))?;
            p.omega.save(pd.join("omega.mlp1"))?;
            p.psi.save(pd.join("psi.mlp1"))?;
            p.bags_after.write_csv(pd.join("bags.csv"))?;
        }
        self.initial_bags.write_csv(dir.join("initial_bags.csv"))?;
        let manifest = EnsembleManifest {
            config: self.config,
            seed: self.config.seed,
            passes: self.k(),
            appearance_norm: self.appearance_norm.clone(),
            motion_norm: self.motion_norm.clone(),
            pass_metrics: self.passes.iter().map(|p| p.metric).collect(),
            final_losses: self
                .passes
                .iter()
                .map(|p| [p.omega_losses.last().copied(), p.psi_losses.last().copied()])
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = dir.join("ensemble.json");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Loads models and bags; per-pass loss histories are not persisted.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("ensemble.json");
        if !path.exists() {
            return Err(Error::Missing { what: "ensemble manifest", path });
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: EnsembleManifest = serde_json::from_str(&text)?;
        m.config.validate()?;
        let initial_bags = Bags::read_csv(dir.join("initial_bags.csv"))?;
        let mut passes = Vec::with_capacity(m.passes);
        let mut prev = initial_bags.clone();
        for i in 0..m.passes {
            let pd = dir.join(format!("pass_{}", i + 1));
            let bags_after = Bags::read_csv(pd.join("bags.csv"))?;
            passes.push(PassRecord {
                pass_index: i,
                omega: MlpRegressor::load(pd.join("omega.mlp1"))?,
                psi: MlpRegressor::load(pd.join("psi.mlp1"))?,
                bags_before: prev,
                bags_after: bags_after.clone(),
                omega_losses: Vec::new(),
                psi_losses: Vec::new(),
                metric: m.pass_metrics.get(i).copied().flatten(),
            });
            prev = bags_after;
        }
        if passes.is_empty() {
            return Err(Error::Empty("ensemble has no passes"));
        }
        Ok(RegressorEnsemble {
            config: m.config,
            appearance_norm: m.appearance_norm,
            motion_norm: m.motion_norm,
            initial_bags,
            passes,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleManifest {
    config: TrainerConfig,
    seed: u64,
    passes: usize,
    appearance_norm: Standardizer,
    motion_norm: Standardizer,
    pass_metrics: Vec<Option<f64>>,
    final_losses: Vec<[Option<f64>; 2]>,
}

/// Final segment label from ensemble scores.
pub fn final_label(y_s: f64, y_d: f64, tau: f64) -> Result<u8> {
    assign_label(y_s, y_d, tau)
}

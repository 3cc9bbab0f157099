//! Self-trained video anomaly detection: pseudo-anomaly scoring, optical-flow
//! dynamicity, bag formation and a two-regressor self-training loop.

pub mod bagging;
pub mod config;
pub mod dynamicity;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod pipeline;
pub mod pseudo_scoring;
pub mod regressor;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use bagging::{assign_label, form_bags, remap_bags, Bags};
pub use config::{PipelineConfig, SynthSpec};
pub use dynamicity::{estimate_flow, segment_dynamicity, DynamicityScore, FlowField};
pub use error::{Error, Result};
pub use eval::{false_alarm_rate, interpolate_to_frames, roc_auc, RocCurve};
pub use features::{extract_handcrafted, FeatureVector, PcaModel};
pub use ingest::{DatasetManifest, GrayVideo, SegmentId, SegmentView};
pub use pseudo_scoring::{pseudo_anomaly_scores, CompanionScorer, Hypersphere, IsolationForest, PseudoScore};
pub use regressor::MlpRegressor;
pub use rng::SeededRng;
pub use trainer::{run_training, RegressorEnsemble, SegmentScore, TrainerConfig};

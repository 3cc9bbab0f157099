//! Python bindings. Feature vectors travel as `list[list[float]]`, frames as
//! `bytes`, and every core error surfaces as `ValueError` or `OSError`.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use dyad_core::config::{PipelineConfig, SynthSpec};
use dyad_core::features::FeatureVector;
use dyad_core::ingest::{DatasetManifest, SegmentId};
use dyad_core::pseudo_scoring::PseudoScore;
use dyad_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Missing { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn vectors(rows: Vec<Vec<f64>>) -> Vec<FeatureVector> {
    rows.into_iter()
        .enumerate()
        .map(|(i, v)| FeatureVector::new(SegmentId(i as u32), v))
        .collect()
}

fn vector(values: Vec<f64>) -> FeatureVector {
    FeatureVector::new(SegmentId(0), values)
}

#[pyclass(name = "IsolationForest", module = "dyad", frozen)]
struct PyIsolationForest(dyad_core::IsolationForest);

#[pymethods]
impl PyIsolationForest {
    #[new]
    #[pyo3(signature = (features, n_trees = 100, subsample = 256, seed = 0))]
    fn new(features: Vec<Vec<f64>>, n_trees: usize, subsample: usize, seed: u64) -> PyResult<Self> {
        dyad_core::IsolationForest::fit(&vectors(features), n_trees, subsample, seed)
            .map(Self)
            .map_err(py_err)
    }

    fn score(&self, x: Vec<f64>) -> PyResult<f64> {
        self.0.score(&vector(x)).map_err(py_err)
    }

    fn mean_path_length(&self, x: Vec<f64>) -> PyResult<f64> {
        self.0.mean_path_length(&x).map_err(py_err)
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.0.trees.len()
    }

    #[getter]
    fn subsample_size(&self) -> usize {
        self.0.subsample_size
    }
}

#[pyclass(name = "Hypersphere", module = "dyad", frozen)]
struct PyHypersphere(dyad_core::Hypersphere);

#[pymethods]
impl PyHypersphere {
    /// Approximate minimum enclosing ball within a factor `1 + epsilon`.
    #[new]
    #[pyo3(signature = (features, epsilon = 1e-3))]
    fn new(features: Vec<Vec<f64>>, epsilon: f64) -> PyResult<Self> {
        dyad_core::Hypersphere::fit(&vectors(features), epsilon)
            .map(Self)
            .map_err(py_err)
    }

    #[getter]
    fn center(&self) -> Vec<f64> {
        self.0.center.clone()
    }

    #[getter]
    fn radius(&self) -> f64 {
        self.0.radius
    }

    fn score(&self, x: Vec<f64>) -> PyResult<f64> {
        self.0.score(&vector(x)).map_err(py_err)
    }
}

#[pyclass(name = "PcaModel", module = "dyad", frozen)]
struct PyPcaModel(dyad_core::PcaModel);

#[pymethods]
impl PyPcaModel {
    #[new]
    fn new(features: Vec<Vec<f64>>, k: usize) -> PyResult<Self> {
        dyad_core::PcaModel::fit(&vectors(features), k)
            .map(Self)
            .map_err(py_err)
    }

    fn transform(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.transform(&vector(x)).map(|f| f.values).map_err(py_err)
    }

    fn reconstruction_error(&self, x: Vec<f64>) -> PyResult<f64> {
        self.0.reconstruction_error(&vector(x)).map_err(py_err)
    }

    #[getter]
    fn components(&self) -> Vec<Vec<f64>> {
        self.0.components.clone()
    }
}

#[pyclass(name = "MlpRegressor", module = "dyad")]
struct PyMlpRegressor(dyad_core::MlpRegressor);

#[pymethods]
impl PyMlpRegressor {
    /// Layer widths from input to the single logistic output.
    #[new]
    #[pyo3(signature = (layer_sizes, seed = 0))]
    fn new(layer_sizes: Vec<usize>, seed: u64) -> PyResult<Self> {
        dyad_core::MlpRegressor::new(&layer_sizes, seed)
            .map(Self)
            .map_err(py_err)
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<f64> {
        self.0.forward_values(&x).map_err(py_err)
    }

    /// Batch MSE loss and the flattened gradient in parameter order.
    fn backward(&self, xs: Vec<Vec<f64>>, targets: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let (loss, grad) = self.0.backward(&refs, &targets).map_err(py_err)?;
        Ok((loss, grad.params().copied().collect()))
    }

    /// Runs `iterations` AdaGrad steps on balanced mini-batches and returns
    /// the loss of each step.
    #[pyo3(signature = (xs, targets, iterations, batch_size = 32, learning_rate = 0.005, seed = 0))]
    fn fit(
        &mut self,
        xs: Vec<Vec<f64>>,
        targets: Vec<f64>,
        iterations: usize,
        batch_size: usize,
        learning_rate: f64,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        use dyad_core::regressor::{train_iterations, AdaGradState, Sampling};
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let mut state = AdaGradState::new(&self.0, learning_rate);
        train_iterations(&mut self.0, &mut state, &refs, &targets, iterations, batch_size, Sampling::Balanced, seed)
            .map_err(py_err)
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.0.params().copied().collect()
    }

    #[getter]
    fn layer_sizes(&self) -> Vec<usize> {
        self.0.layer_sizes()
    }
}

#[pyfunction]
fn average_path_length(n: usize) -> f64 {
    dyad_core::pseudo_scoring::average_path_length(n)
}

/// LOF of every row against the others.
#[pyfunction]
#[pyo3(signature = (features, k = 20))]
fn lof_scores(features: Vec<Vec<f64>>, k: usize) -> PyResult<Vec<f64>> {
    let model = dyad_core::pseudo_scoring::LofModel::fit(&vectors(features.clone()), k).map_err(py_err)?;
    Ok((0..features.len()).map(|i| model.score_training(i)).collect())
}

#[pyfunction]
fn combine_scores(a: Vec<f64>, b: Vec<f64>) -> PyResult<Vec<f64>> {
    dyad_core::pseudo_scoring::combine_scores(&a, &b).map_err(py_err)
}

/// Pseudo anomaly score of every row; `scorer` is "ocsvm", "lof" or "pca-recon".
#[pyfunction]
#[pyo3(signature = (features, scorer = "ocsvm", seed = 0))]
fn pseudo_anomaly_scores(features: Vec<Vec<f64>>, scorer: &str, seed: u64) -> PyResult<Vec<f64>> {
    let cfg = PipelineConfig {
        scorer: scorer.parse().map_err(py_err)?,
        seed,
        ..PipelineConfig::default()
    };
    dyad_core::pseudo_anomaly_scores(&vectors(features), &cfg.scoring())
        .map(|p| p.y_s_hat)
        .map_err(py_err)
}

/// 64-dim intensity and frame-difference histogram of a grayscale clip.
#[pyfunction]
fn extract_handcrafted(frames: Vec<Vec<u8>>) -> PyResult<Vec<f64>> {
    dyad_core::extract_handcrafted(SegmentId(0), &frames)
        .map(|f| f.values)
        .map_err(py_err)
}

/// Block-matching flow between two row-major frames, as `(u, v)` lists.
#[pyfunction]
#[pyo3(signature = (frame_a, frame_b, width, height, block = 8, search = 4))]
fn estimate_flow(
    frame_a: Vec<u8>,
    frame_b: Vec<u8>,
    width: usize,
    height: usize,
    block: usize,
    search: usize,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let f = dyad_core::estimate_flow(&frame_a, &frame_b, width, height, block, search).map_err(py_err)?;
    Ok((f.u, f.v))
}

/// Mean L1 flow displacement over the consecutive frame pairs of a clip.
#[pyfunction]
#[pyo3(signature = (frames, width, height, block = 8, search = 4))]
fn segment_dynamicity(frames: Vec<Vec<u8>>, width: usize, height: usize, block: usize, search: usize) -> PyResult<f64> {
    let flows = dyad_core::dynamicity::segment_flows(&frames, width, height, block, search).map_err(py_err)?;
    dyad_core::segment_dynamicity(&flows)
        .map(|d| d.segment_value)
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (y_s, y_d, tau = 0.5))]
fn assign_label(y_s: f64, y_d: f64, tau: f64) -> PyResult<u8> {
    dyad_core::assign_label(y_s, y_d, tau).map_err(py_err)
}

/// Splits segment indices into anomalous and normal bags.
#[pyfunction]
#[pyo3(signature = (y_s, y_d, tau = 0.5))]
fn form_bags(y_s: Vec<f64>, y_d: Vec<f64>, tau: f64) -> PyResult<(Vec<u32>, Vec<u32>)> {
    if y_s.len() != y_d.len() {
        return Err(py_err(Error::LengthMismatch {
            left: y_s.len(),
            right: y_d.len(),
        }));
    }
    let scores: Vec<PseudoScore> = y_s
        .iter()
        .zip(&y_d)
        .enumerate()
        .map(|(i, (&s, &d))| PseudoScore {
            segment_id: SegmentId(i as u32),
            y_s_hat: s,
            y_d_hat: d,
        })
        .collect();
    let bags = dyad_core::form_bags(&scores, tau).map_err(py_err)?;
    Ok((
        bags.positive.iter().map(|s| s.0).collect(),
        bags.negative.iter().map(|s| s.0).collect(),
    ))
}

/// Area under the ROC curve and its `(fpr, tpr)` points.
#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<(f64, Vec<(f64, f64)>)> {
    let roc = dyad_core::roc_auc(&scores, &labels).map_err(py_err)?;
    Ok((roc.auc, roc.points))
}

#[pyfunction]
#[pyo3(signature = (scores, labels, tau = 0.5))]
fn false_alarm_rate(scores: Vec<f64>, labels: Vec<u8>, tau: f64) -> PyResult<f64> {
    dyad_core::false_alarm_rate(&scores, &labels, tau).map_err(py_err)
}

/// Spreads one score per segment over `frame_count` frames split evenly
/// into `len(segment_scores)` segments.
#[pyfunction]
fn interpolate_to_frames(segment_scores: Vec<f64>, frame_count: usize) -> PyResult<Vec<f64>> {
    let views = dyad_core::ingest::split_frame_range(0, frame_count, segment_scores.len()).map_err(py_err)?;
    dyad_core::interpolate_to_frames(&segment_scores, &views).map_err(py_err)
}

/// Writes a synthetic dataset and returns the path of its manifest.
/// Keyword arguments override fields of the default spec.
#[pyfunction]
#[pyo3(signature = (out_dir, **overrides))]
fn synth(out_dir: PathBuf, overrides: Option<HashMap<String, f64>>) -> PyResult<PathBuf> {
    let mut spec = serde_json::to_value(SynthSpec::default()).map_err(|e| PyValueError::new_err(e.to_string()))?;
    for (k, v) in overrides.unwrap_or_default() {
        let value = if v.fract() == 0.0 && v >= 0.0 {
            serde_json::json!(v as u64)
        } else {
            serde_json::json!(v)
        };
        spec[k.as_str()] = value;
    }
    let spec: SynthSpec = serde_json::from_value(spec).map_err(|e| PyValueError::new_err(e.to_string()))?;
    spec.validate().map_err(py_err)?;
    let data = dyad_core::synth::generate(&spec).map_err(py_err)?;
    dyad_core::synth::write_dataset(&spec, &data, &out_dir).map_err(py_err)?;
    Ok(out_dir.join("manifest.json"))
}

/// Runs every stage in memory on one dataset and returns the evaluation
/// summary: `auc`, `far`, `frames`, `per_video_auc` and `pass_losses`.
#[pyfunction]
#[pyo3(signature = (manifest, config_json = None))]
fn run_pipeline(py: Python<'_>, manifest: PathBuf, config_json: Option<&str>) -> PyResult<HashMap<String, Py<PyAny>>> {
    let cfg = match config_json {
        Some(text) => PipelineConfig::from_json(text).map_err(py_err)?,
        None => PipelineConfig::default(),
    };
    let m = DatasetManifest::load(&manifest).map_err(py_err)?;
    let (ens, report) = py
        .detach(|| dyad_core::pipeline::run_in_memory(&m, &cfg))
        .map_err(py_err)?;
    let losses: Vec<f64> = ens
        .passes
        .iter()
        .map(|p| p.omega_losses.last().copied().unwrap_or(f64::NAN))
        .collect();
    let mut out: HashMap<String, Py<PyAny>> = HashMap::new();
    out.insert("auc".into(), report.auc.into_pyobject(py)?.into_any().unbind());
    out.insert("far".into(), report.far.into_pyobject(py)?.into_any().unbind());
    out.insert("frames".into(), report.frames.into_pyobject(py)?.into_any().unbind());
    out.insert("per_video_auc".into(), report.per_video_auc.into_pyobject(py)?.into_any().unbind());
    out.insert("pass_losses".into(), losses.into_pyobject(py)?.into_any().unbind());
    Ok(out)
}

/// Default pipeline configuration as JSON.
#[pyfunction]
fn default_config() -> PyResult<String> {
    PipelineConfig::default().to_json().map_err(py_err)
}

#[pymodule]
fn dyad(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyIsolationForest>()?;
    m.add_class::<PyHypersphere>()?;
    m.add_class::<PyPcaModel>()?;
    m.add_class::<PyMlpRegressor>()?;
    m.add_function(wrap_pyfunction!(average_path_length, m)?)?;
    m.add_function(wrap_pyfunction!(lof_scores, m)?)?;
    m.add_function(wrap_pyfunction!(combine_scores, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_anomaly_scores, m)?)?;
    m.add_function(wrap_pyfunction!(extract_handcrafted, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_flow, m)?)?;
    m.add_function(wrap_pyfunction!(segment_dynamicity, m)?)?;
    m.add_function(wrap_pyfunction!(assign_label, m)?)?;
    m.add_function(wrap_pyfunction!(form_bags, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(false_alarm_rate, m)?)?;
    m.add_function(wrap_pyfunction!(interpolate_to_frames, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    Ok(())
}

//! Python bindings.
//!
//! Exposes the alignment primitives, the evaluation metrics, the synthetic
//! generator, a `Model` class around the trained bundle, and `run_cli` for
//! driving any `smeta` subcommand in-process. Build the cdylib and import
//! it as `smeta_py` (see python/smoke_test.py for the path juggling).

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use smeta::checkpoint::{load_checkpoint, save_checkpoint, TrainMeta};
use smeta::eval::{metrics, roc_auc as eval_roc_auc, Confusion, MetricSet};
use smeta::infer::predict as infer_predict;
use smeta::model::{self, ModelBundle, ModelConfig, Variant};
use smeta::pipeline::{AlignedSignal, ClassLabel, Side};
use smeta::synth::{generate_synthetic, SynthConfig};

fn to_py_err(e: smeta::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Wrap bare values so the head evaluators can run on them.
fn wrap_signal(values: Vec<f64>) -> AlignedSignal {
    AlignedSignal {
        values,
        subject_id: "py".to_string(),
        side: Side::Left,
        class_label: ClassLabel::Control,
        dataset_id: "py".to_string(),
        parent_offset: 0,
    }
}

/// Block-mean downsampling to `target_points` values.
#[pyfunction]
fn downsample(values: Vec<f64>, target_points: usize) -> PyResult<Vec<f64>> {
    smeta::pipeline::downsample(&values, target_points).map_err(to_py_err)
}

/// Per-signal min-max normalization into [0, 1].
#[pyfunction]
fn minmax_normalize(values: Vec<f64>) -> PyResult<Vec<f64>> {
    smeta::pipeline::minmax_normalize(&values).map_err(to_py_err)
}

fn metrics_to_dict<'py>(py: Python<'py>, m: &MetricSet) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("npv", m.npv)?;
    d.set_item("tnr", m.tnr)?;
    d.set_item("n_f1", m.n_f1)?;
    d.set_item("ppv", m.ppv)?;
    d.set_item("tpr", m.tpr)?;
    d.set_item("p_f1", m.p_f1)?;
    d.set_item("acc", m.acc)?;
    Ok(d)
}

/// The seven report metrics from confusion counts; undefined cells are None.
#[pyfunction]
#[pyo3(signature = (tp, tn, fp, r#fn))]
fn confusion_metrics(py: Python<'_>, tp: usize, tn: usize, fp: usize, r#fn: usize) -> PyResult<Py<PyDict>> {
    let m = metrics(&Confusion {
        tp,
        tn,
        fp,
        false_neg: r#fn,
    });
    Ok(metrics_to_dict(py, &m)?.into())
}

/// ROC points and trapezoidal AUC. Labels are 0 (control) / 1 (tinnitus).
#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<(Vec<(f64, f64)>, f64)> {
    let labels: Vec<ClassLabel> = labels
        .into_iter()
        .map(|l| ClassLabel::from_index(l as usize).ok_or_else(|| PyValueError::new_err("labels must be 0 or 1")))
        .collect::<PyResult<_>>()?;
    eval_roc_auc(&scores, &labels).map_err(to_py_err)
}

/// Stabilized softmax cross-entropy of two-class logits.
#[pyfunction]
fn cross_entropy(logits: Vec<f64>, label: usize) -> PyResult<f64> {
    if label >= logits.len() {
        return Err(PyValueError::new_err("label out of range"));
    }
    Ok(smeta::nn::cross_entropy(&logits, label))
}

/// Mean squared error.
#[pyfunction]
fn mse(prediction: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
    smeta::nn::mse(&prediction, &target).map_err(to_py_err)
}

/// Generate the synthetic source/target CSV pair; returns the signal counts.
#[pyfunction]
#[pyo3(signature = (out_source, out_target, seed = 0, class_effect = None, side_effect = None,
                    subject_noise = None, observation_noise = None, dataset_shift = None,
                    source_subjects = None, target_subjects = None))]
#[allow(clippy::too_many_arguments)]
fn generate_synthetic_csv(
    out_source: PathBuf,
    out_target: PathBuf,
    seed: u64,
    class_effect: Option<f64>,
    side_effect: Option<f64>,
    subject_noise: Option<f64>,
    observation_noise: Option<f64>,
    dataset_shift: Option<f64>,
    source_subjects: Option<usize>,
    target_subjects: Option<usize>,
) -> PyResult<(usize, usize)> {
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        seed,
        class_effect: class_effect.unwrap_or(defaults.class_effect),
        side_effect: side_effect.unwrap_or(defaults.side_effect),
        subject_noise: subject_noise.unwrap_or(defaults.subject_noise),
        observation_noise: observation_noise.unwrap_or(defaults.observation_noise),
        dataset_shift: dataset_shift.unwrap_or(defaults.dataset_shift),
        n_subjects_source: source_subjects.unwrap_or(defaults.n_subjects_source),
        n_subjects_target: target_subjects.unwrap_or(defaults.n_subjects_target),
        ..defaults
    };
    let (source, target) = generate_synthetic(&cfg).map_err(to_py_err)?;
    smeta::dataset::save_dataset(&source, &out_source).map_err(to_py_err)?;
    smeta::dataset::save_dataset(&target, &out_target).map_err(to_py_err)?;
    Ok((source.len(), target.len()))
}

/// Run any `smeta` CLI subcommand in-process; returns the exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    let mut argv = vec!["smeta".to_string()];
    argv.extend(args);
    smeta::cli::run(argv)
}

/// A trained (or freshly initialized) encoder/decoder/heads bundle.
#[pyclass]
struct Model {
    bundle: ModelBundle,
}

#[pymethods]
impl Model {
    /// Fresh Glorot-initialized bundle.
    #[new]
    #[pyo3(signature = (input_dim = 131, latent_dim = 32, hidden = 64, subject_hidden = 16,
                        variant = "ae", seed = 0))]
    fn new(
        input_dim: usize,
        latent_dim: usize,
        hidden: usize,
        subject_hidden: usize,
        variant: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let variant = Variant::parse(variant)
            .ok_or_else(|| PyValueError::new_err(format!("unknown variant `{variant}` (ae|sae)")))?;
        let cfg = ModelConfig {
            input_dim,
            encoder_hidden: hidden,
            latent_dim,
            subject_hidden,
            variant,
        };
        Ok(Model {
            bundle: ModelBundle::new(&cfg, &mut smeta::runner::init_rng(seed)),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (bundle, _) = load_checkpoint(&path).map_err(to_py_err)?;
        Ok(Model { bundle })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.bundle, &TrainMeta::default(), &path).map_err(to_py_err)
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.bundle.variant.as_str()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.bundle.input_dim()
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.bundle.latent_dim()
    }

    /// Latent feature vector of one signal.
    fn encode(&self, values: Vec<f64>) -> PyResult<Vec<f64>> {
        model::encode(&self.bundle, &wrap_signal(values)).map_err(to_py_err)
    }

    /// Decoder estimate of one signal.
    fn reconstruct(&self, values: Vec<f64>) -> PyResult<Vec<f64>> {
        model::reconstruct(&self.bundle, &wrap_signal(values)).map_err(to_py_err)
    }

    /// (class probabilities, predicted label, tinnitus score).
    fn predict(&self, values: Vec<f64>) -> PyResult<(Vec<f64>, u8, f64)> {
        let (probs, label, score) =
            infer_predict(&self.bundle, &wrap_signal(values)).map_err(to_py_err)?;
        Ok((probs.to_vec(), label.index() as u8, score))
    }

    /// Predicted recording side, "L" or "R".
    fn predict_side(&self, values: Vec<f64>) -> PyResult<&'static str> {
        let signal = wrap_signal(values);
        smeta::infer::predict_side_label(&self.bundle, &signal)
            .map(Side::as_str)
            .map_err(to_py_err)
    }
}

#[pymodule]
fn smeta_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(downsample, m)?)?;
    m.add_function(wrap_pyfunction!(minmax_normalize, m)?)?;
    m.add_function(wrap_pyfunction!(confusion_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic_csv, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}

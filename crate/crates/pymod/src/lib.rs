//! Python bindings for the memeweaver stack.
//!
//! The module mirrors the library's main types and operations: synthetic
//! benchmark generation, embedding-file IO, model construction, training,
//! evaluation, checkpointing, gradient checking, and the metrics toolkit.
//! Build the shared library with `cargo build -p memeweaver-py` and import
//! it as `memeweaver_py` (see `python/smoke_test.py`).

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use memeweaver::analysis::{extract_features, linear_probe, FeatureStage};
use memeweaver::autodiff::{grad_check, Graph, Tensor, TensorId};
use memeweaver::dataio::{generate_synthetic, make_batches, Split, SynthConfig};
use memeweaver::fusion::{FusionKind, GmuGate};
use memeweaver::metrics as mx;
use memeweaver::model::{
    self, forward, load_checkpoint, params_from_tensors, save_checkpoint, CheckpointFormat,
    ForwardOptions, ModelConfig, ModelParams,
};
use memeweaver::train::{self, TrainConfig};
use memeweaver::MwError;

/// Maps library errors onto idiomatic Python exception types.
fn pyerr(e: MwError) -> PyErr {
    match &e {
        MwError::Io { .. } => PyIOError::new_err(e.to_string()),
        MwError::Training(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_split(name: &str) -> PyResult<Split> {
    match name {
        "train" => Ok(Split::Train),
        "validation" => Ok(Split::Validation),
        "test" => Ok(Split::Test),
        other => Err(PyValueError::new_err(format!(
            "unknown split {other:?}; expected train, validation, or test"
        ))),
    }
}

/// A labelled embedding split.
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: memeweaver::dataio::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Loads one embedding file as the named split.
    #[staticmethod]
    #[pyo3(signature = (path, split = "test"))]
    fn load(path: PathBuf, split: &str) -> PyResult<Self> {
        let inner =
            memeweaver::dataio::Dataset::load(&path, parse_split(split)?).map_err(pyerr)?;
        Ok(PyDataset { inner })
    }

    /// Writes the split back out in the embedding-file format.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(pyerr)
    }

    #[getter]
    fn h(&self) -> usize {
        self.inner.h
    }

    #[getter]
    fn split(&self) -> &'static str {
        self.inner.split.name()
    }

    fn labels(&self) -> Vec<u8> {
        self.inner.labels()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        let stats = self.inner.stats();
        format!(
            "Dataset(split={:?}, n={}, h={}, positives={})",
            self.inner.split.name(),
            self.inner.len(),
            self.inner.h,
            stats.positives,
        )
    }
}

/// Generates the three-split synthetic benchmark; defaults reproduce the
/// standard recipe.
#[pyfunction]
#[pyo3(signature = (
    h = 8, n_train = 2000, n_val = 250, n_test = 250, positive_rate = 0.5,
    mean_separation = 1.2, noise = 1.0, modality_dropout = 0.3, seed = 42,
))]
#[allow(clippy::too_many_arguments)]
fn generate(
    h: usize,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    positive_rate: f64,
    mean_separation: f64,
    noise: f64,
    modality_dropout: f64,
    seed: u64,
) -> PyResult<(PyDataset, PyDataset, PyDataset)> {
    let cfg = SynthConfig {
        h,
        n_train,
        n_val,
        n_test,
        positive_rate,
        mean_separation,
        noise,
        modality_dropout,
        seed,
    };
    let (tr, va, te) = generate_synthetic(&cfg).map_err(pyerr)?;
    Ok((
        PyDataset { inner: tr },
        PyDataset { inner: va },
        PyDataset { inner: te },
    ))
}

/// A classification model: fusion stage, optional graph refinement, and
/// classifier, with its trainable parameters.
#[pyclass(name = "Model")]
struct PyModel {
    params: ModelParams,
    cfg: ModelConfig,
    /// Threshold tuned by the last `train` call; 0.5 until then.
    tuned_tau: f64,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (h = 8, fusion = "mfb", imgr = true, adapter = false, gmu_gate = "visual", seed = 42))]
    fn new(
        h: usize,
        fusion: &str,
        imgr: bool,
        adapter: bool,
        gmu_gate: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = ModelConfig {
            h,
            fusion: FusionKind::parse(fusion).map_err(pyerr)?,
            imgr,
            adapter,
            gmu_gate: GmuGate::parse(gmu_gate).map_err(pyerr)?,
        };
        let params = ModelParams::init(&cfg, seed).map_err(pyerr)?;
        Ok(PyModel {
            params,
            cfg,
            tuned_tau: 0.5,
        })
    }

    /// Trains in place, retaining the best validation epoch, and returns
    /// the run's headline numbers.
    #[pyo3(signature = (train_ds, val_ds, epochs = 3, lr = 0.05, train_batch = 20, infer_batch = 20, weight_decay = 0.01))]
    #[allow(clippy::too_many_arguments)]
    fn train<'py>(
        &mut self,
        py: Python<'py>,
        train_ds: &PyDataset,
        val_ds: &PyDataset,
        epochs: usize,
        lr: f64,
        train_batch: usize,
        infer_batch: usize,
        weight_decay: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let tcfg = TrainConfig {
            epochs,
            lr,
            train_batch,
            infer_batch,
            adamw: train::AdamwConfig {
                weight_decay,
                ..train::AdamwConfig::default()
            },
            ..TrainConfig::default()
        };
        let report = train::train(
            self.params.clone(),
            &self.cfg,
            &tcfg,
            &train_ds.inner,
            &val_ds.inner,
        )
        .map_err(pyerr)?;
        self.params = report.final_params.clone();
        self.tuned_tau = report.tuned_tau;

        let out = PyDict::new(py);
        out.set_item("steps", report.curve.len())?;
        out.set_item("final_loss", report.curve.last().map(|p| p.loss))?;
        out.set_item("best_epoch", report.best_epoch)?;
        out.set_item("best_val_f1", report.best_val_f1)?;
        out.set_item("tuned_tau", report.tuned_tau)?;
        out.set_item("tuned_val_f1", report.tuned_val_f1)?;
        Ok(out)
    }

    /// Scores a split. The threshold defaults to the last tuned one.
    #[pyo3(signature = (ds, tau = None, batch_size = 20))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        ds: &PyDataset,
        tau: Option<f64>,
        batch_size: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let tau = tau.unwrap_or(self.tuned_tau);
        let (report, _) = model::evaluate(
            &self.params,
            &self.cfg,
            &ds.inner,
            tau,
            batch_size,
            ForwardOptions::default(),
        )
        .map_err(pyerr)?;
        let out = PyDict::new(py);
        out.set_item("accuracy", report.accuracy)?;
        out.set_item("macro_f1", report.macro_f1)?;
        out.set_item("auc", report.auc)?;
        out.set_item("threshold", tau)?;
        Ok(out)
    }

    /// Positive-class probabilities for every record of a split, in
    /// dataset order.
    #[pyo3(signature = (ds, batch_size = 20))]
    fn scores(&self, ds: &PyDataset, batch_size: usize) -> PyResult<Vec<f64>> {
        let (_, rows) = model::evaluate(
            &self.params,
            &self.cfg,
            &ds.inner,
            0.5,
            batch_size,
            ForwardOptions::default(),
        )
        .map_err(pyerr)?;
        Ok(rows.into_iter().map(|r| r.score).collect())
    }

    /// Five-fold linear-probe accuracy of the fused or refined features
    /// on a split.
    #[pyo3(signature = (ds, stage = "refined", batch_size = 20, folds = 5, seed = 42))]
    fn probe(
        &self,
        ds: &PyDataset,
        stage: &str,
        batch_size: usize,
        folds: usize,
        seed: u64,
    ) -> PyResult<f64> {
        let stage = FeatureStage::parse(stage).map_err(pyerr)?;
        let x = extract_features(&self.params, &self.cfg, &ds.inner, batch_size, stage)
            .map_err(pyerr)?;
        let result = linear_probe(&x, &ds.inner.labels(), folds, seed).map_err(pyerr)?;
        Ok(result.mean_accuracy)
    }

    /// Verifies analytic gradients against central finite differences on
    /// a small generated batch; returns the worst relative error.
    #[pyo3(signature = (m = 6, step = 1e-6, tol = 1e-4, seed = 0))]
    fn grad_check(&self, m: usize, step: f64, tol: f64, seed: u64) -> PyResult<f64> {
        let synth = SynthConfig {
            h: self.cfg.h,
            n_train: m,
            n_val: 1,
            n_test: 1,
            seed,
            ..SynthConfig::default()
        };
        let (ds, _, _) = generate_synthetic(&synth).map_err(pyerr)?;
        let batch = make_batches(&ds, m, None).map_err(pyerr)?.remove(0);
        let named: Vec<(String, Tensor)> = self
            .params
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        let cfg = self.cfg;
        let build = |g: &mut Graph,
                     ps: &[(String, Tensor)]|
         -> memeweaver::Result<(TensorId, Vec<TensorId>)> {
            let tensors: Vec<Tensor> = ps.iter().map(|(_, t)| t.clone()).collect();
            let rebuilt = params_from_tensors(&cfg, tensors)?;
            let pass = forward(g, &batch, &rebuilt, &cfg, ForwardOptions::default())?;
            let (loss, _) = g.softmax_xent(pass.logits, &batch.labels)?;
            Ok((loss, pass.param_ids))
        };
        let report = grad_check(&named, &build, step, tol, seed).map_err(pyerr)?;
        Ok(report.max_rel_error)
    }

    /// Saves a checkpoint; `format` is `"raw64le"` or `"decimal"`.
    #[pyo3(signature = (path, format = "raw64le"))]
    fn save(&self, path: PathBuf, format: &str) -> PyResult<()> {
        let format = CheckpointFormat::parse(format).map_err(pyerr)?;
        save_checkpoint(&self.params, &self.cfg, &path, format).map_err(pyerr)
    }

    /// Loads a checkpoint; the architecture comes from the file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (params, cfg) = load_checkpoint(&path).map_err(pyerr)?;
        Ok(PyModel {
            params,
            cfg,
            tuned_tau: 0.5,
        })
    }

    #[getter]
    fn h(&self) -> usize {
        self.cfg.h
    }

    #[getter]
    fn fusion(&self) -> &'static str {
        self.cfg.fusion.name()
    }

    #[getter]
    fn imgr(&self) -> bool {
        self.cfg.imgr
    }

    #[getter]
    fn tuned_tau(&self) -> f64 {
        self.tuned_tau
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(h={}, fusion={:?}, imgr={}, tuned_tau={:.4})",
            self.cfg.h,
            self.cfg.fusion.name(),
            self.cfg.imgr,
            self.tuned_tau,
        )
    }
}

#[pyfunction]
fn accuracy(preds: Vec<u8>, labels: Vec<u8>) -> PyResult<f64> {
    mx::accuracy(&preds, &labels).map_err(pyerr)
}

#[pyfunction]
fn macro_f1(preds: Vec<u8>, labels: Vec<u8>) -> PyResult<f64> {
    mx::macro_f1(&preds, &labels).map_err(pyerr)
}

#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    mx::auc(&scores, &labels).map_err(pyerr)
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    mx::pearson(&x, &y).map_err(pyerr)
}

/// Returns `(threshold, macro_f1)` maximizing macro-F1 on the scores.
#[pyfunction]
fn tune_threshold(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<(f64, f64)> {
    mx::tune_threshold(&scores, &labels).map_err(pyerr)
}

/// Paired-bootstrap p-value comparing two prediction vectors on the same
/// items; `metric` is `"macro_f1"` or `"accuracy"`, `sided` is `"one"`
/// or `"two"`.
#[pyfunction]
#[pyo3(signature = (preds_a, preds_b, labels, metric = "macro_f1", b = 1000, seed = 42, sided = "two"))]
fn paired_bootstrap(
    preds_a: Vec<u8>,
    preds_b: Vec<u8>,
    labels: Vec<u8>,
    metric: &str,
    b: usize,
    seed: u64,
    sided: &str,
) -> PyResult<f64> {
    let metric = match metric {
        "accuracy" => mx::BootstrapMetric::Accuracy,
        "macro_f1" => mx::BootstrapMetric::MacroF1,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown metric {other:?}; expected accuracy or macro_f1"
            )))
        }
    };
    let sided = match sided {
        "one" => mx::BootstrapSided::One,
        "two" => mx::BootstrapSided::Two,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown sidedness {other:?}; expected one or two"
            )))
        }
    };
    mx::paired_bootstrap(&preds_a, &preds_b, &labels, metric, b, seed, sided).map_err(pyerr)
}

#[pymodule]
fn memeweaver_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(tune_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(paired_bootstrap, m)?)?;
    Ok(())
}

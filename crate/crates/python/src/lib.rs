//! Python bindings: preprocessing, metrics, synthetic data, training,
//! prediction and gradient checks.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fusenet::data::{load_jsonl, generate_synthetic as gen, SyntheticConfig};
use fusenet::nn::Activation;
use fusenet::train::{self, OptimizerKind, TrainConfig};
use fusenet::workflow::{self, Predictor as CorePredictor, TrainJob};
use fusenet::{eval, textprep, EmbeddingTable, Error, Variant};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn variant(name: &str) -> PyResult<Variant> {
    name.parse().map_err(to_py)
}

/// Normalized text: PII placeholders, expanded contractions, lowercase.
#[pyfunction]
fn normalize(text: &str) -> String {
    textprep::normalize(text)
}

/// Tokens after normalization, truncated to `max_seq_len`.
#[pyfunction]
#[pyo3(signature = (text, max_seq_len = 100))]
fn preprocess(text: &str, max_seq_len: usize) -> PyResult<Vec<String>> {
    Ok(textprep::preprocess(text, max_seq_len).map_err(to_py)?.tokens)
}

#[pyfunction]
fn topk_accuracy(preds: Vec<Vec<usize>>, labels: Vec<usize>) -> PyResult<f64> {
    eval::topk_accuracy(&preds, &labels).map_err(to_py)
}

/// `None` when `cls` never occurs in `labels`.
#[pyfunction]
fn topk_recall(preds: Vec<Vec<usize>>, labels: Vec<usize>, cls: usize) -> PyResult<Option<f64>> {
    eval::topk_recall(&preds, &labels, cls).map_err(to_py)
}

/// Writes `out`, `out.manifest.json` and `out.vec`; returns the manifest as
/// a JSON string.
#[pyfunction]
#[pyo3(signature = (out, n = 1300, noise = 0.05, seed = 5))]
fn generate_synthetic(py: Python<'_>, out: PathBuf, n: usize, noise: f64, seed: u64) -> PyResult<String> {
    let cfg = SyntheticConfig {
        n,
        noise,
        seed,
        ..SyntheticConfig::default()
    };
    py.detach(|| {
        let ds = gen(&cfg)?;
        let manifest = workflow::append_ext(&out, ".manifest.json");
        ds.write(&out, &manifest, Some(&workflow::append_ext(&out, ".vec")))?;
        Ok(serde_json::to_string(&ds.manifest)?)
    })
    .map_err(to_py)
}

/// Trains one variant from a JSON-lines file and writes the model, its
/// sidecar, the epoch report and the test split next to `out`. Returns
/// `(best_epoch, best_val_topk)`.
#[pyfunction]
#[pyo3(signature = (
    data, embeddings, out, variant = "fusion", epochs = 30, batch_size = 32, lr = 1e-3,
    seed = 1, optimizer = "adam", dropout = 0.0, patience = 5, max_seq_len = 100,
    lstm_hidden = 64, mlp_hidden = 64, activation = "relu", split_seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn train_model(
    py: Python<'_>,
    data: PathBuf,
    embeddings: PathBuf,
    out: PathBuf,
    variant: &str,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
    optimizer: &str,
    dropout: f64,
    patience: usize,
    max_seq_len: usize,
    lstm_hidden: usize,
    mlp_hidden: usize,
    activation: &str,
    split_seed: u64,
) -> PyResult<(usize, f64)> {
    let job = TrainJob {
        variant: self::variant(variant)?,
        embeddings: embeddings.clone(),
        vocab_limit: 0,
        max_seq_len,
        lstm_hidden,
        mlp_hidden,
        activation: Activation::from_name(activation)
            .ok_or_else(|| PyValueError::new_err(format!("unknown activation {activation:?}")))?,
        split: [0.6, 0.2, 0.2],
        split_seed,
        train: TrainConfig {
            epochs,
            batch_size,
            learning_rate: lr,
            optimizer: optimizer.parse::<OptimizerKind>().map_err(PyValueError::new_err)?,
            dropout_rate: dropout,
            early_stop_patience: patience,
            seed,
            ..TrainConfig::default()
        },
    };
    py.detach(|| {
        let examples = load_jsonl(&data)?;
        let table = EmbeddingTable::load_vec_file(&embeddings, usize::MAX)?;
        let run = workflow::run_training(&examples, &table, &job)?;
        workflow::save_run(&run, &job, &out)?;
        Ok((run.report.best_epoch, run.report.best_val_topk))
    })
    .map_err(to_py)
}

/// A saved model plus its feature pipeline and embeddings.
#[pyclass(module = "fusenet_py")]
struct Predictor {
    inner: CorePredictor,
}

#[pymethods]
impl Predictor {
    #[new]
    #[pyo3(signature = (model, embeddings = None))]
    fn new(model: PathBuf, embeddings: Option<PathBuf>) -> PyResult<Self> {
        let inner = CorePredictor::load(&model, embeddings.as_deref()).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.model.variant().name()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.model.config().num_classes
    }

    /// Top-k `(class, probability)` pairs, most probable first.
    #[pyo3(signature = (text, numerical = vec![], categorical = vec![], k = 3))]
    fn predict(
        &self,
        text: &str,
        numerical: Vec<f64>,
        categorical: Vec<(String, String)>,
        k: usize,
    ) -> PyResult<Vec<(String, f64)>> {
        self.inner.predict(text, &numerical, &categorical, k).map_err(to_py)
    }

    /// Top-k accuracy and per-class recall on a JSON-lines file.
    #[pyo3(signature = (data, k = 3))]
    fn evaluate<'py>(&self, py: Python<'py>, data: PathBuf, k: usize) -> PyResult<Bound<'py, PyDict>> {
        let report = evaluate_file(&self.inner, &data, k).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("k", report.k)?;
        d.set_item("n", report.n)?;
        d.set_item("accuracy", report.accuracy)?;
        let per_class = PyDict::new(py);
        for c in &report.per_class {
            per_class.set_item(&c.name, c.recall)?;
        }
        d.set_item("per_class", per_class)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        let c = self.inner.model.config();
        format!(
            "Predictor(variant={}, classes={}, embed_dim={}, max_seq_len={})",
            self.variant(),
            c.num_classes,
            c.embed_dim,
            c.max_seq_len
        )
    }
}

fn evaluate_file(p: &CorePredictor, data: &Path, k: usize) -> fusenet::Result<eval::EvalReport> {
    let encoded = p.encode(&load_jsonl(data)?)?;
    let report = eval::report(&p.model, &encoded, k)?;
    report.check_identity()?;
    Ok(report)
}

/// Largest relative error between analytic and central-difference
/// gradients, per parameter block.
#[pyfunction]
#[pyo3(signature = (variant = "fusion", seed = 1))]
fn grad_check(variant: &str, seed: u64) -> PyResult<Vec<(String, f64)>> {
    let r = train::grad_check(self::variant(variant)?, seed).map_err(to_py)?;
    Ok(r.blocks.into_iter().map(|b| (b.name, b.max_rel_err)).collect())
}

#[pymodule]
fn fusenet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("CLASS_NAMES", fusenet::CLASS_NAMES.to_vec())?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(topk_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(topk_recall, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_class::<Predictor>()?;
    Ok(())
}

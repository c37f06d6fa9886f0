//! Python module `san_py`: corpora, training, prediction and metrics.
//!
//! Configurations and reports cross the boundary as JSON strings.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use san_core::data::{
    generate_synthetic, load_dataset, save_dataset, split_event_aware, split_general, strip_propagation, summarize,
    Label, NewsSample, SyntheticConfig,
};
use san_core::eval::{self, ExperimentConfig, Method};
use san_core::models::{Checkpoint, Detector as CoreDetector, EncoderKind};
use san_core::training::{san_gradcheck, train_san, train_vanilla, TrainingConfig};
use san_core::{ErrorKind, SanError};

fn to_py(e: SanError) -> PyErr {
    match e.kind() {
        ErrorKind::Config => PyValueError::new_err(e.to_string()),
        ErrorKind::Io => PyIOError::new_err(e.to_string()),
        ErrorKind::Data | ErrorKind::Numeric => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_json<T: serde::de::DeserializeOwned + Default>(text: Option<&str>) -> PyResult<T> {
    match text {
        None => Ok(T::default()),
        Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(e.to_string())),
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("value serializes")
}

fn parse_label(s: &str) -> PyResult<Label> {
    match s {
        "fake" => Ok(Label::Fake),
        "real" => Ok(Label::Real),
        other => Err(PyValueError::new_err(format!("label must be 'fake' or 'real', got {other:?}"))),
    }
}

/// An in-memory list of news samples.
#[pyclass(module = "san_py", skip_from_py_object)]
#[derive(Clone)]
pub struct Corpus {
    pub samples: Vec<NewsSample>,
}

#[pymethods]
impl Corpus {
    #[staticmethod]
    pub fn load(path: &str) -> PyResult<Corpus> {
        Ok(Corpus {
            samples: load_dataset(path).map_err(to_py)?,
        })
    }

    pub fn save(&self, path: &str) -> PyResult<()> {
        save_dataset(path, &self.samples).map_err(to_py)
    }

    pub fn __len__(&self) -> usize {
        self.samples.len()
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.label.as_str().to_string()).collect()
    }

    /// Number of samples that still carry a propagation tree.
    pub fn with_tree(&self) -> usize {
        self.samples.iter().filter(|s| !s.is_cold_start()).count()
    }

    /// Copy with every propagation tree removed.
    pub fn stripped(&self) -> Corpus {
        Corpus {
            samples: strip_propagation(&self.samples),
        }
    }

    /// JSON summary: counts per label and event, mean depths.
    pub fn summary(&self) -> String {
        to_json(&summarize(&self.samples))
    }

    /// Random `(train, test)` split; the test side keeps its trees.
    pub fn split_general(&self, train_ratio: f64, seed: u64) -> PyResult<(Corpus, Corpus)> {
        let s = split_general(&self.samples, train_ratio, seed).map_err(to_py)?;
        Ok((Corpus { samples: s.train }, Corpus { samples: s.test }))
    }

    /// `(train, test)` with `event` held out.
    pub fn split_event(&self, event: &str) -> PyResult<(Corpus, Corpus)> {
        let s = split_event_aware(&self.samples, event).map_err(to_py)?;
        Ok((Corpus { samples: s.train }, Corpus { samples: s.test }))
    }
}

/// Generates a synthetic corpus; `config` is a JSON object of generator
/// settings (missing keys take their defaults).
#[pyfunction]
#[pyo3(signature = (seed, config=None))]
pub fn generate(seed: u64, config: Option<&str>) -> PyResult<Corpus> {
    let cfg: SyntheticConfig = parse_json(config)?;
    Ok(Corpus {
        samples: generate_synthetic(&cfg, seed).map_err(to_py)?,
    })
}

/// A trained or freshly initialized detector.
#[pyclass(module = "san_py")]
pub struct Detector {
    pub inner: CoreDetector,
}

#[pymethods]
impl Detector {
    #[new]
    pub fn new(encoder: &str, d_in: usize, d_h: usize, seed: u64) -> PyResult<Detector> {
        let kind: EncoderKind = encoder.parse().map_err(to_py)?;
        let arch = san_core::models::Architecture::new(kind, d_in, d_h).map_err(to_py)?;
        Ok(Detector {
            inner: CoreDetector::new(arch, seed),
        })
    }

    #[staticmethod]
    pub fn load(path: &str) -> PyResult<Detector> {
        Ok(Detector {
            inner: Checkpoint::load(path).map_err(to_py)?.detector,
        })
    }

    pub fn save(&self, path: &str) -> PyResult<()> {
        Checkpoint::new(self.inner.clone(), serde_json::Value::Null)
            .save(path)
            .map_err(to_py)
    }

    #[getter]
    pub fn encoder(&self) -> String {
        self.inner.arch.kind.as_str().to_string()
    }

    #[getter]
    pub fn d_in(&self) -> usize {
        self.inner.arch.d_in
    }

    #[getter]
    pub fn d_h(&self) -> usize {
        self.inner.arch.d_h
    }

    pub fn num_parameters(&self) -> usize {
        self.inner.params.num_scalars()
    }

    /// `(labels, probabilities)`; probabilities are `[p_fake, p_real]`.
    pub fn predict(&self, corpus: &Corpus) -> PyResult<(Vec<String>, Vec<[f64; 2]>)> {
        let preds = self.inner.predict(&corpus.samples).map_err(to_py)?;
        Ok((
            preds.iter().map(|p| p.label().as_str().to_string()).collect(),
            preds.iter().map(|p| p.probs).collect(),
        ))
    }

    /// Hidden representations, one row per sample.
    pub fn hidden(&self, corpus: &Corpus) -> PyResult<Vec<Vec<f64>>> {
        let preds = self.inner.predict(&corpus.samples).map_err(to_py)?;
        Ok(preds.into_iter().map(|p| p.hidden.h).collect())
    }

    /// JSON with cold-start and warm metrics on `test`.
    pub fn evaluate(&self, test: &Corpus) -> PyResult<String> {
        let (cold, warm) = eval::evaluate(&self.inner, &test.samples).map_err(to_py)?;
        Ok(to_json(&serde_json::json!({ "cold": cold, "warm": warm })))
    }
}

/// Trains a detector. `method` is "san" or "vanilla"; `config` is a JSON
/// object of training settings. Returns the detector and its JSON trace.
#[pyfunction]
#[pyo3(signature = (train, method="san", config=None))]
pub fn train(train: &Corpus, method: &str, config: Option<&str>) -> PyResult<(Detector, String)> {
    let cfg: TrainingConfig = parse_json(config)?;
    let outcome = match method {
        "san" => train_san(&train.samples, &cfg),
        "vanilla" => train_vanilla(&train.samples, &cfg),
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    }
    .map_err(to_py)?;
    let trace = to_json(&outcome.trace);
    Ok((Detector { inner: outcome.detector }, trace))
}

/// Multi-seed experiment; `config` is a JSON experiment configuration.
/// Returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (corpus, config=None))]
pub fn run_experiment(corpus: &Corpus, config: Option<&str>) -> PyResult<String> {
    let cfg: ExperimentConfig = parse_json(config)?;
    let report = eval::run_experiment(&corpus.samples, &cfg).map_err(to_py)?;
    Ok(report.to_json())
}

/// Accuracy and F1 scores for label lists ("fake"/"real").
#[pyfunction]
pub fn metrics(predictions: Vec<String>, labels: Vec<String>) -> PyResult<BTreeMap<String, f64>> {
    let p = predictions.iter().map(|s| parse_label(s)).collect::<PyResult<Vec<_>>>()?;
    let l = labels.iter().map(|s| parse_label(s)).collect::<PyResult<Vec<_>>>()?;
    let m = eval::metrics(&eval::confusion(&p, &l).map_err(to_py)?);
    Ok(eval::Metrics::FIELDS
        .iter()
        .zip(m.as_array())
        .map(|(k, v)| (k.to_string(), v))
        .collect())
}

/// Two-sided paired t-test: `(t, df, p_value)`.
#[pyfunction]
pub fn paired_t_test(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, usize, f64)> {
    let t = eval::paired_t_test(&a, &b).map_err(to_py)?;
    Ok((t.t, t.df, t.p_value))
}

/// Largest relative gradient error of the full objective for `encoder`.
#[pyfunction]
#[pyo3(signature = (encoder, seed=0, epsilon=1e-5))]
pub fn gradcheck(encoder: &str, seed: u64, epsilon: f64) -> PyResult<f64> {
    let kind: EncoderKind = encoder.parse().map_err(to_py)?;
    Ok(san_gradcheck(kind, seed, epsilon).map_err(to_py)?.max_rel_error)
}

/// Names of the available methods.
#[pyfunction]
pub fn methods() -> Vec<String> {
    [Method::San, Method::Vanilla].iter().map(|m| m.as_str().to_string()).collect()
}

#[pymodule]
pub fn san_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Corpus>()?;
    m.add_class::<Detector>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(paired_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(methods, m)?)?;
    Ok(())
}

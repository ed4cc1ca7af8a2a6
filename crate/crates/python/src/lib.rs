//! Python bindings: synthetic corpora, training, prediction, evaluation and
//! the overlap baseline. Structured results come back as plain dicts.

use std::collections::BTreeMap;
use std::path::PathBuf;

use faithsel_core::baseline::{grid_search, BaselineGrid};
use faithsel_core::checkpoint::Checkpoint;
use faithsel_core::config::RunConfig;
use faithsel_core::corpus::{corpus_stats, import_eraser, read_native, write_native};
use faithsel_core::experiment::run;
use faithsel_core::metrics::{evaluate, GoldScope};
use faithsel_core::stopwords::Stoplist;
use faithsel_core::synthgen::{generate, Family, SynthConfig};
use faithsel_core::trainer::predict_dataset;
use faithsel_core::Error;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A labelled corpus of documents with optional gold rationales.
#[pyclass(module = "faithsel", frozen)]
struct Dataset {
    inner: faithsel_core::corpus::Dataset,
}

#[pymethods]
impl Dataset {
    /// Generates a synthetic corpus of family `single_evidence`, `two_hop`
    /// or `discussion`.
    #[staticmethod]
    #[pyo3(signature = (family, num_samples, seed = 0))]
    fn synthetic(family: &str, num_samples: usize, seed: u64) -> PyResult<Self> {
        let family: Family = family.replace('-', "_").parse().map_err(py_err)?;
        let inner = generate(&SynthConfig::reference(family, num_samples, seed)).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Reads a corpus in the native JSONL format.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_native(path).map_err(py_err)?,
        })
    }

    /// Imports an ERASER-format split; `labels` lists the class names in
    /// label-index order.
    #[staticmethod]
    fn import_eraser(docs: PathBuf, annotations: PathBuf, labels: Vec<String>) -> PyResult<Self> {
        let map: BTreeMap<String, usize> = labels.into_iter().zip(0..).collect();
        Ok(Self {
            inner: import_eraser(docs, annotations, &map).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_native(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.label_names.clone()
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &corpus_stats(&self.inner))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(samples={}, labels={:?})",
            self.inner.len(),
            self.inner.label_names
        )
    }
}

fn parse_scope(scope: &str) -> PyResult<GoldScope> {
    match scope {
        "best-match" | "best_match" => Ok(GoldScope::BestMatch),
        "all-gold" | "all_gold" => Ok(GoldScope::AllGold),
        other => Err(PyValueError::new_err(format!(
            "unknown gold scope '{other}' (expected best-match or all-gold)"
        ))),
    }
}

/// A trained sentence-selecting classifier.
#[pyclass(module = "faithsel", frozen)]
struct Model {
    checkpoint: Checkpoint,
}

impl Model {
    fn attach(&self, data: &Dataset) -> PyResult<faithsel_core::corpus::Dataset> {
        if data.inner.label_names != self.checkpoint.labels {
            return Err(py_err(Error::VocabMismatch(format!(
                "dataset labels {:?} differ from checkpoint labels {:?}",
                data.inner.label_names, self.checkpoint.labels
            ))));
        }
        self.checkpoint.attach(data.inner.clone()).map_err(py_err)
    }
}

#[pymethods]
impl Model {
    /// Trains on `train`, selecting the checkpoint on `val`. `config` maps
    /// configuration keys (as accepted by `--set`) to values. Returns the
    /// model and its validation report.
    #[staticmethod]
    #[pyo3(signature = (train, val, config = None, seed = None))]
    fn train<'py>(
        py: Python<'py>,
        train: &Dataset,
        val: &Dataset,
        config: Option<BTreeMap<String, String>>,
        seed: Option<u64>,
    ) -> PyResult<(Self, Bound<'py, PyAny>)> {
        let mut rc = RunConfig::default();
        if let Some(seed) = seed {
            rc.train.seed = seed;
        }
        for (key, value) in config.unwrap_or_default() {
            rc.set(&key, &value).map_err(py_err)?;
        }
        rc.validate().map_err(py_err)?;
        let outcome = py
            .detach(|| run(&train.inner, &val.inner, &rc))
            .map_err(py_err)?;
        let checkpoint = Checkpoint::new(
            outcome.params,
            rc.train.hops,
            rc.train.objective.tau,
            train.inner.label_names.clone(),
            &train.inner.vocabulary,
        )
        .map_err(py_err)?;
        let report = to_py(py, &outcome.report)?;
        Ok((Self { checkpoint }, report))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            checkpoint: Checkpoint::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.checkpoint.save(path).map_err(py_err)
    }

    #[getter]
    fn hops(&self) -> usize {
        self.checkpoint.hops
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.checkpoint.labels.clone()
    }

    /// One dict per sample with the predicted label, the selected sentence
    /// indices and every candidate's weight and logits.
    fn predict<'py>(&self, py: Python<'py>, data: &Dataset) -> PyResult<Bound<'py, PyAny>> {
        let dataset = self.attach(data)?;
        let c = &self.checkpoint;
        let records = py
            .detach(|| predict_dataset(&c.params, &dataset, c.hops, c.tau))
            .map_err(py_err)?;
        to_py(py, &records)
    }

    #[pyo3(signature = (data, gold_scope = "best-match"))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        data: &Dataset,
        gold_scope: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let scope = parse_scope(gold_scope)?;
        let dataset = self.attach(data)?;
        let c = &self.checkpoint;
        let report = py
            .detach(|| {
                let records = predict_dataset(&c.params, &dataset, c.hops, c.tau)?;
                evaluate(&records, &dataset.samples, dataset.num_labels(), scope)
            })
            .map_err(py_err)?;
        to_py(py, &report)
    }
}

/// Grid-searches the lexical-overlap logistic regression baseline on binary
/// question/answer corpora and returns the chosen weights, model and scores.
#[pyfunction]
#[pyo3(signature = (train, val, test = None))]
fn baseline<'py>(
    py: Python<'py>,
    train: &Dataset,
    val: &Dataset,
    test: Option<&Dataset>,
) -> PyResult<Bound<'py, PyAny>> {
    let stoplist = Stoplist::default();
    let result = py
        .detach(|| grid_search(&train.inner, &val.inner, &BaselineGrid::default(), &stoplist))
        .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("best", to_py(py, &result.best)?)?;
    out.set_item("val_f1a", result.val_f1a)?;
    if let Some(test) = test {
        let (f1a, accuracy) = result.best.score(&test.inner, &stoplist).map_err(py_err)?;
        out.set_item("test_f1a", f1a)?;
        out.set_item("test_accuracy", accuracy)?;
    }
    Ok(out.into_any())
}

#[pymodule]
pub fn faithsel(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    Ok(())
}

//! Python bindings: labels, actors, the console, corpora and full runs.

use std::collections::HashMap;
use std::path::PathBuf;

use indexmap::IndexMap;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use collabsel::actors::{ActorMemory, SubcategoryReward, SubcategoryRewardReport};
use collabsel::cli::{cmd_run, RunConfig};
use collabsel::console::{ConsoleState, Regime};
use collabsel::corpus::{generate_synthetic_corpus, Corpus, GeneratorConfig};

fn err(e: collabsel::Error) -> PyErr {
    if e.exit_code() == 2 || matches!(e, collabsel::Error::Data(_)) {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Quality interval 1..=5 of a score in [0, 5].
#[pyfunction]
fn map_quality_interval(score: f64) -> PyResult<u8> {
    collabsel::corpus::map_quality_interval(score).map_err(err)
}

/// Ids of the `k` highest scores, ties broken by ascending id.
#[pyfunction]
fn select_top_k(scores: HashMap<usize, f64>, k: usize) -> PyResult<Vec<usize>> {
    let mut pairs: Vec<(usize, f64)> = scores.into_iter().collect();
    pairs.sort_unstable_by_key(|p| p.0);
    collabsel::console::select_top_k(&pairs, k).map_err(err)
}

#[pyclass(name = "Actor", from_py_object)]
#[derive(Clone)]
struct PyActor {
    inner: ActorMemory,
}

#[pymethods]
impl PyActor {
    #[new]
    #[pyo3(signature = (actor_id, subcategories, weights, eta = 0.3))]
    fn new(actor_id: &str, subcategories: Vec<String>, weights: Vec<f64>, eta: f64) -> PyResult<Self> {
        Ok(Self {
            inner: ActorMemory::new(actor_id, subcategories, weights, eta).map_err(err)?,
        })
    }

    #[getter]
    fn actor_id(&self) -> String {
        self.inner.actor_id.clone()
    }

    #[getter]
    fn subcategories(&self) -> Vec<String> {
        self.inner.subcategories.clone()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights.clone()
    }

    #[getter]
    fn stage_count(&self) -> u64 {
        self.inner.stage_count
    }

    /// Sliding-average update from `{subcategory: mean reward}`; omitted
    /// subcategories keep their weights.
    fn update(&mut self, rewards: HashMap<String, f64>, stage: u64) -> PyResult<()> {
        let per_subcategory: IndexMap<String, SubcategoryReward> = self
            .inner
            .subcategories
            .iter()
            .filter_map(|s| {
                rewards.get(s).map(|&r| {
                    (
                        s.clone(),
                        SubcategoryReward {
                            mean_reward: Some(r),
                            sample_count: 1,
                        },
                    )
                })
            })
            .collect();
        if per_subcategory.len() != rewards.len() {
            return Err(PyValueError::new_err("reward for an unknown subcategory"));
        }
        let report = SubcategoryRewardReport {
            actor_id: self.inner.actor_id.clone(),
            per_subcategory,
            stage_index: stage,
        };
        self.inner.update(&report).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: ActorMemory = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    fn __repr__(&self) -> String {
        format!("Actor({:?}, weights={:?})", self.inner.actor_id, self.inner.weights)
    }
}

#[pyclass(name = "Console", from_py_object)]
#[derive(Clone)]
struct PyConsole {
    inner: ConsoleState,
}

#[pymethods]
impl PyConsole {
    /// `regime` is "collaborative", "competitive" or "single:<actor>".
    #[new]
    #[pyo3(signature = (actor_ids, eta = 5.0, regime = "collaborative"))]
    fn new(actor_ids: Vec<String>, eta: f64, regime: &str) -> PyResult<Self> {
        let regime: Regime = regime.parse().map_err(err)?;
        let inner = ConsoleState::new(&actor_ids, eta, regime).map_err(err)?;
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn thetas(&self) -> Vec<(String, f64)> {
        self.inner.thetas.iter().map(|(k, v)| (k.clone(), *v)).collect()
    }

    #[getter]
    fn regime(&self) -> String {
        self.inner.regime.to_string()
    }

    fn scoring_weights(&self) -> Vec<(String, f64)> {
        self.inner.scoring_weights().into_iter().collect()
    }

    /// Applies one update from `{actor: aggregate reward}`.
    fn update(&mut self, aggregates: HashMap<String, f64>) -> PyResult<()> {
        let ordered: IndexMap<String, f64> = self
            .inner
            .thetas
            .keys()
            .filter_map(|k| aggregates.get(k).map(|v| (k.clone(), *v)))
            .collect();
        if ordered.len() != aggregates.len() {
            return Err(PyValueError::new_err("aggregate for an unregistered actor"));
        }
        self.inner.update(&ordered).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

#[pyclass(name = "Corpus")]
struct PyCorpus {
    inner: Corpus,
}

#[pymethods]
impl PyCorpus {
    /// Synthetic corpus; `config` is a TOML generator spec (defaults when empty).
    #[staticmethod]
    #[pyo3(signature = (seed, config = ""))]
    fn generate(seed: u64, config: &str) -> PyResult<Self> {
        let cfg: GeneratorConfig = toml::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self {
            inner: generate_synthetic_corpus(&cfg, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Corpus::load(&path).map_err(err)?,
        })
    }

    /// Writes the corpus and its header; generated corpora also get a
    /// `<stem>.reference.jsonl` reference set.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)?;
        if let collabsel::corpus::Provenance::Generator { seed, config, .. } = self.inner.metadata() {
            let refs = collabsel::corpus::generate_reference_task(config, *seed).map_err(err)?;
            collabsel::corpus::save_points(&refs, &collabsel::cli::reference_sibling(&path)).map_err(err)?;
        }
        Ok(())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn d_f(&self) -> usize {
        self.inner.d_f()
    }

    /// `[(label, count)]` for "domain", "quality" or "topic".
    fn histogram(&self, attribute: &str) -> Vec<(String, usize)> {
        self.inner.histogram(attribute)
    }

    /// One point as a JSON string.
    fn point(&self, id: usize) -> PyResult<String> {
        let p = self
            .inner
            .point(id)
            .ok_or_else(|| PyValueError::new_err(format!("no point {id}")))?;
        serde_json::to_string(p).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

/// Runs staged selection from a TOML run config (the `run` command's
/// format) and returns the final reference loss.
#[pyfunction]
fn run_selection(py: Python<'_>, config: &str) -> PyResult<f64> {
    let cfg: RunConfig = toml::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.detach(|| cmd_run(&cfg)).map_err(err)
}

#[pymodule]
fn collabsel_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(map_quality_interval, m)?)?;
    m.add_function(wrap_pyfunction!(select_top_k, m)?)?;
    m.add_function(wrap_pyfunction!(run_selection, m)?)?;
    m.add_class::<PyActor>()?;
    m.add_class::<PyConsole>()?;
    m.add_class::<PyCorpus>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

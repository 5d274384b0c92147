//! Python bindings for the dialogue framework.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyFileNotFoundError, PyValueError};
use pyo3::prelude::*;

use dialogue_core::config::Config;
use dialogue_core::corpus::generate_corpus;
use dialogue_core::error::Error;
use dialogue_core::pipeline::{self, Artifacts, Prepared};
use dialogue_core::slots::{self, SlotSchema, SlotState};
use dialogue_core::text;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::MissingArtifact(path) => PyFileNotFoundError::new_err(path.display().to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn state(tags: BTreeMap<String, String>) -> SlotState {
    tags.into_iter().collect()
}

/// Splits text into model tokens.
#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    text::tokenize(text)
}

/// Slots mentioned in `text`, using the coffee schema.
#[pyfunction]
fn extract_slots(text: &str) -> BTreeMap<String, String> {
    let schema = SlotSchema::coffee();
    slots::extract_slots(&text::tokenize(text), &schema)
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// 1 if the exchange fills a slot missing from `tags`, else 0.
#[pyfunction]
fn indicator(agent: &str, user: &str, tags: BTreeMap<String, String>) -> u8 {
    let schema = SlotSchema::coffee();
    slots::indicator(&text::tokenize(agent), &text::tokenize(user), &state(tags), &schema)
}

#[pyfunction]
fn dcg(gains: Vec<f64>) -> PyResult<f64> {
    dialogue_core::eval::dcg(&gains).map_err(to_py)
}

#[pyfunction]
fn ndcg(ranked: Vec<f64>, pool: Vec<f64>) -> PyResult<f64> {
    dialogue_core::eval::ndcg(&ranked, &pool).map_err(to_py)
}

/// Synthetic sessions, one JSON object each.
#[pyfunction]
fn corpus_json(n: usize, seed: u64) -> PyResult<Vec<String>> {
    let sessions = generate_corpus(&SlotSchema::coffee(), n, seed).map_err(to_py)?;
    sessions
        .iter()
        .map(|s| serde_json::to_string(s).map_err(|e| PyValueError::new_err(e.to_string())))
        .collect()
}

/// The built-in configuration as TOML.
#[pyfunction]
fn default_config() -> String {
    Config::default().to_toml()
}

/// Generates the corpus, trains every model and evaluates them, writing all
/// artifacts under `out_dir`. Returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (out_dir, config_toml=None))]
fn run_pipeline(py: Python<'_>, out_dir: &str, config_toml: Option<&str>) -> PyResult<String> {
    let cfg = match config_toml {
        Some(text) => Config::from_toml(text).map_err(to_py)?,
        None => Config::default(),
    };
    let art = Artifacts::new(out_dir);
    py.detach(|| {
        art.write_corpus(&cfg)?;
        art.write_vocab(&cfg)?;
        let prep: Prepared = art.prepared(&cfg)?;
        let trained = pipeline::train_all(&cfg, &prep)?;
        art.save_model(&cfg, "user", &trained.user.params, &prep.vocab)?;
        art.save_model(&cfg, "slnt", &trained.slnt.params, &prep.vocab)?;
        art.save_model(&cfg, "slt", &trained.slt.params, &prep.vocab)?;
        art.save_model(&cfg, "samia", &trained.samia.params, &prep.vocab)?;
        let (report, candidates) = pipeline::evaluate(&cfg, &prep, &trained.models())?;
        art.write_report(&report, &candidates)?;
        Ok(report.to_json())
    })
    .map_err(to_py)
}

#[pymodule]
fn dialogue_rl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(extract_slots, m)?)?;
    m.add_function(wrap_pyfunction!(indicator, m)?)?;
    m.add_function(wrap_pyfunction!(dcg, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_json, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}

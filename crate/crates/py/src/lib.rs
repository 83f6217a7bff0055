//! Python bindings: dataset synthesis, refinement runs, metrics, the
//! budgeted assignment solvers, and Elo helpers.

use std::collections::BTreeMap;
use std::path::Path;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use refinelab_core::assignment::{self, AssignmentInstance, Choice, Op, SampleChoices};
use refinelab_core::data::{
    self, empirical_distribution, Axis, Band, Distribution, Taxonomy, TopicDef,
};
use refinelab_core::difficulty::EloConfig;
use refinelab_core::metrics;
use refinelab_core::pipeline::{self, RunConfig};
use refinelab_core::synth::{synth_dataset, synth_taxonomy, SynthSpec};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn dist(axis: Axis, weights: BTreeMap<String, f64>) -> PyResult<Distribution> {
    Distribution::new(axis, weights).map_err(err)
}

/// Base-2 Jensen-Shannon divergence between two weight maps.
#[pyfunction]
fn jsd(p: BTreeMap<String, f64>, t: BTreeMap<String, f64>) -> PyResult<f64> {
    metrics::jsd(&dist(Axis::Topic, p)?, &dist(Axis::Topic, t)?).map_err(err)
}

/// KL divergence KL(p || m) in bits.
#[pyfunction]
fn kl(p: BTreeMap<String, f64>, m: BTreeMap<String, f64>) -> PyResult<f64> {
    metrics::kl(&dist(Axis::Topic, p)?, &dist(Axis::Topic, m)?).map_err(err)
}

/// Expected score of a rating against an exemplar rating.
#[pyfunction]
#[pyo3(signature = (e_i, e_ex, eta = 400.0))]
fn elo_expected(e_i: f64, e_ex: f64, eta: f64) -> f64 {
    refinelab_core::difficulty::elo_expected(e_i, e_ex, eta)
}

/// One Elo update step: rating + k * (r - expected).
#[pyfunction]
#[pyo3(signature = (rating, e_ex, r, k = 64.0, eta = 400.0))]
fn elo_step(rating: f64, e_ex: f64, r: f64, k: f64, eta: f64) -> PyResult<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(PyValueError::new_err(format!(
            "judge score {r} outside [0, 1]"
        )));
    }
    Ok(rating + k * (r - refinelab_core::difficulty::elo_expected(rating, e_ex, eta)))
}

/// Difficulty band for a rating under the default thresholds.
#[pyfunction]
fn band_of(rating: f64) -> &'static str {
    EloConfig::default().band_of(rating).as_str()
}

/// Writes a synthetic skewed dataset as JSONL and returns its size.
#[pyfunction]
#[pyo3(signature = (path, n, topics, bands, seed, unlabeled = 0, planted_errors = 0))]
fn synthesize(
    path: &str,
    n: usize,
    topics: Vec<(String, f64)>,
    bands: Vec<(String, f64)>,
    seed: u64,
    unlabeled: usize,
    planted_errors: usize,
) -> PyResult<usize> {
    let band_weights: Vec<(Band, f64)> = bands
        .into_iter()
        .map(|(b, w)| {
            Band::parse(&b)
                .map(|b| (b, w))
                .ok_or_else(|| PyValueError::new_err(format!("unknown band `{b}`")))
        })
        .collect::<PyResult<_>>()?;
    let ids: Vec<&str> = topics.iter().map(|(t, _)| t.as_str()).collect();
    let taxonomy = synth_taxonomy(&ids, Some("retrieval")).map_err(err)?;
    let spec = SynthSpec {
        n,
        topics,
        bands: band_weights,
        unlabeled,
        planted_errors,
        seed,
    };
    let (dataset, _) = synth_dataset(&spec, taxonomy).map_err(err)?;
    data::save_dataset(&dataset, Path::new(path)).map_err(err)?;
    Ok(dataset.len())
}

/// Runs one refinement round from a TOML config; returns the report as
/// a JSON string.
#[pyfunction]
fn run(config_path: &str, out_dir: &str) -> PyResult<String> {
    let config = RunConfig::load(Path::new(config_path)).map_err(err)?;
    let outcome = pipeline::run(&config, Path::new(out_dir)).map_err(err)?;
    Ok(pipeline::report_json(&outcome.report))
}

/// Empirical distributions and divergences of a JSONL dataset, as a
/// JSON string.
#[pyfunction]
#[pyo3(signature = (dataset_path, topic_target, difficulty_target = None))]
fn dataset_metrics(
    dataset_path: &str,
    topic_target: BTreeMap<String, f64>,
    difficulty_target: Option<BTreeMap<String, f64>>,
) -> PyResult<String> {
    let topics: Vec<TopicDef> = topic_target
        .keys()
        .map(|id| TopicDef {
            id: id.clone(),
            name: id.clone(),
            description: String::new(),
            validation_route: None,
        })
        .collect();
    let taxonomy = Taxonomy::new(topics).map_err(err)?;
    let (dataset, _) = data::load_dataset(Path::new(dataset_path), taxonomy).map_err(err)?;
    let coverage = empirical_distribution(&dataset, Axis::Topic).map_err(err)?;
    let difficulty_target = difficulty_target.unwrap_or_else(|| {
        pipeline::DEFAULT_DIFFICULTY_TARGET
            .iter()
            .map(|(b, w)| (b.as_str().to_string(), *w))
            .collect()
    });
    // unrated datasets have no difficulty distribution yet
    let difficulty = match empirical_distribution(&dataset, Axis::Difficulty) {
        Ok(d) => Some(serde_json::json!({
            "weights": d.weights,
            "divergence": metrics::jsd(&d, &dist(Axis::Difficulty, difficulty_target)?)
                .map_err(err)?,
        })),
        Err(_) => None,
    };
    let out = serde_json::json!({
        "samples": dataset.len(),
        "coverage": {
            "weights": coverage.weights,
            "divergence": metrics::jsd(&coverage, &dist(Axis::Topic, topic_target)?)
                .map_err(err)?,
        },
        "difficulty": difficulty,
        "distractor_entropy": metrics::distractor_entropy(&dataset).ok(),
    });
    Ok(out.to_string())
}

fn parse_op(s: &str) -> PyResult<Op> {
    assignment::OPS
        .iter()
        .copied()
        .find(|op| op.as_str() == s)
        .ok_or_else(|| PyValueError::new_err(format!("unknown op `{s}`")))
}

/// Solves a budgeted assignment. `samples` maps sample id to a list of
/// (op, target, delta, cost) choices; returns the plan as JSON.
/// Solvers: "exact", "greedy", "uniform", "refinelab".
#[pyfunction]
#[pyo3(signature = (samples, budget, solver = "refinelab", seed = 0))]
fn solve(
    samples: Vec<(String, Vec<(String, String, f64, f64)>)>,
    budget: f64,
    solver: &str,
    seed: u64,
) -> PyResult<String> {
    let instance = AssignmentInstance {
        samples: samples
            .into_iter()
            .map(|(sample_id, choices)| {
                Ok(SampleChoices {
                    sample_id,
                    choices: choices
                        .into_iter()
                        .map(|(op, target, delta, cost)| {
                            Ok(Choice {
                                op: parse_op(&op)?,
                                target,
                                delta,
                                cost,
                            })
                        })
                        .collect::<PyResult<_>>()?,
                })
            })
            .collect::<PyResult<_>>()?,
        budget,
    };
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let plan = match solver {
        "exact" => assignment::solve_exact(&instance).map_err(err)?,
        "greedy" => assignment::baseline_greedy(&instance).map_err(err)?,
        "uniform" => assignment::baseline_uniform(&instance, &mut rng).map_err(err)?,
        "refinelab" => {
            pipeline::solve_plan(&instance, pipeline::Strategy::Refinelab, &mut rng)
                .map_err(err)?
        }
        other => return Err(PyValueError::new_err(format!("unknown solver `{other}`"))),
    };
    serde_json::to_string(&plan).map_err(err)
}

#[pymodule]
fn refinelab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(jsd, m)?)?;
    m.add_function(wrap_pyfunction!(kl, m)?)?;
    m.add_function(wrap_pyfunction!(elo_expected, m)?)?;
    m.add_function(wrap_pyfunction!(elo_step, m)?)?;
    m.add_function(wrap_pyfunction!(band_of, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    Ok(())
}

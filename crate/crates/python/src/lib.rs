//! Python bindings for the `reading_entropy` crate.
//!
//! Input errors raise `ValueError`, file errors `OSError`, anything else
//! `RuntimeError`. Heavy calls release the interpreter lock.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use reading_entropy::corpus::WordKey;
use reading_entropy::infotheory::{self, word_infos};
use reading_entropy::lm::{read_fulldist, read_summary};
use reading_entropy::pipeline::{self, Analysis, Dataset, PipelineConfig};
use reading_entropy::predictors::{FeatureMatrix, Response, Term};
use reading_entropy::regression::{self, FoldPlan, ModelKind};
use reading_entropy::synth::{generate, GeneratorConfig};
use reading_entropy::{inference, Alpha, Error};

fn py_err(e: Error) -> PyErr {
    let root = match &e {
        Error::Stage { source, .. } => {
            let mut s: &Error = source;
            while let Error::Stage { source, .. } = s {
                s = source;
            }
            s
        }
        other => other,
    };
    let message = e.to_string();
    match root {
        Error::Io { .. } => PyOSError::new_err(message),
        Error::Domain(_) | Error::InfiniteSurprisal { .. } | Error::Format(_) => PyValueError::new_err(message),
        _ if e.is_validation() => PyValueError::new_err(message),
        _ => PyRuntimeError::new_err(message),
    }
}

fn alpha(value: f64) -> PyResult<Alpha> {
    Alpha::new(value).map_err(py_err)
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// The default Rényi orders, with `inf` for the min-entropy.
#[pyfunction]
fn default_alphas() -> Vec<f64> {
    Alpha::default_grid().into_iter().map(Alpha::value).collect()
}

/// Rényi entropy of order `alpha` in bits.
#[pyfunction]
fn renyi_entropy(dist: Vec<f64>, alpha: f64) -> PyResult<f64> {
    infotheory::renyi_entropy(&dist, self::alpha(alpha)?).map_err(py_err)
}

/// `-log2 dist[outcome]`.
#[pyfunction]
fn surprisal(dist: Vec<f64>, outcome: usize) -> PyResult<f64> {
    infotheory::surprisal(&dist, outcome).map_err(py_err)
}

#[pyfunction]
fn preprocessing_effort_total(dist: Vec<f64>, k: f64) -> PyResult<f64> {
    infotheory::preprocessing_effort_total(&dist, k).map_err(py_err)
}

/// Two-sided sign-flip test on the mean of `diffs`.
#[pyfunction]
#[pyo3(signature = (diffs, permutations = inference::DEFAULT_PERMUTATIONS, seed = 0))]
fn permutation_test(py: Python<'_>, diffs: Vec<f64>, permutations: usize, seed: u64) -> PyResult<f64> {
    py.detach(|| inference::paired_permutation_test(&diffs, permutations, seed))
        .map_err(py_err)
}

/// Benjamini–Hochberg adjusted p-values and the rejection mask.
#[pyfunction]
#[pyo3(signature = (p_values, q = inference::DEFAULT_FDR))]
fn bh_adjust(p_values: Vec<f64>, q: f64) -> PyResult<(Vec<f64>, Vec<bool>)> {
    inference::bh_adjust(&p_values, q).map_err(py_err)
}

#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    inference::spearman(&x, &y).map_err(py_err)
}

fn design(x: &[Vec<f64>], y: Vec<f64>, response: Response) -> PyResult<FeatureMatrix> {
    let d = x.first().map_or(0, Vec::len);
    if x.len() != y.len() || d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err(
            "x must be a non-empty rectangular list of rows matching y",
        ));
    }
    Ok(FeatureMatrix {
        rows: (0..x.len() as u32).map(|i| WordKey::new(0, i)).collect(),
        // Column labels are not used by the fit.
        columns: vec![Term::intercept(); d],
        values: x.iter().flatten().copied().collect(),
        response: y,
        response_kind: response,
        dropped: 0,
    })
}

/// Cross-validated fit of `y` on the rows of `x` (no implicit intercept).
///
/// `model` is "linear" (Gaussian, held-out scoring with the training-fold
/// variance) or "logistic" (fractional responses in [0, 1]).
#[pyfunction]
#[pyo3(signature = (x, y, model = "linear", folds = regression::DEFAULT_FOLDS, seed = 0))]
fn cross_validate<'py>(
    py: Python<'py>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    model: &str,
    folds: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let (kind, response) = match model {
        "linear" => (ModelKind::Linear, Response::ReadingTime),
        "logistic" => (ModelKind::Logistic, Response::SkipRatio),
        other => return Err(PyValueError::new_err(format!("unknown model {other:?}"))),
    };
    let matrix = design(&x, y, response)?;
    let fit = py
        .detach(|| {
            let plan = FoldPlan::random(seed, matrix.n_rows(), folds)?;
            regression::cross_validate(&matrix, kind, &plan)
        })
        .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("coefficients", &fit.coefficients)?;
    out.set_item("sigma2", fit.sigma2)?;
    out.set_item("train_llh", fit.train_llh)?;
    out.set_item("mean_heldout_llh", fit.mean_heldout_llh())?;
    out.set_item("heldout_llh", &fit.per_item_heldout_llh)?;
    out.set_item("fold_coefficients", &fit.fold_coefficients)?;
    out.set_item("warnings", json_to_py(py, &fit.warnings)?)?;
    Ok(out)
}

/// Word-level surprisal and entropies from a FULLDIST or SUMMARY file.
#[pyfunction]
#[pyo3(signature = (path, alphas = None, summary = false))]
fn word_information<'py>(
    py: Python<'py>,
    path: PathBuf,
    alphas: Option<Vec<f64>>,
    summary: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let alphas = match alphas {
        Some(a) => a.into_iter().map(alpha).collect::<PyResult<Vec<_>>>()?,
        None => Alpha::default_grid(),
    };
    let infos = py
        .detach(|| {
            let positions = if summary {
                read_summary(&path)?.0
            } else {
                read_fulldist(&path)?.0
            };
            word_infos(&positions, &alphas)
        })
        .map_err(py_err)?;
    let rows: Vec<serde_json::Value> = infos
        .iter()
        .map(|(key, info)| {
            serde_json::json!({
                "text_id": key.text_id,
                "word_index": key.word_index,
                "surprisal_bits": info.surprisal_bits,
                "entropy_bits": info.entropy_bits.iter().map(|(a, v)| (a.to_string(), *v)).collect::<std::collections::BTreeMap<_, _>>(),
            })
        })
        .collect();
    json_to_py(py, &rows)
}

/// Writes a synthetic corpus (`corpus.tsv`, `dists.rtd`, `freq.tsv`) into
/// `output_dir` and returns the paths.
///
/// `config` is a generator configuration as JSON text; without it the standard
/// configuration with roughly `words` words is used.
#[pyfunction]
#[pyo3(signature = (output_dir, seed = 0, words = 5000, config = None))]
fn generate_synthetic<'py>(
    py: Python<'py>,
    output_dir: PathBuf,
    seed: u64,
    words: usize,
    config: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut config = match config {
        Some(text) => {
            serde_json::from_str::<GeneratorConfig>(text).map_err(|e| PyValueError::new_err(e.to_string()))?
        }
        None => GeneratorConfig::standard(seed, words),
    };
    config.seed = seed;
    let paths = py
        .detach(|| generate(&config).and_then(|s| s.write(&output_dir)))
        .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("corpus", paths.corpus)?;
    out.set_item("fulldist", paths.fulldist)?;
    out.set_item("frequencies", paths.frequencies)?;
    Ok(out)
}

fn load_config(path: &PathBuf, output_dir: Option<PathBuf>) -> PyResult<PipelineConfig> {
    let mut config = PipelineConfig::load(path).map_err(py_err)?;
    if let Some(dir) = output_dir {
        config.output_dir = dir;
    }
    Ok(config)
}

/// Runs a pipeline config file and returns the written report paths.
#[pyfunction]
#[pyo3(signature = (config_path, output_dir = None))]
fn run_pipeline(py: Python<'_>, config_path: PathBuf, output_dir: Option<PathBuf>) -> PyResult<Vec<PathBuf>> {
    let config = load_config(&config_path, output_dir)?;
    py.detach(|| pipeline::run(&config)).map_err(py_err)
}

/// Runs one experiment (e.g. "exp1", "exp2-add:0.5") on the datasets of a
/// config file and returns its comparison rows as dicts.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config_path: PathBuf, experiment: &str) -> PyResult<Bound<'py, PyAny>> {
    let config = load_config(&config_path, None)?;
    let experiment = experiment.parse().map_err(py_err)?;
    let reports = py
        .detach(|| {
            config.settings.validate()?;
            let datasets = config
                .datasets
                .iter()
                .map(|d| Dataset::load(d, &config.alphas))
                .collect::<reading_entropy::Result<Vec<_>>>()?;
            let analysis = Analysis::new(&datasets, config.settings.clone())?;
            Ok::<_, Error>(analysis.run_experiment(&experiment)?.reports)
        })
        .map_err(py_err)?;
    json_to_py(py, &reports)
}

#[pymodule]
pub fn reading_entropy_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(default_alphas, m)?)?;
    m.add_function(wrap_pyfunction!(renyi_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(surprisal, m)?)?;
    m.add_function(wrap_pyfunction!(preprocessing_effort_total, m)?)?;
    m.add_function(wrap_pyfunction!(permutation_test, m)?)?;
    m.add_function(wrap_pyfunction!(bh_adjust, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(word_information, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}

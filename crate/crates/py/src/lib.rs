//! Python module `kernood_py`: feature extraction, the detector, the
//! synthetic plants and the evaluation helpers.

use kernood::detector::cusum::run_cusum;
use kernood::envgen::plant::{CartpoleParams, Controller, LinearParams, Plant};
use kernood::envgen::{simulate as simulate_plant, AnomalyKind, AnomalySpec, Level};
use kernood::{CusumParams, DetectorConfig, DetectorModel, EpisodeMatrix, KernelParams, ScoreSeries, Variant};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

create_exception!(kernood_py, KernoodError, PyValueError);

fn err(e: kernood::Error) -> PyErr {
    KernoodError::new_err(e.to_string())
}

fn parse<T: serde::de::DeserializeOwned>(what: &str, value: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| KernoodError::new_err(format!("unknown {what} {value:?}")))
}

fn episode(rows: Vec<Vec<f64>>) -> PyResult<EpisodeMatrix> {
    EpisodeMatrix::from_rows(rows, None).map_err(err)
}

#[pyfunction]
fn rbf_distance(row: Vec<f64>) -> PyResult<f64> {
    kernood::rbf_distance(&row).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (d, sigma, s = 1.5))]
fn rbf_similarity(d: f64, sigma: f64, s: f64) -> PyResult<f64> {
    let params = KernelParams::new(s, sigma).map_err(err)?;
    Ok(kernood::rbf_similarity(d, &params))
}

/// Descriptor of one window: `[k, mean]`, `[k]` or `[mean]`.
#[pyfunction]
#[pyo3(signature = (window, sigma, s = 1.5, variant = "full"))]
fn extract_features(window: Vec<f64>, sigma: f64, s: f64, variant: &str) -> PyResult<Vec<f64>> {
    let params = KernelParams::new(s, sigma).map_err(err)?;
    let variant: Variant = variant.parse().map_err(err)?;
    Ok(kernood::extract_features(&window, &params, variant)
        .map_err(err)?
        .as_slice()
        .to_vec())
}

#[pyfunction]
fn c_factor(n: usize) -> f64 {
    kernood::c_factor(n)
}

#[pyfunction]
fn auroc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    kernood::eval::auroc(&scores, &labels).map_err(err)
}

/// Returns `(statistic, alarm_index)`; the index counts from the first score.
#[pyfunction]
fn cusum(scores: Vec<f64>, target: f64, slack: f64, threshold: f64) -> PyResult<(Vec<f64>, Option<usize>)> {
    let params = CusumParams {
        target,
        slack,
        threshold,
    };
    params.validate().map_err(err)?;
    let trace = run_cusum(
        &ScoreSeries {
            scores,
            first_scored: 0,
        },
        &params,
    );
    Ok((trace.statistic, trace.alarm_time))
}

/// Simulates one closed-loop episode. Returns `(rows, onset)` with one row
/// per observed dimension.
#[pyfunction]
#[pyo3(signature = (plant, length, seed, kind = None, level = "strong", onset = None, ar_order = None))]
fn simulate(
    plant: &str,
    length: usize,
    seed: u64,
    kind: Option<&str>,
    level: &str,
    onset: Option<usize>,
    ar_order: Option<u8>,
) -> PyResult<(Vec<Vec<f64>>, Option<usize>)> {
    let plant = match plant {
        "cartpole" => Plant::Cartpole(CartpoleParams::default()),
        "linear" => Plant::Linear(LinearParams::default()),
        other => return Err(KernoodError::new_err(format!("unknown plant {other:?}"))),
    };
    let spec = match kind {
        Some(kind) => {
            let kind: AnomalyKind = parse("anomaly kind", kind)?;
            let level: Level = parse("level", level)?;
            let mut spec = AnomalySpec::new(kind, level, onset.unwrap_or(length / 2));
            if let Some(p) = ar_order {
                spec = spec.with_ar_order(p);
            }
            Some(spec)
        }
        None => None,
    };
    let controller = Controller::default_for(&plant);
    let ep = simulate_plant(&plant, &controller, length, seed, spec.as_ref()).map_err(err)?;
    Ok((ep.rows().map(<[f64]>::to_vec).collect(), ep.onset()))
}

/// Per-dimension isolation forests over window descriptors.
#[pyclass(module = "kernood_py")]
struct Detector {
    config: DetectorConfig,
    model: Option<DetectorModel>,
}

impl Detector {
    fn model(&self) -> PyResult<&DetectorModel> {
        self.model
            .as_ref()
            .ok_or_else(|| KernoodError::new_err("detector is not trained"))
    }
}

#[pymethods]
impl Detector {
    #[new]
    #[pyo3(signature = (sigma = 1.0, variant = "full", window = 10, n_trees = 100, seed = 0))]
    fn new(sigma: f64, variant: &str, window: usize, n_trees: usize, seed: u64) -> PyResult<Self> {
        let mut config = DetectorConfig::default()
            .with_sigma(sigma)
            .with_variant(variant.parse().map_err(err)?);
        config.w = window;
        config.forest.n_trees = n_trees;
        config.forest.seed = seed;
        config.validate().map_err(err)?;
        Ok(Self { config, model: None })
    }

    /// Trains on clean episodes, each a list of per-dimension rows.
    fn fit(&mut self, py: Python<'_>, episodes: Vec<Vec<Vec<f64>>>) -> PyResult<()> {
        let episodes = episodes.into_iter().map(episode).collect::<PyResult<Vec<_>>>()?;
        let config = self.config;
        let model = py.detach(|| DetectorModel::train(&episodes, &config)).map_err(err)?;
        self.model = Some(model);
        Ok(())
    }

    /// Scores for timesteps `window - 1 .. T`.
    fn score(&self, py: Python<'_>, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let model = self.model()?;
        let ep = episode(rows)?;
        Ok(py.detach(|| model.score_episode(&ep)).map_err(err)?.scores)
    }

    #[getter]
    fn first_scored(&self) -> usize {
        self.config.w - 1
    }

    #[getter]
    fn n_dims(&self) -> Option<usize> {
        self.model.as_ref().map(|m| m.n_dims)
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.config.kernel.sigma
    }

    fn to_json(&self) -> PyResult<String> {
        let bytes = self.model()?.to_json().map_err(err)?;
        String::from_utf8(bytes).map_err(|e| KernoodError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let model = DetectorModel::from_json(text.as_bytes()).map_err(err)?;
        Ok(Self {
            config: model.config,
            model: Some(model),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Detector(variant={:?}, sigma={}, window={}, trained={})",
            self.config.variant.as_str(),
            self.config.kernel.sigma,
            self.config.w,
            self.model.is_some()
        )
    }
}

#[pymodule]
fn kernood_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("KernoodError", m.py().get_type::<KernoodError>())?;
    m.add_function(wrap_pyfunction!(rbf_distance, m)?)?;
    m.add_function(wrap_pyfunction!(rbf_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(extract_features, m)?)?;
    m.add_function(wrap_pyfunction!(c_factor, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(cusum, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_class::<Detector>()?;
    Ok(())
}

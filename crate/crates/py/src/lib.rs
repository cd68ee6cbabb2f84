//! Python module `crn`: datasets, indicator frames, direction forecasts,
//! reward and return helpers, and the pipeline stages.

use std::path::PathBuf;

use chrono::NaiveDate;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use crn_core::backtest;
use crn_core::config::PipelineConfig;
use crn_core::env::{self, EnvConfig};
use crn_core::indicators::{compute_feature_frame, FeatureGroup, IndicatorParams};
use crn_core::market_data;
use crn_core::pipeline::{self, PreparedCoin, Stage};
use crn_core::synthetic::{self, RegimeParams};

create_exception!(crn, CrnError, PyException);

fn py_err(e: crn_core::CrnError) -> PyErr {
    CrnError::new_err(e.to_string())
}

fn parse_group(id: &str) -> crn_core::Result<FeatureGroup> {
    id.parse()
}

fn parse_stage(name: &str) -> crn_core::Result<Stage> {
    Stage::ALL
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| crn_core::CrnError::Config(format!("unknown stage `{name}`")))
}

fn config_or_default(path: Option<PathBuf>) -> crn_core::Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(&p),
        None => {
            let mut cfg = PipelineConfig::default();
            cfg.coins = vec!["COIN".into()];
            Ok(cfg)
        }
    }
}

/// Daily calendar-indexed market data for one asset.
#[pyclass(module = "crn", name = "Dataset", skip_from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: market_data::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Reads a CSV with a `date` column followed by numeric columns.
    #[staticmethod]
    fn read_csv(path: PathBuf, asset: &str) -> PyResult<Self> {
        market_data::Dataset::read_csv(asset, &path).map(|inner| PyDataset { inner }).map_err(py_err)
    }

    /// Regime-switching market whose `tweet_count` column predicts the next move.
    #[staticmethod]
    #[pyo3(signature = (days = 600, seed = 1))]
    fn regime(days: usize, seed: u64) -> PyResult<Self> {
        let p = RegimeParams { days, ..RegimeParams::default() };
        synthetic::regime_market(&p, seed).map(|inner| PyDataset { inner }).map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (days = 500, daily_return = 0.01, seed = 1))]
    fn uptrend(days: usize, daily_return: f64, seed: u64) -> PyResult<Self> {
        synthetic::uptrend_market(days, daily_return, seed).map(|inner| PyDataset { inner }).map_err(py_err)
    }

    #[getter]
    fn asset(&self) -> String {
        self.inner.asset.clone()
    }

    #[getter]
    fn columns(&self) -> Vec<String> {
        self.inner.columns.iter().map(|c| c.name.clone()).collect()
    }

    #[getter]
    fn dates(&self) -> Vec<String> {
        self.inner.dates.iter().map(NaiveDate::to_string).collect()
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        self.inner.column(name).map(<[f64]>::to_vec).map_err(py_err)
    }

    /// First row of the test split.
    fn split_index(&self) -> usize {
        self.inner.split_index()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv_string()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(asset={:?}, rows={}, columns={})", self.inner.asset, self.inner.len(), self.inner.columns.len())
    }
}

/// Indicator frame for a feature group: `(names, rows, mask)`, where `mask`
/// marks warm-up rows.
#[pyfunction]
fn feature_frame(dataset: &PyDataset, group: &str) -> PyResult<(Vec<String>, Vec<Vec<f64>>, Vec<bool>)> {
    let g = parse_group(group).map_err(py_err)?;
    let frame = compute_feature_frame(&dataset.inner, g, &IndicatorParams::default()).map_err(py_err)?;
    let names = frame.columns.iter().map(|c| c.name.clone()).collect();
    let rows = (0..frame.len()).map(|t| frame.columns.iter().map(|c| c.values[t]).collect()).collect();
    Ok((names, rows, frame.mask))
}

/// Next-day direction forecaster fitted on a dataset's training split.
#[pyclass(module = "crn", name = "Forecaster")]
pub struct PyForecaster {
    inner: PreparedCoin,
}

#[pymethods]
impl PyForecaster {
    /// Fits the forecaster. Without `group` the feature group is chosen
    /// automatically; `config` is an optional pipeline config file.
    #[new]
    #[pyo3(signature = (dataset, group = None, config = None))]
    fn new(dataset: &PyDataset, group: Option<&str>, config: Option<PathBuf>) -> PyResult<Self> {
        let cfg = config_or_default(config).map_err(py_err)?;
        let g = match group {
            Some(id) => parse_group(id).map_err(py_err)?,
            None => pipeline::choose_group(&dataset.inner, &cfg).map_err(py_err)?.0,
        };
        PreparedCoin::fit(&dataset.inner, g, &cfg).map(|inner| PyForecaster { inner }).map_err(py_err)
    }

    #[getter]
    fn group(&self) -> String {
        self.inner.group().id().to_string()
    }

    /// Share of test rows whose direction was called correctly.
    #[getter]
    fn test_accuracy(&self) -> Option<f64> {
        self.inner.test_accuracy()
    }

    /// Probability of an up move per row; `None` before forecasts start.
    fn p_up(&self) -> Vec<Option<f64>> {
        self.inner.predictions.iter().map(|p| p.map(|p| p.p_up)).collect()
    }

    fn edge_count(&self) -> usize {
        self.inner.model.edge_count()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.model.to_json().map_err(py_err)
    }
}

#[pyfunction]
fn reward_sr(sharpe: f64) -> i32 {
    env::reward_sr(sharpe)
}

#[pyfunction]
fn reward_roi(roi: f64) -> i32 {
    env::reward_roi(roi)
}

/// Weighted reward with the default weights.
#[pyfunction]
fn combined_reward(roi: f64, sharpe: f64) -> f64 {
    env::combined_reward(roi, sharpe, &EnvConfig::default())
}

/// Sharpe ratio of the trailing daily returns of a value history.
#[pyfunction]
fn sharpe(values: Vec<f64>) -> f64 {
    env::compute_sharpe(&values, &EnvConfig::default())
}

/// Maps a raw two-channel action to `(kind, fraction)`.
#[pyfunction]
fn decode_action(a1: f64, a2: f64) -> (String, f64) {
    let cmd = env::decode_action([a1, a2], &EnvConfig::default());
    (cmd.kind.as_str().to_string(), cmd.fraction)
}

#[pyfunction]
fn annual_roi(roi: f64, days: usize) -> PyResult<f64> {
    backtest::annual_roi(roi, days).map_err(py_err)
}

/// Return of buying at the first close and selling at the last.
#[pyfunction]
#[pyo3(signature = (closes, fee_rate = 0.001))]
fn buy_and_hold_roi(closes: Vec<f64>, fee_rate: f64) -> PyResult<f64> {
    let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
    let dates: Vec<NaiveDate> = (0..closes.len()).map(|i| start + chrono::Duration::days(i as i64)).collect();
    backtest::buy_and_hold("", &dates, &closes, 10_000.0, fee_rate)
        .map(|r| r.roi)
        .map_err(py_err)
}

/// Runs one named stage (`ingest`, ..., `report`) of the file-based pipeline.
#[pyfunction]
fn run_stage(stage: &str, config: PathBuf, out: PathBuf) -> PyResult<()> {
    let s = parse_stage(stage).map_err(py_err)?;
    let cfg = PipelineConfig::load(&config).map_err(py_err)?;
    pipeline::run_stage(s, &cfg, &out).map_err(py_err)
}

#[pyfunction]
fn run_all(config: PathBuf, out: PathBuf) -> PyResult<()> {
    let cfg = PipelineConfig::load(&config).map_err(py_err)?;
    pipeline::run_all(&cfg, &out).map_err(py_err)
}

#[pymodule]
fn crn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CrnError", m.py().get_type::<CrnError>())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyForecaster>()?;
    m.add_function(wrap_pyfunction!(feature_frame, m)?)?;
    m.add_function(wrap_pyfunction!(reward_sr, m)?)?;
    m.add_function(wrap_pyfunction!(reward_roi, m)?)?;
    m.add_function(wrap_pyfunction!(combined_reward, m)?)?;
    m.add_function(wrap_pyfunction!(sharpe, m)?)?;
    m.add_function(wrap_pyfunction!(decode_action, m)?)?;
    m.add_function(wrap_pyfunction!(annual_roi, m)?)?;
    m.add_function(wrap_pyfunction!(buy_and_hold_roi, m)?)?;
    m.add_function(wrap_pyfunction!(run_stage, m)?)?;
    m.add_function(wrap_pyfunction!(run_all, m)?)?;
    Ok(())
}

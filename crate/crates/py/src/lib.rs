use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use wifidist::channel::{self, NodeChannel};
use wifidist::config::KvMap;
use wifidist::models::{self, ModelKind, ModelSpec};
use wifidist::netsim::{self, RssiRecord};
use wifidist::nn::Tensor;
use wifidist::{eval, pipeline, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Format { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Batch size implied by a flat buffer of `[batch × window × nodes]` values.
fn batch_of(len: usize, window: usize, nodes: usize) -> Result<usize, Error> {
    let per = window * nodes;
    if per == 0 || len == 0 || len % per != 0 {
        return Err(Error::Param(format!(
            "input of {len} values is not a whole number of {window}x{nodes} windows"
        )));
    }
    Ok(len / per)
}

#[pyclass(name = "ChannelParams", from_py_object)]
#[derive(Clone)]
struct PyChannelParams {
    inner: channel::ChannelParams,
}

#[pymethods]
impl PyChannelParams {
    #[new]
    #[pyo3(signature = (p0=-40.0, d0=1.0, gamma=2.2, sigma=4.0, rho=0.95, rician_k=6.0, seed=0))]
    fn new(p0: f64, d0: f64, gamma: f64, sigma: f64, rho: f64, rician_k: f64, seed: u64) -> PyResult<Self> {
        let inner = channel::ChannelParams {
            p0,
            d0,
            gamma,
            sigma,
            rho,
            rician_k,
            seed,
        };
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn p0(&self) -> f64 {
        self.inner.p0
    }

    #[getter]
    fn d0(&self) -> f64 {
        self.inner.d0
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.inner.rho
    }

    #[getter]
    fn rician_k(&self) -> f64 {
        self.inner.rician_k
    }

    fn mean_rssi(&self, d: f64) -> PyResult<f64> {
        self.inner.mean_rssi(d).map_err(to_py)
    }

    /// `n` consecutive samples of one node's link at fixed distance `d`.
    #[pyo3(signature = (d, n, node_id=0, is_static=true, run_seed=0))]
    fn sample(&self, d: f64, n: usize, node_id: u8, is_static: bool, run_seed: u64) -> PyResult<Vec<f64>> {
        let mut ch = NodeChannel::new(self.inner, node_id, is_static, run_seed).map_err(to_py)?;
        (0..n).map(|_| ch.sample(d).map_err(to_py)).collect()
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "ChannelParams(p0={}, d0={}, gamma={}, sigma={}, rho={}, rician_k={}, seed={})",
            p.p0, p.d0, p.gamma, p.sigma, p.rho, p.rician_k, p.seed
        )
    }
}

#[pyclass(name = "BinningSpec", from_py_object)]
#[derive(Clone)]
struct PyBinningSpec {
    inner: pipeline::BinningSpec,
}

#[pymethods]
impl PyBinningSpec {
    #[new]
    #[pyo3(signature = (d_min=None, n_bins=None, l_bin=None))]
    fn new(d_min: Option<f64>, n_bins: Option<usize>, l_bin: Option<f64>) -> PyResult<Self> {
        let def = pipeline::BinningSpec::default();
        let inner = pipeline::BinningSpec {
            d_min: d_min.unwrap_or(def.d_min),
            n_bins: n_bins.unwrap_or(def.n_bins),
            l_bin: l_bin.unwrap_or(def.l_bin),
        };
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn d_min(&self) -> f64 {
        self.inner.d_min
    }

    #[getter]
    fn n_bins(&self) -> usize {
        self.inner.n_bins
    }

    #[getter]
    fn l_bin(&self) -> f64 {
        self.inner.l_bin
    }

    fn d_max(&self) -> f64 {
        self.inner.d_max()
    }

    fn bin_index(&self, d: f64) -> PyResult<usize> {
        self.inner.bin_index(d).map_err(to_py)
    }

    fn bin_center(&self, i: usize) -> PyResult<f64> {
        self.inner.bin_center(i).map_err(to_py)
    }
}

#[pyclass(name = "Model")]
struct PyModel {
    inner: models::Model,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (kind, window=20, nodes=5, n_bins=30, seed=0))]
    fn new(kind: &str, window: usize, nodes: usize, n_bins: usize, seed: u64) -> PyResult<Self> {
        let kind: ModelKind = kind.parse().map_err(to_py)?;
        let inner = models::Model::build(ModelSpec::new(kind, window, nodes, n_bins), seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = models::Model::load(&path).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path, &KvMap::default()).map_err(to_py)
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind().to_string()
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Logits for a flat row-major `[batch × window × nodes]` buffer.
    fn logits(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let s = &self.inner.spec;
        let batch = batch_of(x.len(), s.window, s.nodes).map_err(to_py)?;
        let t = Tensor::from_vec(&[batch, s.window, s.nodes], x).map_err(to_py)?;
        let logits = self.inner.forward(&t).map_err(to_py)?.logits;
        Ok(logits.data().chunks(s.n_bins).map(<[f64]>::to_vec).collect())
    }

    /// Predicted bins and bin-center distances for a flat input buffer.
    fn predict(&self, x: Vec<f64>, bins: &PyBinningSpec) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let s = &self.inner.spec;
        let batch = batch_of(x.len(), s.window, s.nodes).map_err(to_py)?;
        let t = Tensor::from_vec(&[batch, s.window, s.nodes], x).map_err(to_py)?;
        let p = self.inner.predict(&t, &bins.inner).map_err(to_py)?;
        Ok((p.bins, p.distances))
    }
}

#[pyfunction]
fn e_max(x: usize, y: usize, l_bin: f64) -> f64 {
    eval::e_max(x, y, l_bin)
}

#[pyfunction]
fn avg_upper_bound(xs: Vec<usize>, ys: Vec<usize>, l_bin: f64) -> PyResult<f64> {
    eval::avg_upper_bound(&xs, &ys, l_bin).map_err(to_py)
}

#[pyfunction]
fn classification_accuracy(xs: Vec<usize>, ys: Vec<usize>) -> PyResult<f64> {
    eval::classification_accuracy(&xs, &ys).map_err(to_py)
}

#[pyfunction]
fn baseline_distance(rssi: f64, params: &PyChannelParams) -> f64 {
    eval::baseline_pathloss_distance(rssi, &params.inner)
}

#[pyfunction]
fn median_filter(series: Vec<f64>, window: usize) -> PyResult<Vec<f64>> {
    pipeline::median_filter(&series, window).map_err(to_py)
}

#[pyfunction]
fn encode_record(node_id: u8, seq: u64, timestamp_ms: u64, rssi_dbm: f64) -> PyResult<String> {
    let r = RssiRecord::new(node_id, seq, timestamp_ms, rssi_dbm).map_err(to_py)?;
    Ok(netsim::encode_record(&r))
}

#[pyfunction]
fn decode_record(line: &str) -> PyResult<(u8, u64, u64, f64)> {
    let r = netsim::decode_record(line).map_err(to_py)?;
    Ok((r.node_id, r.seq, r.timestamp_ms, r.rssi_dbm))
}

/// Runs the command-line tool in-process; returns `(exit_code, stdout, stderr)`.
#[pyfunction]
fn run_cli(args: Vec<String>) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("wifidist".to_string()).chain(args);
    let code = wifidist::cli::run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8_lossy(&out).into_owned(),
        String::from_utf8_lossy(&err).into_owned(),
    )
}

#[pymodule]
fn wifidist_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyChannelParams>()?;
    m.add_class::<PyBinningSpec>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(e_max, m)?)?;
    m.add_function(wrap_pyfunction!(avg_upper_bound, m)?)?;
    m.add_function(wrap_pyfunction!(classification_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_distance, m)?)?;
    m.add_function(wrap_pyfunction!(median_filter, m)?)?;
    m.add_function(wrap_pyfunction!(encode_record, m)?)?;
    m.add_function(wrap_pyfunction!(decode_record, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("TICK_MS", wifidist::TICK_MS)?;
    m.add("NUM_NODES", wifidist::NUM_NODES)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_inference() {
        assert_eq!(batch_of(200, 20, 5).unwrap(), 2);
        assert!(batch_of(0, 20, 5).is_err());
        assert!(batch_of(150, 20, 5).is_err());
    }
}

//! Python module `dlotrack`. Points cross the boundary as lists of 2- or
//! 3-element coordinate lists.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dlotrack::metrics;
use dlotrack::resample;
use dlotrack::sim;
use dlotrack::tracker::{OcclusionPolicy, TrackerSession};
use dlotrack::{gmm, visibility, Dim, Error, NodeChain, Point, PointCloud};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::SessionFailed(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn points(coords: &[Vec<f64>], dim: Option<Dim>) -> PyResult<(Dim, Vec<Point>)> {
    let dim = match (dim, coords.first()) {
        (Some(d), _) => d,
        (None, Some(c)) => Dim::try_from(c.len()).map_err(to_py)?,
        (None, None) => return Err(PyValueError::new_err("empty point list")),
    };
    let pts = coords.iter().map(|c| dim.point(c)).collect::<Result<_, _>>().map_err(to_py)?;
    Ok((dim, pts))
}

fn coords(dim: Dim, pts: &[Point]) -> Vec<Vec<f64>> {
    pts.iter().map(|p| p.as_slice()[..dim.get()].to_vec()).collect()
}

/// Tracker parameters; every field is optional on construction.
#[pyclass(name = "TrackerConfig", from_py_object)]
#[derive(Clone, Copy)]
struct PyConfig {
    inner: dlotrack::TrackerConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = dlotrack::TrackerConfig::default();
        for (k, v) in kwargs.into_iter().flat_map(|kw| kw.iter()) {
            let key: String = k.extract()?;
            match key.as_str() {
                "node_count" => cfg.node_count = v.extract()?,
                "gamma" => cfg.gamma = v.extract()?,
                "a" => cfg.a = v.extract()?,
                "b" => cfg.b = v.extract()?,
                "alpha" => cfg.alpha = v.extract()?,
                "r_vis" => cfg.r_vis = v.extract()?,
                "v_lim" => cfg.v_lim = v.extract()?,
                "omega" => cfg.omega = v.extract()?,
                "em_max_iters" => cfg.em_max_iters = v.extract()?,
                "em_tol" => cfg.em_tol = v.extract()?,
                _ => return Err(PyValueError::new_err(format!("unknown config field {key:?}"))),
            }
        }
        Ok(Self {
            inner: cfg.validate().map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: dlotrack::TrackerConfig::from_json(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count
    }
    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }
    #[getter]
    fn a(&self) -> f64 {
        self.inner.a
    }
    #[getter]
    fn b(&self) -> f64 {
        self.inner.b
    }
    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }
    #[getter]
    fn r_vis(&self) -> f64 {
        self.inner.r_vis
    }
    #[getter]
    fn v_lim(&self) -> usize {
        self.inner.v_lim
    }
    #[getter]
    fn omega(&self) -> f64 {
        self.inner.omega
    }
    #[getter]
    fn em_max_iters(&self) -> usize {
        self.inner.em_max_iters
    }
    #[getter]
    fn em_tol(&self) -> f64 {
        self.inner.em_tol
    }

    fn __repr__(&self) -> String {
        format!("TrackerConfig({:?})", self.inner)
    }
}

fn config_or_default(config: Option<PyConfig>) -> dlotrack::TrackerConfig {
    config.map(|c| c.inner).unwrap_or_default()
}

/// Per-node visibility of `chain` given the observed `cloud`.
#[pyfunction]
#[pyo3(signature = (chain, cloud, r_vis = 20.0, v_lim = 3))]
fn classify(chain: Vec<Vec<f64>>, cloud: Vec<Vec<f64>>, r_vis: f64, v_lim: usize) -> PyResult<Vec<bool>> {
    let (dim, nodes) = points(&chain, None)?;
    let (_, pts) = points(&cloud, Some(dim))?;
    let chain = NodeChain::new(dim, nodes).map_err(to_py)?;
    let cloud = PointCloud::new(dim, pts).map_err(to_py)?;
    let mask = visibility::classify(&chain, &cloud, r_vis, v_lim).map_err(to_py)?;
    Ok(mask.flags().to_vec())
}

/// EM registration of `nodes` to `cloud`; returns (positions, sigma2, iterations).
#[pyfunction]
#[pyo3(signature = (nodes, cloud, config = None))]
fn register(
    nodes: Vec<Vec<f64>>,
    cloud: Vec<Vec<f64>>,
    config: Option<PyConfig>,
) -> PyResult<(Vec<Vec<f64>>, f64, usize)> {
    let (dim, init) = points(&nodes, None)?;
    let (_, pts) = points(&cloud, Some(dim))?;
    let cloud = PointCloud::new(dim, pts).map_err(to_py)?;
    let reg = gmm::register(&init, &cloud, &config_or_default(config)).map_err(to_py)?;
    Ok((coords(dim, &reg.positions), reg.state.sigma2, reg.iterations))
}

/// Same chain, nodes respaced uniformly along its arc length.
#[pyfunction]
fn resample_chain(chain: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let (dim, nodes) = points(&chain, None)?;
    Ok(coords(dim, &resample::resample(&nodes).map_err(to_py)?))
}

/// (forward, backward, symmetric) error between two chains.
#[pyfunction]
fn frame_error(estimate: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PyResult<(f64, f64, f64)> {
    let (dim, est) = points(&estimate, None)?;
    let (_, gt) = points(&truth, Some(dim))?;
    if est.len() < 2 || gt.len() < 2 {
        return Err(PyValueError::new_err("chains need at least two nodes"));
    }
    let e = metrics::frame_error(&est, &gt);
    Ok((e.forward, e.backward, e.symmetric))
}

/// Built-in scenario names.
#[pyfunction]
fn scenarios() -> Vec<String> {
    sim::builtin_scenarios().into_iter().map(|s| s.name).collect()
}

/// Generates a built-in scenario as a list of frame dicts with keys
/// `frame_index`, `points`, `ground_truth`.
#[pyfunction]
#[pyo3(signature = (name, seed = None, frames = None))]
fn simulate(py: Python<'_>, name: &str, seed: Option<u64>, frames: Option<usize>) -> PyResult<Vec<Py<PyDict>>> {
    let mut s = sim::builtin(name).ok_or_else(|| PyValueError::new_err(format!("unknown scenario {name:?}")))?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    if let Some(n) = frames {
        s.duration = n;
    }
    let records = py.detach(|| sim::generate(&s)).map_err(to_py)?;
    records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("frame_index", r.frame_index)?;
            d.set_item("points", coords(s.dim, r.cloud.points()))?;
            d.set_item("ground_truth", coords(s.dim, &r.ground_truth))?;
            Ok(d.unbind())
        })
        .collect()
}

/// Frame-by-frame tracker started from known node positions.
#[pyclass(name = "Tracker")]
struct PyTracker {
    session: TrackerSession,
}

#[pymethods]
impl PyTracker {
    #[new]
    #[pyo3(signature = (nodes, config = None, estimate_occluded = true))]
    fn new(nodes: Vec<Vec<f64>>, config: Option<PyConfig>, estimate_occluded: bool) -> PyResult<Self> {
        let (dim, pts) = points(&nodes, None)?;
        let mut cfg = config_or_default(config);
        if config.is_none() {
            cfg.node_count = pts.len();
        }
        let policy = if estimate_occluded {
            OcclusionPolicy::Estimate
        } else {
            OcclusionPolicy::Freeze
        };
        let session = TrackerSession::initialize(cfg, dim, &pts).map_err(to_py)?.with_policy(policy);
        Ok(Self { session })
    }

    /// Processes one frame; returns a dict with `frame`, `status`, `chain`,
    /// `visible` and `em_iterations`.
    fn step(&mut self, py: Python<'_>, cloud: Vec<Vec<f64>>) -> PyResult<Py<PyDict>> {
        let dim = self.session.chain().dim();
        let (_, pts) = points(&cloud, Some(dim))?;
        let cloud = PointCloud::new(dim, pts).map_err(to_py)?;
        let session = &mut self.session;
        let entry = py.detach(|| session.step(&cloud)).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("frame", entry.frame)?;
        d.set_item("status", entry.status.as_str())?;
        d.set_item("chain", coords(dim, entry.chain.nodes()))?;
        d.set_item("visible", entry.mask.flags().to_vec())?;
        d.set_item("em_iterations", entry.em_iterations)?;
        Ok(d.unbind())
    }

    #[getter]
    fn chain(&self) -> Vec<Vec<f64>> {
        coords(self.session.chain().dim(), self.session.chain().nodes())
    }

    #[getter]
    fn status(&self) -> &'static str {
        self.session.status().as_str()
    }

    #[getter]
    fn frame_index(&self) -> usize {
        self.session.frame_index()
    }
}

#[pymodule]
#[pyo3(name = "dlotrack")]
fn dlotrack_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyTracker>()?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(register, m)?)?;
    m.add_function(wrap_pyfunction!(resample_chain, m)?)?;
    m.add_function(wrap_pyfunction!(frame_error, m)?)?;
    m.add_function(wrap_pyfunction!(scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}

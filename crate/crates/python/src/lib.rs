//! Python bindings. Configs go in as plain dicts that are merged over the
//! defaults; manifests and reports come back as dicts. Rasters cross the
//! boundary as `(shape, flat list)` pairs so numpy stays optional.

use std::path::PathBuf;

use headavatar::dataio::{self, Raster, SynthConfig};
use headavatar::detail_loss::{total_loss, LossBreakdown, LossWeights};
use headavatar::metrics::{self, GaussianStats};
use headavatar::reenactor::{self, ReenactMode};
use headavatar::tensor::Tensor;
use headavatar::trainer::{self, TrainConfig};
use headavatar::Error;
use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

create_exception!(headavatar_py, HeadAvatarError, PyException);

fn err(e: Error) -> PyErr {
    match e {
        Error::Usage(_) | Error::Config(_) => PyValueError::new_err(e.to_string()),
        _ => HeadAvatarError::new_err(e.to_string()),
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn to_json(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn from_json<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Defaults overlaid with whatever keys the dict supplies.
fn config<T: Serialize + DeserializeOwned + Default>(over: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let mut v = serde_json::to_value(T::default()).expect("config serializes");
    if let Some(d) = over {
        merge(&mut v, to_json(d.as_any())?);
    }
    serde_json::from_value(v).map_err(|e| PyValueError::new_err(format!("invalid configuration: {e}")))
}

fn raster(shape: Vec<usize>, data: Vec<f32>) -> PyResult<Raster> {
    if shape.iter().product::<usize>() != data.len() {
        return Err(PyValueError::new_err(format!(
            "shape {shape:?} does not match {} values",
            data.len()
        )));
    }
    Ok(Tensor::from_vec(&shape, data))
}

fn unraster(r: Raster) -> (Vec<usize>, Vec<f32>) {
    (r.shape().to_vec(), r.into_vec())
}

/// Write a procedural dataset to `out`; returns its manifest.
#[pyfunction]
#[pyo3(signature = (out, config=None))]
fn synthesize_dataset<'py>(py: Python<'py>, out: PathBuf, config: Option<&Bound<'py, PyDict>>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: SynthConfig = self::config(config)?;
    let m = py.detach(|| dataio::synthesize_dataset(&cfg, &out)).map_err(err)?;
    from_json(py, &m)
}

/// The full default training configuration as a dict.
#[pyfunction]
fn default_train_config(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    from_json(py, &TrainConfig::default())
}

/// A loaded, validated dataset directory.
#[pyclass(module = "headavatar_py")]
struct Dataset {
    inner: dataio::Dataset,
}

#[pymethods]
impl Dataset {
    /// Load a training dataset (all four rasters per frame).
    #[staticmethod]
    fn load(py: Python<'_>, path: PathBuf) -> PyResult<Self> {
        let inner = py.detach(|| dataio::load_dataset(&path)).map_err(err)?;
        Ok(Dataset { inner })
    }

    /// Load a driving sequence (render and uv only).
    #[staticmethod]
    fn load_driving(py: Python<'_>, path: PathBuf) -> PyResult<Self> {
        let inner = py.detach(|| dataio::load_driving(&path)).map_err(err)?;
        Ok(Dataset { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn resolution(&self) -> usize {
        self.inner.resolution()
    }

    #[getter]
    fn frame_ids(&self) -> Vec<usize> {
        self.inner.frames.iter().map(|f| f.frame_id).collect()
    }

    /// `{kind: (shape, values)}` for frame index `i` (not frame id).
    fn frame<'py>(&self, py: Python<'py>, i: usize) -> PyResult<Bound<'py, PyDict>> {
        let f = self
            .inner
            .frames
            .get(i)
            .ok_or_else(|| pyo3::exceptions::PyIndexError::new_err(format!("frame index {i} out of range")))?;
        let d = PyDict::new(py);
        d.set_item("frame_id", f.frame_id)?;
        for (k, t) in [
            ("real", &f.real_image),
            ("render", &f.render_image),
            ("uv", &f.uv_image),
            ("background_mask", &f.background_mask),
        ] {
            d.set_item(k, unraster(t.clone()))?;
        }
        Ok(d)
    }
}

/// Train from scratch; returns the final checkpoint manifest.
#[pyfunction]
#[pyo3(signature = (data, out, config=None))]
fn train<'py>(py: Python<'py>, data: &Dataset, out: PathBuf, config: Option<&Bound<'py, PyDict>>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: TrainConfig = self::config(config)?;
    let m = py.detach(|| trainer::train(&data.inner, &cfg, &out)).map_err(err)?;
    from_json(py, &m)
}

/// Continue a run from a checkpoint to its configured step count.
#[pyfunction]
fn resume<'py>(py: Python<'py>, data: &Dataset, checkpoint: PathBuf, out: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let m = py.detach(|| trainer::resume(&data.inner, &checkpoint, &out)).map_err(err)?;
    from_json(py, &m)
}

/// Content hash of a checkpoint's model and optimizer state.
#[pyfunction]
fn checkpoint_hash(py: Python<'_>, path: PathBuf) -> PyResult<String> {
    let s = py.detach(|| trainer::load_checkpoint(&path)).map_err(err)?;
    Ok(s.content_hash())
}

/// Per-step loss records of a run as a list of dicts.
#[pyfunction]
fn read_step_log(py: Python<'_>, path: PathBuf) -> PyResult<Bound<'_, PyAny>> {
    let log = trainer::read_step_log(&path).map_err(err)?;
    from_json(py, &log)
}

/// Frozen inference model loaded from a checkpoint.
#[pyclass(module = "headavatar_py", unsendable)]
struct Reenactor {
    inner: reenactor::Reenactor,
}

#[pymethods]
impl Reenactor {
    #[new]
    fn new(checkpoint: PathBuf) -> PyResult<Self> {
        let inner = reenactor::Reenactor::from_checkpoint(&checkpoint).map_err(err)?;
        Ok(Reenactor { inner })
    }

    #[getter]
    fn resolution(&self) -> usize {
        self.inner.resolution()
    }

    /// `render` and `uv` as `[3, R, R]` flat lists; returns
    /// `((shape, avatar), (shape, mask))`.
    #[allow(clippy::type_complexity)]
    fn generate(&self, render: Vec<f32>, uv: Vec<f32>) -> PyResult<((Vec<usize>, Vec<f32>), (Vec<usize>, Vec<f32>))> {
        let r = self.inner.resolution();
        let (render, uv) = (raster(vec![3, r, r], render)?, raster(vec![3, r, r], uv)?);
        let (a, m) = self.inner.generate(&render, &uv).map_err(err)?;
        Ok((unraster(a), unraster(m)))
    }

    /// Drive the avatar with every frame of `driving`; writes frames and
    /// `report.json` under `out` and returns the report.
    #[pyo3(signature = (driving, out, mode="self"))]
    fn reenact<'py>(&self, py: Python<'py>, driving: &Dataset, out: PathBuf, mode: &str) -> PyResult<Bound<'py, PyAny>> {
        let mode: ReenactMode = mode.parse().map_err(err)?;
        let rep = reenactor::reenact(&self.inner, &driving.inner, mode, &out, None).map_err(err)?;
        from_json(py, &rep)
    }
}

#[pyfunction]
fn psnr(shape: Vec<usize>, a: Vec<f32>, b: Vec<f32>) -> PyResult<f64> {
    metrics::psnr(&raster(shape.clone(), a)?, &raster(shape, b)?).map_err(err)
}

#[pyfunction]
fn ssim(shape: Vec<usize>, a: Vec<f32>, b: Vec<f32>) -> PyResult<f64> {
    metrics::ssim(&raster(shape.clone(), a)?, &raster(shape, b)?).map_err(err)
}

fn stats(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> PyResult<GaussianStats> {
    let d = mean.len();
    if cov.len() != d || cov.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err(format!("covariance must be {d}x{d}")));
    }
    Ok(GaussianStats {
        mean: DVector::from_vec(mean),
        cov: DMatrix::from_row_iterator(d, d, cov.into_iter().flatten()),
    })
}

/// Frechet distance between two Gaussians given as (mean, covariance).
#[pyfunction]
fn frechet_distance(mean1: Vec<f64>, cov1: Vec<Vec<f64>>, mean2: Vec<f64>, cov2: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::frechet_distance(&stats(mean1, cov1)?, &stats(mean2, cov2)?).map_err(err)
}

/// Paired-frame metrics between a prediction and a reference directory.
#[pyfunction]
fn evaluate_dirs(py: Python<'_>, pred: PathBuf, reference: PathBuf) -> PyResult<Bound<'_, PyAny>> {
    let rep = py
        .detach(|| {
            let bb = headavatar::backbones::build_surrogate::<f64>(&Default::default())?;
            metrics::evaluate_dirs(&pred, &reference, &bb)
        })
        .map_err(err)?;
    from_json(py, &rep)
}

/// `(generator_total, discriminator_total)` for a dict of raw loss terms
/// (`mask`, `mrf`, `l1`, `cos`, `g`, `d`) and optional weight overrides.
#[pyfunction]
#[pyo3(signature = (terms, weights=None))]
fn combine_losses(terms: &Bound<'_, PyDict>, weights: Option<&Bound<'_, PyDict>>) -> PyResult<(f64, f64)> {
    let w: LossWeights = config(weights)?;
    let b: LossBreakdown = config(Some(terms))?;
    Ok(total_loss(&b, &w))
}

#[pymodule]
fn headavatar_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HeadAvatarError", m.py().get_type::<HeadAvatarError>())?;
    m.add_class::<Dataset>()?;
    m.add_class::<Reenactor>()?;
    m.add_function(wrap_pyfunction!(synthesize_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(default_train_config, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(resume, m)?)?;
    m.add_function(wrap_pyfunction!(checkpoint_hash, m)?)?;
    m.add_function(wrap_pyfunction!(read_step_log, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(frechet_distance, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_dirs, m)?)?;
    m.add_function(wrap_pyfunction!(combine_losses, m)?)?;
    Ok(())
}

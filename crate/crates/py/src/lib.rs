//! Python bindings: score frames with a trained policy, read conformal
//! bands, roll out the scripted expert, and reuse the metric helpers.
//!
//! Frames cross the boundary as flat row-major `list[float]` buffers to
//! keep the interface free of array-library dependencies.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use fare_core::conformal::PredictionBand;
use fare_core::error::Error;
use fare_core::eval;
use fare_core::policy::{self, Evaluator, LatentGaussian, PolicyWeights};
use fare_core::recovery;
use fare_core::simworld::{build_world, expert_action, render, spawn_for_seed, Layout, DT};
use fare_core::tensor::Tensor;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Format { .. } | Error::MissingInput(_) => {
            PyIOError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A trained policy opened for frame-by-frame scoring.
#[pyclass]
struct PolicyHandle {
    ev: Evaluator,
}

#[pymethods]
impl PolicyHandle {
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        let w = PolicyWeights::load(&path).map_err(to_py)?;
        Ok(PolicyHandle {
            ev: Evaluator::new(&w).map_err(to_py)?,
        })
    }

    /// (channels, height, width) the policy expects.
    fn frame_shape(&self) -> (usize, usize, usize) {
        let n = self.ev.net();
        (n.channels, n.height, n.width)
    }

    /// Scores one flat frame: returns (kl_score, v, omega).
    fn eval(&mut self, frame: Vec<f32>) -> PyResult<(f64, f64, f64)> {
        let (score, act) = self.ev.eval(&frame).map_err(to_py)?;
        Ok((score, act.v, act.omega))
    }

    /// Attribution map for the most recent eval call, upsampled to frame
    /// resolution: (rows, cols, flat row-major values).
    fn grad_cam(&mut self) -> PyResult<(usize, usize, Vec<f64>)> {
        let hm = self.ev.grad_cam().map_err(to_py)?;
        Ok(flatten(&hm.full))
    }
}

/// A conformal score band opened for threshold queries.
#[pyclass]
struct BandHandle {
    band: PredictionBand,
}

#[pymethods]
impl BandHandle {
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        Ok(BandHandle {
            band: PredictionBand::load(&path).map_err(to_py)?,
        })
    }

    /// Band period (frames per window).
    fn period(&self) -> usize {
        self.band.mu.len()
    }

    /// Upper envelope at frame index t.
    fn upper(&self, t: usize) -> f64 {
        self.band.upper(t)
    }

    /// Whether a score at frame index t falls outside the band.
    fn is_ood(&self, score: f64, t: usize) -> bool {
        self.band.is_ood(score, t)
    }
}

fn flatten(map: &Tensor) -> (usize, usize, Vec<f64>) {
    let shape = map.shape();
    (shape[0], shape[1], map.data().to_vec())
}

/// Closed-form KL divergence of a diagonal Gaussian from the unit prior.
#[pyfunction]
fn kl_unit_gaussian(mean: Vec<f64>, log_var: Vec<f64>) -> PyResult<f64> {
    if mean.len() != log_var.len() {
        return Err(PyValueError::new_err("mean and log_var lengths differ"));
    }
    Ok(policy::kl_unit_gaussian(&LatentGaussian { mean, log_var }))
}

/// Trapezoidal ROC AUC of scores against boolean labels.
#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    let (_, auc) = eval::roc_auc(&scores, &labels).map_err(to_py)?;
    Ok(auc)
}

/// Bins a flat heatmap into thirds and returns (left, middle, right) flags
/// using the recovery controller's thresholds.
#[pyfunction]
fn bin_flags(rows: usize, cols: usize, values: Vec<f64>) -> PyResult<(bool, bool, bool)> {
    let map = Tensor::new(vec![rows, cols], values).map_err(to_py)?;
    let f = recovery::bin_heatmap(&map);
    Ok((f.left, f.middle, f.right))
}

/// Rolls out the scripted expert and returns rendered frames as flat
/// row-major buffers.
#[pyfunction]
fn expert_frames(
    layout: &str,
    seed: u64,
    steps: usize,
    height: usize,
    width: usize,
) -> PyResult<Vec<Vec<f32>>> {
    let layout = Layout::parse(layout)
        .ok_or_else(|| PyValueError::new_err(format!("unknown layout `{layout}`")))?;
    let mut world = build_world(layout, seed);
    spawn_for_seed(&mut world, seed);
    let mut frames = Vec::with_capacity(steps);
    for _ in 0..steps {
        frames.push(render(&world, height, width));
        let act = expert_action(&world);
        world.step(act, DT);
    }
    Ok(frames)
}

#[pymodule]
fn fare_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PolicyHandle>()?;
    m.add_class::<BandHandle>()?;
    m.add_function(wrap_pyfunction!(kl_unit_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(bin_flags, m)?)?;
    m.add_function(wrap_pyfunction!(expert_frames, m)?)?;
    Ok(())
}

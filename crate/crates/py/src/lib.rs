//! Python bindings over the core crate: skeleton geometry, dataset
//! synthesis, checkpointed-model rollouts, and the gradient checker.

use dram_core::checkpoint::load_model_file;
use dram_core::dataset::load_dataset;
use dram_core::gradcheck::run_all;
use dram_core::metrics::evaluate_poses;
use dram_core::model::Model;
use dram_core::pose::{
    hemisphere_fix as fix_frames, positions_to_rotations, rotations_to_positions, PoseVector,
};
use dram_core::rollout::rollout;
use dram_core::skeleton::SkeletonTopology;
use dram_core::synth::{generate_dataset, SynthConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use std::path::Path;

fn to_py_err(e: dram_core::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Fixed upper-body joint tree with rest offsets in centimeters.
#[pyclass]
struct Skeleton {
    topo: SkeletonTopology,
}

#[pymethods]
impl Skeleton {
    /// The built-in 12-joint upper body.
    #[new]
    fn new() -> Skeleton {
        Skeleton { topo: SkeletonTopology::default_upper_body() }
    }

    /// Parse the plain-text definition format (one joint per line:
    /// `name parent_index x y z group`).
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Skeleton> {
        Ok(Skeleton { topo: SkeletonTopology::parse(text).map_err(to_py_err)? })
    }

    fn joint_count(&self) -> usize {
        self.topo.joint_count()
    }

    /// Flattened pose dimension (4 quaternion components per joint).
    fn pose_dim(&self) -> usize {
        self.topo.pose_dim()
    }

    fn to_text(&self) -> String {
        self.topo.to_text()
    }

    /// Forward kinematics: flattened unit quaternions (w,x,y,z per joint)
    /// to per-joint [x, y, z] positions in centimeters.
    fn fk(&self, pose: Vec<f64>) -> PyResult<Vec<[f64; 3]>> {
        let pv = PoseVector::from_flat(&pose).map_err(to_py_err)?;
        rotations_to_positions(&pv, &self.topo).map_err(to_py_err)
    }

    /// Inverse of `fk` up to bone twist: joint positions back to flattened
    /// quaternions. Positions must come from a rigid pose of this skeleton.
    fn recover(&self, positions: Vec<[f64; 3]>) -> PyResult<Vec<f64>> {
        let pv = positions_to_rotations(&positions, &self.topo).map_err(to_py_err)?;
        Ok(pv.to_flat())
    }
}

/// Resolve quaternion double-cover: flip the first frame to w >= 0 and each
/// later frame to the hemisphere of its predecessor. Rotations unchanged.
#[pyfunction]
fn hemisphere_fix(poses: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let mut frames = poses
        .iter()
        .map(|p| PoseVector::from_flat(p))
        .collect::<dram_core::Result<Vec<_>>>()
        .map_err(to_py_err)?;
    fix_frames(&mut frames);
    Ok(frames.iter().map(|f| f.to_flat()).collect())
}

/// Generate a synthetic dyadic-conversation dataset and write it to `path`.
/// Returns the number of event labels across all sequences.
#[pyfunction]
#[pyo3(signature = (path, sequences=2, duration=900, seed=0))]
fn synth_dataset(path: &str, sequences: usize, duration: usize, seed: u64) -> PyResult<usize> {
    let cfg = SynthConfig { duration, seed, ..Default::default() };
    let ds = generate_dataset(&cfg, sequences).map_err(to_py_err)?;
    dram_core::dataset::save_dataset(&ds, Path::new(path)).map_err(to_py_err)?;
    Ok(ds.sequences.iter().map(|s| s.labels.len()).sum())
}

/// Header summary of a dataset file: sequence count, dims, frame counts.
#[pyfunction]
fn dataset_info<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let ds = load_dataset(Path::new(path)).map_err(to_py_err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("sequences", ds.sequences.len())?;
    dict.set_item("audio_dim", ds.audio_dim)?;
    dict.set_item("pose_dim", ds.pose_dim)?;
    dict.set_item("frame_rate", ds.frame_rate)?;
    dict.set_item(
        "frames",
        ds.sequences.iter().map(|s| s.frames()).collect::<Vec<_>>(),
    )?;
    dict.set_item(
        "labels",
        ds.sequences.iter().map(|s| s.labels.len()).collect::<Vec<_>>(),
    )?;
    Ok(dict)
}

/// A trained forecasting model loaded from a checkpoint file.
#[pyclass]
struct Checkpoint {
    model: Model,
}

#[pymethods]
impl Checkpoint {
    #[new]
    fn new(path: &str) -> PyResult<Checkpoint> {
        Ok(Checkpoint { model: load_model_file(Path::new(path)).map_err(to_py_err)? })
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.model.config.variant.label()
    }

    #[getter]
    fn k(&self) -> usize {
        self.model.config.k
    }

    fn param_count(&self) -> usize {
        self.model.param_count()
    }

    /// Autoregressive forecast on one sequence of a dataset file: seed with
    /// the first k ground-truth frames, predict `horizon` frames. Returns
    /// (poses, ape) where poses is a frame-major list of flattened
    /// quaternion frames and ape is the position error against ground truth.
    fn forecast(&self, dataset: &str, sequence: usize, horizon: usize) -> PyResult<(Vec<Vec<f64>>, f64)> {
        let ds = load_dataset(Path::new(dataset)).map_err(to_py_err)?;
        let seq = ds
            .sequences
            .get(sequence)
            .ok_or_else(|| PyValueError::new_err(format!("no sequence {sequence}")))?;
        let k = self.model.config.k;
        if seq.frames() < k + horizon {
            return Err(PyValueError::new_err(format!(
                "sequence has {} frames, need {}",
                seq.frames(),
                k + horizon
            )));
        }
        let topo = SkeletonTopology::default_upper_body();
        let quat = (ds.pose_dim == topo.pose_dim()).then(|| topo.joint_count());
        let out = rollout(
            &self.model,
            &seq.avatar_audio,
            &seq.human_audio,
            &seq.human_pose,
            &seq.avatar_pose.cols_slice(0, k),
            horizon,
            quat,
            false,
        )
        .map_err(to_py_err)?;
        let truth = seq.avatar_pose.cols_slice(k, horizon);
        let ape = if quat.is_some() {
            evaluate_poses(&out.poses, &truth, &topo).map_err(to_py_err)?.ape_avg
        } else {
            f64::NAN
        };
        let frames = (0..out.poses.cols()).map(|c| out.poses.col(c)).collect();
        Ok((frames, ape))
    }
}

/// Finite-difference verification of every gradient path. Returns
/// (name, max_rel_err, pass) per case; `ok` is True only if all pass.
#[pyfunction]
#[pyo3(signature = (seed=0, seeds=5, h=1e-5, tol=1e-4))]
fn gradcheck(seed: u64, seeds: usize, h: f64, tol: f64) -> PyResult<(bool, Vec<(String, f64, bool)>)> {
    let summary = run_all(seed, seeds, h, tol).map_err(to_py_err)?;
    let rows = summary
        .reports
        .iter()
        .map(|r| (r.name.clone(), r.max_rel_err, r.pass))
        .collect();
    Ok((summary.all_ok, rows))
}

#[pymodule]
fn dram_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Skeleton>()?;
    m.add_class::<Checkpoint>()?;
    m.add_function(wrap_pyfunction!(hemisphere_fix, m)?)?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_info, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

//! Python bindings: tensors, clips, metrics, training and sampling.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ivgan::apps::{condition, to_grayscale, Task, TaskTrainer};
use ivgan::data::{synth_clip, Batcher, Clip, ClipSource, SynthPreset, SynthSpec};
use ivgan::eval::{self, Checkpoint, ColorSpace, RunConfig};
use ivgan::tensor::{conv3d, ConvGeometry, Tensor};
use ivgan::wgan::{self, WganTrainer};

fn py_err(e: ivgan::Error) -> PyErr {
    match e {
        ivgan::Error::Io(e) => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for ivgan::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Serializes `value` and rebuilds it as a flat dict of Python scalars.
fn to_dict<'py, S: serde::Serialize>(py: Python<'py>, value: &S) -> PyResult<Bound<'py, PyDict>> {
    let json = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let dict = PyDict::new(py);
    if let serde_json::Value::Object(map) = json {
        for (k, v) in map {
            match v {
                serde_json::Value::Number(n) if n.is_u64() => dict.set_item(k, n.as_u64())?,
                serde_json::Value::Number(n) => dict.set_item(k, n.as_f64())?,
                other => dict.set_item(k, other.to_string())?,
            }
        }
    }
    Ok(dict)
}

/// Dense f32 tensor, row-major.
#[pyclass(name = "Tensor", module = "ivgan_py", frozen)]
struct PyTensor {
    inner: Tensor<f32>,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f32>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: Tensor::new(shape, data).py()?,
        })
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        PyTensor {
            inner: Tensor::zeros(shape),
        }
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.dims().to_vec()
    }

    /// Flat values.
    fn tolist(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn reshape(&self, shape: Vec<usize>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.reshape(shape).py()?,
        })
    }

    fn matmul(&self, other: &PyTensor) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.matmul(&other.inner).py()?,
        })
    }

    fn __add__(&self, other: &PyTensor) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.add(&other.inner).py()?,
        })
    }

    fn __mul__(&self, other: &PyTensor) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.mul(&other.inner).py()?,
        })
    }

    fn sum(&self) -> f32 {
        self.inner.sum_all()
    }

    /// Cross-correlation of an `(N,T,H,W,C)` input with `(Cout,kt,kh,kw,C)`
    /// weights.
    #[pyo3(signature = (weight, stride=(2, 2, 2), pad=(1, 1, 1)))]
    fn conv3d(&self, weight: &PyTensor, stride: (usize, usize, usize), pad: (usize, usize, usize)) -> PyResult<Self> {
        let d = weight.inner.dims();
        if d.len() != 5 {
            return Err(PyValueError::new_err(format!("weight must be rank 5, got {d:?}")));
        }
        let geom = ConvGeometry {
            kernel: [d[1], d[2], d[3]],
            stride: [stride.0, stride.1, stride.2],
            pad: [pad.0, pad.1, pad.2],
        };
        Ok(PyTensor {
            inner: conv3d(&self.inner, &weight.inner, &geom).py()?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.dims())
    }
}

/// One `(T, H, W, C)` video with values in `[-1, 1]`.
#[pyclass(name = "Clip", module = "ivgan_py", frozen)]
struct PyClip {
    inner: Clip,
}

#[pymethods]
impl PyClip {
    #[new]
    fn new(tensor: &PyTensor) -> PyResult<Self> {
        Ok(PyClip {
            inner: Clip::new(tensor.inner.clone()).py()?,
        })
    }

    /// Clip `index` of a desk-scale synthetic preset.
    #[staticmethod]
    #[pyo3(signature = (preset, seed=0, index=0))]
    fn synth(preset: &str, seed: u64, index: u64) -> PyResult<Self> {
        let spec = SynthSpec::desk(SynthPreset::parse(preset).py()?, seed);
        Ok(PyClip {
            inner: synth_clip(&spec, index).py()?,
        })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(PyClip {
            inner: eval::read_clip(&path).py()?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        eval::write_clip(&path, &self.inner).py()
    }

    #[getter]
    fn extents(&self) -> (usize, usize, usize, usize) {
        let [t, h, w, c] = self.inner.extents();
        (t, h, w, c)
    }

    fn tensor(&self) -> PyTensor {
        PyTensor {
            inner: self.inner.tensor().clone(),
        }
    }

    fn grayscale(&self) -> PyResult<Self> {
        Ok(PyClip {
            inner: Clip::new(to_grayscale(self.inner.tensor()).py()?).py()?,
        })
    }

    /// Writes one PPM per frame and returns the paths.
    fn export_frames(&self, dir: PathBuf) -> PyResult<Vec<PathBuf>> {
        eval::export_frames(&self.inner, &dir).py()
    }

    fn __repr__(&self) -> String {
        format!("Clip(extents={:?})", self.inner.extents())
    }
}

fn clips(batch: &Tensor<f32>) -> PyResult<Vec<PyClip>> {
    Ok(Clip::unstack(batch).py()?.into_iter().map(|inner| PyClip { inner }).collect())
}

/// PSNR in dB after mapping to `[0, 1]`; `space` is "gray" or "rgb".
#[pyfunction]
#[pyo3(signature = (a, b, space="gray"))]
fn psnr(a: &PyClip, b: &PyClip, space: &str) -> PyResult<f64> {
    eval::psnr(a.inner.tensor(), b.inner.tensor(), ColorSpace::parse(space).py()?).py()
}

/// `(name, max relative error, passed)` for every finite-difference check.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn gradcheck(seed: u64) -> PyResult<Vec<(String, f64, bool)>> {
    Ok(ivgan::gradcheck::run_suite(seed)
        .py()?
        .into_iter()
        .map(|r| (r.name, r.max_rel_err, r.passed))
        .collect())
}

/// Samples `n` clips from a checkpoint's generator.
#[pyfunction]
#[pyo3(signature = (checkpoint, n=1, seed=0))]
fn sample(checkpoint: PathBuf, n: usize, seed: u64) -> PyResult<Vec<PyClip>> {
    let mut g = Checkpoint::load(&checkpoint).py()?.generator().py()?;
    clips(&wgan::generate(&mut g, n, seed).py()?)
}

/// Round-trips a JSON run configuration through validation and default
/// resolution.
#[pyfunction]
fn resolve_config(json: &str) -> PyResult<String> {
    Ok(RunConfig::from_json(json).py()?.to_json())
}

/// Unconditional WGAN-GP training from a JSON run configuration.
#[pyclass(name = "Trainer", module = "ivgan_py", unsendable)]
struct PyTrainer {
    inner: WganTrainer,
    data: Batcher<Box<dyn ClipSource>>,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (config="{}"))]
    fn new(config: &str) -> PyResult<Self> {
        let cfg = RunConfig::from_json(config).py()?;
        Ok(PyTrainer {
            inner: WganTrainer::new(cfg.train().py()?, cfg.net()).py()?,
            data: cfg.batcher().py()?,
        })
    }

    /// One outer step; returns the step report.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let report = self.inner.train_step(&mut self.data).py()?;
        to_dict(py, &report)
    }

    #[getter]
    fn steps_done(&self) -> u64 {
        self.inner.step
    }

    #[pyo3(signature = (n=1, seed=0))]
    fn generate(&mut self, n: usize, seed: u64) -> PyResult<Vec<PyClip>> {
        clips(&self.inner.generate(n, seed).py()?)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.checkpoint().save(&path).py()
    }
}

/// Encoder + generator training for one conditional task
/// ("colorize-sup", "colorize-unsup", "inpaint" or "predict").
#[pyclass(name = "TaskTrainer", module = "ivgan_py", unsendable)]
struct PyTaskTrainer {
    inner: TaskTrainer,
    data: Batcher<Box<dyn ClipSource>>,
}

#[pymethods]
impl PyTaskTrainer {
    #[new]
    #[pyo3(signature = (task, config="{}"))]
    fn new(task: &str, config: &str) -> PyResult<Self> {
        let cfg = RunConfig::from_json(config).py()?;
        let task = Task::parse(task).py()?;
        Ok(PyTaskTrainer {
            inner: TaskTrainer::new(cfg.train().py()?, cfg.task(task), cfg.net()).py()?,
            data: cfg.batcher().py()?,
        })
    }

    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let report = self.inner.train_step(&mut self.data).py()?;
        to_dict(py, &report)
    }

    #[getter]
    fn steps_done(&self) -> u64 {
        self.inner.step
    }

    /// Builds the task's condition from a clean RGB clip (corrupting,
    /// graying or keeping the first frame) and reconstructs from it.
    /// Returns `(condition, reconstruction)`.
    #[pyo3(signature = (clip, seed=0))]
    fn reconstruct(&mut self, clip: &PyClip, seed: u64) -> PyResult<(PyClip, PyClip)> {
        let real = Clip::stack(std::slice::from_ref(&clip.inner)).py()?;
        let y = condition(&self.inner.spec, &real, seed).py()?;
        let out = self.inner.reconstruct(&y).py()?;
        Ok((clips(&y)?.remove(0), clips(&out)?.remove(0)))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.checkpoint().save(&path).py()
    }
}

#[pymodule]
fn ivgan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyClip>()?;
    m.add_class::<PyTrainer>()?;
    m.add_class::<PyTaskTrainer>()?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    Ok(())
}

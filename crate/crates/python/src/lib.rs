//! Python bindings: tensors and the differentiation graph, synthetic data,
//! scene flow, the affordance model, training and evaluation.

use std::path::PathBuf;

use affseg::data::{self, InteractionSequence, PreprocessConfig, RgbdFrame, SyntheticSpec};
use affseg::flow::{self, CameraIntrinsics, FlowField};
use affseg::metrics::{self, ConfusionCounts, EvalMode};
use affseg::model::{AffordanceModel, ModelConfig, SequenceBatch, Variant};
use affseg::trainer::{self, TrainConfig, TrainState};
use affseg::{Error, Graph as CoreGraph, Tensor as CoreTensor, Var as CoreVar};
use pyo3::exceptions::{PyIOError, PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Divergence { .. } | Error::NonFinite { .. } | Error::Backward(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Serializes `value` and hands it to Python's `json.loads`.
fn to_python<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(json_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Dense row-major `f64` tensor.
#[pyclass(name = "Tensor", module = "affseg", from_py_object)]
#[derive(Clone)]
pub struct PyTensor {
    pub inner: CoreTensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(data: Vec<f64>, shape: Vec<usize>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: CoreTensor::new(shape, data).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        PyTensor {
            inner: CoreTensor::zeros(&shape),
        }
    }

    #[staticmethod]
    fn full(shape: Vec<usize>, value: f64) -> Self {
        PyTensor {
            inner: CoreTensor::full(&shape, value),
        }
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    /// Flat row-major values.
    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn get(&self, index: Vec<usize>) -> PyResult<f64> {
        self.check_index(&index)?;
        Ok(self.inner.get(&index))
    }

    fn set(&mut self, index: Vec<usize>, value: f64) -> PyResult<()> {
        self.check_index(&index)?;
        self.inner.set(&index, value);
        Ok(())
    }

    fn reshape(&self, shape: Vec<usize>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.clone().reshape(&shape).map_err(to_py)?,
        })
    }

    fn sum(&self) -> f64 {
        self.inner.sum()
    }

    fn max_abs_diff(&self, other: &PyTensor) -> f64 {
        self.inner.max_abs_diff(&other.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &PyTensor) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

impl PyTensor {
    fn check_index(&self, index: &[usize]) -> PyResult<()> {
        let shape = self.inner.shape();
        if index.len() != shape.len() || index.iter().zip(shape).any(|(i, n)| i >= n) {
            return Err(PyIndexError::new_err(format!("index {index:?} out of range for shape {shape:?}")));
        }
        Ok(())
    }
}

fn wrap(t: CoreTensor) -> PyTensor {
    PyTensor { inner: t }
}

/// Node handle of a particular [`Graph`].
#[pyclass(name = "Var", module = "affseg", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
pub struct PyVar {
    graph: u64,
    var: CoreVar,
}

#[pymethods]
impl PyVar {
    #[getter]
    fn index(&self) -> usize {
        self.var.index()
    }

    fn __repr__(&self) -> String {
        format!("Var({})", self.var.index())
    }
}

static NEXT_GRAPH: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);

/// Tape of differentiable operations; call `backward` on a scalar node.
#[pyclass(name = "Graph", module = "affseg")]
pub struct PyGraph {
    id: u64,
    inner: CoreGraph,
}

impl PyGraph {
    fn var(&self, v: &PyVar) -> PyResult<CoreVar> {
        if v.graph != self.id {
            return Err(PyValueError::new_err("Var belongs to a different Graph"));
        }
        Ok(v.var)
    }

    fn out(&self, r: affseg::Result<CoreVar>) -> PyResult<PyVar> {
        Ok(PyVar {
            graph: self.id,
            var: r.map_err(to_py)?,
        })
    }
}

#[pymethods]
impl PyGraph {
    #[new]
    fn new() -> Self {
        PyGraph {
            id: NEXT_GRAPH.fetch_add(1, std::sync::atomic::Ordering::Relaxed),
            inner: CoreGraph::new(),
        }
    }

    fn constant(&mut self, value: &PyTensor) -> PyVar {
        let v = self.inner.constant(value.inner.clone());
        PyVar { graph: self.id, var: v }
    }

    /// A leaf that receives a gradient.
    fn param(&mut self, value: &PyTensor) -> PyVar {
        let v = self.inner.param(value.inner.clone());
        PyVar { graph: self.id, var: v }
    }

    fn value(&self, v: &PyVar) -> PyResult<PyTensor> {
        Ok(wrap(self.inner.value(self.var(v)?).clone()))
    }

    fn grad(&self, v: &PyVar) -> PyResult<Option<PyTensor>> {
        Ok(self.inner.grad(self.var(v)?).map(wrap))
    }

    fn backward(&mut self, loss: &PyVar) -> PyResult<()> {
        let l = self.var(loss)?;
        self.inner.backward(l).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[pyo3(signature = (input, weight, bias, stride = 1, padding = 1))]
    fn conv2d(&mut self, input: &PyVar, weight: &PyVar, bias: &PyVar, stride: usize, padding: usize) -> PyResult<PyVar> {
        let (x, w, b) = (self.var(input)?, self.var(weight)?, self.var(bias)?);
        let r = self.inner.conv2d(x, w, b, stride, padding);
        self.out(r)
    }

    fn maxpool2x2(&mut self, input: &PyVar) -> PyResult<PyVar> {
        let x = self.var(input)?;
        let r = self.inner.maxpool2x2(x);
        self.out(r)
    }

    fn upsample_nearest2x(&mut self, input: &PyVar) -> PyResult<PyVar> {
        let x = self.var(input)?;
        let r = self.inner.upsample_nearest2x(x);
        self.out(r)
    }

    fn relu(&mut self, input: &PyVar) -> PyResult<PyVar> {
        let x = self.var(input)?;
        let r = self.inner.relu(x);
        self.out(r)
    }

    fn sigmoid(&mut self, input: &PyVar) -> PyResult<PyVar> {
        let x = self.var(input)?;
        let r = self.inner.sigmoid(x);
        self.out(r)
    }

    fn tanh(&mut self, input: &PyVar) -> PyResult<PyVar> {
        let x = self.var(input)?;
        let r = self.inner.tanh(x);
        self.out(r)
    }

    /// Softmax over all spatial positions of a `1×H×W` map.
    fn softmax_spatial(&mut self, input: &PyVar) -> PyResult<PyVar> {
        let x = self.var(input)?;
        let r = self.inner.softmax_spatial(x);
        self.out(r)
    }

    fn concat_channels(&mut self, a: &PyVar, b: &PyVar) -> PyResult<PyVar> {
        let (a, b) = (self.var(a)?, self.var(b)?);
        let r = self.inner.concat_channels(a, b);
        self.out(r)
    }

    fn slice_channels(&mut self, input: &PyVar, start: usize, len: usize) -> PyResult<PyVar> {
        let x = self.var(input)?;
        let r = self.inner.slice_channels(x, start, len);
        self.out(r)
    }

    /// Multiplies every channel of `x` by a `1×H×W` mask.
    fn mul_broadcast_mask(&mut self, mask: &PyVar, x: &PyVar) -> PyResult<PyVar> {
        let (m, x) = (self.var(mask)?, self.var(x)?);
        let r = self.inner.mul_broadcast_mask(m, x);
        self.out(r)
    }

    fn add(&mut self, a: &PyVar, b: &PyVar) -> PyResult<PyVar> {
        let (a, b) = (self.var(a)?, self.var(b)?);
        let r = self.inner.add(a, b);
        self.out(r)
    }

    fn mul(&mut self, a: &PyVar, b: &PyVar) -> PyResult<PyVar> {
        let (a, b) = (self.var(a)?, self.var(b)?);
        let r = self.inner.mul(a, b);
        self.out(r)
    }

    fn scale(&mut self, input: &PyVar, factor: f64) -> PyResult<PyVar> {
        let x = self.var(input)?;
        let r = self.inner.scale(x, factor);
        self.out(r)
    }

    fn sum(&mut self, input: &PyVar) -> PyResult<PyVar> {
        let x = self.var(input)?;
        let r = self.inner.sum(x);
        self.out(r)
    }

    fn linear(&mut self, x: &PyVar, weight: &PyVar, bias: &PyVar) -> PyResult<PyVar> {
        let (x, w, b) = (self.var(x)?, self.var(weight)?, self.var(bias)?);
        let r = self.inner.linear(x, w, b);
        self.out(r)
    }

    fn global_avg_pool(&mut self, input: &PyVar) -> PyResult<PyVar> {
        let x = self.var(input)?;
        let r = self.inner.global_avg_pool(x);
        self.out(r)
    }

    fn pixelwise_cross_entropy(&mut self, logits: &PyVar, target: Vec<usize>) -> PyResult<PyVar> {
        let x = self.var(logits)?;
        let r = self.inner.pixelwise_cross_entropy(x, &target);
        self.out(r)
    }

    fn cross_entropy(&mut self, logits: &PyVar, target: usize) -> PyResult<PyVar> {
        let x = self.var(logits)?;
        let r = self.inner.cross_entropy(x, target);
        self.out(r)
    }
}

/// Architecture and input settings; see `ModelConfig.to_json()` for the fields.
#[pyclass(name = "ModelConfig", module = "affseg", from_py_object)]
#[derive(Clone)]
pub struct PyModelConfig {
    pub inner: ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    #[new]
    #[pyo3(signature = (height = None, width = None, base_width = None, variant = None))]
    fn new(height: Option<usize>, width: Option<usize>, base_width: Option<usize>, variant: Option<&str>) -> PyResult<Self> {
        let mut c = ModelConfig::default();
        c.height = height.unwrap_or(c.height);
        c.width = width.unwrap_or(c.width);
        c.base_width = base_width.unwrap_or(c.base_width);
        if let Some(v) = variant {
            c = c.with_variant(v.parse::<Variant>().map_err(to_py)?);
        }
        c.validate().map_err(to_py)?;
        Ok(PyModelConfig { inner: c })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let c: ModelConfig = serde_json::from_str(text).map_err(json_err)?;
        c.validate().map_err(to_py)?;
        Ok(PyModelConfig { inner: c })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(json_err)
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn base_width(&self) -> usize {
        self.inner.base_width
    }

    /// Ablation variant name, or None for a custom combination.
    #[getter]
    fn variant(&self) -> Option<&'static str> {
        self.inner.variant().map(Variant::name)
    }

    #[getter]
    fn seg_channels(&self) -> usize {
        self.inner.seg_channels()
    }

    fn __eq__(&self, other: &PyModelConfig) -> bool {
        self.inner == other.inner
    }
}

/// Optimizer, schedule and seed settings.
#[pyclass(name = "TrainConfig", module = "affseg", from_py_object)]
#[derive(Clone)]
pub struct PyTrainConfig {
    pub inner: TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    #[staticmethod]
    fn paper() -> Self {
        PyTrainConfig {
            inner: TrainConfig::paper(),
        }
    }

    #[staticmethod]
    fn desk() -> Self {
        PyTrainConfig {
            inner: TrainConfig::desk(),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let c: TrainConfig = serde_json::from_str(text).map_err(json_err)?;
        c.validate().map_err(to_py)?;
        Ok(PyTrainConfig { inner: c })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(json_err)
    }

    /// Copy with a new epoch budget and the schedule switch moved to match.
    fn with_epochs(&self, epochs: usize) -> PyResult<Self> {
        let c = self.inner.clone().with_epochs(epochs);
        c.validate().map_err(to_py)?;
        Ok(PyTrainConfig { inner: c })
    }

    fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.inner.clone();
        c.seed = seed;
        PyTrainConfig { inner: c }
    }

    fn with_batch_size(&self, batch_size: usize) -> PyResult<Self> {
        let mut c = self.inner.clone();
        c.batch_size = batch_size;
        c.validate().map_err(to_py)?;
        Ok(PyTrainConfig { inner: c })
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    #[getter]
    fn schedule_switch_epoch(&self) -> usize {
        self.inner.schedule_switch_epoch
    }

    #[getter]
    fn learning_rate(&self) -> f64 {
        self.inner.learning_rate
    }

    /// `(λ_seg, λ_action)` used in `epoch`.
    fn lambdas(&self, epoch: usize) -> PyResult<(f64, f64)> {
        trainer::lambda_schedule(epoch, &self.inner).map_err(to_py)
    }
}

/// RGB-D frames with the last-frame affordance annotation.
#[pyclass(name = "Sequence", module = "affseg", from_py_object)]
#[derive(Clone)]
pub struct PySequence {
    pub inner: InteractionSequence,
}

#[pymethods]
impl PySequence {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PySequence {
            inner: data::load_sequence(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        data::save_sequence(&self.inner, &path).map_err(to_py)
    }

    #[getter]
    fn num_frames(&self) -> usize {
        self.inner.frames.len()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn action(&self) -> &'static str {
        data::ACTIONS[self.inner.action]
    }

    #[getter]
    fn object(&self) -> &str {
        &self.inner.object
    }

    #[getter]
    fn fps(&self) -> u32 {
        self.inner.fps
    }

    /// Last-frame label per pixel, row-major.
    #[getter]
    fn affordance_mask(&self) -> Vec<u8> {
        self.inner.affordance_mask.clone()
    }

    /// `(rgb 3×H×W, depth 1×H×W)` of frame `index`, both in `[0, 1]`.
    fn frame(&self, index: usize) -> PyResult<(PyTensor, PyTensor)> {
        let f = self
            .inner
            .frames
            .get(index)
            .ok_or_else(|| PyIndexError::new_err(format!("frame {index} of {}", self.inner.frames.len())))?;
        Ok((wrap(f.rgb.clone()), wrap(f.depth.clone())))
    }

    /// Registers, subsamples and stacks the sequence into model input.
    #[pyo3(signature = (config, target_fps = 10))]
    fn preprocess(&self, config: &PyModelConfig, target_fps: u32) -> PyResult<PyBatch> {
        let pc = PreprocessConfig {
            target_fps,
            ..PreprocessConfig::from_model(&config.inner)
        };
        Ok(PyBatch {
            inner: data::preprocess(&self.inner, &pc).map_err(to_py)?,
        })
    }
}

/// Model-ready input frames and last-frame targets.
#[pyclass(name = "Batch", module = "affseg", from_py_object)]
#[derive(Clone)]
pub struct PyBatch {
    pub inner: SequenceBatch,
}

#[pymethods]
impl PyBatch {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn label_mask(&self) -> Vec<usize> {
        self.inner.label_mask.clone()
    }

    #[getter]
    fn action(&self) -> usize {
        self.inner.action
    }

    fn last_frame_only(&self) -> Self {
        PyBatch {
            inner: self.inner.last_frame_only(),
        }
    }
}

fn batches(items: &[PyBatch]) -> Vec<SequenceBatch> {
    items.iter().map(|b| b.inner.clone()).collect()
}

#[pyfunction]
#[pyo3(signature = (affordance, seed, frames = 12, size = 64, object = None))]
fn generate_synthetic_sequence(affordance: &str, seed: u64, frames: usize, size: usize, object: Option<String>) -> PyResult<PySequence> {
    let spec = SyntheticSpec {
        object,
        frames,
        height: size,
        width: size,
        ..SyntheticSpec::new(affordance)
    };
    Ok(PySequence {
        inner: data::generate_synthetic_sequence(&spec, seed).map_err(to_py)?,
    })
}

fn frame(rgb: &PyTensor, depth: &PyTensor) -> PyResult<RgbdFrame> {
    RgbdFrame::new(rgb.inner.clone(), depth.inner.clone()).map_err(to_py)
}

/// Scene flow between two RGB-D frames as a `3×H×W` tensor of `(vx, vy, vz)`.
#[pyfunction]
fn estimate_scene_flow(prev_rgb: &PyTensor, prev_depth: &PyTensor, next_rgb: &PyTensor, next_depth: &PyTensor) -> PyResult<PyTensor> {
    let prev = frame(prev_rgb, prev_depth)?;
    let next = frame(next_rgb, next_depth)?;
    let k = CameraIntrinsics::for_image(prev.height(), prev.width());
    let f = flow::estimate_scene_flow(&prev, &next, &k).map_err(to_py)?;
    let t = CoreTensor::new(vec![3, f.height(), f.width()], f.planes().to_vec()).map_err(to_py)?;
    Ok(wrap(t))
}

/// 8-bit colorization of a `3×H×W` flow tensor; zero motion maps to 128.
#[pyfunction]
fn colorize_flow(flow: &PyTensor) -> PyResult<Vec<u8>> {
    let (c, h, w) = flow.inner.dims3("colorize_flow").map_err(to_py)?;
    if c != 3 {
        return Err(PyValueError::new_err(format!("expected 3 flow planes, got {c}")));
    }
    let field = FlowField::from_planes(h, w, flow.inner.data().to_vec()).map_err(to_py)?;
    Ok(flow::colorize_flow(&field).data)
}

/// IoU and F1 of every non-background class, for labels in `0..classes`.
#[pyfunction]
fn segmentation_scores<'py>(py: Python<'py>, pred: Vec<usize>, gt: Vec<usize>, classes: usize) -> PyResult<Bound<'py, PyDict>> {
    let mut counts = ConfusionCounts::new(classes);
    counts.accumulate(&pred, &gt).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("iou", (1..classes).map(|c| counts.iou(c)).collect::<Vec<_>>())?;
    d.set_item("f1", (1..classes).map(|c| counts.f_score(c)).collect::<Vec<_>>())?;
    Ok(d)
}

/// Weighted F over the nine affordance classes.
#[pyfunction]
fn weighted_f(per_class_f: Vec<f64>) -> PyResult<f64> {
    metrics::weighted_f(&per_class_f).map_err(to_py)
}

/// Network with its parameters.
#[pyclass(name = "Model", module = "affseg", from_py_object)]
#[derive(Clone)]
pub struct PyModel {
    pub inner: AffordanceModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (config, seed = 0))]
    fn new(config: &PyModelConfig, seed: u64) -> PyResult<Self> {
        Ok(PyModel {
            inner: AffordanceModel::new(&config.inner, seed).map_err(to_py)?,
        })
    }

    #[getter]
    fn config(&self) -> PyModelConfig {
        PyModelConfig {
            inner: self.inner.config().clone(),
        }
    }

    fn param_names(&self) -> Vec<String> {
        self.inner.params().names().to_vec()
    }

    fn param(&self, name: &str) -> PyResult<PyTensor> {
        self.inner
            .params()
            .get(name)
            .map(|t| wrap(t.clone()))
            .ok_or_else(|| PyValueError::new_err(format!("no parameter `{name}`")))
    }

    fn set_param(&mut self, name: &str, value: &PyTensor) -> PyResult<()> {
        let slot = self
            .inner
            .params_mut()
            .get_mut(name)
            .ok_or_else(|| PyValueError::new_err(format!("no parameter `{name}`")))?;
        if slot.shape() != value.inner.shape() {
            return Err(PyValueError::new_err(format!(
                "`{name}` has shape {:?}, got {:?}",
                slot.shape(),
                value.inner.shape()
            )));
        }
        *slot = value.inner.clone();
        Ok(())
    }

    /// `{"total", "seg", "action"}` for one sequence.
    #[pyo3(signature = (batch, lambda_seg = 0.2, lambda_action = 0.8))]
    fn loss<'py>(&self, py: Python<'py>, batch: &PyBatch, lambda_seg: f64, lambda_action: f64) -> PyResult<Bound<'py, PyDict>> {
        let l = self.inner.loss(&batch.inner, lambda_seg, lambda_action).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("total", l.total)?;
        d.set_item("seg", l.seg)?;
        d.set_item("action", l.action)?;
        Ok(d)
    }

    /// Last-frame labels and confidences, the action and, when attention is
    /// enabled, the final attention mask.
    fn predict<'py>(&self, py: Python<'py>, batch: &PyBatch) -> PyResult<Bound<'py, PyDict>> {
        let p = self.inner.predict(&batch.inner).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("labels", p.labels)?;
        d.set_item("confidence", p.confidence)?;
        d.set_item("action", p.action)?;
        d.set_item("action_probs", p.action_probs)?;
        d.set_item("mask", p.mask.map(wrap))?;
        Ok(d)
    }

    /// Single-image prediction with zero motion; pixels at or below the
    /// threshold are background.
    #[pyo3(signature = (appearance, threshold = 0.75))]
    fn infer_static(&self, appearance: &PyTensor, threshold: f64) -> PyResult<(Vec<usize>, Vec<f64>)> {
        self.inner.infer_static(&appearance.inner, threshold).map_err(to_py)
    }

    /// Metrics report over `batches`; mode is "video" or "static".
    #[pyo3(signature = (batches, mode = "video"))]
    fn evaluate<'py>(&self, py: Python<'py>, batches: Vec<PyBatch>, mode: &str) -> PyResult<Bound<'py, PyAny>> {
        let mode = match mode {
            "video" => EvalMode::Video,
            "static" => EvalMode::Static,
            other => return Err(PyValueError::new_err(format!("unknown mode `{other}`"))),
        };
        let report = metrics::evaluate(&self.inner, &self::batches(&batches), mode).map_err(to_py)?;
        to_python(py, &report)
    }
}

/// Model, optimizer state, RNG and loss history of a training run.
#[pyclass(name = "Trainer", module = "affseg")]
pub struct PyTrainer {
    inner: TrainState,
}

#[pymethods]
impl PyTrainer {
    #[new]
    fn new(model_config: &PyModelConfig, train_config: &PyTrainConfig) -> PyResult<Self> {
        Ok(PyTrainer {
            inner: TrainState::new(&model_config.inner, &train_config.inner).map_err(to_py)?,
        })
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch
    }

    fn is_finished(&self) -> bool {
        self.inner.is_finished()
    }

    /// Trains one epoch and returns its record.
    fn run_epoch<'py>(&mut self, py: Python<'py>, batches: Vec<PyBatch>) -> PyResult<Bound<'py, PyAny>> {
        let r = self.inner.run_epoch(&self::batches(&batches)).map_err(to_py)?;
        to_python(py, &r)
    }

    /// Trains until the configured epoch budget is spent.
    fn run(&mut self, batches: Vec<PyBatch>) -> PyResult<()> {
        self.inner.run(&self::batches(&batches), |_| Ok(())).map_err(to_py)
    }

    #[getter]
    fn history<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &self.inner.history)
    }

    fn history_csv(&self) -> String {
        trainer::history_csv(&self.inner.history)
    }

    #[getter]
    fn model(&self) -> PyModel {
        PyModel {
            inner: self.inner.model.clone(),
        }
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = trainer::encode_checkpoint(&self.inner).map_err(to_py)?;
        Ok(PyBytes::new(py, &bytes))
    }

    #[staticmethod]
    fn from_bytes(bytes: &[u8]) -> PyResult<Self> {
        Ok(PyTrainer {
            inner: trainer::decode_checkpoint(bytes).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        trainer::save_checkpoint(&self.inner, &path).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyTrainer {
            inner: trainer::load_checkpoint(&path).map_err(to_py)?,
        })
    }
}

/// Pixel-wise plus sequence cross-entropy of raw logits, weighted by the λ pair.
#[pyfunction]
fn total_loss(seg_logits: &PyTensor, labels: Vec<usize>, action_logits: &PyTensor, action: usize, lambda_seg: f64, lambda_action: f64) -> PyResult<f64> {
    let mut g = CoreGraph::new();
    let s = g.constant(seg_logits.inner.clone());
    let a = g.constant(action_logits.inner.clone());
    let l = affseg::model::total_loss(&mut g, s, a, &labels, action, lambda_seg, lambda_action).map_err(to_py)?;
    Ok(g.value(l.total).item())
}

#[pymodule]
#[pyo3(name = "affseg")]
pub fn affseg_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyVar>()?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PySequence>()?;
    m.add_class::<PyBatch>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_scene_flow, m)?)?;
    m.add_function(wrap_pyfunction!(colorize_flow, m)?)?;
    m.add_function(wrap_pyfunction!(segmentation_scores, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_f, m)?)?;
    m.add_function(wrap_pyfunction!(total_loss, m)?)?;
    m.add("AFFORDANCES", data::AFFORDANCES.to_vec())?;
    m.add("ACTIONS", data::ACTIONS.to_vec())?;
    m.add("VARIANTS", Variant::ALL.iter().map(|v| v.name()).collect::<Vec<_>>())?;
    Ok(())
}

//! Python bindings: datasets, model training, forget-vector optimization,
//! composition, evaluation and artifact persistence.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;
use unlearn_core::composition::{self, CompositionConfig, CompositionWeights};
use unlearn_core::data::{self, split_forget_retain};
use unlearn_core::evaluation::{self, EvalSets, ReportMeta};
use unlearn_core::nn::{train_classifier, TrainConfig};
use unlearn_core::{persist, ForgetVectorConfig, Matrix, SplitSpec};

create_exception!(unlearn_fv, UnlearnError, PyException);
create_exception!(unlearn_fv, IntegrityError, UnlearnError);
create_exception!(unlearn_fv, DivergenceError, UnlearnError);

fn to_py(e: unlearn_core::Error) -> PyErr {
    use unlearn_core::Error as E;
    match e {
        E::Shape(_) | E::Input(_) | E::Config(_) | E::Compatibility(_) => {
            PyValueError::new_err(e.to_string())
        }
        E::Integrity(_) => IntegrityError::new_err(e.to_string()),
        E::Divergence { .. } => DivergenceError::new_err(e.to_string()),
        E::Io(io) => PyOSError::new_err(io.to_string()),
        other => UnlearnError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for unlearn_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn matrix(rows: Vec<Vec<f64>>, cols: usize) -> PyResult<Matrix> {
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, cols));
    }
    Matrix::from_rows(&rows).py()
}

/// Labeled feature rows with values in [0, 1].
#[pyclass(module = "unlearn_fv", skip_from_py_object)]
#[derive(Clone)]
struct Dataset(data::LabeledDataset);

#[pymethods]
impl Dataset {
    #[new]
    #[pyo3(signature = (features, labels, class_count))]
    fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, class_count: usize) -> PyResult<Self> {
        let cols = features.first().map_or(0, Vec::len);
        let x = matrix(features, cols)?;
        data::LabeledDataset::new(x, labels, class_count, None)
            .py()
            .map(Self)
    }

    /// Isotropic Gaussian clusters.
    #[staticmethod]
    #[pyo3(signature = (classes=5, dim=16, per_class=200, center_scale=3.0, sigma=0.3, seed=0))]
    fn blobs(
        classes: usize,
        dim: usize,
        per_class: usize,
        center_scale: f64,
        sigma: f64,
        seed: u64,
    ) -> PyResult<Self> {
        data::make_blobs(classes, dim, per_class, center_scale, sigma, seed)
            .py()
            .map(Self)
    }

    /// Noisy binary templates on an `edge` x `edge` grid.
    #[staticmethod]
    #[pyo3(signature = (classes=10, edge=16, per_class=200, noise_sigma=0.1, seed=0))]
    fn patterns(
        classes: usize,
        edge: usize,
        per_class: usize,
        noise_sigma: f64,
        seed: u64,
    ) -> PyResult<Self> {
        data::make_patterns(classes, edge, per_class, noise_sigma, seed)
            .py()
            .map(Self)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.0.class_count
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.0.labels.clone()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.0.features.to_rows()
    }

    fn train_test_split(&self, test_fraction: f64, seed: u64) -> PyResult<(Dataset, Dataset)> {
        let (a, b) = self.0.train_test_split(test_fraction, seed).py()?;
        Ok((Self(a), Self(b)))
    }

    fn content_hash(&self) -> String {
        self.0.content_hash()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(rows={}, dim={}, classes={})",
            self.0.len(),
            self.0.dim(),
            self.0.class_count
        )
    }
}

/// Partition of training rows into forget and retain indices.
#[pyclass(module = "unlearn_fv", skip_from_py_object)]
#[derive(Clone)]
struct Split(data::ForgetSplit);

#[pymethods]
impl Split {
    #[staticmethod]
    fn class_wise(data: &Dataset, class_: usize) -> PyResult<Self> {
        split_forget_retain(&data.0, &SplitSpec::ClassWise { class: class_ })
            .py()
            .map(Self)
    }

    #[staticmethod]
    #[pyo3(signature = (data, ratio, seed=0))]
    fn random(data: &Dataset, ratio: f64, seed: u64) -> PyResult<Self> {
        split_forget_retain(&data.0, &SplitSpec::Random { ratio, seed })
            .py()
            .map(Self)
    }

    #[staticmethod]
    #[pyo3(signature = (data, classes, ratio, seed=0))]
    fn random_in_classes(
        data: &Dataset,
        classes: Vec<usize>,
        ratio: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = SplitSpec::RandomInClasses {
            classes,
            ratio,
            seed,
        };
        split_forget_retain(&data.0, &spec).py().map(Self)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        data::ForgetSplit::from_json(text).py().map(Self)
    }

    #[getter]
    fn forget_indices(&self) -> Vec<usize> {
        self.0.forget_indices.clone()
    }

    #[getter]
    fn retain_indices(&self) -> Vec<usize> {
        self.0.retain_indices.clone()
    }

    #[getter]
    fn is_class_wise(&self) -> bool {
        self.0.spec.forgotten_class().is_some()
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().py()
    }
}

/// Frozen MLP classifier.
#[pyclass(module = "unlearn_fv", skip_from_py_object)]
#[derive(Clone)]
struct Model(unlearn_core::ClassifierModel);

#[pymethods]
impl Model {
    /// Trains a fresh ReLU network with the given hidden widths. Parameters
    /// are rounded to f32 so saved checkpoints reload bit for bit.
    #[staticmethod]
    #[pyo3(signature = (data, hidden=vec![64], epochs=30, learning_rate=0.05, momentum=0.9, batch_size=32, weight_decay=5e-4, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        data: &Dataset,
        hidden: Vec<usize>,
        epochs: usize,
        learning_rate: f64,
        momentum: f64,
        batch_size: usize,
        weight_decay: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let mut dims = vec![data.0.dim()];
        dims.extend(hidden);
        dims.push(data.0.class_count);
        let cfg = TrainConfig {
            epochs,
            learning_rate,
            momentum,
            batch_size,
            weight_decay,
            seed,
        };
        let model = train_classifier(&data.0.features, &data.0.labels, &dims, &cfg).py()?;
        Ok(Self(model.round_to_f32()))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        persist::load_model(&path).py().map(Self)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        persist::save_model(&path, &self.0).py()
    }

    #[pyo3(signature = (features, vector=None))]
    fn predict(
        &self,
        features: Vec<Vec<f64>>,
        vector: Option<&ForgetVector>,
    ) -> PyResult<Vec<usize>> {
        let x = matrix(features, self.0.input_dim())?;
        let x = match vector {
            Some(v) => x.add_row_vector(&v.0.delta).py()?,
            None => x,
        };
        self.0.predict(&x).py()
    }

    fn logits(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix(features, self.0.input_dim())?;
        Ok(self.0.forward_logits(&x).py()?.to_rows())
    }

    #[pyo3(signature = (data, vector=None))]
    fn accuracy(&self, data: &Dataset, vector: Option<&ForgetVector>) -> PyResult<f64> {
        evaluation::accuracy(
            &self.0,
            &data.0.features,
            &data.0.labels,
            vector.map(|v| &v.0),
        )
        .py()
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.0.dims().to_vec()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.0.param_count()
    }

    fn checksum(&self) -> String {
        self.0.checksum()
    }
}

/// Additive input perturbation that steers the model to forget.
#[pyclass(module = "unlearn_fv", skip_from_py_object)]
#[derive(Clone)]
struct ForgetVector(unlearn_core::ForgetVector);

#[pymethods]
impl ForgetVector {
    #[new]
    fn new(delta: Vec<f64>) -> Self {
        Self(unlearn_core::ForgetVector::direct(delta))
    }

    /// Returns the vector and the fingerprint of the model it was saved for.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<(Self, Option<String>)> {
        let (fv, fingerprint) = persist::load_vector(&path).py()?;
        Ok((Self(fv), fingerprint))
    }

    #[pyo3(signature = (path, seed=0, model=None))]
    fn save(&self, path: PathBuf, seed: u64, model: Option<&Model>) -> PyResult<()> {
        let fingerprint = model.map(|m| m.0.checksum());
        persist::save_vector(&path, &self.0, seed, fingerprint.as_deref()).py()
    }

    #[getter]
    fn delta(&self) -> Vec<f64> {
        self.0.delta.clone()
    }

    /// Composition weights when the vector was composed, else None.
    #[getter]
    fn weights(&self) -> Option<Vec<f64>> {
        match &self.0.provenance {
            unlearn_core::Provenance::Composed { weights } => Some(weights.clone()),
            unlearn_core::Provenance::Direct => None,
        }
    }

    fn __len__(&self) -> usize {
        self.0.dim()
    }

    fn norm(&self) -> f64 {
        self.0.norm()
    }
}

fn fv_config(
    split: &Split,
    overrides: [Option<f64>; 4],
    iterations: Option<usize>,
    seed: u64,
) -> ForgetVectorConfig {
    let mut cfg = if split.0.spec.forgotten_class().is_some() {
        ForgetVectorConfig::class_wise()
    } else {
        ForgetVectorConfig::random()
    };
    let [tau, lambda1, lambda2, lr0] = overrides;
    cfg.tau = tau.unwrap_or(cfg.tau);
    cfg.lambda1 = lambda1.unwrap_or(cfg.lambda1);
    cfg.lambda2 = lambda2.unwrap_or(cfg.lambda2);
    cfg.lr0 = lr0.unwrap_or(cfg.lr0);
    cfg.max_iterations = iterations.unwrap_or(cfg.max_iterations);
    cfg.seed = seed;
    cfg
}

type Trace = Vec<(usize, f64, f64, f64)>;

/// Optimizes a forget vector against a frozen model. Returns the vector and
/// a per-iteration trace of `(iteration, loss, ua, ra)`.
#[pyfunction]
#[pyo3(signature = (model, data, split, tau=None, lambda1=None, lambda2=None, lr0=None, iterations=None, seed=0))]
#[allow(clippy::too_many_arguments)]
fn optimize_forget_vector(
    model: &Model,
    data: &Dataset,
    split: &Split,
    tau: Option<f64>,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    lr0: Option<f64>,
    iterations: Option<usize>,
    seed: u64,
) -> PyResult<(ForgetVector, Trace)> {
    let cfg = fv_config(split, [tau, lambda1, lambda2, lr0], iterations, seed);
    let (fv, trace) =
        unlearn_core::optimize_forget_vector(&model.0, &data.0, &split.0, &cfg).py()?;
    let trace = trace
        .into_iter()
        .map(|t| (t.iteration, t.loss, t.ua, t.ra))
        .collect();
    Ok((ForgetVector(fv.round_to_f32()), trace))
}

/// Unlearning metrics in percent, with gaps when scored against a reference.
#[pyclass(module = "unlearn_fv", skip_from_py_object)]
#[derive(Clone)]
struct Report(evaluation::UnlearnReport);

#[pymethods]
impl Report {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        evaluation::UnlearnReport::from_json(text).py().map(Self)
    }

    #[getter]
    fn method(&self) -> String {
        self.0.method.clone()
    }

    #[getter]
    fn ua(&self) -> f64 {
        self.0.ua
    }

    #[getter]
    fn mia_efficacy(&self) -> f64 {
        self.0.mia_efficacy
    }

    #[getter]
    fn ra(&self) -> f64 {
        self.0.ra
    }

    #[getter]
    fn ta(&self) -> f64 {
        self.0.ta
    }

    #[getter]
    fn avg_gap(&self) -> Option<f64> {
        self.0.avg_gap
    }

    /// `(ua, mia_efficacy, ra, ta)` gaps, or None without a reference.
    #[getter]
    fn gaps(&self) -> Option<(f64, f64, f64, f64)> {
        self.0.gaps.map(|g| (g.ua, g.mia_efficacy, g.ra, g.ta))
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.0.param_count
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().py()
    }

    fn __repr__(&self) -> String {
        self.0.to_string()
    }
}

/// Scores a model, optionally with a forget vector applied, on the forget,
/// retain and test sets of a split.
#[pyfunction]
#[pyo3(signature = (model, train, test, split, vector=None, reference=None, method="forget_vector", seed=0))]
#[allow(clippy::too_many_arguments)]
fn evaluate(
    model: &Model,
    train: &Dataset,
    test: &Dataset,
    split: &Split,
    vector: Option<&ForgetVector>,
    reference: Option<&Report>,
    method: &str,
    seed: u64,
) -> PyResult<Report> {
    let sets = EvalSets::resolve(&train.0, &test.0, &split.0, seed).py()?;
    let meta = ReportMeta {
        method: method.to_string(),
        seed,
        param_count: vector.map_or(model.0.param_count(), |v| v.0.dim()),
        runtime_s: None,
    };
    evaluation::evaluate(
        &model.0,
        vector.map(|v| &v.0),
        &sets,
        reference.map(|r| &r.0),
        meta,
    )
    .py()
    .map(Report)
}

/// One class-wise forget vector per class, bound to a model.
#[pyclass(module = "unlearn_fv", skip_from_py_object)]
#[derive(Clone)]
struct VectorBank(composition::ClassVectorBank);

#[pymethods]
impl VectorBank {
    #[staticmethod]
    #[pyo3(signature = (model, data, seed=0))]
    fn build(model: &Model, data: &Dataset, seed: u64) -> PyResult<Self> {
        let cfg = ForgetVectorConfig {
            seed,
            ..ForgetVectorConfig::class_wise()
        };
        let bank = composition::ClassVectorBank::build(&model.0, &data.0, &cfg).py()?;
        Ok(Self(bank.round_to_f32()))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        persist::load_bank(&path).py().map(Self)
    }

    #[pyo3(signature = (path, seed=0))]
    fn save(&self, path: PathBuf, seed: u64) -> PyResult<()> {
        persist::save_bank(&path, &self.0, seed).py()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    /// Weighted sum of the bank's vectors.
    fn compose(&self, model: &Model, weights: Vec<f64>) -> PyResult<ForgetVector> {
        composition::compose(&self.0, &model.0, &CompositionWeights { w: weights })
            .py()
            .map(ForgetVector)
    }

    /// Learns composition weights for a split; returns the weights and the
    /// composed vector.
    #[pyo3(signature = (model, data, split, seed=0))]
    fn optimize_weights(
        &self,
        model: &Model,
        data: &Dataset,
        split: &Split,
        seed: u64,
    ) -> PyResult<(Vec<f64>, ForgetVector)> {
        let cfg = CompositionConfig {
            seed,
            ..CompositionConfig::default()
        };
        let (w, fv, _) =
            composition::optimize_weights(&model.0, &self.0, &data.0, &split.0, &cfg).py()?;
        Ok((w.w, ForgetVector(fv.round_to_f32())))
    }
}

#[pymodule]
fn unlearn_fv(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Split>()?;
    m.add_class::<Model>()?;
    m.add_class::<ForgetVector>()?;
    m.add_class::<Report>()?;
    m.add_class::<VectorBank>()?;
    m.add_function(wrap_pyfunction!(optimize_forget_vector, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("UnlearnError", m.py().get_type::<UnlearnError>())?;
    m.add("IntegrityError", m.py().get_type::<IntegrityError>())?;
    m.add("DivergenceError", m.py().get_type::<DivergenceError>())?;
    Ok(())
}

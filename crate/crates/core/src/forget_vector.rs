//! Universal additive input perturbations that make a frozen classifier
//! forget a data subset.
//!
//! The objective for a perturbation `delta` is
//!
//! ```text
//! mean_{(x,y) in forget} max(f_y(x+delta) - max_{k!=y} f_k(x+delta), -tau)
//!   + lambda1 * CE(retain, x+delta)
//!   + lambda2 * ||delta||^2
//! ```
//!
//! minimized by momentum SGD with an exponentially decaying learning rate.
//! The model itself is never modified.

use serde::{Deserialize, Serialize};

use crate::data::{ForgetSplit, LabeledDataset};
use crate::error::{Error, Result};
use crate::evaluation::accuracy;
use crate::loss::{margin_loss_from_logits, LossSpec};
use crate::nn::{input_gradient, ClassifierModel};
use crate::optim::{paired_batch_descent, SgdSchedule};
use crate::tensor::{squared_norm, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Direct,
    Composed { weights: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForgetVectorConfig {
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr0: f64,
    pub momentum: f64,
    pub decay: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for ForgetVectorConfig {
    fn default() -> Self {
        Self::class_wise()
    }
}

impl ForgetVectorConfig {
    /// Defaults for forgetting one whole class (retain weight 3).
    pub fn class_wise() -> Self {
        Self {
            tau: 1.0,
            lambda1: 3.0,
            lambda2: 1.0,
            lr0: 0.1,
            momentum: 0.9,
            decay: 0.9,
            batch_size: 256,
            max_iterations: 40,
            seed: 0,
        }
    }

    /// Defaults for forgetting a random subset (retain weight 1).
    pub fn random() -> Self {
        Self {
            lambda1: 1.0,
            ..Self::class_wise()
        }
    }

    pub fn schedule(&self) -> SgdSchedule {
        SgdSchedule {
            lr0: self.lr0,
            momentum: self.momentum,
            decay: self.decay,
            batch_size: self.batch_size,
            max_iterations: self.max_iterations,
            seed: self.seed,
        }
    }

    pub fn weights(&self) -> ObjectiveWeights {
        ObjectiveWeights {
            tau: self.tau,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        self.schedule().validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForgetVector {
    pub delta: Vec<f64>,
    pub provenance: Provenance,
    pub config: Option<ForgetVectorConfig>,
}

impl ForgetVector {
    pub fn direct(delta: Vec<f64>) -> Self {
        Self {
            delta,
            provenance: Provenance::Direct,
            config: None,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::direct(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.delta.len()
    }

    pub fn norm(&self) -> f64 {
        squared_norm(&self.delta).sqrt()
    }

    pub fn negated(&self) -> Self {
        Self {
            delta: self.delta.iter().map(|v| -v).collect(),
            ..self.clone()
        }
    }

    /// Rounds every entry to the nearest `f32`, matching what a vector file
    /// stores.
    pub fn round_to_f32(&self) -> Self {
        Self {
            delta: self.delta.iter().map(|&v| v as f32 as f64).collect(),
            ..self.clone()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.delta.iter().all(|v| v.is_finite())
    }
}

/// `x + delta` on every row; clipped to `[0, 1]` only when `clamp` is set
/// and the data is image-shaped.
pub fn apply_perturbation(
    x: &Matrix,
    fv: &ForgetVector,
    clamp: bool,
    image: bool,
) -> Result<Matrix> {
    let mut out = x.add_row_vector(&fv.delta)?;
    if clamp && image {
        out.map_inplace(|v| v.clamp(0.0, 1.0));
    }
    Ok(out)
}

/// Mean clamped logit margin of `labels` on already-perturbed inputs.
pub fn margin_loss(
    model: &ClassifierModel,
    x_perturbed: &Matrix,
    labels: &[usize],
    tau: f64,
) -> Result<f64> {
    let logits = model.forward_logits(x_perturbed)?;
    margin_loss_from_logits(&logits, labels, tau)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::config(format!(
                "tau, lambda1 and lambda2 must be nonnegative: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    pub forget_term: f64,
    pub retain_term: f64,
    pub norm_term: f64,
    /// Gradient with respect to `delta`.
    pub grad: Vec<f64>,
}

/// Full unlearning objective and its gradient with respect to `delta`.
///
/// The retain batch may be empty only when `lambda1 == 0`.
pub fn unlearn_objective(
    model: &ClassifierModel,
    delta: &[f64],
    forget: (&Matrix, &[usize]),
    retain: (&Matrix, &[usize]),
    weights: &ObjectiveWeights,
) -> Result<ObjectiveValue> {
    weights.validate()?;
    if forget.0.rows() == 0 {
        return Err(Error::input("the forget batch is empty"));
    }
    let xf = forget.0.add_row_vector(delta)?;
    let (forget_term, gx) =
        input_gradient(model, &xf, forget.1, &LossSpec::Margin { tau: weights.tau })?;
    let mut grad = gx.column_sums();

    let mut retain_term = 0.0;
    if weights.lambda1 != 0.0 {
        if retain.0.rows() == 0 {
            return Err(Error::input(
                "a retain batch is required when the retain weight is nonzero",
            ));
        }
        let xr = retain.0.add_row_vector(delta)?;
        let (ce, gr) = input_gradient(model, &xr, retain.1, &LossSpec::CrossEntropy)?;
        retain_term = ce;
        for (g, r) in grad.iter_mut().zip(gr.column_sums()) {
            *g += weights.lambda1 * r;
        }
    }

    let norm_term = squared_norm(delta);
    for (g, d) in grad.iter_mut().zip(delta) {
        *g += 2.0 * weights.lambda2 * d;
    }
    Ok(ObjectiveValue {
        value: forget_term + weights.lambda1 * retain_term + weights.lambda2 * norm_term,
        forget_term,
        retain_term,
        norm_term,
        grad,
    })
}

/// Per-iteration optimization record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub loss: f64,
    pub ua: f64,
    pub ra: f64,
}

pub(crate) fn trace_entry(
    model: &ClassifierModel,
    forget: &LabeledDataset,
    retain: &LabeledDataset,
    fv: &ForgetVector,
    iteration: usize,
    loss: f64,
) -> Result<TraceEntry> {
    let ua = 100.0 - accuracy(model, &forget.features, &forget.labels, Some(fv))?;
    let ra = if retain.is_empty() {
        f64::NAN
    } else {
        accuracy(model, &retain.features, &retain.labels, Some(fv))?
    };
    Ok(TraceEntry {
        iteration,
        loss,
        ua,
        ra,
    })
}

/// Optimizes a forget vector for `split` against the frozen `model`,
/// starting from zero. Returns the vector and a per-iteration trace.
pub fn optimize_forget_vector(
    model: &ClassifierModel,
    train: &LabeledDataset,
    split: &ForgetSplit,
    cfg: &ForgetVectorConfig,
) -> Result<(ForgetVector, Vec<TraceEntry>)> {
    cfg.validate()?;
    if train.dim() != model.input_dim() {
        return Err(Error::shape(format!(
            "data has {} features, model expects {}",
            train.dim(),
            model.input_dim()
        )));
    }
    let forget = split.forget_set(train);
    let retain = split.retain_set(train);
    if forget.is_empty() {
        return Err(Error::input("the forget set is empty"));
    }
    if retain.is_empty() && cfg.lambda1 != 0.0 {
        return Err(Error::input(
            "the retain set is empty but lambda1 is nonzero",
        ));
    }
    let weights = cfg.weights();
    let mut delta = vec![0.0; model.input_dim()];
    let mut trace = Vec::with_capacity(cfg.max_iterations);
    paired_batch_descent(
        &mut delta,
        &cfg.schedule(),
        forget.len(),
        if cfg.lambda1 != 0.0 { retain.len() } else { 0 },
        |d, fb, rb| {
            let xf = forget.features.select_rows(fb);
            let yf: Vec<usize> = fb.iter().map(|&i| forget.labels[i]).collect();
            let xr = retain.features.select_rows(rb);
            let yr: Vec<usize> = rb.iter().map(|&i| retain.labels[i]).collect();
            let obj = unlearn_objective(model, d, (&xf, &yf), (&xr, &yr), &weights)?;
            Ok((obj.value, obj.grad))
        },
        |t, d, loss| {
            let fv = ForgetVector::direct(d.to_vec());
            trace.push(trace_entry(model, &forget, &retain, &fv, t, loss)?);
            Ok(())
        },
    )?;
    Ok((
        ForgetVector {
            delta,
            provenance: Provenance::Direct,
            config: Some(cfg.clone()),
        },
        trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;

    fn linear(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> ClassifierModel {
        ClassifierModel::from_layers(
            vec![Layer {
                weights: Matrix::from_rows(&weights).unwrap(),
                bias,
            }],
            0,
        )
        .unwrap()
    }

    #[test]
    fn zero_vector_is_identity_and_inverse_recovers() {
        let x = Matrix::from_rows(&[vec![0.25, 0.375], vec![0.875, -0.125]]).unwrap();
        assert_eq!(
            apply_perturbation(&x, &ForgetVector::zeros(2), false, false).unwrap(),
            x
        );
        let fv = ForgetVector::direct(vec![0.5, -0.25]);
        let there = apply_perturbation(&x, &fv, false, false).unwrap();
        let back = apply_perturbation(&there, &fv.negated(), false, false).unwrap();
        assert_eq!(back, x);
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(there.get(r, c) - x.get(r, c), fv.delta[c]);
            }
        }
    }

    #[test]
    fn clamp_only_touches_images() {
        let x = Matrix::from_rows(&[vec![0.9, 0.1]]).unwrap();
        let fv = ForgetVector::direct(vec![0.5, -0.5]);
        let clamped = apply_perturbation(&x, &fv, true, true).unwrap();
        assert_eq!(clamped.as_slice(), &[1.0, 0.0]);
        let free = apply_perturbation(&x, &fv, true, false).unwrap();
        assert_eq!(free.as_slice(), &[1.4, -0.4]);
    }

    #[test]
    fn objective_is_flat_when_already_forgotten() {
        // class 1 dominates by 5 > tau everywhere near the origin
        let model = linear(vec![vec![0.1, 0.0], vec![0.0, 0.1]], vec![0.0, 5.0]);
        let xf = Matrix::from_rows(&[vec![0.1, 0.2]]).unwrap();
        let empty = Matrix::zeros(0, 2);
        let w = ObjectiveWeights {
            tau: 1.0,
            lambda1: 0.0,
            lambda2: 1.0,
        };
        let obj = unlearn_objective(&model, &[0.0, 0.0], (&xf, &[0]), (&empty, &[]), &w).unwrap();
        assert_eq!(obj.value, -1.0);
        assert!(obj.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn objective_reduces_to_margin_loss() {
        let model = ClassifierModel::init(&[3, 6, 3], 2).unwrap();
        let xf = Matrix::from_rows(&[vec![0.1, 0.5, 0.3], vec![0.7, 0.2, 0.9]]).unwrap();
        let delta = [0.05, -0.1, 0.2];
        let w = ObjectiveWeights {
            tau: 0.5,
            lambda1: 0.0,
            lambda2: 0.0,
        };
        let empty = Matrix::zeros(0, 3);
        let obj = unlearn_objective(&model, &delta, (&xf, &[0, 2]), (&empty, &[]), &w).unwrap();
        let direct =
            margin_loss(&model, &xf.add_row_vector(&delta).unwrap(), &[0, 2], 0.5).unwrap();
        assert_eq!(obj.value, direct);
    }

    #[test]
    fn missing_retain_batch_is_an_input_error() {
        let model = ClassifierModel::init(&[2, 2], 0).unwrap();
        let xf = Matrix::from_rows(&[vec![0.1, 0.2]]).unwrap();
        let empty = Matrix::zeros(0, 2);
        let err = unlearn_objective(
            &model,
            &[0.0, 0.0],
            (&xf, &[0]),
            (&empty, &[]),
            &ForgetVectorConfig::default().weights(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }
}

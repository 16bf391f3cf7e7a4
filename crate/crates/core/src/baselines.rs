//! Model-based unlearning: exact retraining plus fine-tuning, random
//! relabeling and gradient ascent. Every method returns a new model and
//! leaves its inputs untouched.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{ForgetSplit, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{self, sgd_epochs, ClassifierModel, TrainConfig};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlearnMethod {
    Retrain,
    Finetune,
    RandomLabel,
    GradientAscent,
}

impl UnlearnMethod {
    pub fn id(&self) -> &'static str {
        match self {
            UnlearnMethod::Retrain => "retrain",
            UnlearnMethod::Finetune => "finetune",
            UnlearnMethod::RandomLabel => "random_label",
            UnlearnMethod::GradientAscent => "gradient_ascent",
        }
    }
}

/// Settings for the approximate methods. Retraining reuses the original
/// [`TrainConfig`] instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnlearnMethodConfig {
    pub method: UnlearnMethod,
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_batch() -> usize {
    32
}

impl UnlearnMethodConfig {
    pub fn defaults(method: UnlearnMethod) -> Self {
        let (epochs, learning_rate) = match method {
            UnlearnMethod::Retrain => (0, 0.0),
            UnlearnMethod::Finetune => (10, 0.05),
            UnlearnMethod::RandomLabel => (10, 0.01),
            UnlearnMethod::GradientAscent => (5, 0.01),
        };
        Self {
            method,
            epochs,
            learning_rate,
            momentum: default_momentum(),
            batch_size: default_batch(),
            seed: 0,
        }
    }

    fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            weight_decay: 0.0,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Trains from a fresh seeded initialization on the retain rows only.
pub fn retrain(
    train: &LabeledDataset,
    split: &ForgetSplit,
    dims: &[usize],
    cfg: &TrainConfig,
) -> Result<ClassifierModel> {
    if split.retain_indices.is_empty() {
        return Err(Error::input("cannot retrain on an empty retain set"));
    }
    let retain = split.retain_set(train);
    nn::train_classifier(&retain.features, &retain.labels, dims, cfg)
}

/// Continues SGD on the retain rows.
pub fn finetune(
    model: &ClassifierModel,
    train: &LabeledDataset,
    split: &ForgetSplit,
    cfg: &UnlearnMethodConfig,
) -> Result<ClassifierModel> {
    let tc = cfg.train_config()?;
    let mut out = model.clone();
    if tc.epochs == 0 {
        return Ok(out);
    }
    let retain = split.retain_set(train);
    if retain.is_empty() {
        return Err(Error::input("cannot fine-tune on an empty retain set"));
    }
    sgd_epochs(&mut out, &retain.features, &retain.labels, &tc, 1.0)?;
    Ok(out)
}

/// Replaces every label with a seeded uniform draw over the other classes.
pub fn relabel(labels: &[usize], classes: usize, seed: u64) -> Result<Vec<usize>> {
    if classes < 2 {
        return Err(Error::config("relabeling needs at least two classes"));
    }
    let mut rng = rng::rng_for(seed, "random-label");
    Ok(labels
        .iter()
        .map(|&y| {
            let r = rng.random_range(0..classes - 1);
            if r >= y {
                r + 1
            } else {
                r
            }
        })
        .collect())
}

/// Fine-tunes on the retain rows together with the forget rows under
/// random wrong labels.
pub fn random_label(
    model: &ClassifierModel,
    train: &LabeledDataset,
    split: &ForgetSplit,
    cfg: &UnlearnMethodConfig,
) -> Result<ClassifierModel> {
    let tc = cfg.train_config()?;
    let mut out = model.clone();
    if tc.epochs == 0 {
        return Ok(out);
    }
    let forget = split.forget_set(train);
    let retain = split.retain_set(train);
    let x = forget.features.vstack(&retain.features)?;
    let mut y = relabel(&forget.labels, train.class_count, cfg.seed)?;
    y.extend_from_slice(&retain.labels);
    if y.is_empty() {
        return Err(Error::input("nothing to train on"));
    }
    sgd_epochs(&mut out, &x, &y, &tc, 1.0)?;
    Ok(out)
}

/// SGD on the negated cross-entropy of the forget rows.
pub fn gradient_ascent(
    model: &ClassifierModel,
    train: &LabeledDataset,
    split: &ForgetSplit,
    cfg: &UnlearnMethodConfig,
) -> Result<ClassifierModel> {
    let tc = cfg.train_config()?;
    let mut out = model.clone();
    if tc.epochs == 0 {
        return Ok(out);
    }
    let forget = split.forget_set(train);
    if forget.is_empty() {
        return Err(Error::input("gradient ascent needs forget rows"));
    }
    sgd_epochs(&mut out, &forget.features, &forget.labels, &tc, -1.0)?;
    Ok(out)
}

/// Dispatches to the approximate method named in `cfg`.
pub fn run_approximate(
    model: &ClassifierModel,
    train: &LabeledDataset,
    split: &ForgetSplit,
    cfg: &UnlearnMethodConfig,
) -> Result<ClassifierModel> {
    match cfg.method {
        UnlearnMethod::Finetune => finetune(model, train, split, cfg),
        UnlearnMethod::RandomLabel => random_label(model, train, split, cfg),
        UnlearnMethod::GradientAscent => gradient_ascent(model, train, split, cfg),
        UnlearnMethod::Retrain => Err(Error::config(
            "retraining is not an approximate method; call retrain()",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_relabel_flips() {
        let labels = [0, 1, 1, 0, 1];
        let out = relabel(&labels, 2, 4).unwrap();
        assert_eq!(out, vec![1, 0, 0, 1, 0]);
    }

    #[test]
    fn relabel_never_keeps_the_label() {
        let labels: Vec<usize> = (0..500).map(|i| i % 7).collect();
        let out = relabel(&labels, 7, 1).unwrap();
        assert!(labels.iter().zip(&out).all(|(a, b)| a != b && *b < 7));
        // every wrong class shows up for some sample
        for k in 0..7 {
            assert!(out.contains(&k));
        }
    }

    #[test]
    fn retrain_requires_retain_rows() {
        let d = crate::data::make_blobs(2, 2, 3, 1.0, 0.1, 0).unwrap();
        let all: Vec<usize> = (0..d.len()).collect();
        let split =
            ForgetSplit::from_forget_indices(crate::data::SplitSpec::Explicit, all, d.len())
                .unwrap();
        let err = retrain(&d, &split, &[2, 2], &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }
}

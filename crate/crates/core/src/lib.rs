//! Machine unlearning for small MLP classifiers through learned input
//! perturbations ("forget vectors"), alongside model-based baselines,
//! compositional reuse of class-wise vectors, and the evaluation metrics
//! used to compare them against exact retraining.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod composition;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod forget_vector;
pub mod loss;
pub mod nn;
mod optim;
pub mod persist;
pub mod perturb;
pub mod rng;
pub mod tensor;

pub use baselines::{UnlearnMethod, UnlearnMethodConfig};
pub use composition::{
    compose, grid_sweep_2d, optimize_weights, ClassVectorBank, CompositionConfig,
    CompositionWeights, GridAxis, GridSweep,
};
pub use data::{ForgetSplit, ImageShape, LabeledDataset, SplitSpec};
pub use error::{Error, Result};
pub use evaluation::{evaluate, EvalSets, ReportMeta, UnlearnReport};
pub use forget_vector::{
    apply_perturbation, optimize_forget_vector, ForgetVector, ForgetVectorConfig, Provenance,
};
pub use nn::{ClassifierModel, TrainConfig};
pub use optim::SgdSchedule;
pub use tensor::Matrix;

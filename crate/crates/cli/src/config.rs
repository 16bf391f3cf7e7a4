//! Versioned JSON experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unlearn_core::composition::{CompositionConfig, GridAxis};
use unlearn_core::data::{self, ImageShape, LabeledDataset};
use unlearn_core::{ForgetVectorConfig, SplitSpec, TrainConfig};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Blobs {
        #[serde(default = "blobs::classes")]
        classes: usize,
        #[serde(default = "blobs::dim")]
        dim: usize,
        #[serde(default = "blobs::per_class")]
        per_class: usize,
        #[serde(default = "blobs::center_scale")]
        center_scale: f64,
        #[serde(default = "blobs::sigma")]
        sigma: f64,
        /// Treat each row as an image of this shape (features are already
        /// in `[0, 1]`).
        #[serde(default)]
        image_shape: Option<ImageShape>,
    },
    Patterns {
        #[serde(default = "patterns::classes")]
        classes: usize,
        #[serde(default = "patterns::edge")]
        edge: usize,
        #[serde(default = "patterns::per_class")]
        per_class: usize,
        #[serde(default = "patterns::noise_sigma")]
        noise_sigma: f64,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        classes: usize,
        #[serde(default)]
        image_shape: Option<ImageShape>,
    },
}

mod blobs {
    pub fn classes() -> usize {
        5
    }
    pub fn dim() -> usize {
        16
    }
    pub fn per_class() -> usize {
        200
    }
    pub fn center_scale() -> f64 {
        3.0
    }
    pub fn sigma() -> f64 {
        0.3
    }
}

mod patterns {
    pub fn classes() -> usize {
        10
    }
    pub fn edge() -> usize {
        16
    }
    pub fn per_class() -> usize {
        200
    }
    pub fn noise_sigma() -> f64 {
        0.1
    }
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Blobs {
            classes: blobs::classes(),
            dim: blobs::dim(),
            per_class: blobs::per_class(),
            center_scale: blobs::center_scale(),
            sigma: blobs::sigma(),
            image_shape: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    /// The trained model without any unlearning.
    Origin,
    Retrain,
    Finetune,
    RandomLabel,
    GradientAscent,
    ForgetVector,
}

impl MethodKind {
    pub fn id(&self) -> &'static str {
        match self {
            MethodKind::Origin => "origin",
            MethodKind::Retrain => "retrain",
            MethodKind::Finetune => "finetune",
            MethodKind::RandomLabel => "random_label",
            MethodKind::GradientAscent => "gradient_ascent",
            MethodKind::ForgetVector => "forget_vector",
        }
    }
}

/// Unset fields fall back to the method's defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub kind: Option<MethodKind>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub batch_size: Option<usize>,
    /// Forget-vector settings; defaults depend on the split kind.
    pub forget_vector: Option<ForgetVectorConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ComposeMode {
    /// Weight 1 on one class vector, 0 elsewhere.
    OneHot { class: usize },
    /// Learn the weights for the configured split.
    Optimize,
    /// Exhaustive 2-D sweep over two class vectors.
    Grid {
        classes: (usize, usize),
        #[serde(default)]
        axis: GridAxis,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposeSpec {
    #[serde(flatten)]
    pub mode: ComposeMode,
    /// Settings for building the class-wise bank.
    #[serde(default)]
    pub bank: Option<ForgetVectorConfig>,
    #[serde(default)]
    pub weights: CompositionConfig,
}

/// Evenly spaced values; defaults to tau from 0.0 to 2.2 in steps of 0.2.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for Range {
    fn default() -> Self {
        Self {
            lo: 0.0,
            hi: 2.2,
            step: 0.2,
        }
    }
}

impl Range {
    pub fn values(&self) -> CliResult<Vec<f64>> {
        Ok(GridAxis {
            lo: self.lo,
            hi: self.hi,
            step: self.step,
        }
        .values()?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessSpec {
    /// Which models to sweep: any of origin, retrain, forget_vector.
    pub models: Vec<MethodKind>,
    pub trials: usize,
}

impl Default for RobustnessSpec {
    fn default() -> Self {
        Self {
            models: vec![
                MethodKind::Origin,
                MethodKind::Retrain,
                MethodKind::ForgetVector,
            ],
            trials: 3,
        }
    }
}

pub const LAMBDA_BOUND: f64 = 10.0;

/// Values must lie in `[0, LAMBDA_BOUND]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaGrid {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        Self {
            lambda1: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            lambda2: vec![0.0, 1.0, 2.0, 3.0, 4.0],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub robustness: Option<RobustnessSpec>,
    #[serde(default)]
    pub tau: Option<Range>,
    #[serde(default)]
    pub lambda: Option<LambdaGrid>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_split")]
    pub split: SplitSpec,
    #[serde(default)]
    pub method: MethodSpec,
    #[serde(default)]
    pub compose: Option<ComposeSpec>,
    #[serde(default)]
    pub sweep: SweepSpec,
    /// Base checkpoint; defaults to the one `train` writes into the output
    /// directory.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Store wall-clock runtimes in reports (breaks byte-identical reruns).
    #[serde(default)]
    pub record_runtime: bool,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_hidden() -> Vec<usize> {
    vec![64]
}

fn default_split() -> SplitSpec {
    SplitSpec::ClassWise { class: 0 }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            dataset: DatasetSpec::default(),
            test_fraction: default_test_fraction(),
            hidden: default_hidden(),
            train: TrainConfig::default(),
            split: default_split(),
            method: MethodSpec::default(),
            compose: None,
            sweep: SweepSpec::default(),
            checkpoint: None,
            record_runtime: false,
            out_dir: default_out_dir(),
        }
    }
}

impl ExperimentConfig {
    /// Reads and validates a config file. Relative data paths resolve
    /// against the config's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let DatasetSpec::Csv { train, test, .. } = &mut self.dataset {
            *train = base.join(&*train);
            *test = base.join(&*test);
        }
        if let Some(c) = &mut self.checkpoint {
            *c = base.join(&*c);
        }
    }

    /// Rejects class indices in the split or compose section that the
    /// dataset does not have.
    pub fn check_classes(&self, class_count: usize) -> CliResult<()> {
        let mut used: Vec<usize> = match &self.split {
            SplitSpec::ClassWise { class } => vec![*class],
            SplitSpec::RandomInClasses { classes, .. } => classes.clone(),
            _ => Vec::new(),
        };
        match self.compose.as_ref().map(|c| &c.mode) {
            Some(ComposeMode::OneHot { class }) => used.push(*class),
            Some(ComposeMode::Grid { classes, .. }) => used.extend([classes.0, classes.1]),
            _ => {}
        }
        match used.into_iter().find(|&c| c >= class_count) {
            Some(c) => Err(CliError::Config(format!(
                "class {c} out of range for {class_count} classes"
            ))),
            None => Ok(()),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(CliError::Config("test_fraction must lie in (0, 1)".into()));
        }
        if self.hidden.contains(&0) {
            return Err(CliError::Config("hidden widths must be positive".into()));
        }
        self.train.validate()?;
        if let DatasetSpec::Csv { train, test, .. } = &self.dataset {
            for p in [train, test] {
                if !p.is_file() {
                    return Err(CliError::Config(format!(
                        "missing data file {}",
                        p.display()
                    )));
                }
            }
        }
        if let Some(fv) = &self.method.forget_vector {
            fv.validate()?;
        }
        if let Some(l) = &self.sweep.lambda {
            if l.lambda1.is_empty() || l.lambda2.is_empty() {
                return Err(CliError::Config("lambda grids must be nonempty".into()));
            }
            if l.lambda1
                .iter()
                .chain(&l.lambda2)
                .any(|v| !(0.0..=LAMBDA_BOUND).contains(v))
            {
                return Err(CliError::Config(format!(
                    "lambda grid values must lie in [0, {LAMBDA_BOUND}]"
                )));
            }
        }
        if let Some(r) = &self.sweep.robustness {
            if r.trials == 0 {
                return Err(CliError::Config(
                    "robustness trials must be at least 1".into(),
                ));
            }
        }
        Ok(())
    }

    /// Replaces the global seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The split with its seed tied to the global seed.
    pub fn seeded_split(&self) -> SplitSpec {
        match &self.split {
            SplitSpec::Random { ratio, .. } => SplitSpec::Random {
                ratio: *ratio,
                seed: self.seed,
            },
            SplitSpec::RandomInClasses { classes, ratio, .. } => SplitSpec::RandomInClasses {
                classes: classes.clone(),
                ratio: *ratio,
                seed: self.seed,
            },
            other => other.clone(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Forget-vector settings for the configured split.
    pub fn forget_vector_config(&self) -> ForgetVectorConfig {
        let base = self
            .method
            .forget_vector
            .clone()
            .unwrap_or_else(|| match self.split {
                SplitSpec::ClassWise { .. } => ForgetVectorConfig::class_wise(),
                _ => ForgetVectorConfig::random(),
            });
        ForgetVectorConfig {
            seed: self.seed,
            ..base
        }
    }

    /// Train and test sets.
    pub fn load_data(&self) -> CliResult<(LabeledDataset, LabeledDataset)> {
        let seed = self.seed;
        let full = match &self.dataset {
            DatasetSpec::Blobs {
                classes,
                dim,
                per_class,
                center_scale,
                sigma,
                image_shape,
            } => {
                let d = data::make_blobs(*classes, *dim, *per_class, *center_scale, *sigma, seed)?;
                match image_shape {
                    Some(shape) => d.with_image_shape(*shape)?,
                    None => d,
                }
            }
            DatasetSpec::Patterns {
                classes,
                edge,
                per_class,
                noise_sigma,
            } => data::make_patterns(*classes, *edge, *per_class, *noise_sigma, seed)?,
            DatasetSpec::Csv {
                train,
                test,
                classes,
                image_shape,
            } => {
                let tr = data::load_csv(train, Some(*classes), *image_shape)?;
                let te = data::load_csv(test, Some(*classes), *image_shape)?;
                return Ok((tr, te));
            }
        };
        Ok(full.train_test_split(self.test_fraction, seed)?)
    }

    pub fn dims(&self, input: usize, classes: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(&self.hidden);
        dims.push(classes);
        dims
    }

    pub fn hash_of<T: Serialize>(value: &T) -> CliResult<String> {
        let bytes = serde_json::to_vec(value).map_err(unlearn_core::Error::from)?;
        Ok(hex::encode(Sha256::digest(bytes)))
    }
}

//! One experiment: data, base model, retrain reference and the artifacts
//! each subcommand writes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::Serialize;
use unlearn_core::baselines::{self, UnlearnMethod, UnlearnMethodConfig};
use unlearn_core::composition::{
    compose, grid_sweep_2d, optimize_weights, ClassVectorBank, CompositionWeights, GridCell,
    GridSweep,
};
use unlearn_core::data::{split_forget_retain, ForgetSplit, LabeledDataset};
use unlearn_core::evaluation::{
    accuracy, evaluate, robustness_sweep, round2, EvalSets, ReportMeta, UnlearnReport,
};
use unlearn_core::forget_vector::TraceEntry;
use unlearn_core::nn::{train_classifier, ClassifierModel};
use unlearn_core::{
    optimize_forget_vector, persist, perturb, rng, ForgetVector, ForgetVectorConfig,
};

use crate::config::{ComposeMode, ExperimentConfig, MethodKind};
use crate::error::{CliError, CliResult};

pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: ClassifierModel,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

#[derive(Debug)]
pub struct UnlearnOutcome {
    pub report: UnlearnReport,
    pub report_path: PathBuf,
    pub vector_path: Option<PathBuf>,
}

#[derive(Debug)]
pub struct ComposeOutcome {
    pub report: Option<UnlearnReport>,
    pub weights: Option<Vec<f64>>,
    pub grid: Option<GridSweep>,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct TrainMetrics {
    seed: u64,
    dims: Vec<usize>,
    param_count: usize,
    checksum: String,
    train_accuracy: f64,
    test_accuracy: f64,
}

fn short(hash: &str) -> &str {
    &hash[..16]
}

fn json_bytes<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value).map_err(unlearn_core::Error::from)?;
    text.push('\n');
    Ok(text.into_bytes())
}

type CellPick = fn(&GridCell) -> f64;

impl Experiment {
    pub fn new(cfg: ExperimentConfig, out: PathBuf) -> CliResult<Self> {
        cfg.validate()?;
        let (train, test) = cfg.load_data()?;
        if train.dim() != test.dim() || train.class_count != test.class_count {
            return Err(CliError::Config(
                "train and test data disagree in shape".into(),
            ));
        }
        cfg.check_classes(train.class_count)?;
        Ok(Self {
            cfg,
            out,
            train,
            test,
        })
    }

    pub fn seed(&self) -> u64 {
        self.cfg.seed
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn tagged(&self, stem: &str, ext: &str) -> PathBuf {
        self.path(&format!("{stem}-s{}.{ext}", self.seed()))
    }

    fn write(&self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        persist::write_new(path, bytes)?;
        info!("wrote {}", path.display());
        Ok(())
    }

    pub fn dims(&self) -> Vec<usize> {
        self.cfg.dims(self.train.dim(), self.train.class_count)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.cfg
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.tagged("model", "bin"))
    }

    pub fn train(&self) -> CliResult<TrainOutcome> {
        let tc = self.cfg.train_config();
        let model = train_classifier(&self.train.features, &self.train.labels, &self.dims(), &tc)?
            .round_to_f32();
        let checkpoint = self.tagged("model", "bin");
        self.write(&checkpoint, &persist::model_bytes(&model)?)?;
        let metrics = TrainMetrics {
            seed: self.seed(),
            dims: model.dims().to_vec(),
            param_count: model.param_count(),
            checksum: model.checksum(),
            train_accuracy: round2(accuracy(
                &model,
                &self.train.features,
                &self.train.labels,
                None,
            )?),
            test_accuracy: round2(accuracy(
                &model,
                &self.test.features,
                &self.test.labels,
                None,
            )?),
        };
        let metrics_path = self.tagged("train-metrics", "json");
        self.write(&metrics_path, &json_bytes(&metrics)?)?;
        Ok(TrainOutcome {
            model,
            checkpoint,
            metrics: metrics_path,
        })
    }

    /// The base model written by `train`.
    pub fn origin(&self) -> CliResult<ClassifierModel> {
        let path = self.checkpoint_path();
        if !path.is_file() {
            return Err(unlearn_core::Error::Input(format!(
                "missing base checkpoint {}; run `train` first",
                path.display()
            ))
            .into());
        }
        let model = persist::load_model(&path)?;
        if model.input_dim() != self.train.dim() || model.class_count() != self.train.class_count {
            return Err(unlearn_core::Error::Compatibility(
                "checkpoint does not match the configured dataset".into(),
            )
            .into());
        }
        Ok(model)
    }

    pub fn split(&self) -> CliResult<ForgetSplit> {
        let split = split_forget_retain(&self.train, &self.cfg.seeded_split())?;
        let path = self.path(&format!("split-{}.json", short(&split.content_hash())));
        self.write(&path, split.to_json()?.as_bytes())?;
        Ok(split)
    }

    pub fn sets(&self, split: &ForgetSplit) -> CliResult<EvalSets> {
        Ok(EvalSets::resolve(
            &self.train,
            &self.test,
            split,
            self.seed(),
        )?)
    }

    /// Retrained model for `split`, cached under a key of data, split and
    /// training settings.
    pub fn retrained(&self, split: &ForgetSplit) -> CliResult<ClassifierModel> {
        let tc = self.cfg.train_config();
        let key = ExperimentConfig::hash_of(&(
            self.train.content_hash(),
            split.content_hash(),
            ExperimentConfig::hash_of(&tc)?,
            self.dims(),
        ))?;
        let path = self.path(&format!("cache/retrain-{}.bin", short(&key)));
        if path.is_file() {
            return Ok(persist::load_model(&path)?);
        }
        let model = baselines::retrain(&self.train, split, &self.dims(), &tc)?.round_to_f32();
        self.write(&path, &persist::model_bytes(&model)?)?;
        Ok(model)
    }

    fn meta(&self, method: &str, param_count: usize, started: Option<Instant>) -> ReportMeta {
        ReportMeta {
            method: method.to_string(),
            seed: self.seed(),
            param_count,
            runtime_s: started
                .filter(|_| self.cfg.record_runtime)
                .map(|t| t.elapsed().as_secs_f64()),
        }
    }

    pub fn reference(
        &self,
        retrained: &ClassifierModel,
        sets: &EvalSets,
    ) -> CliResult<UnlearnReport> {
        Ok(evaluate(
            retrained,
            None,
            sets,
            None,
            self.meta("retrain", retrained.param_count(), None),
        )?)
    }

    fn method_config(&self, method: UnlearnMethod) -> UnlearnMethodConfig {
        let m = &self.cfg.method;
        let d = UnlearnMethodConfig::defaults(method);
        UnlearnMethodConfig {
            epochs: m.epochs.unwrap_or(d.epochs),
            learning_rate: m.learning_rate.unwrap_or(d.learning_rate),
            momentum: m.momentum.unwrap_or(d.momentum),
            batch_size: m.batch_size.unwrap_or(d.batch_size),
            seed: self.seed(),
            ..d
        }
    }

    fn forget_vector(
        &self,
        model: &ClassifierModel,
        split: &ForgetSplit,
        cfg: &ForgetVectorConfig,
    ) -> CliResult<(ForgetVector, Vec<TraceEntry>)> {
        let (fv, trace) = optimize_forget_vector(model, &self.train, split, cfg)?;
        Ok((fv.round_to_f32(), trace))
    }

    fn save_report(&self, report: &UnlearnReport, stem: &str) -> CliResult<PathBuf> {
        let path = self.tagged(&format!("report-{stem}"), "json");
        self.write(&path, report.to_json()?.as_bytes())?;
        Ok(path)
    }

    pub fn unlearn(&self) -> CliResult<UnlearnOutcome> {
        let kind = self.cfg.method.kind.unwrap_or(MethodKind::ForgetVector);
        let origin = self.origin()?;
        let split = self.split()?;
        let sets = self.sets(&split)?;
        let retrained = self.retrained(&split)?;
        let reference = self.reference(&retrained, &sets)?;
        let started = Instant::now();
        let mut vector_path = None;
        let report = match kind {
            MethodKind::Origin => evaluate(
                &origin,
                None,
                &sets,
                Some(&reference),
                self.meta("origin", 0, None),
            )?,
            MethodKind::Retrain => evaluate(
                &retrained,
                None,
                &sets,
                Some(&reference),
                self.meta("retrain", retrained.param_count(), None),
            )?,
            MethodKind::Finetune | MethodKind::RandomLabel | MethodKind::GradientAscent => {
                let method = match kind {
                    MethodKind::Finetune => UnlearnMethod::Finetune,
                    MethodKind::RandomLabel => UnlearnMethod::RandomLabel,
                    _ => UnlearnMethod::GradientAscent,
                };
                let model = baselines::run_approximate(
                    &origin,
                    &self.train,
                    &split,
                    &self.method_config(method),
                )?
                .round_to_f32();
                evaluate(
                    &model,
                    None,
                    &sets,
                    Some(&reference),
                    self.meta(kind.id(), model.param_count(), Some(started)),
                )?
            }
            MethodKind::ForgetVector => {
                let before = origin.checksum();
                let (fv, trace) =
                    self.forget_vector(&origin, &split, &self.cfg.forget_vector_config())?;
                let report = evaluate(
                    &origin,
                    Some(&fv),
                    &sets,
                    Some(&reference),
                    self.meta(kind.id(), fv.dim(), Some(started)),
                )?;
                debug_assert_eq!(before, origin.checksum());
                let path = self.tagged("vector", "bin");
                self.write(
                    &path,
                    &persist::vector_bytes(&fv, self.seed(), Some(&before))?,
                )?;
                self.write(&self.tagged("trace", "csv"), trace_csv(&trace).as_bytes())?;
                vector_path = Some(path);
                report
            }
        };
        let report_path = self.save_report(&report, kind.id())?;
        Ok(UnlearnOutcome {
            report,
            report_path,
            vector_path,
        })
    }

    /// Loads the class-wise bank for `model`, building and storing it first
    /// if needed.
    pub fn bank(
        &self,
        model: &ClassifierModel,
        cfg: &ForgetVectorConfig,
    ) -> CliResult<ClassVectorBank> {
        let key = ExperimentConfig::hash_of(&(model.checksum(), cfg, self.train.content_hash()))?;
        let path = self.path(&format!("bank-{}.bin", short(&key)));
        if path.is_file() {
            let bank = persist::load_bank(&path)?;
            bank.check_model(model)?;
            return Ok(bank);
        }
        let bank = ClassVectorBank::build(model, &self.train, cfg)?.round_to_f32();
        self.write(&path, &persist::bank_bytes(&bank, self.seed())?)?;
        Ok(bank)
    }

    fn bank_config(&self) -> ForgetVectorConfig {
        let base = self
            .cfg
            .compose
            .as_ref()
            .and_then(|c| c.bank.clone())
            .unwrap_or_else(ForgetVectorConfig::class_wise);
        ForgetVectorConfig {
            seed: self.seed(),
            ..base
        }
    }

    pub fn compose(&self) -> CliResult<ComposeOutcome> {
        let spec = self.cfg.compose.clone().ok_or_else(|| {
            CliError::Config("the compose command needs a `compose` section".into())
        })?;
        let origin = self.origin()?;
        let bank = self.bank(&origin, &self.bank_config())?;
        let split = self.split()?;
        let sets = self.sets(&split)?;
        let reference = self.reference(&self.retrained(&split)?, &sets)?;
        let started = Instant::now();
        let mut files = Vec::new();
        match spec.mode {
            ComposeMode::OneHot { class } => {
                if class >= bank.len() {
                    return Err(CliError::Config(format!("no class vector {class}")));
                }
                let mut w = vec![0.0; bank.len()];
                w[class] = 1.0;
                let fv = compose(&bank, &origin, &CompositionWeights { w: w.clone() })?;
                let report = evaluate(
                    &origin,
                    Some(&fv),
                    &sets,
                    Some(&reference),
                    self.meta(&format!("one_hot_{class}"), 0, None),
                )?;
                files.push(self.save_report(&report, &format!("one_hot_{class}"))?);
                Ok(ComposeOutcome {
                    report: Some(report),
                    weights: Some(w),
                    grid: None,
                    files,
                })
            }
            ComposeMode::Optimize => {
                let wcfg = unlearn_core::CompositionConfig {
                    seed: self.seed(),
                    ..spec.weights.clone()
                };
                let (weights, fv, _) =
                    optimize_weights(&origin, &bank, &self.train, &split, &wcfg)?;
                let fv = fv.round_to_f32();
                let report = evaluate(
                    &origin,
                    Some(&fv),
                    &sets,
                    Some(&reference),
                    self.meta("cu_fv", bank.len(), Some(started)),
                )?;
                let wpath = self.tagged("weights", "json");
                self.write(&wpath, &json_bytes(&weights)?)?;
                files.push(wpath);
                let vpath = self.tagged("composed-vector", "bin");
                self.write(
                    &vpath,
                    &persist::vector_bytes(&fv, self.seed(), Some(&origin.checksum()))?,
                )?;
                files.push(vpath);
                files.push(self.save_report(&report, "cu_fv")?);
                Ok(ComposeOutcome {
                    report: Some(report),
                    weights: Some(weights.w),
                    grid: None,
                    files,
                })
            }
            ComposeMode::Grid { classes, axis } => {
                let grid = grid_sweep_2d(&origin, &bank, classes, &sets, &reference, &axis)?;
                let tables: [(&str, CellPick); 3] = [
                    ("grid-ua-gap", |c| c.ua_gap),
                    ("grid-ra-gap", |c| c.ra_gap),
                    ("grid-avg-gap", |c| c.avg_gap),
                ];
                let long = self.tagged("grid", "csv");
                self.write(&long, grid.to_csv().as_bytes())?;
                files.push(long);
                for (stem, pick) in tables {
                    let path = self.tagged(stem, "csv");
                    self.write(&path, grid.table_csv(pick).as_bytes())?;
                    files.push(path);
                }
                let best = self.tagged("grid-best", "json");
                self.write(&best, &json_bytes(grid.best_cell())?)?;
                files.push(best);
                Ok(ComposeOutcome {
                    report: None,
                    weights: None,
                    grid: Some(grid),
                    files,
                })
            }
        }
    }

    /// Robustness and hyperparameter sweeps; returns the CSV files written.
    pub fn sweep(&self) -> CliResult<Vec<PathBuf>> {
        let spec = self.cfg.sweep.clone();
        if spec.robustness.is_none() && spec.tau.is_none() && spec.lambda.is_none() {
            return Err(CliError::Config(
                "the sweep section selects nothing to run".into(),
            ));
        }
        let origin = self.origin()?;
        let split = self.split()?;
        let sets = self.sets(&split)?;
        let retrained = self.retrained(&split)?;
        let reference = self.reference(&retrained, &sets)?;
        let mut files = Vec::new();

        if let Some(r) = &spec.robustness {
            let trials: Vec<u64> = (0..r.trials)
                .map(|i| rng::derive_seed(self.seed(), &format!("trial-{i}")))
                .collect();
            let suite = self.suite();
            for kind in &r.models {
                let table = match kind {
                    MethodKind::Origin => robustness_sweep(&origin, None, &sets, &suite, &trials)?,
                    MethodKind::Retrain => {
                        robustness_sweep(&retrained, None, &sets, &suite, &trials)?
                    }
                    MethodKind::ForgetVector => {
                        let (fv, _) =
                            self.forget_vector(&origin, &split, &self.cfg.forget_vector_config())?;
                        robustness_sweep(&origin, Some(&fv), &sets, &suite, &trials)?
                    }
                    other => {
                        return Err(CliError::Config(format!(
                            "robustness sweeps support origin, retrain and forget_vector, not {}",
                            other.id()
                        )))
                    }
                };
                let path = self.tagged(&format!("robustness-{}", kind.id()), "csv");
                self.write(&path, table.to_csv().as_bytes())?;
                files.push(path);
            }
        }

        let base = self.cfg.forget_vector_config();
        if let Some(range) = spec.tau {
            let mut csv = String::from("tau,ua,mia_efficacy,ra,ta,avg_gap\n");
            for tau in range.values()? {
                let cfg = ForgetVectorConfig {
                    tau,
                    ..base.clone()
                };
                let r = self.score_vector(&origin, &split, &sets, &reference, &cfg)?;
                let _ = writeln!(csv, "{},{}", round6(tau), metric_fields(&r));
            }
            let path = self.tagged("sweep-tau", "csv");
            self.write(&path, csv.as_bytes())?;
            files.push(path);
        }
        if let Some(grid) = &spec.lambda {
            let mut csv = String::from("lambda1,lambda2,ua,mia_efficacy,ra,ta,avg_gap\n");
            for &lambda1 in &grid.lambda1 {
                for &lambda2 in &grid.lambda2 {
                    let cfg = ForgetVectorConfig {
                        lambda1,
                        lambda2,
                        ..base.clone()
                    };
                    let r = self.score_vector(&origin, &split, &sets, &reference, &cfg)?;
                    let _ = writeln!(csv, "{lambda1},{lambda2},{}", metric_fields(&r));
                }
            }
            let path = self.tagged("sweep-lambda", "csv");
            self.write(&path, csv.as_bytes())?;
            files.push(path);
        }
        Ok(files)
    }

    /// The standard suite, minus the elastic warps when rows are not images.
    pub fn suite(&self) -> Vec<perturb::SuiteEntry> {
        let image = self.train.image_shape.is_some();
        perturb::standard_suite(self.seed())
            .into_iter()
            .filter(|e| {
                let elastic = matches!(
                    &e.perturbation,
                    perturb::Perturbation::Corruption(c)
                        if matches!(c.kind, perturb::CorruptionKind::Elastic { .. })
                );
                if elastic && !image {
                    warn!("skipping {}: the data has no image shape", e.name);
                }
                !elastic || image
            })
            .collect()
    }

    fn score_vector(
        &self,
        origin: &ClassifierModel,
        split: &ForgetSplit,
        sets: &EvalSets,
        reference: &UnlearnReport,
        cfg: &ForgetVectorConfig,
    ) -> CliResult<UnlearnReport> {
        let (fv, _) = self.forget_vector(origin, split, cfg)?;
        Ok(evaluate(
            origin,
            Some(&fv),
            sets,
            Some(reference),
            self.meta("forget_vector", fv.dim(), None),
        )?
        .rounded())
    }
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn metric_fields(r: &UnlearnReport) -> String {
    format!(
        "{},{},{},{},{}",
        r.ua,
        r.mia_efficacy,
        r.ra,
        r.ta,
        r.avg_gap.unwrap_or(f64::NAN)
    )
}

fn trace_csv(trace: &[TraceEntry]) -> String {
    let mut out = String::from("iteration,loss,ua,ra\n");
    for t in trace {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            t.iteration,
            round6(t.loss),
            round2(t.ua),
            round2(t.ra)
        );
    }
    out
}

/// Creates the output directory if needed.
pub fn prepare_out_dir(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

//! Unlearning metrics: UA, RA, TA, confidence-threshold MIA-Efficacy, gaps
//! against a retrained reference, distribution-shift sweeps and transfer to
//! unseen forget data.

use std::fmt;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::{ForgetSplit, ImageShape, LabeledDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::forget_vector::{apply_perturbation, ForgetVector};
use crate::loss::{argmax, softmax_inplace};
use crate::nn::ClassifierModel;
use crate::perturb::{pgd_attack, CorruptionSpec, Perturbation, SuiteEntry};
use crate::rng;
use crate::tensor::Matrix;

/// Rounds to two decimals, half away from zero.
pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn perturbed(x: &Matrix, fv: Option<&ForgetVector>) -> Result<Matrix> {
    match fv {
        Some(fv) => apply_perturbation(x, fv, false, false),
        None => Ok(x.clone()),
    }
}

/// Percentage of rows whose argmax prediction matches the label, after
/// adding `fv` when given.
pub fn accuracy(
    model: &ClassifierModel,
    x: &Matrix,
    labels: &[usize],
    fv: Option<&ForgetVector>,
) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::input("accuracy of an empty set is undefined"));
    }
    let preds = model.predict(&perturbed(x, fv)?)?;
    if preds.len() != labels.len() {
        return Err(Error::shape("label count differs from row count"));
    }
    let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(100.0 * correct as f64 / labels.len() as f64)
}

/// `100 - accuracy` on the forget samples.
pub fn compute_ua(
    model: &ClassifierModel,
    forget: &LabeledDataset,
    fv: Option<&ForgetVector>,
) -> Result<f64> {
    Ok(100.0 - accuracy(model, &forget.features, &forget.labels, fv)?)
}

/// Test rows that count toward TA: under class-wise forgetting the forgotten
/// class is removed.
pub fn ta_rows(test: &LabeledDataset, spec: &SplitSpec) -> Result<LabeledDataset> {
    let kept = match spec.forgotten_class() {
        Some(k) => (0..test.len())
            .filter(|&i| test.labels[i] != k)
            .collect::<Vec<_>>(),
        None => (0..test.len()).collect(),
    };
    if kept.is_empty() {
        return Err(Error::input(
            "no test rows remain after excluding the forgotten class",
        ));
    }
    Ok(test.subset(&kept))
}

pub fn compute_ta(
    model: &ClassifierModel,
    test: &LabeledDataset,
    spec: &SplitSpec,
    fv: Option<&ForgetVector>,
) -> Result<f64> {
    let rows = ta_rows(test, spec)?;
    accuracy(model, &rows.features, &rows.labels, fv)
}

/// Softmax probability the model assigns to each row's own label.
pub fn true_label_confidence(
    model: &ClassifierModel,
    x: &Matrix,
    labels: &[usize],
    fv: Option<&ForgetVector>,
) -> Result<Vec<f64>> {
    let mut logits = model.forward_logits(&perturbed(x, fv)?)?;
    Ok((0..logits.rows())
        .map(|r| {
            let row = logits.row_mut(r);
            softmax_inplace(row);
            row[labels[r]]
        })
        .collect())
}

/// Scalar confidence threshold: a sample is called a training member iff
/// its true-label confidence is at least `threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiaPredictor {
    pub threshold: f64,
    pub balanced_accuracy: f64,
    /// Rows drawn from each pool.
    pub pool_size: usize,
}

impl MiaPredictor {
    pub fn is_member(&self, confidence: f64) -> bool {
        confidence >= self.threshold
    }
}

/// Candidate thresholds: the smallest observed confidence (everything is a
/// member) and every midpoint between consecutive distinct confidences.
pub fn threshold_candidates(members: &[f64], nonmembers: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = members.iter().chain(nonmembers).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let mut out = Vec::with_capacity(all.len());
    if let Some(&first) = all.first() {
        out.push(first);
    }
    out.extend(all.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    out
}

/// Picks the threshold with the highest balanced accuracy, preferring the
/// smallest one on ties. Returns `(threshold, balanced_accuracy)`.
pub fn fit_threshold(members: &[f64], nonmembers: &[f64]) -> Result<(f64, f64)> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::input(
            "membership inference needs both member and non-member rows",
        ));
    }
    let mut m = members.to_vec();
    let mut q = nonmembers.to_vec();
    m.sort_by(f64::total_cmp);
    q.sort_by(f64::total_cmp);
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for t in threshold_candidates(members, nonmembers) {
        let members_above = m.len() - m.partition_point(|&v| v < t);
        let nonmembers_below = q.partition_point(|&v| v < t);
        let bal = 0.5
            * (members_above as f64 / m.len() as f64 + nonmembers_below as f64 / q.len() as f64);
        if bal > best.1 {
            best = (t, bal);
        }
    }
    Ok(best)
}

/// Fits the threshold predictor on an equal-size seeded draw from the retain
/// (members) and test (non-members) pools.
pub fn train_mia(
    model: &ClassifierModel,
    retain: &LabeledDataset,
    test: &LabeledDataset,
    seed: u64,
    fv: Option<&ForgetVector>,
) -> Result<MiaPredictor> {
    if retain.is_empty() || test.is_empty() {
        return Err(Error::input(
            "membership inference needs nonempty retain and test pools",
        ));
    }
    let n = retain.len().min(test.len());
    let mut rng = rng::rng_for(seed, "mia-pools");
    let mut draw = |len: usize| {
        let mut idx = index::sample(&mut rng, len, n).into_vec();
        idx.sort_unstable();
        idx
    };
    let members = retain.subset(&draw(retain.len()));
    let nonmembers = test.subset(&draw(test.len()));
    let cm = true_label_confidence(model, &members.features, &members.labels, fv)?;
    let cq = true_label_confidence(model, &nonmembers.features, &nonmembers.labels, fv)?;
    let (threshold, balanced_accuracy) = fit_threshold(&cm, &cq)?;
    Ok(MiaPredictor {
        threshold,
        balanced_accuracy,
        pool_size: n,
    })
}

/// Percentage of forget rows the predictor labels as non-members.
pub fn mia_efficacy(
    predictor: &MiaPredictor,
    model: &ClassifierModel,
    forget: &LabeledDataset,
    fv: Option<&ForgetVector>,
) -> Result<f64> {
    if forget.is_empty() {
        return Err(Error::input(
            "MIA-Efficacy of an empty forget set is undefined",
        ));
    }
    let conf = true_label_confidence(model, &forget.features, &forget.labels, fv)?;
    let true_negatives = conf.iter().filter(|&&c| !predictor.is_member(c)).count();
    Ok(100.0 * true_negatives as f64 / forget.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaps {
    pub ua: f64,
    pub mia_efficacy: f64,
    pub ra: f64,
    pub ta: f64,
}

impl Gaps {
    pub fn mean(&self) -> f64 {
        (self.ua + self.mia_efficacy + self.ra + self.ta) / 4.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnlearnReport {
    pub method: String,
    pub seed: u64,
    pub ua: f64,
    pub mia_efficacy: f64,
    pub ra: f64,
    pub ta: f64,
    /// Absolute per-metric differences from the reference, when one exists.
    pub gaps: Option<Gaps>,
    pub avg_gap: Option<f64>,
    pub runtime_s: Option<f64>,
    pub param_count: usize,
}

impl UnlearnReport {
    pub fn gaps_to(&self, reference: &UnlearnReport) -> Gaps {
        Gaps {
            ua: (self.ua - reference.ua).abs(),
            mia_efficacy: (self.mia_efficacy - reference.mia_efficacy).abs(),
            ra: (self.ra - reference.ra).abs(),
            ta: (self.ta - reference.ta).abs(),
        }
    }

    /// Copy with every percentage rounded to two decimals.
    pub fn rounded(&self) -> UnlearnReport {
        let g = |g: Gaps| Gaps {
            ua: round2(g.ua),
            mia_efficacy: round2(g.mia_efficacy),
            ra: round2(g.ra),
            ta: round2(g.ta),
        };
        UnlearnReport {
            ua: round2(self.ua),
            mia_efficacy: round2(self.mia_efficacy),
            ra: round2(self.ra),
            ta: round2(self.ta),
            gaps: self.gaps.map(g),
            avg_gap: self.avg_gap.map(round2),
            ..self.clone()
        }
    }

    /// Pretty JSON with percentages at two decimals.
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(&self.rounded())?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl fmt::Display for UnlearnReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<16} UA {:>6.2}  MIA {:>6.2}  RA {:>6.2}  TA {:>6.2}",
            self.method, self.ua, self.mia_efficacy, self.ra, self.ta
        )?;
        if let Some(avg) = self.avg_gap {
            write!(f, "  Avg.Gap {avg:>6.2}")?;
        }
        Ok(())
    }
}

/// Mean of the four absolute metric gaps, rounded to two decimals.
pub fn avg_gap(report: &UnlearnReport, reference: &UnlearnReport) -> f64 {
    round2(report.gaps_to(reference).mean())
}

/// Forget, retain and scored test rows resolved from a split, plus the seed
/// of the membership-inference pool draw.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSets {
    pub forget: LabeledDataset,
    pub retain: LabeledDataset,
    pub test: LabeledDataset,
    pub spec: SplitSpec,
    pub mia_seed: u64,
}

impl EvalSets {
    pub fn resolve(
        train: &LabeledDataset,
        test: &LabeledDataset,
        split: &ForgetSplit,
        mia_seed: u64,
    ) -> Result<Self> {
        if split.total() != train.len() {
            return Err(Error::input(format!(
                "split covers {} rows but the training set has {}",
                split.total(),
                train.len()
            )));
        }
        Ok(Self {
            forget: split.forget_set(train),
            retain: split.retain_set(train),
            test: ta_rows(test, &split.spec)?,
            spec: split.spec.clone(),
            mia_seed,
        })
    }

    pub fn image_shape(&self) -> Option<ImageShape> {
        self.retain.image_shape
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportMeta {
    pub method: String,
    pub seed: u64,
    pub param_count: usize,
    pub runtime_s: Option<f64>,
}

/// Scores `model` (with `fv` applied to every evaluation set when given)
/// and, with a reference, fills the gaps and their average.
pub fn evaluate(
    model: &ClassifierModel,
    fv: Option<&ForgetVector>,
    sets: &EvalSets,
    reference: Option<&UnlearnReport>,
    meta: ReportMeta,
) -> Result<UnlearnReport> {
    let ua = compute_ua(model, &sets.forget, fv)?;
    let ra = accuracy(model, &sets.retain.features, &sets.retain.labels, fv)?;
    let ta = accuracy(model, &sets.test.features, &sets.test.labels, fv)?;
    let predictor = train_mia(model, &sets.retain, &sets.test, sets.mia_seed, fv)?;
    let mia = mia_efficacy(&predictor, model, &sets.forget, fv)?;
    let mut report = UnlearnReport {
        method: meta.method,
        seed: meta.seed,
        ua,
        mia_efficacy: mia,
        ra,
        ta,
        gaps: None,
        avg_gap: None,
        runtime_s: meta.runtime_s,
        param_count: meta.param_count,
    };
    if let Some(r) = reference {
        report.gaps = Some(report.gaps_to(r));
        report.avg_gap = Some(avg_gap(&report, r));
    }
    Ok(report)
}

/// Mean and sample standard deviation (`n - 1`; zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub ua: f64,
    pub mia_efficacy: f64,
    pub ra: f64,
    pub ta: f64,
}

impl From<&UnlearnReport> for MetricSet {
    fn from(r: &UnlearnReport) -> Self {
        Self {
            ua: r.ua,
            mia_efficacy: r.mia_efficacy,
            ra: r.ra,
            ta: r.ta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub perturbation: String,
    pub trials: Vec<MetricSet>,
}

impl RobustnessRow {
    /// `(set, metric, values)` in CSV order.
    pub fn series(&self) -> Vec<(&'static str, &'static str, Vec<f64>)> {
        let pick = |f: fn(&MetricSet) -> f64| self.trials.iter().map(f).collect::<Vec<_>>();
        vec![
            ("forget", "ua", pick(|m| m.ua)),
            ("forget", "mia_efficacy", pick(|m| m.mia_efficacy)),
            ("retain", "ra", pick(|m| m.ra)),
            ("test", "ta", pick(|m| m.ta)),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessTable {
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessTable {
    pub fn row(&self, name: &str) -> Option<&RobustnessRow> {
        self.rows.iter().find(|r| r.perturbation == name)
    }

    /// `perturbation,set,metric,mean,std`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("perturbation,set,metric,mean,std\n");
        for row in &self.rows {
            for (set, metric, values) in row.series() {
                let (mean, std) = mean_std(&values);
                out.push_str(&format!(
                    "{},{set},{metric},{:.2},{:.2}\n",
                    row.perturbation,
                    round2(mean),
                    round2(std)
                ));
            }
        }
        out
    }
}

fn shift_set(
    model: &ClassifierModel,
    fv: Option<&ForgetVector>,
    set: &LabeledDataset,
    perturbation: &Perturbation,
    trial_seed: u64,
    set_tag: &str,
) -> Result<LabeledDataset> {
    let features = match perturbation {
        Perturbation::Benign => return Ok(set.clone()),
        Perturbation::Corruption(spec) => {
            let spec = CorruptionSpec {
                seed: rng::derive_seed(spec.seed ^ trial_seed, set_tag),
                ..*spec
            };
            spec.apply(&set.features, set.image_shape)?
        }
        Perturbation::Pgd(cfg) => pgd_attack(
            model,
            &set.features,
            &set.labels,
            cfg,
            set.image_shape.is_some(),
            fv.map(|v| v.delta.as_slice()),
        )?,
    };
    set.with_features(features)
}

/// Evaluates under every suite entry; each trial seed re-draws the random
/// shifts. The forget vector, when given, is added after the shift.
pub fn robustness_sweep(
    model: &ClassifierModel,
    fv: Option<&ForgetVector>,
    sets: &EvalSets,
    suite: &[SuiteEntry],
    trial_seeds: &[u64],
) -> Result<RobustnessTable> {
    if trial_seeds.is_empty() {
        return Err(Error::config(
            "a robustness sweep needs at least one trial seed",
        ));
    }
    let mut rows = Vec::with_capacity(suite.len());
    for entry in suite {
        let mut trials = Vec::with_capacity(trial_seeds.len());
        for &seed in trial_seeds {
            let shifted = EvalSets {
                forget: shift_set(model, fv, &sets.forget, &entry.perturbation, seed, "forget")?,
                retain: shift_set(model, fv, &sets.retain, &entry.perturbation, seed, "retain")?,
                test: shift_set(model, fv, &sets.test, &entry.perturbation, seed, "test")?,
                ..sets.clone()
            };
            let report = evaluate(
                model,
                fv,
                &shifted,
                None,
                ReportMeta {
                    method: entry.name.clone(),
                    seed,
                    param_count: 0,
                    runtime_s: None,
                },
            )?;
            trials.push(MetricSet::from(&report));
        }
        rows.push(RobustnessRow {
            perturbation: entry.name.clone(),
            trials,
        });
    }
    Ok(RobustnessTable { rows })
}

/// Unseen forget data used to test whether a forget vector transfers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransferVariant {
    /// Test rows of the forgotten class (class-wise splits only).
    TestClass,
    /// Forget rows under Gaussian noise; `sigma` defaults to 0.08.
    Gn1 { sigma: Option<f64> },
    /// Forget rows under the ET1 elastic warp.
    Et1,
}

/// UA of `fv` on the variant's forget set.
pub fn transfer_eval(
    fv: &ForgetVector,
    model: &ClassifierModel,
    variant: TransferVariant,
    train: &LabeledDataset,
    test: &LabeledDataset,
    split: &ForgetSplit,
    seed: u64,
) -> Result<f64> {
    let forget = match variant {
        TransferVariant::TestClass => {
            let class = split.spec.forgotten_class().ok_or_else(|| {
                Error::config("the test-class transfer set needs a class-wise split")
            })?;
            let rows = test.subset(&test.indices_of_class(class));
            if rows.is_empty() {
                return Err(Error::input(format!("no test rows of class {class}")));
            }
            rows
        }
        TransferVariant::Gn1 { sigma } => {
            let base = split.forget_set(train);
            let spec = CorruptionSpec::gaussian(sigma.unwrap_or(0.08), seed);
            base.with_features(spec.apply(&base.features, base.image_shape)?)?
        }
        TransferVariant::Et1 => {
            let base = split.forget_set(train);
            let spec = CorruptionSpec::et1(seed);
            base.with_features(spec.apply(&base.features, base.image_shape)?)?
        }
    };
    compute_ua(model, &forget, Some(fv))
}

/// Argmax predictions of `model` on `x + delta`, row by row. Exposed for
/// bindings that want raw predictions under a vector.
pub fn predict_with(
    model: &ClassifierModel,
    x: &Matrix,
    fv: Option<&ForgetVector>,
) -> Result<Vec<usize>> {
    let logits = model.forward_logits(&perturbed(x, fv)?)?;
    Ok(logits.iter_rows().map(argmax).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one_average_gaps() {
        let zero = UnlearnReport {
            method: "ref".into(),
            seed: 0,
            ua: 0.0,
            mia_efficacy: 0.0,
            ra: 0.0,
            ta: 0.0,
            gaps: None,
            avg_gap: None,
            runtime_s: None,
            param_count: 0,
        };
        let with = |ua, mia, ra, ta| UnlearnReport {
            ua,
            mia_efficacy: mia,
            ra,
            ta,
            ..zero.clone()
        };
        assert_eq!(avg_gap(&with(2.12, 0.40, 2.66, 4.02), &zero), 2.30);
        assert_eq!(avg_gap(&with(1.78, 0.47, 0.51, 1.19), &zero), 0.99);
        let r = with(12.0, 40.0, 99.0, 97.5);
        assert_eq!(avg_gap(&r, &r), 0.0);
    }

    #[test]
    fn separable_confidences() {
        let (t, bal) = fit_threshold(&[0.9; 5], &[0.1; 5]).unwrap();
        assert!(t > 0.1 && t < 0.9);
        assert_eq!(bal, 1.0);
    }

    #[test]
    fn identical_confidences() {
        let (t, bal) = fit_threshold(&[0.4; 3], &[0.4; 3]).unwrap();
        assert_eq!(t, 0.4);
        assert_eq!(bal, 0.5);
    }

    #[test]
    fn empty_pool_is_rejected() {
        assert!(matches!(fit_threshold(&[], &[0.1]), Err(Error::Input(_))));
    }

    #[test]
    fn mean_std_conventions() {
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
        let (m, s) = mean_std(&[2.0, 4.0]);
        assert_eq!(m, 3.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn class_exclusion_can_empty_the_test_set() {
        let d = crate::data::make_blobs(2, 2, 3, 1.0, 0.1, 0).unwrap();
        let only_class_one = d.subset(&d.indices_of_class(1));
        let err = ta_rows(&only_class_one, &SplitSpec::ClassWise { class: 1 }).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
        let kept = ta_rows(
            &d,
            &SplitSpec::Random {
                ratio: 0.5,
                seed: 0,
            },
        )
        .unwrap();
        assert_eq!(kept, d);
    }
}

//! Compositional unlearning: new forget vectors as weighted sums of
//! precomputed class-wise vectors, with only the weights optimized.

use serde::{Deserialize, Serialize};

use crate::data::{split_forget_retain, ForgetSplit, LabeledDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, round2, EvalSets, ReportMeta, UnlearnReport};
use crate::forget_vector::{
    optimize_forget_vector, trace_entry, unlearn_objective, ForgetVector, ForgetVectorConfig,
    ObjectiveWeights, Provenance, TraceEntry,
};
use crate::nn::ClassifierModel;
use crate::optim::{paired_batch_descent, SgdSchedule};
use crate::tensor::{dot, Matrix};

/// One forget vector per class, tied to the model they were optimized for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassVectorBank {
    vectors: Vec<ForgetVector>,
    fingerprint: String,
}

impl ClassVectorBank {
    pub fn new(vectors: Vec<ForgetVector>, fingerprint: String) -> Result<Self> {
        let dim = vectors
            .first()
            .ok_or_else(|| Error::input("a vector bank needs at least one vector"))?
            .dim();
        if vectors.iter().any(|v| v.dim() != dim) {
            return Err(Error::shape("bank vectors differ in dimension"));
        }
        Ok(Self {
            vectors,
            fingerprint,
        })
    }

    /// Optimizes one class-wise vector per class of `model`.
    pub fn build(
        model: &ClassifierModel,
        train: &LabeledDataset,
        cfg: &ForgetVectorConfig,
    ) -> Result<Self> {
        let vectors = (0..model.class_count())
            .map(|class| {
                let split = split_forget_retain(train, &SplitSpec::ClassWise { class })?;
                Ok(optimize_forget_vector(model, train, &split, cfg)?.0)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(vectors, model.checksum())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].dim()
    }

    pub fn vectors(&self) -> &[ForgetVector] {
        &self.vectors
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn check_model(&self, model: &ClassifierModel) -> Result<()> {
        if model.checksum() != self.fingerprint {
            return Err(Error::Compatibility(
                "vector bank was built for a different model".into(),
            ));
        }
        if model.input_dim() != self.dim() {
            return Err(Error::shape("bank dimension differs from model input"));
        }
        Ok(())
    }

    pub fn round_to_f32(&self) -> Self {
        Self {
            vectors: self
                .vectors
                .iter()
                .map(ForgetVector::round_to_f32)
                .collect(),
            fingerprint: self.fingerprint.clone(),
        }
    }

    fn combine(&self, weights: &[f64]) -> Vec<f64> {
        let mut delta = vec![0.0; self.dim()];
        for (v, &w) in self.vectors.iter().zip(weights) {
            for (d, x) in delta.iter_mut().zip(&v.delta) {
                *d += w * x;
            }
        }
        delta
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionWeights {
    pub w: Vec<f64>,
}

/// `sum_k w_k delta_k` for a bank that belongs to `model`.
pub fn compose(
    bank: &ClassVectorBank,
    model: &ClassifierModel,
    weights: &CompositionWeights,
) -> Result<ForgetVector> {
    bank.check_model(model)?;
    if weights.w.len() != bank.len() {
        return Err(Error::shape(format!(
            "{} weights for a bank of {} vectors",
            weights.w.len(),
            bank.len()
        )));
    }
    if weights.w.iter().any(|w| !w.is_finite()) {
        return Err(Error::input("composition weights must be finite"));
    }
    Ok(ForgetVector {
        delta: bank.combine(&weights.w),
        provenance: Provenance::Composed {
            weights: weights.w.clone(),
        },
        config: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompositionConfig {
    pub tau: f64,
    pub lambda1: f64,
    /// Penalty on `||w||^2` (not on the composed vector).
    pub lambda2: f64,
    pub lr0: f64,
    pub momentum: f64,
    pub decay: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            lambda1: 1.0,
            lambda2: 1.0,
            lr0: 0.01,
            momentum: 0.9,
            decay: 0.9,
            batch_size: 256,
            max_iterations: 40,
            seed: 0,
        }
    }
}

impl CompositionConfig {
    fn schedule(&self) -> SgdSchedule {
        SgdSchedule {
            lr0: self.lr0,
            momentum: self.momentum,
            decay: self.decay,
            batch_size: self.batch_size,
            max_iterations: self.max_iterations,
            seed: self.seed,
        }
    }
}

/// Weight-space objective and its gradient:
/// `d/dw_k = <d loss / d delta, delta_k> + 2 lambda2 w_k`.
pub fn weight_objective(
    model: &ClassifierModel,
    bank: &ClassVectorBank,
    w: &[f64],
    forget: (&Matrix, &[usize]),
    retain: (&Matrix, &[usize]),
    cfg: &CompositionConfig,
) -> Result<(f64, Vec<f64>)> {
    if w.len() != bank.len() {
        return Err(Error::shape("weight count differs from bank size"));
    }
    let delta = bank.combine(w);
    let inner = ObjectiveWeights {
        tau: cfg.tau,
        lambda1: cfg.lambda1,
        lambda2: 0.0,
    };
    let obj = unlearn_objective(model, &delta, forget, retain, &inner)?;
    let penalty: f64 = w.iter().map(|v| v * v).sum();
    let grad = bank
        .vectors
        .iter()
        .zip(w)
        .map(|(v, &wk)| dot(&obj.grad, &v.delta) + 2.0 * cfg.lambda2 * wk)
        .collect();
    Ok((obj.value + cfg.lambda2 * penalty, grad))
}

/// Optimizes the combination weights from zero for `split`.
pub fn optimize_weights(
    model: &ClassifierModel,
    bank: &ClassVectorBank,
    train: &LabeledDataset,
    split: &ForgetSplit,
    cfg: &CompositionConfig,
) -> Result<(CompositionWeights, ForgetVector, Vec<TraceEntry>)> {
    bank.check_model(model)?;
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
    let mut w = vec![0.0; bank.len()];
    let mut trace = Vec::with_capacity(cfg.max_iterations);
    paired_batch_descent(
        &mut w,
        &cfg.schedule(),
        forget.len(),
        if cfg.lambda1 != 0.0 { retain.len() } else { 0 },
        |w, fb, rb| {
            let xf = forget.features.select_rows(fb);
            let yf: Vec<usize> = fb.iter().map(|&i| forget.labels[i]).collect();
            let xr = retain.features.select_rows(rb);
            let yr: Vec<usize> = rb.iter().map(|&i| retain.labels[i]).collect();
            weight_objective(model, bank, w, (&xf, &yf), (&xr, &yr), cfg)
        },
        |t, w, loss| {
            let fv = ForgetVector::direct(bank.combine(w));
            trace.push(trace_entry(model, &forget, &retain, &fv, t, loss)?);
            Ok(())
        },
    )?;
    let weights = CompositionWeights { w };
    let fv = compose(bank, model, &weights)?;
    Ok((weights, fv, trace))
}

/// Evenly spaced axis values from `lo` to `hi` inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for GridAxis {
    fn default() -> Self {
        Self {
            lo: -0.2,
            hi: 0.2,
            step: 0.05,
        }
    }
}

impl GridAxis {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0)
            || !(self.hi >= self.lo)
            || !self.lo.is_finite()
            || !self.hi.is_finite()
        {
            return Err(Error::config(format!("empty grid {self:?}")));
        }
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..count)
            .map(|i| {
                let v = self.lo + i as f64 * self.step;
                // snap float residue so the origin cell is exactly zero
                if v.abs() < self.step * 1e-9 {
                    0.0
                } else {
                    v
                }
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub w_a: f64,
    pub w_b: f64,
    pub ua_gap: f64,
    pub ra_gap: f64,
    /// Mean of the UA and RA gaps.
    pub avg_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSweep {
    pub classes: (usize, usize),
    pub axis: Vec<f64>,
    /// Row-major: `w_a` outer, `w_b` inner, both ascending.
    pub cells: Vec<GridCell>,
    pub best: usize,
}

impl GridSweep {
    pub fn best_cell(&self) -> &GridCell {
        &self.cells[self.best]
    }

    pub fn cell(&self, w_a: f64, w_b: f64) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.w_a == w_a && c.w_b == w_b)
    }

    /// `w_a,w_b,ua_gap,ra_gap,avg_gap`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("w_a,w_b,ua_gap,ra_gap,avg_gap\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                round6(c.w_a),
                round6(c.w_b),
                c.ua_gap,
                c.ra_gap,
                c.avg_gap
            ));
        }
        out
    }

    /// One gap as a matrix table: rows `w_a`, columns `w_b`.
    pub fn table_csv(&self, pick: fn(&GridCell) -> f64) -> String {
        let n = self.axis.len();
        let mut out = String::from("w_a\\w_b");
        for v in &self.axis {
            out.push_str(&format!(",{}", round6(*v)));
        }
        out.push('\n');
        for (i, wa) in self.axis.iter().enumerate() {
            out.push_str(&round6(*wa).to_string());
            for j in 0..n {
                out.push_str(&format!(",{}", pick(&self.cells[i * n + j])));
            }
            out.push('\n');
        }
        out
    }
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Argmin of `avg_gap`, ties to the lexicographically smallest `(w_a, w_b)`.
pub fn select_best(cells: &[GridCell]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let bc = &cells[b];
                c.avg_gap < bc.avg_gap
                    || (c.avg_gap == bc.avg_gap && (c.w_a, c.w_b) < (bc.w_a, bc.w_b))
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Scores every `(w_a, w_b)` combination of two bank vectors against the
/// retrained reference.
pub fn grid_sweep_2d(
    model: &ClassifierModel,
    bank: &ClassVectorBank,
    classes: (usize, usize),
    sets: &EvalSets,
    reference: &UnlearnReport,
    axis: &GridAxis,
) -> Result<GridSweep> {
    bank.check_model(model)?;
    let (a, b) = classes;
    if a >= bank.len() || b >= bank.len() || a == b {
        return Err(Error::config(format!(
            "grid classes {classes:?} must be two distinct bank entries"
        )));
    }
    let values = axis.values()?;
    let mut cells = Vec::with_capacity(values.len() * values.len());
    for &w_a in &values {
        for &w_b in &values {
            let mut w = vec![0.0; bank.len()];
            w[a] = w_a;
            w[b] = w_b;
            let fv = compose(bank, model, &CompositionWeights { w })?;
            let report = evaluate(
                model,
                Some(&fv),
                sets,
                Some(reference),
                ReportMeta {
                    method: "grid".into(),
                    seed: 0,
                    param_count: 2,
                    runtime_s: None,
                },
            )?;
            let gaps = report.gaps.expect("reference given");
            let ua_gap = round2(gaps.ua);
            let ra_gap = round2(gaps.ra);
            cells.push(GridCell {
                w_a,
                w_b,
                ua_gap,
                ra_gap,
                avg_gap: round2((ua_gap + ra_gap) / 2.0),
            });
        }
    }
    let best = select_best(&cells).ok_or_else(|| Error::config("empty grid"))?;
    Ok(GridSweep {
        classes,
        axis: values,
        cells,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank_for(model: &ClassifierModel, vectors: Vec<Vec<f64>>) -> ClassVectorBank {
        ClassVectorBank::new(
            vectors.into_iter().map(ForgetVector::direct).collect(),
            model.checksum(),
        )
        .unwrap()
    }

    #[test]
    fn one_hot_weights_select_a_vector() {
        let model = ClassifierModel::init(&[3, 2], 0).unwrap();
        let bank = bank_for(&model, vec![vec![1.0, 2.0, 3.0], vec![-0.5, 0.25, 4.0]]);
        let v = compose(&bank, &model, &CompositionWeights { w: vec![0.0, 1.0] }).unwrap();
        assert_eq!(v.delta, bank.vectors()[1].delta);
        let zero = compose(&bank, &model, &CompositionWeights { w: vec![0.0, 0.0] }).unwrap();
        assert!(zero.delta.iter().all(|&d| d == 0.0));
        let mid = compose(&bank, &model, &CompositionWeights { w: vec![0.5, 0.5] }).unwrap();
        for j in 0..3 {
            let mean = 0.5 * (bank.vectors()[0].delta[j] + bank.vectors()[1].delta[j]);
            assert!((mid.delta[j] - mean).abs() < 1e-15);
        }
        assert_eq!(
            mid.provenance,
            Provenance::Composed {
                weights: vec![0.5, 0.5]
            }
        );
    }

    #[test]
    fn foreign_model_is_rejected() {
        let model = ClassifierModel::init(&[3, 2], 0).unwrap();
        let other = ClassifierModel::init(&[3, 2], 1).unwrap();
        let bank = bank_for(&model, vec![vec![1.0; 3], vec![2.0; 3]]);
        let err = compose(&bank, &other, &CompositionWeights { w: vec![1.0, 0.0] }).unwrap_err();
        assert!(matches!(err, Error::Compatibility(_)));
    }

    #[test]
    fn degenerate_bank_gradient_is_the_penalty() {
        let model = ClassifierModel::init(&[3, 4, 2], 0).unwrap();
        let bank = bank_for(&model, vec![vec![0.0; 3], vec![0.0; 3]]);
        let xf = Matrix::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap();
        let xr = Matrix::from_rows(&[vec![0.3, 0.2, 0.1]]).unwrap();
        let cfg = CompositionConfig::default();
        let w = [0.3, -0.7];
        let (_, g) = weight_objective(&model, &bank, &w, (&xf, &[0]), (&xr, &[1]), &cfg).unwrap();
        assert_eq!(g, vec![2.0 * cfg.lambda2 * w[0], 2.0 * cfg.lambda2 * w[1]]);
    }

    #[test]
    fn default_axis_has_nine_points_with_exact_zero() {
        let v = GridAxis::default().values().unwrap();
        assert_eq!(v.len(), 9);
        assert_eq!(v[0], -0.2);
        assert_eq!(v[4], 0.0);
        assert!((v[8] - 0.2).abs() < 1e-12);
        assert!(matches!(
            GridAxis {
                lo: 0.1,
                hi: -0.1,
                step: 0.05
            }
            .values(),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn best_cell_ties_go_lexicographic() {
        let cell = |w_a, w_b, avg_gap| GridCell {
            w_a,
            w_b,
            ua_gap: 0.0,
            ra_gap: 0.0,
            avg_gap,
        };
        let cells = [
            cell(0.1, 0.0, 1.0),
            cell(-0.1, 0.2, 1.0),
            cell(-0.1, 0.1, 1.0),
            cell(0.0, 0.0, 2.0),
        ];
        assert_eq!(select_best(&cells), Some(2));
    }
}

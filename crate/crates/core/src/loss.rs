//! Scalar losses over logit matrices and their gradients with respect to the
//! logits. Backpropagation through the network lives in [`crate::nn`].

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise softmax with max-shift.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_inplace(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_inplace(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::shape(format!(
            "{} labels for {rows} rows",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::input(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Mean cross-entropy of `labels` under softmax(`logits`).
pub fn softmax_ce(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(labels, logits.rows(), logits.cols())?;
    if labels.is_empty() {
        return Err(Error::input("cross-entropy of an empty batch"));
    }
    let total: f64 = logits
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| log_sum_exp(row) - row[y])
        .sum();
    Ok(total / labels.len() as f64)
}

/// `f_y - max_{k != y} f_k` together with the maximizing `k` (lowest on ties).
pub fn logit_margin(row: &[f64], y: usize) -> (f64, usize) {
    let mut rival = if y == 0 { 1 } else { 0 };
    for (k, &v) in row.iter().enumerate() {
        if k != y && v > row[rival] {
            rival = k;
        }
    }
    (row[y] - row[rival], rival)
}

/// Mean of `max(f_y - max_{k != y} f_k, -tau)`.
pub fn margin_loss_from_logits(logits: &Matrix, labels: &[usize], tau: f64) -> Result<f64> {
    check_margin_inputs(logits, labels, tau)?;
    let total: f64 = logits
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| logit_margin(row, y).0.max(-tau))
        .sum();
    Ok(total / labels.len() as f64)
}

fn check_margin_inputs(logits: &Matrix, labels: &[usize], tau: f64) -> Result<()> {
    if logits.cols() < 2 {
        return Err(Error::config("margin loss needs at least two classes"));
    }
    if !(tau >= 0.0) {
        return Err(Error::config(format!(
            "margin threshold must be >= 0, got {tau}"
        )));
    }
    check_labels(labels, logits.rows(), logits.cols())?;
    if labels.is_empty() {
        return Err(Error::input("margin loss of an empty batch"));
    }
    Ok(())
}

/// Which scalar loss to differentiate.
#[derive(Clone, Debug, PartialEq)]
pub enum LossSpec {
    CrossEntropy,
    Margin {
        tau: f64,
    },
    /// Margin loss averaged over the rows flagged in `forget_mask` plus
    /// `lambda1` times cross-entropy averaged over the remaining rows.
    Composite {
        tau: f64,
        lambda1: f64,
        forget_mask: Vec<bool>,
    },
}

/// Loss family name as accepted by the CLI and bindings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Margin,
    Composite,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" | "cross_entropy" => Ok(LossKind::CrossEntropy),
            "margin" => Ok(LossKind::Margin),
            "composite" => Ok(LossKind::Composite),
            other => Err(Error::config(format!("unknown loss `{other}`"))),
        }
    }
}

/// Loss value and `d loss / d logits`.
pub fn loss_and_logit_grad(
    logits: &Matrix,
    labels: &[usize],
    spec: &LossSpec,
) -> Result<(f64, Matrix)> {
    match spec {
        LossSpec::CrossEntropy => {
            let loss = softmax_ce(logits, labels)?;
            let mut grad = softmax_rows(logits);
            let n = labels.len() as f64;
            for (r, &y) in labels.iter().enumerate() {
                let row = grad.row_mut(r);
                row[y] -= 1.0;
                row.iter_mut().for_each(|v| *v /= n);
            }
            Ok((loss, grad))
        }
        LossSpec::Margin { tau } => {
            check_margin_inputs(logits, labels, *tau)?;
            let n = labels.len() as f64;
            let mut grad = Matrix::zeros(logits.rows(), logits.cols());
            let mut total = 0.0;
            for (r, &y) in labels.iter().enumerate() {
                let (m, rival) = logit_margin(logits.row(r), y);
                total += m.max(-*tau);
                // flat on the clamped side; the kink itself takes the flat branch
                if m > -*tau {
                    let g = grad.row_mut(r);
                    g[y] += 1.0 / n;
                    g[rival] -= 1.0 / n;
                }
            }
            Ok((total / n, grad))
        }
        LossSpec::Composite {
            tau,
            lambda1,
            forget_mask,
        } => {
            if forget_mask.len() != logits.rows() {
                return Err(Error::shape(format!(
                    "forget mask of length {} for {} rows",
                    forget_mask.len(),
                    logits.rows()
                )));
            }
            let forget: Vec<usize> = (0..logits.rows()).filter(|&i| forget_mask[i]).collect();
            let retain: Vec<usize> = (0..logits.rows()).filter(|&i| !forget_mask[i]).collect();
            if forget.is_empty() {
                return Err(Error::input("composite loss needs at least one forget row"));
            }
            let pick = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<_>>();
            let (lf, gf) = loss_and_logit_grad(
                &logits.select_rows(&forget),
                &pick(&forget),
                &LossSpec::Margin { tau: *tau },
            )?;
            let mut grad = Matrix::zeros(logits.rows(), logits.cols());
            for (j, &i) in forget.iter().enumerate() {
                grad.row_mut(i).copy_from_slice(gf.row(j));
            }
            let mut loss = lf;
            if *lambda1 != 0.0 {
                if retain.is_empty() {
                    return Err(Error::input(
                        "retain rows are required when the retain weight is nonzero",
                    ));
                }
                let (lr, gr) = loss_and_logit_grad(
                    &logits.select_rows(&retain),
                    &pick(&retain),
                    &LossSpec::CrossEntropy,
                )?;
                loss += lambda1 * lr;
                for (j, &i) in retain.iter().enumerate() {
                    for (a, b) in grad.row_mut(i).iter_mut().zip(gr.row(j)) {
                        *a = lambda1 * b;
                    }
                }
            }
            Ok((loss, grad))
        }
    }
}

//! Imbalance-aware evaluation: per-class error rates, BER, worst-class error,
//! worst-k average and Many/Medium/Few group statistics.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::MlpModel;
use crate::numerics::{argmax, mean, std_dev};

/// Fraction of `n_L` at or above which a class is in the Many group.
pub const MANY_THRESHOLD: f64 = 0.2;
/// Fraction of `n_L` at or above which a class is at least Medium.
pub const MEDIUM_THRESHOLD: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Many,
    Medium,
    Few,
}

/// Mean and sample standard deviation of the per-class errors in a group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub mean: f64,
    pub std: f64,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupErrors {
    pub many: Option<GroupStat>,
    pub medium: Option<GroupStat>,
    pub few: Option<GroupStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_error: Vec<f64>,
    pub ber: f64,
    pub wer: f64,
    pub wer_k: (usize, f64),
    /// Present when training counts were supplied.
    pub groups: Option<GroupErrors>,
    pub n_eval: Vec<usize>,
}

/// Assigns each class to Many (`n_j ≥ 0.2 n_L`), Medium
/// (`0.04 n_L ≤ n_j < 0.2 n_L`) or Few, with `n_L` the largest count.
pub fn group_partition(train_counts: &[usize]) -> Vec<Group> {
    let n_max = train_counts.iter().copied().max().unwrap_or(0) as f64;
    train_counts
        .iter()
        .map(|&c| {
            let c = c as f64;
            if c >= MANY_THRESHOLD * n_max {
                Group::Many
            } else if c >= MEDIUM_THRESHOLD * n_max {
                Group::Medium
            } else {
                Group::Few
            }
        })
        .collect()
}

/// Mean of the `k` largest per-class errors.
pub fn worst_k(per_class_error: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > per_class_error.len() {
        return Err(Error::arg(format!(
            "k={k} outside 1..={}",
            per_class_error.len()
        )));
    }
    let mut sorted = per_class_error.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}

pub fn group_errors(per_class_error: &[f64], train_counts: &[usize]) -> Result<GroupErrors> {
    if per_class_error.len() != train_counts.len() {
        return Err(Error::shape("one training count per class required"));
    }
    let groups = group_partition(train_counts);
    let stat = |g: Group| {
        let v: Vec<f64> = per_class_error
            .iter()
            .zip(&groups)
            .filter(|(_, &gg)| gg == g)
            .map(|(e, _)| *e)
            .collect();
        (!v.is_empty()).then(|| GroupStat {
            mean: mean(&v),
            std: std_dev(&v),
            classes: v.len(),
        })
    };
    Ok(GroupErrors {
        many: stat(Group::Many),
        medium: stat(Group::Medium),
        few: stat(Group::Few),
    })
}

/// Builds a report from predicted and true labels.
pub fn report_from_predictions(
    predictions: &[usize],
    labels: &[usize],
    classes: usize,
    train_counts: Option<&[usize]>,
    wer_k: usize,
) -> Result<EvalReport> {
    if predictions.len() != labels.len() {
        return Err(Error::shape("predictions and labels differ in length"));
    }
    let mut seen = vec![0usize; classes];
    let mut wrong = vec![0usize; classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if y >= classes {
            return Err(Error::arg(format!("label {y} out of range")));
        }
        seen[y] += 1;
        if p != y {
            wrong[y] += 1;
        }
    }
    if let Some(j) = seen.iter().position(|&c| c == 0) {
        return Err(Error::arg(format!("class {j} has no evaluation samples")));
    }
    let per_class_error: Vec<f64> = wrong
        .iter()
        .zip(&seen)
        .map(|(&w, &s)| w as f64 / s as f64)
        .collect();
    let ber = mean(&per_class_error);
    let wer = per_class_error.iter().copied().fold(0.0, f64::max);
    let k = wer_k.clamp(1, classes);
    let groups = train_counts
        .map(|c| group_errors(&per_class_error, c))
        .transpose()?;
    Ok(EvalReport {
        wer_k: (k, worst_k(&per_class_error, k)?),
        per_class_error,
        ber,
        wer,
        groups,
        n_eval: seen,
    })
}

/// Argmax predictions of the model, ties to the lowest class index.
pub fn predict(model: &MlpModel, data: &LabeledDataset) -> Result<Vec<usize>> {
    let logits = model.forward(data.features())?;
    Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
}

/// Zero-one evaluation of `model` on `data`. `train_counts` enables the
/// Many/Medium/Few statistics; `wer_k` is clamped to `1..=L`.
pub fn evaluate(
    model: &MlpModel,
    data: &LabeledDataset,
    train_counts: Option<&[usize]>,
    wer_k: usize,
) -> Result<EvalReport> {
    if model.num_classes() != data.num_classes() {
        return Err(Error::shape("model output width differs from the number of classes"));
    }
    let preds = predict(model, data)?;
    report_from_predictions(&preds, data.labels(), data.num_classes(), train_counts, wer_k)
}

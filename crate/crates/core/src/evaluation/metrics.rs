use serde::{Deserialize, Serialize};

use crate::datasets::Label;
use crate::error::{Error, Result};

/// Probability that a random unknown outscores a random known, ties counting one half.
///
/// Computed from average ranks (Mann-Whitney U) in `O(n log n)`.
pub fn auroc(scores: &[f64], is_unknown: &[bool]) -> Result<f64> {
    if scores.len() != is_unknown.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let n_u = is_unknown.iter().filter(|&&u| u).count();
    let n_k = scores.len() - n_u;
    if n_u == 0 || n_k == 0 {
        return Err(Error::invalid("AUROC needs both known and unknown samples"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based average rank of the tie block i..=j
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| is_unknown[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_u * (n_u + 1)) as f64 / 2.0;
    Ok(u / (n_u as f64 * n_k as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: Label,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub macro_f1: f64,
    /// Known classes `0..C` followed by the unknown row.
    pub per_class: Vec<ClassScore>,
}

/// Macro-averaged F1 over the vocabulary `Class(0..classes)` plus `Unknown`.
///
/// Every vocabulary entry contributes, including ones that never occur
/// (their F1 is 0). Labels outside the vocabulary are an error.
pub fn macro_f1(predictions: &[Label], truth: &[Label], classes: usize) -> Result<F1Report> {
    if predictions.len() != truth.len() {
        return Err(Error::invalid("predictions and truth differ in length"));
    }
    let slot = |l: &Label| match *l {
        Label::Class(k) if k < classes => Ok(k),
        Label::Unknown => Ok(classes),
        Label::Class(k) => Err(Error::invalid(format!("label {k} is outside the {classes}-class vocabulary"))),
    };
    let m = classes + 1;
    let (mut tp, mut pred, mut actual) = (vec![0usize; m], vec![0usize; m], vec![0usize; m]);
    for (p, t) in predictions.iter().zip(truth) {
        let (p, t) = (slot(p)?, slot(t)?);
        pred[p] += 1;
        actual[t] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let per_class: Vec<ClassScore> = (0..m)
        .map(|k| {
            let precision = ratio(tp[k], pred[k]);
            let recall = ratio(tp[k], actual[k]);
            let f1 = ratio(2 * tp[k], pred[k] + actual[k]);
            let label = if k == classes { Label::Unknown } else { Label::Class(k) };
            ClassScore { label, precision, recall, f1, support: actual[k] }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / m as f64;
    Ok(F1Report { macro_f1, per_class })
}

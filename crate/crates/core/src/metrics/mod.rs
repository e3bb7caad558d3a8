//! Image- and pixel-level detection metrics. Anomalous is the positive class.

mod pro;
mod report;

pub use pro::{connected_components, pro, ProConfig, Thresholds};
pub use report::{evaluate, EvalOptions, EvalReport, EvalSample};

use std::cmp::Ordering;

use crate::error::{Error, Result};

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScalar { index });
    }
    Ok(())
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    order
}

/// Cumulative `(tp, fp)` after each group of tied scores, highest scores first.
fn threshold_sweep(scores: &[f64], labels: &[bool]) -> Vec<(usize, usize)> {
    let order = descending(scores);
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut k = 0;
    while k < order.len() {
        let value = scores[order[k]];
        while k < order.len() && scores[order[k]] == value {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        out.push((tp, fp));
    }
    out
}

/// Area under the ROC curve via the rank-sum statistic; ties get half credit.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // Midranks doubled to stay in integers: tie group at ranks lo+1..=hi has 2*rank = lo+hi+1.
    let mut rank_sum2: u128 = 0;
    let mut lo = 0;
    while lo < order.len() {
        let mut hi = lo;
        while hi + 1 < order.len() && scores[order[hi + 1]] == scores[order[lo]] {
            hi += 1;
        }
        let positives = order[lo..=hi].iter().filter(|&&i| labels[i]).count() as u128;
        rank_sum2 += positives * (lo as u128 + hi as u128 + 2);
        lo = hi + 1;
    }
    let np = n_pos as u128;
    let u2 = rank_sum2 - np * (np + 1);
    Ok(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Step-wise area under precision-recall: `Σ (R_k - R_{k-1}) P_k`.
pub fn aupr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut area = 0.0;
    let mut prev_tp = 0;
    for (tp, fp) in threshold_sweep(scores, labels) {
        if tp > prev_tp {
            let precision = tp as f64 / (tp + fp) as f64;
            area += (tp - prev_tp) as f64 / n_pos as f64 * precision;
            prev_tp = tp;
        }
    }
    Ok(area)
}

/// Best F1 over thresholds placed at every distinct score.
pub fn f1_max(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::NoPositives);
    }
    Ok(threshold_sweep(scores, labels)
        .into_iter()
        .map(|(tp, fp)| {
            let fneg = n_pos - tp;
            2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
        })
        .fold(0.0, f64::max))
}

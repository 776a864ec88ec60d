//! Classification and heatmap-quality metrics: rank-based AUROC (macro
//! 1-vs-rest) and patch-level precision-recall with step-wise AUPRC.

use serde::Serialize;

use crate::error::{Error, Result};

/// Rank-based binary AUROC; ties count one half. `None` when either class
/// is absent.
pub fn auroc_binary(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // average ranks within tie groups (1-based)
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Serialize)]
pub struct MacroAuroc {
    pub value: f64,
    /// Per-class 1-vs-rest AUROC; `None` when the class had no positives
    /// or no negatives and was excluded from the macro average.
    pub per_class: Vec<Option<f64>>,
    pub excluded_classes: Vec<usize>,
}

/// Macro average of 1-vs-rest AUROC over classes. `scores[k][c]` is the
/// class-c score of sample k.
pub fn auroc_macro(scores: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<MacroAuroc> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::UndefinedMetric(
            "auroc_macro needs matching, non-empty scores and labels".into(),
        ));
    }
    let mut per_class = Vec::with_capacity(num_classes);
    let mut excluded = Vec::new();
    let mut sum = 0.0;
    let mut used = 0usize;
    for c in 0..num_classes {
        let class_scores: Vec<f64> = scores.iter().map(|s| s[c]).collect();
        let class_labels: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        match auroc_binary(&class_scores, &class_labels) {
            Some(v) => {
                per_class.push(Some(v));
                sum += v;
                used += 1;
            }
            None => {
                per_class.push(None);
                excluded.push(c);
            }
        }
    }
    if used == 0 {
        return Err(Error::UndefinedMetric(
            "every class lacks positives or negatives; AUROC undefined".into(),
        ));
    }
    Ok(MacroAuroc {
        value: sum / used as f64,
        per_class,
        excluded_classes: excluded,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub auprc: f64,
    pub best_f1: f64,
}

/// Precision-recall sweep over every distinct score threshold (predict
/// positive at score ≥ threshold). AUPRC integrates right-continuous
/// steps over recall; no interpolation between points.
pub fn patch_pr_curve(scores: &[f64], truth: &[bool]) -> Result<PrCurve> {
    if scores.len() != truth.len() || scores.is_empty() {
        return Err(Error::UndefinedMetric(
            "patch_pr_curve needs matching, non-empty scores and truth".into(),
        ));
    }
    let n_pos = truth.iter().filter(|&&t| t).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("no positive instances".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut auprc = 0.0f64;
    let mut best_f1 = 0.0f64;
    let mut prev_recall = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        // consume the whole tie group at this threshold
        let mut j = i;
        while j < order.len() && scores[order[j]] == threshold {
            if truth[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / n_pos as f64;
        auprc += (recall - prev_recall) * precision;
        prev_recall = recall;
        if precision + recall > 0.0 {
            let f1 = 2.0 * precision * recall / (precision + recall);
            best_f1 = best_f1.max(f1);
        }
        points.push(PrPoint {
            threshold,
            precision,
            recall,
        });
        i = j;
    }
    Ok(PrCurve {
        points,
        auprc,
        best_f1,
    })
}

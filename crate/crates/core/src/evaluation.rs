//! Pairwise confusion counts, ROC/AUC and group-level TP rate / FDR.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{AlignmentResult, Condensed};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMetrics {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `None` when there are no positives.
    pub tp_rate: Option<f64>,
    /// `None` when there are no negatives.
    pub fp_rate: Option<f64>,
}

/// Confusion counts with `score >= threshold` as a positive call.
pub fn pairwise_confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<PairwiseMetrics> {
    if scores.len() != labels.len() {
        return Err(Error::arg(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let rate = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
    Ok(PairwiseMetrics {
        threshold,
        tp,
        fp,
        tn,
        fn_,
        tp_rate: rate(tp, fn_),
        fp_rate: rate(fp, tn),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fp_rate: f64,
    pub tp_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// From (0, 0) at threshold +inf to (1, 1) at the lowest score.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC curve over every distinct score and its trapezoidal area.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::arg(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::arg("scores contain NaN"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("ROC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fp_rate: 0.0,
        tp_rate: 0.0,
    }];
    // twice the area in units of one positive x one negative, kept integral
    let mut area2: u128 = 0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let (mut dtp, mut dfp) = (0, 0);
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] == 1 {
                dtp += 1;
            } else {
                dfp += 1;
            }
            k += 1;
        }
        area2 += (dfp as u128) * (2 * tp as u128 + dtp as u128);
        tp += dtp;
        fp += dfp;
        points.push(RocPoint {
            threshold: s,
            fp_rate: fp as f64 / neg as f64,
            tp_rate: tp as f64 / pos as f64,
        });
    }
    let auc = area2 as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(RocCurve { points, auc })
}

pub const ROC_HEADER: &str = "threshold,fp_rate,tp_rate";

pub fn write_roc(path: impl AsRef<Path>, curve: &RocCurve) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{ROC_HEADER}")?;
    for p in &curve.points {
        writeln!(out, "{},{},{}", p.threshold, p.fp_rate, p.tp_rate)?;
    }
    out.flush()?;
    Ok(())
}

/// Scores and labels for every pair with at least one identified peak
/// (`truth >= 0`). Label 1 means both peaks share an identified group.
pub fn labeled_pairs(probabilities: &Condensed, truth: &[i64]) -> Result<(Vec<f64>, Vec<u8>)> {
    if probabilities.len() != truth.len() {
        return Err(Error::arg(format!(
            "{} peaks in the probability matrix, {} truth labels",
            probabilities.len(),
            truth.len()
        )));
    }
    let n = truth.len();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if truth[i] < 0 && truth[j] < 0 {
                continue;
            }
            scores.push(probabilities.get(i, j));
            labels.push(u8::from(truth[i] >= 0 && truth[i] == truth[j]));
        }
    }
    Ok((scores, labels))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupDetail {
    pub truth_group: i64,
    pub members: usize,
    /// Predicted group holding most of the members.
    pub predicted_group: usize,
    pub aligned_rt: f64,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub tp_rate: f64,
    pub fdr: f64,
    pub tp: usize,
    pub fp: usize,
    pub labeled_peaks: usize,
    pub groups: Vec<GroupDetail>,
}

/// For each identified group the predicted group holding most of its
/// members (ties: earliest group RT) defines its aligned RT. Members there
/// are true positives; every other peak there is a false positive.
pub fn group_tp_fdr(result: &AlignmentResult, truth: &[i64]) -> Result<GroupMetrics> {
    if truth.len() != result.assignment.len() {
        return Err(Error::arg(format!(
            "{} truth labels for {} aligned peaks",
            truth.len(),
            result.assignment.len()
        )));
    }
    let mut by_truth: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &t) in truth.iter().enumerate() {
        if t >= 0 {
            by_truth.entry(t).or_default().push(i);
        }
    }
    if by_truth.is_empty() {
        return Err(Error::arg("truth contains no identified peaks"));
    }
    let mut group_size = vec![0usize; result.group_rt.len()];
    for &g in &result.assignment {
        group_size[g] += 1;
    }
    let mut details = Vec::with_capacity(by_truth.len());
    let (mut tp, mut fp, mut labeled) = (0, 0, 0);
    for (&t, members) in &by_truth {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &i in members {
            *counts.entry(result.assignment[i]).or_default() += 1;
        }
        let (&g, &hits) = counts
            .iter()
            .max_by(|(ga, ca), (gb, cb)| {
                ca.cmp(cb)
                    .then(result.group_rt[**gb].total_cmp(&result.group_rt[**ga]))
                    .then(gb.cmp(ga))
            })
            .expect("groups are nonempty");
        let others = group_size[g] - hits;
        tp += hits;
        fp += others;
        labeled += members.len();
        details.push(GroupDetail {
            truth_group: t,
            members: members.len(),
            predicted_group: g,
            aligned_rt: result.group_rt[g],
            tp: hits,
            fp: others,
        });
    }
    Ok(GroupMetrics {
        tp_rate: tp as f64 / labeled as f64,
        fdr: if tp + fp > 0 { fp as f64 / (tp + fp) as f64 } else { 0.0 },
        tp,
        fp,
        labeled_peaks: labeled,
        groups: details,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pairwise: PairwiseMetrics,
    pub auc: f64,
    pub pairs: usize,
    pub group: GroupMetrics,
}

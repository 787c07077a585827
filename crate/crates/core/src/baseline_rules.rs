//! Three-stage rule-based aligner working on peak tables alone: a constant
//! shift per sample against a reference, assignment of peaks to running
//! group means, and merging of adjacent groups. A reconstruction for
//! comparison, not a copy of any particular tool.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{assign_group_rt, AlignConfig, AlignmentResult, Provenance};
use crate::signal::Peak;

pub const MAX_SWEEPS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleParams {
    /// Largest constant shift tried per sample, minutes.
    pub max_linear_shift: f64,
    /// Largest distance from a peak to the mean RT of the group it joins.
    pub max_diff_peak2mean: f64,
    /// Peaks closer than this are matched in stage 1; groups whose means
    /// are closer are merged in stage 3.
    pub min_diff_peak2peak: f64,
    /// Spacing of the stage-1 shift grid, minutes.
    pub grid_step: f64,
}

impl Default for RuleParams {
    fn default() -> Self {
        Self {
            max_linear_shift: 0.05,
            max_diff_peak2mean: 0.02,
            min_diff_peak2peak: 0.08,
            grid_step: 0.005,
        }
    }
}

impl RuleParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("max_linear_shift", self.max_linear_shift),
            ("max_diff_peak2mean", self.max_diff_peak2mean),
            ("min_diff_peak2peak", self.min_diff_peak2peak),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.grid_step > 0.0 && self.grid_step.is_finite()) {
            return Err(Error::Config(format!("grid_step must be positive, got {}", self.grid_step)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RuleAlignment {
    pub result: AlignmentResult,
    pub reference: String,
    /// Stage-1 shift per sample id (the reference has 0).
    pub shifts: BTreeMap<String, f64>,
    pub sweeps: usize,
    /// Within-group sum of squared RT deviations after each stage-2 sweep.
    pub sweep_sse: Vec<f64>,
}

/// Sample with the most peaks, ties to the smallest id.
pub fn auto_reference(peaks: &[Peak]) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in peaks {
        *counts.entry(&p.sample_id).or_default() += 1;
    }
    // BTreeMap iterates ids ascending; keep the first maximum
    let mut best: Option<(&str, usize)> = None;
    for (id, c) in counts {
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((id, c));
        }
    }
    best.map(|(id, _)| id.to_string())
}

/// Best constant shift of `rts` against sorted `reference`: the grid value
/// in `[-max, max]` matching the most peaks within `tol`. Ties go to the
/// smallest summed distance of the matched peaks, then the smallest
/// magnitude, then the negative shift.
pub fn best_shift(rts: &[f64], reference: &[f64], params: &RuleParams) -> f64 {
    let k_max = (params.max_linear_shift / params.grid_step + 1e-9).floor() as i64;
    let tol = params.min_diff_peak2peak;
    let score = |s: f64| {
        let (mut count, mut residual) = (0usize, 0.0);
        for &t in rts {
            let x = t + s;
            let pos = reference.partition_point(|&r| r < x);
            let d = [pos.checked_sub(1), Some(pos)]
                .into_iter()
                .flatten()
                .filter_map(|i| reference.get(i))
                .map(|&r| (r - x).abs())
                .fold(f64::INFINITY, f64::min);
            if d <= tol {
                count += 1;
                residual += d;
            }
        }
        (count, residual)
    };
    let better = |a: (usize, f64), b: (usize, f64)| a.0 > b.0 || (a.0 == b.0 && a.1 < b.1 - 1e-12);
    let mut best = (score(0.0), 0i64);
    for m in 1..=k_max {
        for k in [-m, m] {
            let sc = score(k as f64 * params.grid_step);
            if better(sc, best.0) {
                best = (sc, k);
            }
        }
    }
    best.1 as f64 * params.grid_step
}

struct Groups {
    members: Vec<Vec<usize>>,
    sum: Vec<f64>,
}

impl Groups {
    fn mean(&self, g: usize) -> f64 {
        self.sum[g] / self.members[g].len() as f64
    }

    fn sse(&self, rts: &[f64]) -> f64 {
        (0..self.members.len())
            .filter(|&g| !self.members[g].is_empty())
            .map(|g| {
                let m = self.mean(g);
                self.members[g].iter().map(|&i| (rts[i] - m).powi(2)).sum::<f64>()
            })
            .sum()
    }
}

pub fn rule_align(peaks: &[Peak], params: &RuleParams, reference: Option<&str>) -> Result<RuleAlignment> {
    params.validate()?;
    let samples: BTreeSet<&str> = peaks.iter().map(|p| p.sample_id.as_str()).collect();
    if samples.len() < 2 {
        return Err(Error::arg(format!(
            "rule alignment needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let reference = match reference {
        Some(r) if samples.contains(r) => r.to_string(),
        Some(r) => return Err(Error::arg(format!("reference sample `{r}` has no peaks"))),
        None => auto_reference(peaks).expect("peaks are nonempty"),
    };

    // stage 1: constant shift per sample
    let mut ref_rts: Vec<f64> = peaks
        .iter()
        .filter(|p| p.sample_id == reference)
        .map(|p| p.rt_apex)
        .collect();
    ref_rts.sort_by(f64::total_cmp);
    let mut shifts = BTreeMap::new();
    for &s in &samples {
        let shift = if s == reference {
            0.0
        } else {
            let rts: Vec<f64> = peaks.iter().filter(|p| p.sample_id == s).map(|p| p.rt_apex).collect();
            best_shift(&rts, &ref_rts, params)
        };
        shifts.insert(s.to_string(), shift);
    }
    let rts: Vec<f64> = peaks.iter().map(|p| p.rt_apex + shifts[&p.sample_id]).collect();

    // stage 2: nearest running mean, sweeping in RT order until nothing moves
    let mut order: Vec<usize> = (0..peaks.len()).collect();
    order.sort_by(|&a, &b| {
        rts[a]
            .total_cmp(&rts[b])
            .then_with(|| peaks[a].sample_id.cmp(&peaks[b].sample_id))
            .then(a.cmp(&b))
    });
    let mut groups = Groups {
        members: Vec::new(),
        sum: Vec::new(),
    };
    let mut of: Vec<Option<usize>> = vec![None; peaks.len()];
    let mut sweeps = 0;
    let mut sweep_sse = Vec::new();
    loop {
        sweeps += 1;
        let mut moved = false;
        for &i in &order {
            let x = rts[i];
            let current = of[i];
            let best = (0..groups.members.len())
                .filter(|&g| !groups.members[g].is_empty())
                .map(|g| (g, (x - groups.mean(g)).abs()))
                .min_by(|a, b| {
                    a.1.total_cmp(&b.1)
                        .then((Some(b.0) == current).cmp(&(Some(a.0) == current)))
                        .then(a.0.cmp(&b.0))
                });
            let target = match (best, current) {
                (Some((g, d)), _) if d <= params.max_diff_peak2mean => Some(g),
                (_, Some(c)) if groups.members[c].len() == 1 => Some(c),
                _ => None,
            };
            if target.is_some() && target == current {
                continue;
            }
            if let Some(c) = current {
                groups.members[c].retain(|&m| m != i);
                groups.sum[c] -= x;
            }
            let g = target.unwrap_or_else(|| {
                groups.members.push(Vec::new());
                groups.sum.push(0.0);
                groups.members.len() - 1
            });
            groups.members[g].push(i);
            groups.sum[g] += x;
            of[i] = Some(g);
            moved = true;
        }
        let sse = groups.sse(&rts);
        if let Some(&prev) = sweep_sse.last() {
            if sse > prev + 1e-9 * (1.0 + prev) {
                log::warn!("stage-2 sweep {sweeps} raised the within-group spread from {prev} to {sse}");
            }
        }
        sweep_sse.push(sse);
        if !moved {
            break;
        }
        if sweeps == MAX_SWEEPS {
            log::warn!("stage 2 stopped after {MAX_SWEEPS} sweeps without settling");
            break;
        }
    }

    // stage 3: merge neighbours whose means are too close
    let mut merged: Vec<(f64, Vec<usize>)> = groups
        .members
        .into_iter()
        .filter(|m| !m.is_empty())
        .map(|m| (m.iter().map(|&i| rts[i]).sum::<f64>() / m.len() as f64, m))
        .collect();
    merged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.iter().min().cmp(&b.1.iter().min())));
    let mut out: Vec<(f64, Vec<usize>)> = Vec::with_capacity(merged.len());
    for (mean, members) in merged {
        match out.last_mut() {
            Some((m, prev)) if mean - *m < params.min_diff_peak2peak => {
                let n0 = prev.len() as f64;
                let n1 = members.len() as f64;
                *m = (*m * n0 + mean * n1) / (n0 + n1);
                prev.extend(members);
            }
            _ => out.push((mean, members)),
        }
    }

    let mut assignment = vec![0; peaks.len()];
    for (g, (_, members)) in out.iter().enumerate() {
        for &i in members {
            assignment[i] = g;
        }
    }
    let raw: Vec<f64> = peaks.iter().map(|p| p.rt_apex).collect();
    let group_rt = assign_group_rt(&assignment, &raw, &vec![1.0; peaks.len()]);
    Ok(RuleAlignment {
        result: AlignmentResult {
            provenance: Provenance {
                model_id: "rule-based".into(),
                config: AlignConfig::default(),
                peaks: peaks.len(),
                groups: group_rt.len(),
                scored_pairs: 0,
            },
            assignment,
            group_rt,
        },
        reference,
        shifts,
        sweeps,
        sweep_sse,
    })
}

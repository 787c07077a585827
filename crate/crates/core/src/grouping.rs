//! Pairwise probabilities to alignment groups: inverse-probability
//! distances, average-linkage (UPGMA) clustering, the one-peak-per-sample
//! rule and intensity-weighted group retention times.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::PeakFeatures;
use crate::model::PairScorer;
use crate::signal::Peak;

pub const DEFAULT_P_FLOOR: f64 = 1e-6;
pub const DEFAULT_CUT_DISTANCE: f64 = 2.0;
pub const DEFAULT_RT_CUTOFF: f64 = 3.0;

/// Upper-triangle (`i < j`) storage of a symmetric matrix with no diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct Condensed {
    n: usize,
    values: Vec<f64>,
}

impl Condensed {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        let want = n * n.saturating_sub(1) / 2;
        if values.len() != want {
            return Err(Error::arg(format!(
                "condensed matrix for {n} points needs {want} values, got {}",
                values.len()
            )));
        }
        Ok(Self { n, values })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                values.push(f(i, j));
            }
        }
        Self { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        debug_assert!(i != j && j < self.n);
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.index(i, j)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairwiseResult {
    pub i: usize,
    pub j: usize,
    pub probability: f64,
    pub within_cutoff: bool,
}

/// Probabilities for every unordered pair, plus the number of pairs the
/// scorer actually evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct PairProbabilities {
    pub probabilities: Condensed,
    pub scored_pairs: usize,
}

/// Scores every pair within `rt_cutoff` minutes; all other pairs get
/// probability 0 without touching the scorer. Peaks with no partner inside
/// the cutoff are never embedded.
pub fn predict_probabilities<S: PairScorer>(
    scorer: &S,
    features: &[PeakFeatures],
    rt_cutoff: f64,
) -> Result<PairProbabilities> {
    if !(rt_cutoff > 0.0) {
        return Err(Error::arg(format!("rt cutoff must be positive, got {rt_cutoff}")));
    }
    let n = features.len();
    let rts: Vec<f64> = features.iter().map(|f| f.rt).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| rts[a].total_cmp(&rts[b]).then(a.cmp(&b)));
    let mut needed = vec![false; n];
    for w in order.windows(2) {
        if (rts[w[1]] - rts[w[0]]).abs() <= rt_cutoff {
            needed[w[0]] = true;
            needed[w[1]] = true;
        }
    }
    let embeddings: Vec<Option<S::Embedding>> = (0..n)
        .into_par_iter()
        .map(|i| needed[i].then(|| scorer.embed(&features[i])).transpose())
        .collect::<Result<_>>()?;
    let rows: Vec<(Vec<f64>, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = Vec::with_capacity(n - i - 1);
            let mut scored = 0;
            for j in i + 1..n {
                if (rts[i] - rts[j]).abs() <= rt_cutoff {
                    let (a, b) = (embeddings[i].as_ref().unwrap(), embeddings[j].as_ref().unwrap());
                    row.push(scorer.score(a, b)?);
                    scored += 1;
                } else {
                    row.push(0.0);
                }
            }
            Ok((row, scored))
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    let mut scored_pairs = 0;
    for (row, s) in rows {
        values.extend(row);
        scored_pairs += s;
    }
    Ok(PairProbabilities {
        probabilities: Condensed { n, values },
        scored_pairs,
    })
}

pub fn predict_all_pairs<S: PairScorer>(
    scorer: &S,
    features: &[PeakFeatures],
    rt_cutoff: f64,
) -> Result<Vec<PairwiseResult>> {
    let probs = predict_probabilities(scorer, features, rt_cutoff)?.probabilities;
    let n = features.len();
    let mut out = Vec::with_capacity(probs.values.len());
    for i in 0..n {
        for j in i + 1..n {
            out.push(PairwiseResult {
                i,
                j,
                probability: probs.get(i, j),
                within_cutoff: (features[i].rt - features[j].rt).abs() <= rt_cutoff,
            });
        }
    }
    Ok(out)
}

/// `d = 1 / max(p, p_floor)`.
pub fn probability_to_distance(p: f64, p_floor: f64) -> f64 {
    1.0 / p.max(p_floor)
}

pub fn to_distances(probabilities: &Condensed, p_floor: f64) -> Condensed {
    Condensed {
        n: probabilities.n,
        values: probabilities
            .values
            .iter()
            .map(|&p| probability_to_distance(p, p_floor))
            .collect(),
    }
}

/// Average-linkage agglomeration that keeps merging while the smallest
/// linkage is at most `cut`. Ties go to the pair whose smallest members are
/// lexicographically lowest. Labels are dense, ordered by smallest member.
pub fn upgma_cluster(distances: &Condensed, cut: f64) -> Vec<usize> {
    let n = distances.n;
    if n == 0 {
        return Vec::new();
    }
    // Cluster slot k is named by its smallest member k. `sums` holds the
    // total member-pair distance between clusters, so the linkage is
    // sums / (size_a * size_b).
    let mut sums = distances.values.clone();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|k| vec![k]).collect();
    let mut nn = vec![usize::MAX; n];
    let mut nn_d = vec![f64::INFINITY; n];

    let idx = |i: usize, j: usize| distances.index(i, j);
    let linkage = |sums: &[f64], size: &[usize], i: usize, j: usize| sums[idx(i, j)] / (size[i] * size[j]) as f64;
    let rescan = |k: usize, sums: &[f64], size: &[usize], active: &[bool], nn: &mut [usize], nn_d: &mut [f64]| {
        nn[k] = usize::MAX;
        nn_d[k] = f64::INFINITY;
        for m in k + 1..n {
            if active[m] {
                let d = linkage(sums, size, k, m);
                if d < nn_d[k] {
                    nn_d[k] = d;
                    nn[k] = m;
                }
            }
        }
    };
    for k in 0..n {
        rescan(k, &sums, &size, &active, &mut nn, &mut nn_d);
    }

    loop {
        let mut best: Option<usize> = None;
        for k in 0..n {
            if active[k] && nn[k] != usize::MAX && best.is_none_or(|b| nn_d[k] < nn_d[b]) {
                best = Some(k);
            }
        }
        let Some(i) = best else { break };
        if nn_d[i] > cut {
            break;
        }
        let j = nn[i];
        // merge j into i
        for k in 0..n {
            if active[k] && k != i && k != j {
                let s = sums[idx(k, j)];
                sums[idx(k, i)] += s;
            }
        }
        size[i] += size[j];
        active[j] = false;
        let moved = std::mem::take(&mut members[j]);
        members[i].extend(moved);
        for k in 0..n {
            if !active[k] {
                continue;
            }
            if k == i || nn[k] == i || nn[k] == j {
                rescan(k, &sums, &size, &active, &mut nn, &mut nn_d);
            } else if k < i {
                let d = linkage(&sums, &size, k, i);
                if d < nn_d[k] || (d == nn_d[k] && i < nn[k]) {
                    nn_d[k] = d;
                    nn[k] = i;
                }
            }
        }
    }

    let mut labels = vec![0; n];
    let mut next = 0;
    for k in 0..n {
        if active[k] {
            for &m in &members[k] {
                labels[m] = next;
            }
            next += 1;
        }
    }
    labels
}

/// Renumbers group ids densely in order of each group's smallest member.
pub fn relabel_dense(assignment: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    assignment
        .iter()
        .map(|&g| {
            let next = map.len();
            *map.entry(g).or_insert(next)
        })
        .collect()
}

/// Splits every group holding more than one peak from some sample: within
/// each sample the group's peaks are ranked by apex RT, and rank r across
/// all samples forms sub-group r.
pub fn enforce_sample_uniqueness(assignment: &[usize], samples: &[&str], rts: &[f64]) -> Vec<usize> {
    let n = assignment.len();
    let mut by_group: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &g) in assignment.iter().enumerate() {
        by_group.entry(g).or_default().push(i);
    }
    // (group, rank) keys, then dense relabelling
    let mut key = vec![(0usize, 0usize); n];
    for (&g, idx) in &by_group {
        let mut by_sample: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for &i in idx {
            by_sample.entry(samples[i]).or_default().push(i);
        }
        for list in by_sample.values_mut() {
            list.sort_by(|&a, &b| rts[a].total_cmp(&rts[b]).then(a.cmp(&b)));
            for (r, &i) in list.iter().enumerate() {
                key[i] = (g, r);
            }
        }
    }
    let mut ids = BTreeMap::new();
    key.iter()
        .map(|k| {
            let next = ids.len();
            *ids.entry(*k).or_insert(next)
        })
        .collect()
}

/// Weighted mean RT per group (weights clamped at 0); groups whose weights
/// sum to zero fall back to the plain mean. Results are clamped to the
/// members' RT range.
pub fn assign_group_rt(assignment: &[usize], rts: &[f64], weights: &[f64]) -> Vec<f64> {
    let groups = assignment.iter().max().map_or(0, |m| m + 1);
    let mut sw = vec![0.0; groups];
    let mut swr = vec![0.0; groups];
    let mut sum = vec![0.0; groups];
    let mut count = vec![0usize; groups];
    let mut lo = vec![f64::INFINITY; groups];
    let mut hi = vec![f64::NEG_INFINITY; groups];
    for (i, &g) in assignment.iter().enumerate() {
        let w = weights[i].max(0.0);
        sw[g] += w;
        swr[g] += w * rts[i];
        sum[g] += rts[i];
        count[g] += 1;
        lo[g] = lo[g].min(rts[i]);
        hi[g] = hi[g].max(rts[i]);
    }
    (0..groups)
        .map(|g| {
            let rt = if sw[g] > 0.0 { swr[g] / sw[g] } else { sum[g] / count[g].max(1) as f64 };
            if count[g] == 0 {
                f64::NAN
            } else {
                rt.clamp(lo[g], hi[g])
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RtWeighting {
    #[default]
    Area,
    Height,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub rt_cutoff: f64,
    pub cut_distance: f64,
    pub p_floor: f64,
    pub weighting: RtWeighting,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            rt_cutoff: DEFAULT_RT_CUTOFF,
            cut_distance: DEFAULT_CUT_DISTANCE,
            p_floor: DEFAULT_P_FLOOR,
            weighting: RtWeighting::Area,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rt_cutoff > 0.0) {
            return Err(Error::Config(format!("rt cutoff must be positive, got {}", self.rt_cutoff)));
        }
        if !(self.cut_distance > 0.0) {
            return Err(Error::Config(format!("cut distance must be positive, got {}", self.cut_distance)));
        }
        if !(self.p_floor > 0.0 && self.p_floor <= 1.0) {
            return Err(Error::Config(format!("probability floor must be in (0, 1], got {}", self.p_floor)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_id: String,
    pub config: AlignConfig,
    pub peaks: usize,
    pub groups: usize,
    pub scored_pairs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentResult {
    /// Group id per input peak, dense from 0.
    pub assignment: Vec<usize>,
    pub group_rt: Vec<f64>,
    pub provenance: Provenance,
}

impl AlignmentResult {
    pub fn group_count(&self) -> usize {
        self.group_rt.len()
    }
}

/// Full pipeline: pair probabilities, distances, clustering, the
/// one-peak-per-sample rule and group RTs.
pub fn align<S: PairScorer>(
    scorer: &S,
    features: &[PeakFeatures],
    cfg: &AlignConfig,
    model_id: &str,
) -> Result<AlignmentResult> {
    cfg.validate()?;
    let probs = predict_probabilities(scorer, features, cfg.rt_cutoff)?;
    Ok(align_from_probabilities(features, &probs, cfg, model_id))
}

pub fn align_from_probabilities(
    features: &[PeakFeatures],
    probs: &PairProbabilities,
    cfg: &AlignConfig,
    model_id: &str,
) -> AlignmentResult {
    let dist = to_distances(&probs.probabilities, cfg.p_floor);
    let clusters = upgma_cluster(&dist, cfg.cut_distance);
    let samples: Vec<&str> = features.iter().map(|f| f.peak.sample_id.as_str()).collect();
    let rts: Vec<f64> = features.iter().map(|f| f.rt).collect();
    let assignment = enforce_sample_uniqueness(&clusters, &samples, &rts);
    let weights: Vec<f64> = features
        .iter()
        .map(|f| match cfg.weighting {
            RtWeighting::Area => f.peak.area,
            RtWeighting::Height => f.apex_height,
        })
        .collect();
    let group_rt = assign_group_rt(&assignment, &rts, &weights);
    AlignmentResult {
        provenance: Provenance {
            model_id: model_id.to_string(),
            config: cfg.clone(),
            peaks: features.len(),
            groups: group_rt.len(),
            scored_pairs: probs.scored_pairs,
        },
        assignment,
        group_rt,
    }
}

pub const REPORT_HEADER: &str = "sample_id,mz,rt_apex,area,group,group_rt";

pub fn write_report(path: impl AsRef<Path>, features: &[PeakFeatures], result: &AlignmentResult) -> Result<()> {
    let peaks: Vec<Peak> = features.iter().map(|f| f.peak.clone()).collect();
    write_peak_report(path, &peaks, result)
}

/// Report for aligners that work on peak tables directly.
pub fn write_peak_report(path: impl AsRef<Path>, peaks: &[Peak], result: &AlignmentResult) -> Result<()> {
    if peaks.len() != result.assignment.len() {
        return Err(Error::arg(format!(
            "{} peaks for {} assignments",
            peaks.len(),
            result.assignment.len()
        )));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{REPORT_HEADER}")?;
    for (p, &g) in peaks.iter().zip(&result.assignment) {
        writeln!(
            out,
            "{},{},{:?},{:?},{},{:?}",
            p.sample_id, p.mz, p.rt_apex, p.area, g, result.group_rt[g]
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a report back. Peaks carry only the columns the report holds
/// (start and end equal the apex); group ids must be dense.
pub fn read_peak_report(path: impl AsRef<Path>) -> Result<(Vec<Peak>, AlignmentResult)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == REPORT_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: format!("expected header `{REPORT_HEADER}`"),
            })
        }
    }
    let mut peaks = Vec::new();
    let mut assignment = Vec::new();
    let mut group_rt: BTreeMap<usize, f64> = BTreeMap::new();
    for (lineno, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 6 {
            return Err(Error::Parse {
                line: lineno + 1,
                column: cells.len().min(6) + 1,
                message: format!("expected 6 cells, found {}", cells.len()),
            });
        }
        let err = |col: usize| Error::Parse {
            line: lineno + 1,
            column: col + 1,
            message: format!("invalid value `{}`", cells[col]),
        };
        let rt: f64 = cells[2].parse().map_err(|_| err(2))?;
        let g: usize = cells[4].parse().map_err(|_| err(4))?;
        peaks.push(Peak {
            sample_id: cells[0].to_string(),
            mz: cells[1].parse().map_err(|_| err(1))?,
            rt_start: rt,
            rt_apex: rt,
            rt_end: rt,
            area: cells[3].parse().map_err(|_| err(3))?,
            group: -1,
        });
        assignment.push(g);
        group_rt.insert(g, cells[5].parse().map_err(|_| err(5))?);
    }
    if group_rt.keys().enumerate().any(|(k, &g)| k != g) {
        return Err(Error::invalid("report group ids are not dense from 0"));
    }
    let group_rt: Vec<f64> = group_rt.into_values().collect();
    let result = AlignmentResult {
        provenance: Provenance {
            model_id: "report".into(),
            config: AlignConfig::default(),
            peaks: peaks.len(),
            groups: group_rt.len(),
            scored_pairs: 0,
        },
        assignment,
        group_rt,
    };
    Ok((peaks, result))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condensed_indexing() {
        let c = Condensed::from_fn(4, |i, j| (10 * i + j) as f64);
        assert_eq!(c.values().len(), 6);
        assert_eq!(c.get(2, 3), 23.0);
        assert_eq!(c.get(3, 1), 13.0);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(probability_to_distance(0.5, 1e-6), 2.0);
        assert_eq!(probability_to_distance(1.0, 1e-6), 1.0);
        assert!((probability_to_distance(0.0, 1e-6) - 1e6).abs() < 1e-6);
    }

    #[test]
    fn two_point_cut() {
        assert_eq!(upgma_cluster(&Condensed::new(2, vec![1.5]).unwrap(), 2.0), vec![0, 0]);
        assert_eq!(upgma_cluster(&Condensed::new(2, vec![2.5]).unwrap(), 2.0), vec![0, 1]);
        assert_eq!(upgma_cluster(&Condensed::new(1, vec![]).unwrap(), 2.0), vec![0]);
    }

    #[test]
    fn rank_rule_example() {
        let samples = ["A", "A", "B"];
        let rts = [1.00, 1.05, 1.01];
        assert_eq!(enforce_sample_uniqueness(&[0, 0, 0], &samples, &rts), vec![0, 1, 0]);
        assert_eq!(enforce_sample_uniqueness(&[0, 0, 0], &["A"; 3], &[3.0, 1.0, 2.0]), vec![0, 1, 2]);
    }

    #[test]
    fn weighted_group_rt() {
        let rt = assign_group_rt(&[0, 0], &[1.0, 2.0], &[1.0, 3.0]);
        assert!((rt[0] - 1.75).abs() < 1e-12);
        assert_eq!(assign_group_rt(&[0, 0], &[1.0, 2.0], &[0.0, 0.0]), vec![1.5]);
    }
}

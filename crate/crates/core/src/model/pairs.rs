use crate::error::{Error, Result};
use crate::features::PeakFeatures;
use crate::neuralnet::RngStream;

/// A training pair, by index into the feature list it was drawn from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairExample {
    pub a: usize,
    pub b: usize,
    pub label: u8,
    pub abs_rt_diff: f64,
}

impl PairExample {
    pub fn new(features: &[PeakFeatures], a: usize, b: usize) -> Self {
        let (ga, gb) = (features[a].peak.group, features[b].peak.group);
        Self {
            a,
            b,
            label: u8::from(ga >= 0 && ga == gb),
            abs_rt_diff: (features[a].rt - features[b].rt).abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<PairExample>,
    pub positives: usize,
    pub negatives: usize,
    /// Fewer negatives were available than positives.
    pub negative_shortfall: bool,
}

fn is_negative(features: &[PeakFeatures], i: usize, j: usize) -> bool {
    let (gi, gj) = (features[i].peak.group, features[j].peak.group);
    gi != gj && (gi >= 0 || gj >= 0)
}

/// All same-group pairs plus an equal number of randomly chosen
/// different-group pairs. Unlabelled peaks (group -1) only ever appear
/// opposite a labelled peak.
pub fn make_pairs(features: &[PeakFeatures], seed: u64) -> Result<PairSet> {
    let n = features.len();
    let mut pairs = Vec::new();
    let mut available = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let (gi, gj) = (features[i].peak.group, features[j].peak.group);
            if gi >= 0 && gi == gj {
                pairs.push(PairExample::new(features, i, j));
            } else if is_negative(features, i, j) {
                available += 1;
            }
        }
    }
    let positives = pairs.len();
    if positives == 0 {
        return Err(Error::Config("no positive pairs: need a group with at least two peaks".into()));
    }
    let want = positives.min(available);
    if want < positives {
        log::warn!("only {available} negative pairs available for {positives} positives");
    }

    // selection sampling over the negatives in enumeration order
    let mut rng = RngStream::new(seed).derive(&[1]);
    let (mut seen, mut chosen) = (0usize, 0usize);
    'outer: for i in 0..n {
        for j in i + 1..n {
            if chosen == want {
                break 'outer;
            }
            if !is_negative(features, i, j) {
                continue;
            }
            let remaining = available - seen;
            if rng.below(remaining) < want - chosen {
                pairs.push(PairExample::new(features, i, j));
                chosen += 1;
            }
            seen += 1;
        }
    }
    debug_assert_eq!(chosen, want);
    RngStream::new(seed).derive(&[2]).shuffle(&mut pairs);
    Ok(PairSet {
        pairs,
        positives,
        negatives: want,
        negative_shortfall: want < positives,
    })
}

mod common;

use std::sync::atomic::{AtomicUsize, Ordering};

use chromalign::features::PeakFeatures;
use chromalign::grouping::{
    align, assign_group_rt, enforce_sample_uniqueness, predict_all_pairs, predict_probabilities, to_distances,
    upgma_cluster, AlignConfig, Condensed,
};
use chromalign::model::PairScorer;
use chromalign::neuralnet::RngStream;
use chromalign::Result;
use common::random_features;

/// Brute-force average linkage: recompute every cluster-pair mean from
/// scratch, merge the minimum (lowest smallest-member pair on ties) while it
/// is within the cut.
fn oracle_upgma(n: usize, d: impl Fn(usize, usize) -> f64, cut: f64) -> Vec<usize> {
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut s = 0.0;
                for &x in &clusters[a] {
                    for &y in &clusters[b] {
                        s += d(x, y);
                    }
                }
                let avg = s / (clusters[a].len() * clusters[b].len()) as f64;
                let better = match best {
                    None => true,
                    Some((bd, _, _)) => avg < bd,
                };
                if better {
                    best = Some((avg, a, b));
                }
            }
        }
        match best {
            Some((avg, a, b)) if avg <= cut => {
                let moved = clusters.remove(b);
                clusters[a].extend(moved);
            }
            _ => break,
        }
    }
    // clusters stay ordered by smallest member: merges keep the lower slot
    let mut labels = vec![0; n];
    let mut order: Vec<&Vec<usize>> = clusters.iter().collect();
    order.sort_by_key(|c| *c.iter().min().unwrap());
    for (g, c) in order.iter().enumerate() {
        for &m in c.iter() {
            labels[m] = g;
        }
    }
    labels
}

#[test]
fn upgma_matches_brute_force_oracle() {
    let mut rng = RngStream::new(42);
    for round in 0..500 {
        let n = 1 + rng.below(8);
        let dist = Condensed::from_fn(n, |_, _| {
            // mix of near-cut and far values
            if rng.uniform() < 0.2 {
                1e6
            } else {
                rng.uniform_range(0.5, 4.0)
            }
        });
        let got = upgma_cluster(&dist, 2.0);
        let want = oracle_upgma(n, |i, j| dist.get(i, j), 2.0);
        assert_eq!(got, want, "round {round}: {dist:?}");
    }
}

#[test]
fn upgma_tie_breaking_is_lowest_pair() {
    // all distances equal: merges proceed (0,1), then {0,1} with 2, ...
    let dist = Condensed::from_fn(4, |_, _| 1.0);
    assert_eq!(upgma_cluster(&dist, 2.0), vec![0, 0, 0, 0]);
    assert_eq!(oracle_upgma(4, |_, _| 1.0, 2.0), vec![0, 0, 0, 0]);
    // equal pairs (0,1) and (2,3); the other links tie with each other
    let d = |i: usize, j: usize| if (i, j) == (0, 1) || (i, j) == (2, 3) { 1.0 } else { 3.0 };
    let dist = Condensed::from_fn(4, d);
    assert_eq!(upgma_cluster(&dist, 2.0), vec![0, 0, 1, 1]);
}

#[test]
fn any_floor_far_above_the_cut_gives_the_same_partition() {
    let mut rng = RngStream::new(1);
    for _ in 0..50 {
        let n = 2 + rng.below(7);
        let probs = Condensed::from_fn(n, |_, _| if rng.uniform() < 0.4 { 0.0 } else { rng.uniform() });
        let a = upgma_cluster(&to_distances(&probs, 1e-6), 2.0);
        let b = upgma_cluster(&to_distances(&probs, 1e-9), 2.0);
        assert_eq!(a, b);
    }
}

/// Scores pairs by a hash of their ids; counts calls.
struct HashScorer {
    calls: AtomicUsize,
    embeds: AtomicUsize,
    seed: u64,
}

impl HashScorer {
    fn new(seed: u64) -> Self {
        Self {
            calls: AtomicUsize::new(0),
            embeds: AtomicUsize::new(0),
            seed,
        }
    }
}

impl PairScorer for HashScorer {
    type Embedding = u64;

    fn embed(&self, f: &PeakFeatures) -> Result<u64> {
        self.embeds.fetch_add(1, Ordering::Relaxed);
        Ok(f.peak.mz as u64)
    }

    fn score(&self, a: &u64, b: &u64) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let (lo, hi) = if a < b { (*a, *b) } else { (*b, *a) };
        Ok(RngStream::new(self.seed).derive(&[lo, hi]).uniform())
    }
}

/// Features with distinct ids (stored in mz) at the given RTs.
fn feats_at(rts: &[f64], samples: usize) -> Vec<PeakFeatures> {
    let mut rng = RngStream::new(0);
    rts.iter()
        .enumerate()
        .map(|(i, &rt)| {
            let mut f = random_features(&mut rng, 4, 60, 3, rt, 0);
            f.peak.mz = i as i64;
            f.peak.sample_id = format!("s{}", i % samples);
            f
        })
        .collect()
}

#[test]
fn pairs_outside_the_cutoff_are_zero_without_scoring() {
    let feats = feats_at(&[0.0, 5.0, 1.0, 20.0], 4);
    let scorer = HashScorer::new(3);
    let res = predict_all_pairs(&scorer, &feats, 3.0).unwrap();
    assert_eq!(res.len(), 6);
    let far = res.iter().find(|r| (r.i, r.j) == (0, 1)).unwrap();
    assert_eq!(far.probability, 0.0);
    assert!(!far.within_cutoff);
    assert_eq!(scorer.calls.load(Ordering::Relaxed), res.iter().filter(|r| r.within_cutoff).count());

    let scorer = HashScorer::new(3);
    let res = predict_all_pairs(&scorer, &feats, 0.001).unwrap();
    assert!(res.iter().all(|r| r.probability == 0.0));
    assert_eq!(scorer.calls.load(Ordering::Relaxed), 0);
    assert_eq!(scorer.embeds.load(Ordering::Relaxed), 0);

    assert!(predict_all_pairs(&scorer, &[], 3.0).unwrap().is_empty());
}

fn connected_within_cutoff(members: &[usize], a: usize, b: usize, rts: &[f64], cutoff: f64) -> bool {
    let mut seen = vec![a];
    let mut stack = vec![a];
    while let Some(x) = stack.pop() {
        if x == b {
            return true;
        }
        for &y in members {
            if !seen.contains(&y) && (rts[x] - rts[y]).abs() <= cutoff {
                seen.push(y);
                stack.push(y);
            }
        }
    }
    false
}

#[test]
fn cutoff_pairs_are_never_grouped_unless_bridged() {
    let mut rng = RngStream::new(8);
    for round in 0..50 {
        let n = 2 + rng.below(12);
        let cutoff = rng.uniform_range(0.2, 2.0);
        let rts: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.0, 6.0)).collect();
        let feats = feats_at(&rts, n);
        let scorer = HashScorer::new(round);
        let probs = predict_probabilities(&scorer, &feats, cutoff).unwrap();
        for i in 0..n {
            for j in i + 1..n {
                if (rts[i] - rts[j]).abs() > cutoff {
                    assert_eq!(probs.probabilities.get(i, j), 0.0);
                }
            }
        }
        let labels = upgma_cluster(&to_distances(&probs.probabilities, 1e-6), 2.0);
        for i in 0..n {
            for j in i + 1..n {
                if labels[i] == labels[j] && (rts[i] - rts[j]).abs() > cutoff {
                    let members: Vec<usize> = (0..n).filter(|&k| labels[k] == labels[i]).collect();
                    assert!(connected_within_cutoff(&members, i, j, &rts, cutoff), "round {round}");
                }
            }
        }
    }
}

/// Probability 1 inside a compound, 0 across.
struct Oracle;

impl PairScorer for Oracle {
    type Embedding = i64;

    fn embed(&self, f: &PeakFeatures) -> Result<i64> {
        Ok(f.peak.group)
    }

    fn score(&self, a: &i64, b: &i64) -> Result<f64> {
        Ok(if a == b { 1.0 } else { 0.0 })
    }
}

#[test]
fn oracle_probabilities_recover_two_compounds() {
    let mut feats = feats_at(&[1.0, 1.1, 1.05, 4.0, 4.2, 3.9], 3);
    for (i, f) in feats.iter_mut().enumerate() {
        f.peak.group = (i / 3) as i64;
        f.peak.area = 1.0 + i as f64;
    }
    let res = align(&Oracle, &feats, &AlignConfig::default(), "oracle").unwrap();
    assert_eq!(res.assignment, vec![0, 0, 0, 1, 1, 1]);
    assert_eq!(res.group_count(), 2);
    for (g, rt) in res.group_rt.iter().enumerate() {
        let members: Vec<f64> = (0..6).filter(|&i| res.assignment[i] == g).map(|i| feats[i].rt).collect();
        let lo = members.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = members.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(*rt >= lo && *rt <= hi);
    }
    assert_eq!(res.provenance.model_id, "oracle");
    // 15 pairs, three of them (to the 4.2 min peak) beyond 3 min
    assert_eq!(res.provenance.scored_pairs, 12);

    let one = align(&Oracle, &feats[..1], &AlignConfig::default(), "oracle").unwrap();
    assert_eq!(one.assignment, vec![0]);
    assert_eq!(one.group_rt, vec![feats[0].rt]);
}

#[test]
fn uniqueness_rule_leaves_no_duplicate_samples() {
    let mut rng = RngStream::new(5);
    for _ in 0..100 {
        let n = 1 + rng.below(15);
        let groups: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
        let samples: Vec<String> = (0..n).map(|_| format!("s{}", rng.below(4))).collect();
        let names: Vec<&str> = samples.iter().map(|s| s.as_str()).collect();
        let rts: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.0, 5.0)).collect();
        let out = enforce_sample_uniqueness(&groups, &names, &rts);
        for i in 0..n {
            for j in i + 1..n {
                if out[i] == out[j] {
                    assert_ne!(names[i], names[j]);
                    assert_eq!(groups[i], groups[j]);
                }
            }
        }
        let weights: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let grt = assign_group_rt(&out, &rts, &weights);
        for (i, &g) in out.iter().enumerate() {
            let members: Vec<f64> = (0..n).filter(|&k| out[k] == g).map(|k| rts[k]).collect();
            let lo = members.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = members.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(grt[g] >= lo && grt[g] <= hi, "{i}");
        }
    }
}

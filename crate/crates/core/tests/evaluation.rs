use chromalign::evaluation::{group_tp_fdr, labeled_pairs, pairwise_confusion, roc_auc};
use chromalign::grouping::{AlignConfig, AlignmentResult, Condensed, Provenance};
use chromalign::neuralnet::RngStream;

/// P(score+ > score-) + 0.5 P(score+ = score-) by counting every pair.
fn rank_statistic(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

fn random_set(rng: &mut RngStream, coarse: bool) -> (Vec<f64>, Vec<u8>) {
    loop {
        let n = 2 + rng.below(49);
        let scores: Vec<f64> = (0..n)
            .map(|_| if coarse { rng.below(5) as f64 / 4.0 } else { rng.uniform() })
            .collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.below(2) as u8).collect();
        if labels.contains(&0) && labels.contains(&1) {
            return (scores, labels);
        }
    }
}

#[test]
fn auc_equals_rank_statistic() {
    let mut rng = RngStream::new(17);
    for round in 0..200 {
        let (s, l) = random_set(&mut rng, round % 2 == 0);
        let auc = roc_auc(&s, &l).unwrap().auc;
        assert!((auc - rank_statistic(&s, &l)).abs() < 1e-12, "round {round}");
    }
}

#[test]
fn auc_invariances() {
    let mut rng = RngStream::new(4);
    for _ in 0..50 {
        let (s, l) = random_set(&mut rng, false);
        let auc = roc_auc(&s, &l).unwrap().auc;
        let transformed: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() + 1.0).collect();
        assert!((roc_auc(&transformed, &l).unwrap().auc - auc).abs() < 1e-12);
        let negated: Vec<f64> = s.iter().map(|x| -x).collect();
        assert!((roc_auc(&negated, &l).unwrap().auc + auc - 1.0).abs() < 1e-12);

        let all = pairwise_confusion(&s, &l, 0.0).unwrap();
        assert_eq!(all.tp_rate, Some(1.0));
        let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let none = pairwise_confusion(&s, &l, max + 1e-9).unwrap();
        assert_eq!(none.fp_rate, Some(0.0));
    }
}

#[test]
fn roc_curve_is_monotone() {
    let mut rng = RngStream::new(2);
    let (s, l) = random_set(&mut rng, true);
    let curve = roc_auc(&s, &l).unwrap();
    for w in curve.points.windows(2) {
        assert!(w[1].threshold < w[0].threshold);
        assert!(w[1].fp_rate >= w[0].fp_rate && w[1].tp_rate >= w[0].tp_rate);
    }
}

fn result(assignment: Vec<usize>, group_rt: Vec<f64>) -> AlignmentResult {
    AlignmentResult {
        provenance: Provenance {
            model_id: "test".into(),
            config: AlignConfig::default(),
            peaks: assignment.len(),
            groups: group_rt.len(),
            scored_pairs: 0,
        },
        assignment,
        group_rt,
    }
}

#[test]
fn group_metrics_examples() {
    let truth = [0, 0, 0, 1, 1];
    let perfect = group_tp_fdr(&result(vec![0, 0, 0, 1, 1], vec![1.0, 2.0]), &truth).unwrap();
    assert_eq!((perfect.tp_rate, perfect.fdr), (1.0, 0.0));

    // one member of the 3-peak group split off on its own
    let split = group_tp_fdr(&result(vec![0, 0, 2, 1, 1], vec![1.0, 2.0, 1.2]), &truth).unwrap();
    assert_eq!(split.groups[0].tp, 2);
    assert_eq!(split.groups[0].fp, 0);
    assert!((split.tp_rate - 4.0 / 5.0).abs() < 1e-12);
    assert_eq!(split.fdr, 0.0);

    // a foreign identified peak and an unidentified one land on group 0's RT
    let truth = [0, 0, 0, 1, 1, -1];
    let intruded = group_tp_fdr(&result(vec![0, 0, 0, 0, 1, 0], vec![1.0, 2.0]), &truth).unwrap();
    assert_eq!(intruded.groups[0].fp, 2);
    assert_eq!(intruded.labeled_peaks, 5);

    assert!(group_tp_fdr(&result(vec![0], vec![1.0]), &[-1]).is_err());
}

#[test]
fn group_metrics_ignore_label_names() {
    let mut rng = RngStream::new(6);
    for _ in 0..50 {
        let n = 1 + rng.below(20);
        let groups = 1 + rng.below(5);
        let assignment: Vec<usize> = (0..n).map(|_| rng.below(groups)).collect();
        let truth: Vec<i64> = (0..n).map(|_| rng.below(4) as i64 - 1).collect();
        if truth.iter().all(|&t| t < 0) {
            continue;
        }
        let rts: Vec<f64> = (0..groups).map(|g| g as f64).collect();
        let mut perm: Vec<usize> = (0..groups).collect();
        rng.shuffle(&mut perm);
        let relabeled: Vec<usize> = assignment.iter().map(|&g| perm[g]).collect();
        let mut rts2 = vec![0.0; groups];
        for g in 0..groups {
            rts2[perm[g]] = rts[g];
        }
        let a = group_tp_fdr(&result(assignment, rts), &truth).unwrap();
        let b = group_tp_fdr(&result(relabeled, rts2), &truth).unwrap();
        assert_eq!((a.tp, a.fp), (b.tp, b.fp));
    }
}

#[test]
fn labeled_pairs_skip_unidentified_pairs() {
    let probs = Condensed::from_fn(4, |i, j| (i + j) as f64 / 10.0);
    let (scores, labels) = labeled_pairs(&probs, &[0, 0, -1, -1]).unwrap();
    // all pairs but (2, 3)
    assert_eq!(scores.len(), 5);
    assert_eq!(labels, vec![1, 0, 0, 0, 0]);
}

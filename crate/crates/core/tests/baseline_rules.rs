mod common;

use chromalign::baseline_rules::{auto_reference, rule_align, RuleParams};
use chromalign::evaluation::group_tp_fdr;
use chromalign::neuralnet::RngStream;
use chromalign::signal::Peak;
use chromalign::Error;
use common::peak;

const COMPOUNDS: [f64; 4] = [1.0, 2.0, 3.5, 5.0];

/// Every sample holds every compound at `rt + offset(sample, compound)`.
fn layout(samples: usize, mut offset: impl FnMut(usize, usize) -> f64) -> Vec<Peak> {
    let mut out = Vec::new();
    for s in 0..samples {
        for (k, &rt) in COMPOUNDS.iter().enumerate() {
            out.push(peak(&format!("s{s}"), 73, rt + offset(s, k), k as i64));
        }
    }
    out
}

fn tp_rate(peaks: &[Peak], params: &RuleParams) -> f64 {
    let res = rule_align(peaks, params, None).unwrap();
    let truth: Vec<i64> = peaks.iter().map(|p| p.group).collect();
    group_tp_fdr(&res.result, &truth).unwrap().tp_rate
}

#[test]
fn identical_lists_give_one_group_per_compound() {
    let peaks = layout(5, |_, _| 0.0);
    let res = rule_align(&peaks, &RuleParams::default(), None).unwrap();
    assert_eq!(res.result.group_count(), COMPOUNDS.len());
    assert!(res.shifts.values().all(|&s| s == 0.0));
    assert_eq!(tp_rate(&peaks, &RuleParams::default()), 1.0);
}

#[test]
fn constant_shift_is_recovered() {
    // every sample but the reference s0 runs 0.03 min late
    let peaks = layout(4, |s, _| if s == 0 { 0.0 } else { 0.03 });
    let res = rule_align(&peaks, &RuleParams::default(), Some("s0")).unwrap();
    for (id, &shift) in &res.shifts {
        let want = if id == "s0" { 0.0 } else { -0.03 };
        assert!((shift - want).abs() < 1e-9, "{id}: {shift}");
    }
    assert_eq!(res.result.group_count(), COMPOUNDS.len());
    let truth: Vec<i64> = peaks.iter().map(|p| p.group).collect();
    let m = group_tp_fdr(&res.result, &truth).unwrap();
    assert_eq!((m.tp_rate, m.fdr), (1.0, 0.0));
}

#[test]
fn order_inverting_drift_breaks_the_rules() {
    // half the samples see compounds 1 and 2 swapped by a nonlinear drift
    // far beyond every rule tolerance
    let peaks = layout(6, |s, k| match (s % 2, k) {
        (1, 1) => 1.7,
        (1, 2) => -1.2,
        _ => 0.0,
    });
    let rate = tp_rate(&peaks, &RuleParams::default());
    assert!(rate < 1.0, "tp rate {rate}");
}

#[test]
fn global_translation_keeps_the_partition() {
    let mut rng = RngStream::new(3);
    for _ in 0..20 {
        let jitter: Vec<f64> = (0..6 * COMPOUNDS.len()).map(|_| rng.uniform_range(-0.04, 0.04)).collect();
        let base = layout(6, |s, k| jitter[s * COMPOUNDS.len() + k]);
        let c = 0.25;
        let moved: Vec<Peak> = base
            .iter()
            .map(|p| Peak {
                rt_apex: p.rt_apex + c,
                ..p.clone()
            })
            .collect();
        let a = rule_align(&base, &RuleParams::default(), None).unwrap();
        let b = rule_align(&moved, &RuleParams::default(), None).unwrap();
        assert_eq!(a.result.assignment, b.result.assignment);
    }
}

#[test]
fn sweeps_never_increase_spread() {
    let mut rng = RngStream::new(12);
    for _ in 0..50 {
        let n = 2 + rng.below(6);
        let peaks = layout(n, |_, _| rng.uniform_range(-0.3, 0.3));
        let params = RuleParams {
            max_diff_peak2mean: rng.uniform_range(0.01, 0.5),
            ..RuleParams::default()
        };
        let res = rule_align(&peaks, &params, None).unwrap();
        for w in res.sweep_sse.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", res.sweep_sse);
        }
        assert!(res.sweeps <= 100);
    }
}

#[test]
fn reference_choice_and_errors() {
    let mut peaks = layout(3, |_, _| 0.0);
    peaks.push(peak("s2", 73, 7.0, -1));
    assert_eq!(auto_reference(&peaks).as_deref(), Some("s2"));
    // tie between s0 and s1 goes to the smaller id
    assert_eq!(auto_reference(&layout(2, |_, _| 0.0)).as_deref(), Some("s0"));

    let one = layout(1, |_, _| 0.0);
    assert!(matches!(rule_align(&one, &RuleParams::default(), None), Err(Error::Argument(_))));
    assert!(rule_align(&peaks, &RuleParams::default(), Some("nope")).is_err());
}

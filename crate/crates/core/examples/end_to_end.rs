//! Trains the peak-encoder-free variant on one synthetic set and aligns a
//! second set from the same compound library.
//!
//! cargo run --release -p chromalign --example end_to_end [epochs]

use std::time::Instant;

use chromalign::evaluation::{group_tp_fdr, labeled_pairs, roc_auc};
use chromalign::features::{build_features, FeatureConfig, PeakFeatures};
use chromalign::grouping::{align_from_probabilities, predict_probabilities, AlignConfig};
use chromalign::model::{make_pairs, train, PeakEncoderKind, TrainConfig, VariantConfig};
use chromalign::signal::{detect_in_matrix, AlsParams, PeakDetectParams};
use chromalign::synthdata::{generate, truth_to_labels, SynthConfig};

fn features_for(cfg: &SynthConfig) -> Vec<PeakFeatures> {
    let data = generate(cfg).unwrap();
    let params = PeakDetectParams {
        min_area: 5.0,
        ..PeakDetectParams::default()
    };
    let fcfg = FeatureConfig::default();
    let mut out = Vec::new();
    for m in &data.matrices {
        let peaks = detect_in_matrix(m, &[cfg.shared_mz], &AlsParams::default(), &params).unwrap();
        let peaks = truth_to_labels(&data.truth, &peaks, 0.05).unwrap();
        out.extend(build_features(m, &peaks, &fcfg).unwrap());
    }
    out
}

fn main() {
    let epochs: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(50);
    let start = Instant::now();
    let train_cfg = SynthConfig::breath_like();
    let test_cfg = SynthConfig {
        seed: 1,
        library_seed: Some(0),
        ..SynthConfig::breath_like()
    };
    let train_feats = features_for(&train_cfg);
    let test_feats = features_for(&test_cfg);
    let unl = train_feats.iter().filter(|f| f.peak.group < 0).count();
    println!("train peaks {} (unlabeled {unl}), test peaks {}", train_feats.len(), test_feats.len());
    let pairs = make_pairs(&train_feats, 0).unwrap();
    println!("pairs {} (+{} / -{})", pairs.pairs.len(), pairs.positives, pairs.negatives);
    let variant = VariantConfig {
        peak_encoder: PeakEncoderKind::None,
        ..VariantConfig::default()
    };
    let t = Instant::now();
    let out = train(&train_feats, &pairs.pairs, &variant, &TrainConfig { epochs, ..TrainConfig::default() }).unwrap();
    println!("training {:.1}s", t.elapsed().as_secs_f64());
    for r in out.history.iter().rev().take(8) {
        println!("{r:?}");
    }
    let probs = predict_probabilities(&out.model, &test_feats, 3.0).unwrap();
    let truth: Vec<i64> = test_feats.iter().map(|f| f.peak.group).collect();
    let (s, l) = labeled_pairs(&probs.probabilities, &truth).unwrap();
    println!("held-out AUC {:.5}", roc_auc(&s, &l).unwrap().auc);
    let res = align_from_probabilities(&test_feats, &probs, &AlignConfig::default(), "e2e");
    let g = group_tp_fdr(&res, &truth).unwrap();
    println!("groups {} tp_rate {:.4} fdr {:.4}", res.group_count(), g.tp_rate, g.fdr);
    println!("total {:.1}s", start.elapsed().as_secs_f64());
}

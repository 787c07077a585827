use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde_json::json;

use chromalign::baseline_rules::rule_align;
use chromalign::evaluation::{group_tp_fdr, labeled_pairs, pairwise_confusion, roc_auc, write_roc};
use chromalign::features::{build_features, read_feature_bundle, write_feature_bundle, PeakFeatures};
use chromalign::grouping::{
    align_from_probabilities, predict_probabilities, read_peak_report, write_peak_report, write_report, Condensed,
};
use chromalign::ingest::{load_matrix, read_peak_table, save_matrix, write_peak_table, ChromatogramMatrix, PEAK_TABLE_HEADER};
use chromalign::model::{make_pairs, train, write_history, SiameseModel, VariantConfig};
use chromalign::signal::{detect_in_matrix, Peak};
use chromalign::synthdata::{generate, parse_truth, truth_to_labels, write_truth, TruthRow, TRUTH_HEADER};

use crate::config::{config_err, Channels, RunConfig};

/// Fails with a configuration error when an input path does not exist.
fn input(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(config_err(format!("input {} does not exist", path.display())))
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// Matrix CSVs of a directory in file-name order.
fn load_matrices(dir: &Path) -> Result<Vec<ChromatogramMatrix>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(input(dir)?)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    if files.is_empty() {
        return Err(config_err(format!("no matrix CSV files in {}", dir.display())));
    }
    files.sort();
    files
        .iter()
        .map(|f| load_matrix(f).with_context(|| format!("loading {}", f.display())))
        .collect()
}

pub fn variant_for(name: &str) -> Result<VariantConfig> {
    let v = match name {
        "full" => VariantConfig::preset("01"),
        "none" => VariantConfig::preset("02"),
        "simplified" => VariantConfig::preset("03"),
        id => VariantConfig::preset(id),
    };
    v.map_err(|_| config_err(format!("unknown variant `{name}`")))
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = generate(&cfg.synth)?;
    let dir = out.join("matrices");
    std::fs::create_dir_all(&dir)?;
    for m in &data.matrices {
        save_matrix(m, dir.join(format!("{}.csv", m.sample_id())))?;
    }
    write_truth(&data.truth, out.join("truth.csv"))?;
    log::info!(
        "wrote {} matrices and {} truth rows to {}",
        data.matrices.len(),
        data.truth.len(),
        out.display()
    );
    Ok(())
}

pub fn detect(cfg: &RunConfig, matrices: &Path, out: &Path, truth: Option<&Path>) -> Result<()> {
    let mats = load_matrices(matrices)?;
    let mut peaks = Vec::new();
    for m in &mats {
        let channels = match &cfg.channels {
            Channels::All => m.mz_axis().to_vec(),
            Channels::List(c) => c.clone(),
        };
        peaks.extend(detect_in_matrix(m, &channels, &cfg.als, &cfg.detect)?);
    }
    if let Some(t) = truth {
        peaks = truth_to_labels(&read_truth_rows(t)?, &peaks, cfg.match_tolerance)?;
        let labeled = peaks.iter().filter(|p| p.is_labeled()).count();
        log::info!("{labeled} of {} peaks matched to truth", peaks.len());
    }
    create_parent(out)?;
    write_peak_table(&peaks, out)?;
    log::info!("{} peaks from {} samples", peaks.len(), mats.len());
    Ok(())
}

/// Truth rows from a truth CSV or from the labeled rows of a peak table.
fn read_truth_rows(path: &Path) -> Result<Vec<TruthRow>> {
    let text = std::fs::read_to_string(input(path)?)?;
    let header = text.lines().next().unwrap_or("").trim();
    if header == TRUTH_HEADER {
        Ok(parse_truth(&text)?)
    } else if header == PEAK_TABLE_HEADER {
        Ok(read_peak_table(path)?
            .into_iter()
            .filter(Peak::is_labeled)
            .map(|p| TruthRow {
                sample_id: p.sample_id,
                mz: p.mz,
                rt_apex_true: p.rt_apex,
                group: p.group,
            })
            .collect())
    } else {
        Err(config_err(format!(
            "{} is neither a truth CSV nor a peak table",
            path.display()
        )))
    }
}

pub fn features(cfg: &RunConfig, matrices: &Path, peaks: &Path, out: &Path) -> Result<()> {
    let peaks = read_peak_table(input(peaks)?)?;
    let mats = load_matrices(matrices)?;
    let mut by_sample: BTreeMap<&str, Vec<Peak>> = BTreeMap::new();
    for p in &peaks {
        by_sample.entry(p.sample_id.as_str()).or_default().push(p.clone());
    }
    let mut feats = Vec::with_capacity(peaks.len());
    for m in &mats {
        if let Some(ps) = by_sample.remove(m.sample_id()) {
            feats.extend(build_features(m, &ps, &cfg.features)?);
        }
    }
    if let Some(missing) = by_sample.keys().next() {
        return Err(config_err(format!("no matrix for sample `{missing}`")));
    }
    write_feature_bundle(out, &cfg.features, &feats)?;
    log::info!("{} feature records written to {}", feats.len(), out.display());
    Ok(())
}

fn load_features(dir: &Path) -> Result<Vec<PeakFeatures>> {
    let (_, feats) = read_feature_bundle(input(dir)?)?;
    if feats.is_empty() {
        return Err(config_err(format!("feature bundle {} is empty", dir.display())));
    }
    Ok(feats)
}

pub fn train_cmd(cfg: &RunConfig, features: &Path, weights: &Path, history: &Path) -> Result<()> {
    let feats = load_features(features)?;
    let variant = variant_for(&cfg.variant)?;
    let pairs = make_pairs(&feats, cfg.train.seed)?;
    log::info!(
        "{} pairs ({} positive, {} negative), variant {} ({:?} peak encoder)",
        pairs.pairs.len(),
        pairs.positives,
        pairs.negatives,
        variant.id,
        variant.peak_encoder
    );
    let start = Instant::now();
    let outcome = train(&feats, &pairs.pairs, &variant, &cfg.train)?;
    let total = start.elapsed().as_secs_f64();
    let per_epoch = outcome.epoch_seconds.iter().sum::<f64>() / outcome.epoch_seconds.len() as f64;
    log::info!(
        "trained {} epochs in {total:.2} s ({per_epoch:.3} s per epoch)",
        outcome.epoch_seconds.len()
    );
    create_parent(weights)?;
    create_parent(history)?;
    outcome.model.save(weights)?;
    write_history(history, &outcome.history)?;
    Ok(())
}

pub fn align(
    cfg: &RunConfig,
    weights: &Path,
    features: &Path,
    out: &Path,
    scores: Option<&Path>,
    scatter: Option<&Path>,
) -> Result<()> {
    cfg.align.validate()?;
    let model = SiameseModel::load(input(weights)?)?;
    let feats = load_features(features)?;
    let probs = predict_probabilities(&model, &feats, cfg.align.rt_cutoff)?;
    let model_id = weights
        .file_stem()
        .map_or_else(|| "model".to_string(), |s| s.to_string_lossy().into_owned());
    let result = align_from_probabilities(&feats, &probs, &cfg.align, &model_id);
    create_parent(out)?;
    write_report(out, &feats, &result)?;
    log::info!(
        "{} peaks in {} groups, {} pairs scored",
        feats.len(),
        result.group_count(),
        probs.scored_pairs
    );
    if let Some(path) = scores {
        let mut text = String::from("i,j,probability\n");
        let n = feats.len();
        for i in 0..n {
            for j in i + 1..n {
                if (feats[i].rt - feats[j].rt).abs() <= cfg.align.rt_cutoff {
                    writeln!(text, "{i},{j},{:?}", probs.probabilities.get(i, j))?;
                }
            }
        }
        create_parent(path)?;
        std::fs::write(path, text)?;
    }
    if let Some(path) = scatter {
        let ids: Vec<&str> = {
            let mut v: Vec<&str> = feats.iter().map(|f| f.peak.sample_id.as_str()).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let mut text = String::from("sample_index,rt,group\n");
        for (f, &g) in feats.iter().zip(&result.assignment) {
            let s = ids.binary_search(&f.peak.sample_id.as_str()).unwrap_or(0);
            writeln!(text, "{s},{:?},{g}", f.rt)?;
        }
        create_parent(path)?;
        std::fs::write(path, text)?;
    }
    Ok(())
}

fn read_scores(path: &Path, n: usize) -> Result<Condensed> {
    let text = std::fs::read_to_string(input(path)?)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("i,j,probability") {
        return Err(config_err(format!("{} lacks the `i,j,probability` header", path.display())));
    }
    let mut scored = BTreeMap::new();
    for (k, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || config_err(format!("{} line {}: malformed row", path.display(), k + 2));
        if cells.len() != 3 {
            return Err(bad());
        }
        let i: usize = cells[0].parse().map_err(|_| bad())?;
        let j: usize = cells[1].parse().map_err(|_| bad())?;
        let p: f64 = cells[2].parse().map_err(|_| bad())?;
        if !(i < j && j < n) {
            return Err(bad());
        }
        scored.insert((i, j), p);
    }
    // unscored pairs lie beyond the cutoff
    Ok(Condensed::from_fn(n, |i, j| scored.get(&(i, j)).copied().unwrap_or(0.0)))
}

pub fn evaluate(
    cfg: &RunConfig,
    report: &Path,
    truth: &Path,
    scores: Option<&Path>,
    out: &Path,
    roc: Option<&Path>,
) -> Result<()> {
    let (peaks, result) = read_peak_report(input(report)?)?;
    let rows = read_truth_rows(truth)?;
    let labels: Vec<i64> = truth_to_labels(&rows, &peaks, cfg.match_tolerance)?
        .iter()
        .map(|p| p.group)
        .collect();
    let group = group_tp_fdr(&result, &labels)?;
    let mut metrics = json!({ "group": group });
    if let Some(path) = scores {
        let probs = read_scores(path, peaks.len())?;
        let (s, l) = labeled_pairs(&probs, &labels)?;
        let curve = roc_auc(&s, &l)?;
        metrics["pairs"] = json!(s.len());
        metrics["auc"] = json!(curve.auc);
        metrics["pairwise"] = json!(pairwise_confusion(&s, &l, cfg.threshold)?);
        let roc_path = roc.map_or_else(|| out.with_file_name("roc.csv"), Path::to_path_buf);
        create_parent(&roc_path)?;
        write_roc(&roc_path, &curve)?;
        log::info!("AUC {:.4} over {} labeled pairs", curve.auc, s.len());
    }
    log::info!("group TP rate {:.4}, FDR {:.4}", group.tp_rate, group.fdr);
    create_parent(out)?;
    std::fs::write(out, serde_json::to_string_pretty(&metrics)? + "\n")?;
    Ok(())
}

/// Least-squares line `y = a + b x`; returns `(a, b, r_squared)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (a, b, r2)
}

/// `n` features cycling through `base`, each copy renamed to its own sample.
fn resized(base: &[PeakFeatures], n: usize) -> Vec<PeakFeatures> {
    (0..n)
        .map(|k| {
            let mut f = base[k % base.len()].clone();
            let copy = k / base.len();
            if copy > 0 {
                f.peak.sample_id = format!("{}~{copy}", f.peak.sample_id);
            }
            f
        })
        .collect()
}

pub fn benchmark(cfg: &RunConfig, weights: &Path, features: &Path, out: &Path, fit: Option<&Path>) -> Result<()> {
    if cfg.sizes.is_empty() || cfg.repeats == 0 {
        return Err(config_err("benchmark needs at least one size and one repeat"));
    }
    let model = SiameseModel::load(input(weights)?)?;
    let base = load_features(features)?;
    // untimed pass so the first size does not pay for cold caches
    predict_probabilities(&model, &resized(&base, cfg.sizes[0]), cfg.align.rt_cutoff)?;
    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        let set = resized(&base, n);
        let mut best = f64::INFINITY;
        let mut combos = 0;
        for _ in 0..cfg.repeats {
            let start = Instant::now();
            let probs = predict_probabilities(&model, &set, cfg.align.rt_cutoff)?;
            best = best.min(start.elapsed().as_secs_f64());
            combos = probs.scored_pairs;
        }
        log::info!("{n} peaks: {combos} combinations in {best:.4} s");
        rows.push((combos, best));
    }
    let mut text = String::from("combinations,seconds\n");
    for (c, s) in &rows {
        writeln!(text, "{c},{s}")?;
    }
    create_parent(out)?;
    std::fs::write(out, text)?;
    let x: Vec<f64> = rows.iter().map(|r| r.0 as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let (intercept, slope, r2) = linear_fit(&x, &y);
    println!("seconds = {intercept:.6} + {slope:.3e} * combinations, R^2 = {r2:.4}");
    if let Some(path) = fit {
        create_parent(path)?;
        let summary = json!({ "intercept": intercept, "slope": slope, "r_squared": r2 });
        std::fs::write(path, serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    Ok(())
}

pub fn rule_align_cmd(cfg: &RunConfig, peaks: &Path, out: &Path) -> Result<()> {
    let peaks = read_peak_table(input(peaks)?)?;
    let res = rule_align(&peaks, &cfg.rules, cfg.reference.as_deref())?;
    log::info!(
        "reference {}, {} groups after {} sweeps",
        res.reference,
        res.result.group_count(),
        res.sweeps
    );
    create_parent(out)?;
    write_peak_report(out, &peaks, &res.result)?;
    Ok(())
}

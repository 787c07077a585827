//! Run configuration: `key = value` lines, `#` comments, flat key space.
//! Every key has a default; unknown keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chromalign::features::FeatureConfig;
use chromalign::grouping::{AlignConfig, RtWeighting};
use chromalign::model::TrainConfig;
use chromalign::signal::{AlsParams, PeakDetectParams};
use chromalign::baseline_rules::RuleParams;
use chromalign::synthdata::SynthConfig;

/// Bad configuration or command-line input; exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Section {
    Common,
    Simulation,
    Detection,
    Features,
    Training,
    Alignment,
    Evaluation,
    Benchmark,
    Rules,
}

impl Section {
    fn title(self) -> &'static str {
        match self {
            Section::Common => "common",
            Section::Simulation => "simulation",
            Section::Detection => "detection",
            Section::Features => "features",
            Section::Training => "training",
            Section::Alignment => "alignment",
            Section::Evaluation => "evaluation",
            Section::Benchmark => "benchmark",
            Section::Rules => "rule-based alignment",
        }
    }
}

pub struct Param {
    pub key: &'static str,
    pub unit: &'static str,
    pub help: &'static str,
    pub section: Section,
}

const fn p(key: &'static str, unit: &'static str, help: &'static str, section: Section) -> Param {
    Param { key, unit, help, section }
}

use Section::*;

pub const PARAMS: &[Param] = &[
    p("seed", "-", "random seed for simulation and training", Common),
    p("mz_lo", "Da", "lowest m/z of simulated data and of the mass spectrum feature", Common),
    p("mz_hi", "Da", "highest m/z of simulated data and of the mass spectrum feature", Common),
    p("preset", "breath|air", "simulation preset, applied before other simulation keys", Simulation),
    p("n_samples", "samples", "number of simulated samples", Simulation),
    p("n_compounds", "compounds", "compounds per sample", Simulation),
    p("rt_lo", "min", "start of the window holding undrifted compound RTs", Simulation),
    p("rt_hi", "min", "end of that window", Simulation),
    p("dt", "min", "sampling interval", Simulation),
    p("max_shift", "min", "largest constant per-sample RT shift", Simulation),
    p("drift_amplitude", "min", "amplitude of the sinusoidal RT drift", Simulation),
    p("drift_wavelength", "min", "wavelength of the sinusoidal RT drift", Simulation),
    p("peak_sigma", "min", "Gaussian peak width", Simulation),
    p("amplitude_lo", "counts", "smallest compound amplitude", Simulation),
    p("amplitude_hi", "counts", "largest compound amplitude", Simulation),
    p("shared_mz", "Da", "channel present in every compound", Simulation),
    p("min_channels", "channels", "fewest nonzero channels per spectrum", Simulation),
    p("max_channels", "channels", "most nonzero channels per spectrum", Simulation),
    p("confusable", "bool", "adjacent compounds share secondary channels", Simulation),
    p("noise_sd", "counts", "additive Gaussian noise", Simulation),
    p("baseline", "counts, comma list", "baseline polynomial in RT, constant term first", Simulation),
    p("dropout_prob", "probability", "chance a compound is absent from a sample", Simulation),
    p("library_seed", "-|none", "seed for compound spectra and RTs (none: use seed)", Simulation),
    p("sample_prefix", "text", "prefix of simulated sample ids", Simulation),
    p("als_lambda", "-", "ALS smoothness weight", Detection),
    p("als_p", "-", "ALS asymmetry", Detection),
    p("als_iterations", "iterations", "ALS reweighting iterations", Detection),
    p("smooth_window", "samples", "Savitzky-Golay window (odd)", Detection),
    p("smooth_polyorder", "-", "Savitzky-Golay polynomial order", Detection),
    p("d1_threshold", "counts/step|auto", "first-derivative threshold (auto: 1% of max |d1|)", Detection),
    p("min_width", "samples", "narrowest accepted peak", Detection),
    p("min_area", "counts*min", "smallest accepted peak area", Detection),
    p("channels", "Da, comma list|all", "channels searched for peaks", Detection),
    p("match_tolerance", "min", "largest apex distance when matching peaks to truth", Detection),
    p("segment_steps", "samples", "chromatogram segment length (even)", Features),
    p("segment_half_width", "min", "nominal half-width of the segment", Features),
    p("variant", "full|simplified|none|01-31", "model variant", Training),
    p("epochs", "epochs", "training epochs", Training),
    p("batch_size", "pairs", "minibatch size", Training),
    p("validation_fraction", "fraction", "share of pairs held out for validation", Training),
    p("aux_loss_weight", "-", "weight of each auxiliary loss", Training),
    p("learning_rate", "-", "Adam step size", Training),
    p("rt_cutoff", "min", "pairs further apart are never scored", Alignment),
    p("cut_distance", "-", "clustering cut on 1/probability", Alignment),
    p("p_floor", "probability", "probability floor before inversion", Alignment),
    p("weighting", "area|height", "weights of the group RT", Alignment),
    p("threshold", "probability", "score threshold of the pairwise confusion counts", Evaluation),
    p("sizes", "peaks, comma list", "peak counts of the timed feature sets", Benchmark),
    p("repeats", "runs", "timed runs per size (fastest kept)", Benchmark),
    p("max_linear_shift", "min", "largest stage-1 shift", Rules),
    p("max_diff_peak2mean", "min", "largest peak to group-mean distance in stage 2", Rules),
    p("min_diff_peak2peak", "min", "stage-1 match distance and stage-3 merge distance", Rules),
    p("grid_step", "min", "stage-1 shift grid spacing", Rules),
    p("reference", "sample id|auto", "stage-1 reference sample", Rules),
];

#[derive(Clone, Debug, PartialEq)]
pub enum Channels {
    All,
    List(Vec<i64>),
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub preset: String,
    pub als: AlsParams,
    pub detect: PeakDetectParams,
    pub channels: Channels,
    pub match_tolerance: f64,
    pub features: FeatureConfig,
    pub variant: String,
    pub train: TrainConfig,
    pub align: AlignConfig,
    pub threshold: f64,
    pub sizes: Vec<usize>,
    pub repeats: usize,
    pub rules: RuleParams,
    pub reference: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::breath_like();
        Self {
            channels: Channels::List(vec![synth.shared_mz]),
            synth,
            preset: "breath".into(),
            als: AlsParams::default(),
            detect: PeakDetectParams {
                min_area: 5.0,
                ..PeakDetectParams::default()
            },
            match_tolerance: 0.05,
            features: FeatureConfig::default(),
            variant: "full".into(),
            train: TrainConfig::default(),
            align: AlignConfig::default(),
            threshold: 0.5,
            sizes: vec![40, 80, 160, 320, 640],
            repeats: 3,
            rules: RuleParams::default(),
            reference: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> anyhow::Result<T> {
    value
        .parse()
        .map_err(|_| config_err(format!("invalid value `{value}` for key `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> anyhow::Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> anyhow::Result<()> {
        let v = value.trim();
        let s = &mut self.synth;
        match key {
            "seed" => {
                let seed = parse(key, v)?;
                s.seed = seed;
                self.train.seed = seed;
            }
            "mz_lo" => {
                s.mz_lo = parse(key, v)?;
                self.features.mz_lo = s.mz_lo;
            }
            "mz_hi" => {
                s.mz_hi = parse(key, v)?;
                self.features.mz_hi = s.mz_hi;
            }
            "preset" => {
                let fresh = match v {
                    "breath" => SynthConfig::breath_like(),
                    "air" => SynthConfig::air_like(),
                    _ => return Err(config_err(format!("unknown preset `{v}` (breath or air)"))),
                };
                *s = SynthConfig {
                    seed: s.seed,
                    mz_lo: s.mz_lo,
                    mz_hi: s.mz_hi,
                    ..fresh
                };
                self.preset = v.into();
            }
            "n_samples" => s.n_samples = parse(key, v)?,
            "n_compounds" => s.n_compounds = parse(key, v)?,
            "rt_lo" => s.rt_lo = parse(key, v)?,
            "rt_hi" => s.rt_hi = parse(key, v)?,
            "dt" => s.dt = parse(key, v)?,
            "max_shift" => s.max_shift = parse(key, v)?,
            "drift_amplitude" => s.drift_amplitude = parse(key, v)?,
            "drift_wavelength" => s.drift_wavelength = parse(key, v)?,
            "peak_sigma" => s.peak_sigma = parse(key, v)?,
            "amplitude_lo" => s.amplitude_lo = parse(key, v)?,
            "amplitude_hi" => s.amplitude_hi = parse(key, v)?,
            "shared_mz" => s.shared_mz = parse(key, v)?,
            "min_channels" => s.min_channels = parse(key, v)?,
            "max_channels" => s.max_channels = parse(key, v)?,
            "confusable" => s.confusable = parse(key, v)?,
            "noise_sd" => s.noise_sd = parse(key, v)?,
            "baseline" => s.baseline = parse_list(key, v)?,
            "dropout_prob" => s.dropout_prob = parse(key, v)?,
            "library_seed" => s.library_seed = if v == "none" { None } else { Some(parse(key, v)?) },
            "sample_prefix" => {
                if v.contains([',', '/', '\\']) || v.is_empty() {
                    return Err(config_err(format!("invalid sample prefix `{v}`")));
                }
                s.sample_prefix = v.into()
            }
            "als_lambda" => self.als.lambda = parse(key, v)?,
            "als_p" => self.als.p = parse(key, v)?,
            "als_iterations" => self.als.iterations = parse(key, v)?,
            "smooth_window" => self.detect.smooth_window = parse(key, v)?,
            "smooth_polyorder" => self.detect.smooth_polyorder = parse(key, v)?,
            "d1_threshold" => self.detect.d1_threshold = if v == "auto" { None } else { Some(parse(key, v)?) },
            "min_width" => self.detect.min_width = parse(key, v)?,
            "min_area" => self.detect.min_area = parse(key, v)?,
            "channels" => {
                self.channels = if v == "all" {
                    Channels::All
                } else {
                    Channels::List(parse_list(key, v)?)
                }
            }
            "match_tolerance" => self.match_tolerance = parse(key, v)?,
            "segment_steps" => self.features.segment_steps = parse(key, v)?,
            "segment_half_width" => self.features.segment_half_width = parse(key, v)?,
            "variant" => self.variant = v.into(),
            "epochs" => self.train.epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "validation_fraction" => self.train.validation_fraction = parse(key, v)?,
            "aux_loss_weight" => self.train.aux_loss_weight = parse(key, v)?,
            "learning_rate" => self.train.learning_rate = parse(key, v)?,
            "rt_cutoff" => self.align.rt_cutoff = parse(key, v)?,
            "cut_distance" => self.align.cut_distance = parse(key, v)?,
            "p_floor" => self.align.p_floor = parse(key, v)?,
            "weighting" => {
                self.align.weighting = match v {
                    "area" => RtWeighting::Area,
                    "height" => RtWeighting::Height,
                    _ => return Err(config_err(format!("invalid value `{v}` for key `weighting`"))),
                }
            }
            "threshold" => self.threshold = parse(key, v)?,
            "sizes" => self.sizes = parse_list(key, v)?,
            "repeats" => self.repeats = parse(key, v)?,
            "max_linear_shift" => self.rules.max_linear_shift = parse(key, v)?,
            "max_diff_peak2mean" => self.rules.max_diff_peak2mean = parse(key, v)?,
            "min_diff_peak2peak" => self.rules.min_diff_peak2peak = parse(key, v)?,
            "grid_step" => self.rules.grid_step = parse(key, v)?,
            "reference" => self.reference = if v == "auto" { None } else { Some(v.into()) },
            _ => return Err(config_err(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Current value of `key` in the syntax `set` accepts.
    pub fn get(&self, key: &str) -> String {
        let s = &self.synth;
        match key {
            "seed" => s.seed.to_string(),
            "mz_lo" => s.mz_lo.to_string(),
            "mz_hi" => s.mz_hi.to_string(),
            "preset" => self.preset.clone(),
            "n_samples" => s.n_samples.to_string(),
            "n_compounds" => s.n_compounds.to_string(),
            "rt_lo" => s.rt_lo.to_string(),
            "rt_hi" => s.rt_hi.to_string(),
            "dt" => s.dt.to_string(),
            "max_shift" => s.max_shift.to_string(),
            "drift_amplitude" => s.drift_amplitude.to_string(),
            "drift_wavelength" => s.drift_wavelength.to_string(),
            "peak_sigma" => s.peak_sigma.to_string(),
            "amplitude_lo" => s.amplitude_lo.to_string(),
            "amplitude_hi" => s.amplitude_hi.to_string(),
            "shared_mz" => s.shared_mz.to_string(),
            "min_channels" => s.min_channels.to_string(),
            "max_channels" => s.max_channels.to_string(),
            "confusable" => s.confusable.to_string(),
            "noise_sd" => s.noise_sd.to_string(),
            "baseline" => join(&s.baseline),
            "dropout_prob" => s.dropout_prob.to_string(),
            "library_seed" => s.library_seed.map_or("none".into(), |v| v.to_string()),
            "sample_prefix" => s.sample_prefix.clone(),
            "als_lambda" => self.als.lambda.to_string(),
            "als_p" => self.als.p.to_string(),
            "als_iterations" => self.als.iterations.to_string(),
            "smooth_window" => self.detect.smooth_window.to_string(),
            "smooth_polyorder" => self.detect.smooth_polyorder.to_string(),
            "d1_threshold" => self.detect.d1_threshold.map_or("auto".into(), |v| v.to_string()),
            "min_width" => self.detect.min_width.to_string(),
            "min_area" => self.detect.min_area.to_string(),
            "channels" => match &self.channels {
                Channels::All => "all".into(),
                Channels::List(c) => join(c),
            },
            "match_tolerance" => self.match_tolerance.to_string(),
            "segment_steps" => self.features.segment_steps.to_string(),
            "segment_half_width" => self.features.segment_half_width.to_string(),
            "variant" => self.variant.clone(),
            "epochs" => self.train.epochs.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "validation_fraction" => self.train.validation_fraction.to_string(),
            "aux_loss_weight" => self.train.aux_loss_weight.to_string(),
            "learning_rate" => self.train.learning_rate.to_string(),
            "rt_cutoff" => self.align.rt_cutoff.to_string(),
            "cut_distance" => self.align.cut_distance.to_string(),
            "p_floor" => self.align.p_floor.to_string(),
            "weighting" => match self.align.weighting {
                RtWeighting::Area => "area".into(),
                RtWeighting::Height => "height".into(),
            },
            "threshold" => self.threshold.to_string(),
            "sizes" => join(&self.sizes),
            "repeats" => self.repeats.to_string(),
            "max_linear_shift" => self.rules.max_linear_shift.to_string(),
            "max_diff_peak2mean" => self.rules.max_diff_peak2mean.to_string(),
            "min_diff_peak2peak" => self.rules.min_diff_peak2peak.to_string(),
            "grid_step" => self.rules.grid_step.to_string(),
            "reference" => self.reference.clone().unwrap_or_else(|| "auto".into()),
            _ => String::new(),
        }
    }

    /// Applies pairs in order, except that `preset` goes first.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> anyhow::Result<()> {
        for (k, v) in pairs.iter().filter(|(k, _)| k == "preset") {
            self.set(k, v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "preset") {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Defaults, then the file, then `--set` overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply(&parse_file(&text)?)?;
        }
        let pairs = overrides
            .iter()
            .map(|o| split_pair(o).ok_or_else(|| config_err(format!("expected KEY=VALUE, got `{o}`"))))
            .collect::<anyhow::Result<Vec<_>>>()?;
        cfg.apply(&pairs)?;
        Ok(cfg)
    }
}

fn split_pair(line: &str) -> Option<(String, String)> {
    let (k, v) = line.split_once('=')?;
    let k = k.trim();
    (!k.is_empty()).then(|| (k.to_string(), v.trim().to_string()))
}

pub fn parse_file(text: &str) -> anyhow::Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let pair = split_pair(line)
            .ok_or_else(|| config_err(format!("config line {}: expected `key = value`", n + 1)))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Help text listing the keys of the given sections with defaults and units.
pub fn describe(sections: &[Section]) -> String {
    let defaults = RunConfig::default();
    let mut out = String::from("Configuration keys (set in --config FILE or with --set KEY=VALUE):\n");
    for &section in [Common].iter().chain(sections) {
        let rows: Vec<&Param> = PARAMS.iter().filter(|p| p.section == section).collect();
        if rows.is_empty() {
            continue;
        }
        out.push_str(&format!("\n  [{}]\n", section.title()));
        for p in rows {
            out.push_str(&format!(
                "  {:<20} default {:<14} [{}]  {}\n",
                p.key,
                defaults.get(p.key),
                p.unit,
                p.help
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips_through_get_and_set() {
        let defaults = RunConfig::default();
        for p in PARAMS {
            let mut cfg = RunConfig::default();
            cfg.set(p.key, &defaults.get(p.key)).unwrap_or_else(|e| panic!("{}: {e}", p.key));
            assert_eq!(cfg.get(p.key), defaults.get(p.key), "{}", p.key);
        }
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = RunConfig::load(None, &["n_sampels=3".into()]).unwrap_err();
        assert!(err.to_string().contains("n_sampels"));
        assert!(err.downcast_ref::<ConfigError>().is_some());
    }

    #[test]
    fn preset_applies_before_other_keys() {
        let pairs = parse_file("max_shift = 0.2\npreset = air # easy data\n").unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply(&pairs).unwrap();
        assert_eq!(cfg.synth.max_shift, 0.2);
        assert_eq!(cfg.synth.drift_amplitude, 0.0);
    }
}

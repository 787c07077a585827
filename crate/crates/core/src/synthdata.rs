//! Synthetic GC-MS sample sets with planted compounds, retention time drift,
//! noise and baseline, plus the ground truth needed to label detected peaks.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ChromatogramMatrix;
use crate::neuralnet::RngStream;
use crate::signal::Peak;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub n_compounds: usize,
    /// Window (minutes) holding the undrifted compound retention times.
    pub rt_lo: f64,
    pub rt_hi: f64,
    /// Sampling interval, minutes.
    pub dt: f64,
    /// Per-sample constant shift drawn from `[-max_shift, max_shift]` minutes.
    pub max_shift: f64,
    /// Amplitude (minutes) of the sinusoidal drift component.
    pub drift_amplitude: f64,
    /// Wavelength (minutes) of the sinusoidal drift component.
    pub drift_wavelength: f64,
    /// Gaussian peak width, minutes.
    pub peak_sigma: f64,
    pub amplitude_lo: f64,
    pub amplitude_hi: f64,
    pub mz_lo: i64,
    pub mz_hi: i64,
    /// Channel present in every compound with weight 1.
    pub shared_mz: i64,
    pub min_channels: usize,
    pub max_channels: usize,
    /// Adjacent compounds share about half of their secondary channels.
    pub confusable: bool,
    pub noise_sd: f64,
    /// Baseline polynomial in retention time, constant term first.
    pub baseline: Vec<f64>,
    pub dropout_prob: f64,
    pub seed: u64,
    /// Seed for compound templates and base retention times. Sets generated
    /// with different `seed` but the same library contain the same compounds.
    pub library_seed: Option<u64>,
    pub sample_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::breath_like()
    }
}

impl SynthConfig {
    /// Large drift with a nonlinear term and confusable spectra.
    pub fn breath_like() -> Self {
        Self {
            n_samples: 20,
            n_compounds: 8,
            rt_lo: 1.0,
            rt_hi: 9.0,
            dt: 0.005,
            max_shift: 0.3,
            drift_amplitude: 0.2,
            drift_wavelength: 4.0,
            peak_sigma: 0.02,
            amplitude_lo: 1000.0,
            amplitude_hi: 5000.0,
            mz_lo: 40,
            mz_hi: 120,
            shared_mz: 73,
            min_channels: 5,
            max_channels: 15,
            confusable: true,
            noise_sd: 5.0,
            baseline: vec![20.0, 2.0],
            dropout_prob: 0.0,
            seed: 0,
            library_seed: None,
            sample_prefix: "S".into(),
        }
    }

    /// Small linear shift only, distinct spectra.
    pub fn air_like() -> Self {
        Self {
            max_shift: 0.05,
            drift_amplitude: 0.0,
            confusable: false,
            ..Self::breath_like()
        }
    }

    pub fn max_displacement(&self) -> f64 {
        self.max_shift + self.drift_amplitude
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_samples == 0 || self.n_compounds == 0 {
            return bad("n_samples and n_compounds must be positive".into());
        }
        if !(self.rt_hi > self.rt_lo && self.rt_lo >= 0.0) {
            return bad(format!("rt window ({}, {}) is empty", self.rt_lo, self.rt_hi));
        }
        for (name, v) in [
            ("dt", self.dt),
            ("peak_sigma", self.peak_sigma),
            ("drift_wavelength", self.drift_wavelength),
            ("amplitude_lo", self.amplitude_lo),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("max_shift", self.max_shift),
            ("drift_amplitude", self.drift_amplitude),
            ("noise_sd", self.noise_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(self.amplitude_hi >= self.amplitude_lo) {
            return bad("amplitude_hi is below amplitude_lo".into());
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return bad(format!("dropout_prob must be in [0, 1), got {}", self.dropout_prob));
        }
        if self.baseline.iter().any(|c| !c.is_finite()) {
            return bad("baseline coefficients must be finite".into());
        }
        if !(self.mz_lo < self.mz_hi && (self.mz_lo..=self.mz_hi).contains(&self.shared_mz)) {
            return bad(format!(
                "shared m/z {} must lie in [{}, {}]",
                self.shared_mz, self.mz_lo, self.mz_hi
            ));
        }
        if self.min_channels < 2 || self.max_channels < self.min_channels {
            return bad("channel counts need 2 <= min_channels <= max_channels".into());
        }
        let pool = (self.mz_hi - self.mz_lo) as usize; // channels besides the shared one
        if pool < self.n_compounds || pool < self.max_channels {
            return bad(format!(
                "{pool} free m/z channels cannot hold {} unique channels or {} per compound",
                self.n_compounds, self.max_channels
            ));
        }
        if self.slot_width() < 3.0 * self.peak_sigma {
            return bad(format!(
                "{} compounds in a {}-minute window are closer than 3 sigma",
                self.n_compounds,
                self.rt_hi - self.rt_lo
            ));
        }
        Ok(())
    }

    fn slot_width(&self) -> f64 {
        (self.rt_hi - self.rt_lo) / self.n_compounds as f64
    }

    fn library_rng(&self) -> RngStream {
        RngStream::new(self.library_seed.unwrap_or(self.seed))
    }

    /// Shared acquisition axis covering every possible apex with room for
    /// tails on both sides.
    pub fn rt_axis(&self) -> Vec<f64> {
        let margin = self.max_displacement() + 6.0 * self.peak_sigma;
        let first = ((self.rt_lo - margin).max(0.0) / self.dt).floor() as i64;
        let last = ((self.rt_hi + margin) / self.dt).ceil() as i64;
        (first..=last).map(|k| k as f64 * self.dt).collect()
    }
}

/// One compound: its spectrum and undrifted retention time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Compound {
    pub base_rt: f64,
    /// `(mz, weight)` sorted by m/z, weights in (0, 1].
    pub template: Vec<(i64, f64)>,
}

/// Compound library for a config: depends only on the library seed.
pub fn compound_library(cfg: &SynthConfig) -> Result<Vec<Compound>> {
    cfg.validate()?;
    let root = cfg.library_rng();
    let mut rng = root.derive(&[0]);
    let mut free: Vec<i64> = (cfg.mz_lo..=cfg.mz_hi).filter(|&m| m != cfg.shared_mz).collect();
    rng.shuffle(&mut free);
    let (unique, rest) = free.split_at(cfg.n_compounds);

    let mut templates: Vec<Vec<(i64, f64)>> = Vec::with_capacity(cfg.n_compounds);
    for k in 0..cfg.n_compounds {
        let count = cfg.min_channels + rng.below(cfg.max_channels - cfg.min_channels + 1);
        let mut t = vec![(cfg.shared_mz, 1.0), (unique[k], rng.uniform_range(0.5, 1.0))];
        let extra = count - 2;
        if cfg.confusable && k > 0 {
            // borrow secondary channels from the previous compound
            let prev: Vec<(i64, f64)> = templates[k - 1][2..].to_vec();
            for &c in prev.iter().take(extra / 2) {
                t.push(c);
            }
        }
        while t.len() < count {
            let mz = rest[rng.below(rest.len())];
            if t.iter().all(|&(m, _)| m != mz) {
                t.push((mz, rng.uniform_range(0.05, 1.0)));
            }
        }
        templates.push(t);
    }

    let mut rt_rng = root.derive(&[1]);
    let w = cfg.slot_width();
    let jitter = 0.25 * (w - 3.0 * cfg.peak_sigma);
    Ok(templates
        .into_iter()
        .enumerate()
        .map(|(k, mut template)| {
            template.sort_by_key(|&(m, _)| m);
            Compound {
                base_rt: cfg.rt_lo + (k as f64 + 0.5) * w + rt_rng.uniform_range(-jitter, jitter),
                template,
            }
        })
        .collect())
}

/// Retention time warp of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub shift: f64,
    pub amplitude: f64,
    pub wavelength: f64,
    pub phase: f64,
}

impl Drift {
    pub fn displacement(&self, rt: f64) -> f64 {
        self.shift + self.amplitude * (std::f64::consts::TAU * rt / self.wavelength + self.phase).sin()
    }

    pub fn apply(&self, rt: f64) -> f64 {
        rt + self.displacement(rt)
    }
}

pub const TRUTH_HEADER: &str = "sample_id,mz,rt_apex_true,group";

/// A planted apex on one channel of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub sample_id: String,
    pub mz: i64,
    pub rt_apex_true: f64,
    pub group: i64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub matrices: Vec<ChromatogramMatrix>,
    pub truth: Vec<TruthRow>,
    pub drifts: Vec<Drift>,
    pub compounds: Vec<Compound>,
}

impl SynthData {
    pub fn sample_ids(&self) -> Vec<&str> {
        self.matrices.iter().map(|m| m.sample_id()).collect()
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    let compounds = compound_library(cfg)?;
    let axis = cfg.rt_axis();
    let mz_axis: Vec<i64> = (cfg.mz_lo..=cfg.mz_hi).collect();
    let root = RngStream::new(cfg.seed);
    let baseline: Vec<f64> = axis
        .iter()
        .map(|&t| cfg.baseline.iter().rev().fold(0.0, |acc, c| acc * t + c))
        .collect();

    let samples: Vec<Result<(ChromatogramMatrix, Vec<TruthRow>, Drift)>> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = root.derive(&[2, s as u64]);
            let mut noise = root.derive(&[3, s as u64]);
            let sample_id = format!("{}{:03}", cfg.sample_prefix, s);
            let drift = Drift {
                shift: rng.uniform_range(-cfg.max_shift, cfg.max_shift),
                amplitude: cfg.drift_amplitude,
                wavelength: cfg.drift_wavelength,
                phase: rng.uniform_range(0.0, std::f64::consts::TAU),
            };
            let n_mz = mz_axis.len();
            let mut grid = vec![0.0; axis.len() * n_mz];
            let mut truth = Vec::new();
            for (k, c) in compounds.iter().enumerate() {
                // draw both numbers regardless so dropout does not perturb the rest
                let present = rng.uniform() >= cfg.dropout_prob;
                let amplitude = rng.uniform_range(cfg.amplitude_lo, cfg.amplitude_hi);
                if !present {
                    continue;
                }
                let apex = drift.apply(c.base_rt);
                let reach = 8.0 * cfg.peak_sigma;
                let lo = axis.partition_point(|&t| t < apex - reach);
                let hi = axis.partition_point(|&t| t <= apex + reach);
                for i in lo..hi {
                    let z = (axis[i] - apex) / cfg.peak_sigma;
                    let g = amplitude * (-0.5 * z * z).exp();
                    for &(mz, w) in &c.template {
                        grid[i * n_mz + (mz - cfg.mz_lo) as usize] += g * w;
                    }
                }
                truth.extend(c.template.iter().map(|&(mz, _)| TruthRow {
                    sample_id: sample_id.clone(),
                    mz,
                    rt_apex_true: apex,
                    group: k as i64,
                }));
            }
            for (i, row) in grid.chunks_mut(n_mz).enumerate() {
                for v in row {
                    let noisy = *v + baseline[i] + if cfg.noise_sd > 0.0 { cfg.noise_sd * noise.normal() } else { 0.0 };
                    *v = noisy.max(0.0);
                }
            }
            truth.sort_by(|a, b| a.mz.cmp(&b.mz).then(a.rt_apex_true.total_cmp(&b.rt_apex_true)));
            let matrix = ChromatogramMatrix::new(sample_id, axis.clone(), mz_axis.clone(), grid)?;
            Ok((matrix, truth, drift))
        })
        .collect();

    let mut data = SynthData {
        matrices: Vec::with_capacity(cfg.n_samples),
        truth: Vec::new(),
        drifts: Vec::with_capacity(cfg.n_samples),
        compounds,
    };
    for s in samples {
        let (m, t, d) = s?;
        data.matrices.push(m);
        data.truth.extend(t);
        data.drifts.push(d);
    }
    Ok(data)
}

pub fn format_truth(rows: &[TruthRow]) -> String {
    let mut out = String::from(TRUTH_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{},{},{:?},{}", r.sample_id, r.mz, r.rt_apex_true, r.group).unwrap();
    }
    out
}

pub fn write_truth(rows: &[TruthRow], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_truth(rows))?;
    Ok(())
}

pub fn parse_truth(text: &str) -> Result<Vec<TruthRow>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == TRUTH_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: format!("expected header `{TRUTH_HEADER}`"),
            })
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 4 {
            return Err(Error::Parse {
                line: lineno + 1,
                column: cells.len().min(4) + 1,
                message: format!("expected 4 cells, found {}", cells.len()),
            });
        }
        let err = |col: usize| Error::Parse {
            line: lineno + 1,
            column: col + 1,
            message: format!("invalid value `{}`", cells[col]),
        };
        rows.push(TruthRow {
            sample_id: cells[0].to_string(),
            mz: cells[1].parse().map_err(|_| err(1))?,
            rt_apex_true: cells[2].parse().map_err(|_| err(2))?,
            group: cells[3].parse().map_err(|_| err(3))?,
        });
    }
    Ok(rows)
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<Vec<TruthRow>> {
    parse_truth(&std::fs::read_to_string(path)?)
}

/// Labels detected peaks with the group of the nearest planted apex on the
/// same sample and channel. Matching is one-to-one, closest pairs first;
/// unmatched peaks get -1.
pub fn truth_to_labels(truth: &[TruthRow], peaks: &[Peak], tolerance: f64) -> Result<Vec<Peak>> {
    if !(tolerance > 0.0) {
        return Err(Error::arg(format!("match tolerance must be positive, got {tolerance}")));
    }
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in peaks.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            if t.sample_id == p.sample_id && t.mz == p.mz {
                let d = (t.rt_apex_true - p.rt_apex).abs();
                if d <= tolerance {
                    candidates.push((d, i, j));
                }
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out: Vec<Peak> = peaks.to_vec();
    out.iter_mut().for_each(|p| p.group = -1);
    let mut peak_used = vec![false; peaks.len()];
    let mut truth_used = vec![false; truth.len()];
    for (_, i, j) in candidates {
        if !peak_used[i] && !truth_used[j] {
            peak_used[i] = true;
            truth_used[j] = true;
            out[i].group = truth[j].group;
        }
    }
    Ok(out)
}

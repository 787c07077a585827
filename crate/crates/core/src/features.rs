//! Network inputs for each detected peak: apex mass spectrum, peak profile,
//! chromatogram segment and apex retention time.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{slice_sic, ChromatogramMatrix, SicTrace};
use crate::signal::Peak;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Length of the chromatogram segment in samples.
    pub segment_steps: usize,
    /// Nominal half-width of the segment in minutes.
    pub segment_half_width: f64,
    /// Inclusive m/z range of the mass spectrum vector.
    pub mz_lo: i64,
    pub mz_hi: i64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            segment_steps: 600,
            segment_half_width: 1.5,
            mz_lo: 40,
            mz_hi: 120,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_steps < 2 || !self.segment_steps.is_multiple_of(2) {
            return Err(Error::arg(format!(
                "segment_steps must be even and >= 2, got {}",
                self.segment_steps
            )));
        }
        if !(self.segment_half_width > 0.0) {
            return Err(Error::arg("segment_half_width must be positive"));
        }
        if self.mz_lo >= self.mz_hi {
            return Err(Error::arg(format!(
                "mz_lo {} must be below mz_hi {}",
                self.mz_lo, self.mz_hi
            )));
        }
        Ok(())
    }

    pub fn mass_len(&self) -> usize {
        (self.mz_hi - self.mz_lo + 1) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakFeatures {
    pub peak: Peak,
    pub mass_spectrum: Vec<f64>,
    pub peak_profile: Vec<f64>,
    pub chrom_segment: Vec<f64>,
    /// Apex retention time in minutes.
    pub rt: f64,
    /// Raw intensity at the apex, used for height-weighted group RTs.
    pub apex_height: f64,
    /// Set when the apex scan had no signal in the configured mass range.
    #[serde(default)]
    pub empty_spectrum: bool,
}

/// Apex mass spectrum over `[mz_lo, mz_hi]`, max-normalised. The flag is set
/// when the spectrum is all zero.
pub fn extract_mass_spectrum(
    matrix: &ChromatogramMatrix,
    peak: &Peak,
    cfg: &FeatureConfig,
) -> Result<(Vec<f64>, bool)> {
    let row_index = matrix.rt_index(peak.rt_apex)?;
    let row = matrix.row(row_index);
    let mut spectrum = vec![0.0; cfg.mass_len()];
    for (k, &mz) in matrix.mz_axis().iter().enumerate() {
        if (cfg.mz_lo..=cfg.mz_hi).contains(&mz) {
            spectrum[(mz - cfg.mz_lo) as usize] = row[k];
        }
    }
    let all_zero = !normalize_max(&mut spectrum);
    if all_zero {
        log::warn!(
            "sample {} peak at {} min: apex spectrum is all zero",
            peak.sample_id,
            peak.rt_apex
        );
    }
    Ok((spectrum, all_zero))
}

/// Divides by the maximum. Returns false (leaving the vector untouched) when
/// the maximum is not positive.
fn normalize_max(v: &mut [f64]) -> bool {
    let max = v.iter().copied().fold(0.0f64, f64::max);
    if max > 0.0 {
        v.iter_mut().for_each(|x| *x /= max);
        true
    } else {
        false
    }
}

/// Intensities from peak start to end inclusive, max-normalised.
pub fn extract_peak_profile(trace: &SicTrace, peak: &Peak) -> Result<Vec<f64>> {
    let start = trace.index_of(peak.rt_start)?;
    let end = trace.index_of(peak.rt_end)?;
    if start > end {
        return Err(Error::arg(format!(
            "peak start {} lies after its end {}",
            peak.rt_start, peak.rt_end
        )));
    }
    let mut profile = trace.intensity[start..=end].to_vec();
    normalize_max(&mut profile);
    Ok(profile)
}

/// Log-transformed, min-subtracted window of `segment_steps` samples with the
/// apex at index `segment_steps / 2`. Positions outside the trace count as zero
/// intensity; zeros take the smallest log of the positive entries.
pub fn extract_chrom_segment(trace: &SicTrace, peak: &Peak, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    let apex = trace.index_of(peak.rt_apex)? as i64;
    let half = (cfg.segment_steps / 2) as i64;
    let raw: Vec<f64> = (0..cfg.segment_steps as i64)
        .map(|k| {
            let idx = apex - half + k;
            if idx >= 0 && (idx as usize) < trace.len() {
                trace.intensity[idx as usize]
            } else {
                0.0
            }
        })
        .collect();
    Ok(log_min_transform(&raw))
}

/// The segment transform on raw intensities.
pub fn log_min_transform(raw: &[f64]) -> Vec<f64> {
    let floor = raw
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v.ln())
        .fold(f64::INFINITY, f64::min);
    if !floor.is_finite() {
        return vec![0.0; raw.len()];
    }
    raw.iter()
        .map(|&v| if v > 0.0 { v.ln() - floor } else { 0.0 })
        .collect()
}

/// Builds features for every peak of one sample, preserving order.
pub fn build_features(
    matrix: &ChromatogramMatrix,
    peaks: &[Peak],
    cfg: &FeatureConfig,
) -> Result<Vec<PeakFeatures>> {
    cfg.validate()?;
    let span = cfg.segment_steps as f64 * matrix.rt_step();
    if (span - 2.0 * cfg.segment_half_width).abs() > matrix.rt_step() {
        log::warn!(
            "segment of {} steps spans {span:.4} min, configured half-width is {} min",
            cfg.segment_steps,
            cfg.segment_half_width
        );
    }
    let mut traces: BTreeMap<i64, SicTrace> = BTreeMap::new();
    let mut out = Vec::with_capacity(peaks.len());
    for peak in peaks {
        if peak.sample_id != matrix.sample_id() {
            return Err(Error::arg(format!(
                "peak from sample `{}` passed with matrix `{}`",
                peak.sample_id,
                matrix.sample_id()
            )));
        }
        if let std::collections::btree_map::Entry::Vacant(e) = traces.entry(peak.mz) {
            e.insert(slice_sic(matrix, peak.mz)?);
        }
        let trace = &traces[&peak.mz];
        let (mass_spectrum, empty_spectrum) = extract_mass_spectrum(matrix, peak, cfg)?;
        let apex_height = trace.intensity[trace.index_of(peak.rt_apex)?];
        out.push(PeakFeatures {
            peak: peak.clone(),
            mass_spectrum,
            peak_profile: extract_peak_profile(trace, peak)?,
            chrom_segment: extract_chrom_segment(trace, peak, cfg)?,
            rt: peak.rt_apex,
            apex_height,
            empty_spectrum,
        });
    }
    Ok(out)
}

/// On-disk feature bundle: `manifest.json` holding the [`FeatureConfig`] and
/// one `<sample_id>.json` array of [`PeakFeatures`] per sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub config: FeatureConfig,
    pub samples: Vec<String>,
}

pub fn write_feature_bundle(
    dir: impl AsRef<Path>,
    cfg: &FeatureConfig,
    features: &[PeakFeatures],
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut by_sample: BTreeMap<&str, Vec<&PeakFeatures>> = BTreeMap::new();
    for f in features {
        by_sample.entry(f.peak.sample_id.as_str()).or_default().push(f);
    }
    let manifest = FeatureManifest {
        config: cfg.clone(),
        samples: by_sample.keys().map(|s| s.to_string()).collect(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    for (sample, records) in by_sample {
        std::fs::write(
            dir.join(format!("{sample}.json")),
            serde_json::to_string(&records)?,
        )?;
    }
    Ok(())
}

/// Reads a bundle back; samples in manifest order, peaks in file order.
pub fn read_feature_bundle(dir: impl AsRef<Path>) -> Result<(FeatureConfig, Vec<PeakFeatures>)> {
    let dir = dir.as_ref();
    let manifest: FeatureManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut features = Vec::new();
    for sample in &manifest.samples {
        let records: Vec<PeakFeatures> =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{sample}.json")))?)?;
        features.extend(records);
    }
    Ok((manifest.config, features))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ChromatogramMatrix;

    fn peak(rt_start: f64, rt_apex: f64, rt_end: f64) -> Peak {
        Peak {
            sample_id: "s".into(),
            mz: 103,
            rt_start,
            rt_apex,
            rt_end,
            area: 1.0,
            group: 0,
        }
    }

    fn trace(y: Vec<f64>) -> SicTrace {
        let rt = (0..y.len()).map(|i| i as f64).collect();
        SicTrace::new("s", 103, rt, y).unwrap()
    }

    #[test]
    fn spectrum_is_max_normalised() {
        let m = ChromatogramMatrix::new(
            "s",
            vec![0.0, 1.0],
            vec![103, 115],
            vec![0.0, 0.0, 50.0, 100.0],
        )
        .unwrap();
        let cfg = FeatureConfig {
            mz_lo: 100,
            mz_hi: 120,
            ..FeatureConfig::default()
        };
        let (s, empty) = extract_mass_spectrum(&m, &peak(0.0, 1.0, 1.0), &cfg).unwrap();
        assert!(!empty);
        assert_eq!(s.len(), 21);
        for (k, v) in s.iter().enumerate() {
            let expect = match k {
                3 => 0.5,
                15 => 1.0,
                _ => 0.0,
            };
            assert_eq!(*v, expect);
        }
        let (s, empty) = extract_mass_spectrum(&m, &peak(0.0, 0.0, 1.0), &cfg).unwrap();
        assert!(empty);
        assert!(s.iter().all(|&v| v == 0.0));
        assert!(matches!(
            extract_mass_spectrum(&m, &peak(0.0, 0.5, 1.0), &cfg),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn single_channel_spectrum() {
        let m = ChromatogramMatrix::new("s", vec![0.0, 1.0], vec![103], vec![7.0, 3.0]).unwrap();
        let cfg = FeatureConfig {
            mz_lo: 100,
            mz_hi: 110,
            ..FeatureConfig::default()
        };
        let (s, _) = extract_mass_spectrum(&m, &peak(0.0, 1.0, 1.0), &cfg).unwrap();
        assert_eq!(s[3], 1.0);
        assert_eq!(s.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn profiles() {
        let t = trace(vec![0.0, 1.0, 2.0, 3.0, 2.0, 1.0, 0.0]);
        let p = extract_peak_profile(&t, &peak(1.0, 3.0, 5.0)).unwrap();
        assert_eq!(p, vec![1.0 / 3.0, 2.0 / 3.0, 1.0, 2.0 / 3.0, 1.0 / 3.0]);
        let t = trace(vec![4.0, 4.0, 4.0, 9.0]);
        assert_eq!(extract_peak_profile(&t, &peak(0.0, 1.0, 2.0)).unwrap(), vec![1.0; 3]);
        assert!(extract_peak_profile(&t, &peak(0.0, 1.0, 9.0)).is_err());
    }

    #[test]
    fn log_transform_rule() {
        let e = std::f64::consts::E;
        let got = log_min_transform(&[e, e * e, 0.0, e * e * e]);
        let want = [0.0, 1.0, 0.0, 2.0];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
        assert_eq!(log_min_transform(&[3.0; 5]), vec![0.0; 5]);
        assert_eq!(log_min_transform(&[0.0; 4]), vec![0.0; 4]);
    }

    #[test]
    fn segment_padding() {
        let y: Vec<f64> = (0..100).map(|i| 1.0 + i as f64).collect();
        let t = trace(y);
        let cfg = FeatureConfig::default();
        let seg = extract_chrom_segment(&t, &peak(9.0, 10.0, 11.0), &cfg).unwrap();
        assert_eq!(seg.len(), 600);
        // apex at 300 means positions 0..290 fall before the trace
        assert!(seg[..290].iter().all(|&v| v == 0.0));
        assert_eq!(seg[290], 0.0); // ln(1) is the minimum
        assert!((seg[300] - 11.0f64.ln()).abs() < 1e-12);
        assert!(seg[390..].iter().all(|&v| v == 0.0));
        assert_eq!(seg.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
    }
}

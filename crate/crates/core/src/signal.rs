//! Baseline correction and derivative-based peak detection on single ion
//! chromatograms.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{slice_sic, ChromatogramMatrix, SicTrace};
use crate::linalg::{solve_dense, Pentadiagonal};

/// Asymmetric least squares baseline parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlsParams {
    /// Smoothness weight on squared second differences.
    pub lambda: f64,
    /// Weight given to points above the baseline.
    pub p: f64,
    pub iterations: usize,
}

impl Default for AlsParams {
    fn default() -> Self {
        Self {
            lambda: 1e5,
            p: 1e-3,
            iterations: 10,
        }
    }
}

impl AlsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::arg(format!("ALS lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::arg(format!("ALS p must be in (0, 1), got {}", self.p)));
        }
        if self.iterations == 0 {
            return Err(Error::arg("ALS iterations must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakDetectParams {
    /// Savitzky-Golay window in samples (odd, >= 5).
    pub smooth_window: usize,
    pub smooth_polyorder: usize,
    /// Absolute first-derivative threshold in counts/step. `None` uses 1% of
    /// the largest smoothed |d1| of the trace.
    pub d1_threshold: Option<f64>,
    /// Minimum peak width in samples.
    pub min_width: usize,
    /// Minimum area in counts * minutes.
    pub min_area: f64,
}

impl Default for PeakDetectParams {
    fn default() -> Self {
        Self {
            smooth_window: 11,
            smooth_polyorder: 3,
            d1_threshold: None,
            min_width: 5,
            min_area: 0.0,
        }
    }
}

impl PeakDetectParams {
    pub fn validate(&self) -> Result<()> {
        check_window(self.smooth_window, self.smooth_polyorder)?;
        if let Some(t) = self.d1_threshold {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::arg(format!("d1 threshold must be > 0, got {t}")));
            }
        }
        if self.min_width < 3 {
            return Err(Error::arg("minimum peak width must be >= 3 samples"));
        }
        if !(self.min_area >= 0.0) {
            return Err(Error::arg("minimum area must be >= 0"));
        }
        Ok(())
    }
}

fn check_window(window: usize, polyorder: usize) -> Result<()> {
    if window < 5 || window.is_multiple_of(2) {
        return Err(Error::arg(format!("smoothing window must be odd and >= 5, got {window}")));
    }
    if polyorder < 2 || polyorder >= window {
        return Err(Error::arg(format!(
            "polynomial order must be in [2, {}], got {polyorder}",
            window - 1
        )));
    }
    Ok(())
}

/// A detected chromatographic peak. Retention times are in minutes and lie
/// on the sampling grid of the trace the peak was found in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub sample_id: String,
    pub mz: i64,
    pub rt_start: f64,
    pub rt_apex: f64,
    pub rt_end: f64,
    /// Trapezoidal area, counts * minutes.
    pub area: f64,
    /// Ground-truth group, -1 when unidentified.
    pub group: i64,
}

impl Peak {
    pub fn is_labeled(&self) -> bool {
        self.group >= 0
    }
}

/// Estimates a smooth baseline by asymmetric least squares.
pub fn als_baseline(trace: &SicTrace, params: &AlsParams) -> Result<Vec<f64>> {
    als_baseline_values(&trace.intensity, params)
}

pub fn als_baseline_values(y: &[f64], params: &AlsParams) -> Result<Vec<f64>> {
    params.validate()?;
    let n = y.len();
    if n < 4 {
        return Err(Error::arg(format!("ALS needs at least 4 points, got {n}")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("trace contains non-finite values"));
    }
    let penalty = second_difference_gram(n, params.lambda);
    let mut w = vec![1.0; n];
    let mut z = Vec::new();
    for _ in 0..params.iterations {
        let system = Pentadiagonal {
            d0: penalty.d0.iter().zip(&w).map(|(d, wi)| d + wi).collect(),
            d1: penalty.d1.clone(),
            d2: penalty.d2.clone(),
        };
        // The penalty annihilates straight lines, so solving for the
        // deviation from a weighted line fit is exact and keeps the
        // ill-conditioned null-space direction out of the solve.
        let line = weighted_line_fit(y, &w);
        let rhs: Vec<f64> = (0..n).map(|i| w[i] * (y[i] - line[i])).collect();
        z = system.solve(&rhs)?;
        z.iter_mut().zip(&line).for_each(|(zi, li)| *zi += li);
        for i in 0..n {
            w[i] = if y[i] > z[i] { params.p } else { 1.0 - params.p };
        }
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("ALS baseline".into()));
    }
    Ok(z)
}

fn weighted_line_fit(y: &[f64], w: &[f64]) -> Vec<f64> {
    let sw: f64 = w.iter().sum();
    let mx = w.iter().enumerate().map(|(i, wi)| wi * i as f64).sum::<f64>() / sw;
    let my = w.iter().zip(y).map(|(wi, yi)| wi * yi).sum::<f64>() / sw;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, (wi, yi)) in w.iter().zip(y).enumerate() {
        let dx = i as f64 - mx;
        sxy += wi * dx * (yi - my);
        sxx += wi * dx * dx;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (0..y.len()).map(|i| my + slope * (i as f64 - mx)).collect()
}

/// `lambda * D^T D` for the (n-2) x n second-difference operator, by diagonals.
fn second_difference_gram(n: usize, lambda: f64) -> Pentadiagonal {
    const C: [f64; 3] = [1.0, -2.0, 1.0];
    let mut d0 = vec![0.0; n];
    let mut d1 = vec![0.0; n.saturating_sub(1)];
    let mut d2 = vec![0.0; n.saturating_sub(2)];
    for r in 0..n.saturating_sub(2) {
        for a in 0..3 {
            d0[r + a] += lambda * C[a] * C[a];
            for b in a + 1..3 {
                let v = lambda * C[a] * C[b];
                match b - a {
                    1 => d1[r + a] += v,
                    _ => d2[r + a] += v,
                }
            }
        }
    }
    Pentadiagonal { d0, d1, d2 }
}

/// Dense reference solve of the same weighted normal equations. Quadratic
/// memory; only meant for short traces.
pub fn als_baseline_dense(y: &[f64], params: &AlsParams) -> Result<Vec<f64>> {
    params.validate()?;
    let n = y.len();
    let band = second_difference_gram(n, params.lambda);
    let mut w = vec![1.0; n];
    let mut z = Vec::new();
    for _ in 0..params.iterations {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = band.d0[i] + w[i];
            if i + 1 < n {
                a[i * n + i + 1] = band.d1[i];
                a[(i + 1) * n + i] = band.d1[i];
            }
            if i + 2 < n {
                a[i * n + i + 2] = band.d2[i];
                a[(i + 2) * n + i] = band.d2[i];
            }
        }
        let rhs: Vec<f64> = w.iter().zip(y).map(|(wi, yi)| wi * yi).collect();
        z = solve_dense(n, &a, &rhs)?;
        for i in 0..n {
            w[i] = if y[i] > z[i] { params.p } else { 1.0 - params.p };
        }
    }
    Ok(z)
}

/// `max(trace - baseline, 0)` elementwise.
pub fn subtract_baseline(trace: &SicTrace, baseline: &[f64]) -> Result<SicTrace> {
    if trace.len() != baseline.len() {
        return Err(Error::arg(format!(
            "trace length {} differs from baseline length {}",
            trace.len(),
            baseline.len()
        )));
    }
    let corrected = trace
        .intensity
        .iter()
        .zip(baseline)
        .map(|(y, b)| (y - b).max(0.0))
        .collect();
    Ok(SicTrace {
        intensity: corrected,
        ..trace.clone()
    })
}

/// First and second derivatives (per step, per step squared) of local
/// least-squares polynomial fits. Edge points use the nearest full window.
pub fn smoothed_derivatives(
    values: &[f64],
    window: usize,
    polyorder: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_window(window, polyorder)?;
    let n = values.len();
    if window > n {
        return Err(Error::arg(format!("smoothing window {window} exceeds trace length {n}")));
    }
    let half = window / 2;
    let mut cache: HashMap<usize, (Vec<f64>, Vec<f64>)> = HashMap::new();
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for i in 0..n {
        let start = i.saturating_sub(half).min(n - window);
        // position of the evaluation point within its window
        let pos = i - start;
        if let std::collections::hash_map::Entry::Vacant(e) = cache.entry(pos) {
            e.insert(derivative_weights(window, pos, polyorder)?);
        }
        let (w1, w2) = &cache[&pos];
        let seg = &values[start..start + window];
        d1[i] = w1.iter().zip(seg).map(|(w, y)| w * y).sum();
        d2[i] = w2.iter().zip(seg).map(|(w, y)| w * y).sum();
    }
    Ok((d1, d2))
}

/// Weights giving the first and second derivative at window position `pos`
/// of the least-squares polynomial of degree `order`.
fn derivative_weights(window: usize, pos: usize, order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let offsets: Vec<f64> = (0..window).map(|k| k as f64 - pos as f64).collect();
    let scale = offsets.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let m = order + 1;
    let vander: Vec<Vec<f64>> = offsets
        .iter()
        .map(|x| (0..m).map(|j| (x / scale).powi(j as i32)).collect())
        .collect();
    let mut gram = vec![0.0; m * m];
    for row in &vander {
        for a in 0..m {
            for b in 0..m {
                gram[a * m + b] += row[a] * row[b];
            }
        }
    }
    let unit = |j: usize| -> Result<Vec<f64>> {
        let mut e = vec![0.0; m];
        e[j] = 1.0;
        let a = solve_dense(m, &gram, &e)?;
        Ok(vander
            .iter()
            .map(|row| row.iter().zip(&a).map(|(v, c)| v * c).sum())
            .collect())
    };
    let w1: Vec<f64> = unit(1)?.into_iter().map(|w| w / scale).collect();
    let w2: Vec<f64> = unit(2)?
        .into_iter()
        .map(|w| 2.0 * w / (scale * scale))
        .collect();
    Ok((w1, w2))
}

/// Sample indices of a detected peak.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PeakIndices {
    pub start: usize,
    pub apex: usize,
    pub end: usize,
}

/// Finds peaks in a baseline-corrected trace. Returns peaks in retention
/// time order.
pub fn detect_peaks(trace: &SicTrace, params: &PeakDetectParams) -> Result<Vec<Peak>> {
    let found = detect_peak_indices(trace, params)?;
    let dt = trace.rt_step();
    Ok(found
        .into_iter()
        .map(|ix| Peak {
            sample_id: trace.sample_id.clone(),
            mz: trace.mz,
            rt_start: trace.rt_axis[ix.start],
            rt_apex: trace.rt_axis[ix.apex],
            rt_end: trace.rt_axis[ix.end],
            area: trapezoid(&trace.intensity[ix.start..=ix.end], dt),
            group: -1,
        })
        .collect())
}

pub fn detect_peak_indices(trace: &SicTrace, params: &PeakDetectParams) -> Result<Vec<PeakIndices>> {
    params.validate()?;
    let y = &trace.intensity;
    let n = y.len();
    if n < params.smooth_window {
        return Ok(Vec::new());
    }
    let (d1, d2) = smoothed_derivatives(y, params.smooth_window, params.smooth_polyorder)?;
    let threshold = match params.d1_threshold {
        Some(t) => t,
        None => 0.01 * d1.iter().fold(0.0f64, |m, v| m.max(v.abs())),
    };
    if !(threshold > 0.0) {
        return Ok(Vec::new());
    }
    let dt = trace.rt_step();

    let mut peaks = Vec::new();
    let mut i = 0;
    while i < n {
        if d2[i] >= 0.0 {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < n && d2[i] < 0.0 {
            i += 1;
        }
        let run_end = i - 1;
        if !(run_start..=run_end).any(|k| is_local_max(y, k)) {
            continue;
        }
        let apex = (run_start..=run_end)
            .min_by(|&a, &b| d2[a].total_cmp(&d2[b]))
            .unwrap();
        let start = find_start(&d1, apex, threshold).unwrap_or(run_start);
        let end = find_end(&d1, apex, threshold).unwrap_or(run_end);
        if !(start < apex && apex < end) {
            continue;
        }
        if end - start + 1 < params.min_width {
            continue;
        }
        if y[apex] < y[start] || y[apex] < y[end] {
            continue;
        }
        if trapezoid(&y[start..=end], dt) < params.min_area {
            continue;
        }
        peaks.push(PeakIndices { start, apex, end });
    }
    Ok(peaks)
}

fn is_local_max(y: &[f64], k: usize) -> bool {
    let left = if k == 0 { f64::NEG_INFINITY } else { y[k - 1] };
    let right = y.get(k + 1).copied().unwrap_or(f64::NEG_INFINITY);
    y[k] > 0.0 && y[k] >= left && y[k] >= right
}

/// Walks left from the apex over the rising flank (d1 >= threshold) and
/// returns the first index below the threshold beyond it. Meeting a falling
/// flank first means the flank belongs to an earlier peak: no crossing.
fn find_start(d1: &[f64], apex: usize, threshold: f64) -> Option<usize> {
    let mut j = apex;
    while j > 0 && d1[j] < threshold {
        if d1[j] <= -threshold && j < apex {
            return None;
        }
        j -= 1;
    }
    if d1[j] < threshold {
        return None;
    }
    while j > 0 && d1[j] >= threshold {
        j -= 1;
    }
    (d1[j] < threshold).then_some(j)
}

fn find_end(d1: &[f64], apex: usize, threshold: f64) -> Option<usize> {
    let n = d1.len();
    let mut j = apex;
    while j + 1 < n && d1[j] > -threshold {
        if d1[j] >= threshold && j > apex {
            return None;
        }
        j += 1;
    }
    if d1[j] > -threshold {
        return None;
    }
    while j + 1 < n && d1[j] <= -threshold {
        j += 1;
    }
    (d1[j] > -threshold).then_some(j)
}

/// Baseline-corrects and searches the given channels of one sample. Peaks
/// come back ordered by channel, then retention time.
pub fn detect_in_matrix(
    matrix: &ChromatogramMatrix,
    channels: &[i64],
    als: &AlsParams,
    params: &PeakDetectParams,
) -> Result<Vec<Peak>> {
    let mut peaks = Vec::new();
    for &mz in channels {
        let trace = slice_sic(matrix, mz)?;
        let corrected = subtract_baseline(&trace, &als_baseline(&trace, als)?)?;
        peaks.extend(detect_peaks(&corrected, params)?);
    }
    Ok(peaks)
}

/// Trapezoidal integral of equally spaced samples.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    values.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dt).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(y: Vec<f64>) -> SicTrace {
        let rt = (0..y.len()).map(|i| i as f64 * 0.005).collect();
        SicTrace::new("s", 103, rt, y).unwrap()
    }

    fn gaussian(n: usize, center: f64, sigma: f64, amp: f64) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (-(i as f64 - center).powi(2) / (2.0 * sigma * sigma)).exp())
            .collect()
    }

    #[test]
    fn flat_trace_baseline_is_flat() {
        let z = als_baseline(&trace(vec![5.0; 50]), &AlsParams::default()).unwrap();
        assert!(z.iter().all(|v| (v - 5.0).abs() < 1e-6));
    }

    #[test]
    fn linear_trace_baseline_is_exact() {
        let y: Vec<f64> = (0..200).map(|i| 3.0 + 0.25 * i as f64).collect();
        let z = als_baseline(&trace(y.clone()), &AlsParams::default()).unwrap();
        for (a, b) in z.iter().zip(&y) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn line_plus_bump_matches_dense_oracle() {
        let n = 600;
        let (center, sigma) = (300.0, 5.0);
        let bump = gaussian(n, center, sigma, 200.0);
        let line: Vec<f64> = (0..n).map(|i| 10.0 + 0.1 * i as f64).collect();
        let y: Vec<f64> = line.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let params = AlsParams {
            lambda: 1e5,
            p: 0.001,
            iterations: 10,
        };
        let banded = als_baseline_values(&y, &params).unwrap();
        let dense = als_baseline_dense(&y, &params).unwrap();
        for (a, b) in banded.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-6 * b.abs().max(1.0), "{a} vs {b}");
        }
        for i in 0..n {
            if (i as f64 - center).abs() >= 3.0 * sigma {
                let rel = (dense[i] - line[i]).abs() / line[i];
                assert!(rel < 0.01, "index {i}: baseline {} line {}", dense[i], line[i]);
            }
        }
    }

    #[test]
    fn als_rejects_bad_input() {
        assert!(matches!(
            als_baseline_values(&[1.0, 2.0, 3.0], &AlsParams::default()),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            als_baseline_values(&[1.0, f64::NAN, 3.0, 4.0], &AlsParams::default()),
            Err(Error::Validation(_))
        ));
        let bad = AlsParams {
            p: 1.0,
            ..AlsParams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn baseline_subtraction_clamps() {
        let t = trace(vec![1.0, 5.0, 2.0, 7.0]);
        let zero = subtract_baseline(&t, &t.intensity).unwrap();
        assert!(zero.intensity.iter().all(|&v| v == 0.0));
        let shifted: Vec<f64> = t.intensity.iter().map(|v| v - 3.0).collect();
        assert_eq!(subtract_baseline(&t, &shifted).unwrap().intensity, vec![3.0; 4]);
        let clamp = subtract_baseline(&t, &[2.0, 2.0, 2.0, 2.0]).unwrap();
        assert_eq!(clamp.intensity, vec![0.0, 3.0, 0.0, 5.0]);
        assert!(subtract_baseline(&t, &[1.0]).is_err());
    }

    #[test]
    fn derivatives_reproduce_polynomials() {
        let lin: Vec<f64> = (0..40).map(|i| 2.0 + 1.5 * i as f64).collect();
        let (d1, d2) = smoothed_derivatives(&lin, 7, 3).unwrap();
        for i in 0..40 {
            assert!((d1[i] - 1.5).abs() < 1e-9);
            assert!(d2[i].abs() < 1e-9);
        }
        let quad: Vec<f64> = (0..40).map(|i| 0.3 * (i * i) as f64).collect();
        let (_, d2) = smoothed_derivatives(&quad, 9, 2).unwrap();
        for v in &d2[4..36] {
            assert!((v - 0.6).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn derivative_of_sine_matches_cosine() {
        let w = 0.05;
        let y: Vec<f64> = (0..300).map(|i| (w * i as f64).sin()).collect();
        let (d1, _) = smoothed_derivatives(&y, 9, 3).unwrap();
        for i in 4..296 {
            let exact = w * (w * i as f64).cos();
            // relative to the derivative amplitude so zero crossings stay meaningful
            assert!((d1[i] - exact).abs() < 1e-3 * w, "i={i}: {} vs {exact}", d1[i]);
        }
    }

    #[test]
    fn derivative_argument_checks() {
        let y = vec![0.0; 20];
        assert!(smoothed_derivatives(&y, 4, 2).is_err());
        assert!(smoothed_derivatives(&y, 5, 5).is_err());
        assert!(smoothed_derivatives(&y, 5, 1).is_err());
        assert!(smoothed_derivatives(&y, 21, 2).is_err());
    }

    #[test]
    fn single_gaussian_detected() {
        let y = gaussian(400, 200.3, 10.0, 100.0);
        let t = trace(y.clone());
        let peaks = detect_peak_indices(&t, &PeakDetectParams::default()).unwrap();
        assert_eq!(peaks.len(), 1);
        assert!((peaks[0].apex as f64 - 200.3).abs() <= 1.0);
        let p = &detect_peaks(&t, &PeakDetectParams::default()).unwrap()[0];
        assert!(p.rt_start < p.rt_apex && p.rt_apex < p.rt_end);
        assert_eq!(p.group, -1);
    }

    #[test]
    fn flat_zero_trace_has_no_peaks() {
        let t = trace(vec![0.0; 100]);
        assert!(detect_peaks(&t, &PeakDetectParams::default()).unwrap().is_empty());
    }

    #[test]
    fn two_separated_gaussians() {
        let sigma = 10.0;
        let (amp, dt) = (100.0, 0.005);
        let a = gaussian(600, 200.0, sigma, amp);
        let b = gaussian(600, 280.0, sigma, amp * 0.5);
        let y: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let peaks = detect_peaks(&trace(y), &PeakDetectParams::default()).unwrap();
        assert_eq!(peaks.len(), 2);
        assert!(peaks[0].rt_apex < peaks[1].rt_apex);
        for (p, a) in peaks.iter().zip([amp, amp * 0.5]) {
            let analytic = a * sigma * (2.0 * std::f64::consts::PI).sqrt() * dt;
            assert!((p.area - analytic).abs() / analytic < 0.05, "{} vs {analytic}", p.area);
        }
    }

    #[test]
    fn min_area_filters_small_peaks() {
        let y = gaussian(400, 200.0, 10.0, 100.0);
        let params = PeakDetectParams {
            min_area: 1e6,
            ..PeakDetectParams::default()
        };
        assert!(detect_peaks(&trace(y), &params).unwrap().is_empty());
    }
}

#![allow(dead_code)]

use chromalign::features::PeakFeatures;
use chromalign::neuralnet::RngStream;
use chromalign::signal::Peak;

pub fn peak(sample: &str, mz: i64, rt: f64, group: i64) -> Peak {
    Peak {
        sample_id: sample.into(),
        mz,
        rt_start: rt - 0.02,
        rt_apex: rt,
        rt_end: rt + 0.02,
        area: 1.0,
        group,
    }
}

/// Random but well-formed features: normalised spectrum and profile,
/// min-zero segment.
pub fn random_features(rng: &mut RngStream, mass_len: usize, segment_len: usize, profile_len: usize, rt: f64, group: i64) -> PeakFeatures {
    let mut mass: Vec<f64> = (0..mass_len).map(|_| rng.uniform()).collect();
    let m = mass.iter().cloned().fold(0.0, f64::max);
    mass.iter_mut().for_each(|v| *v /= m);
    let mut profile: Vec<f64> = (0..profile_len).map(|_| rng.uniform_range(0.1, 1.0)).collect();
    let m = profile.iter().cloned().fold(0.0, f64::max);
    profile.iter_mut().for_each(|v| *v /= m);
    let mut seg: Vec<f64> = (0..segment_len).map(|_| rng.uniform_range(0.0, 3.0)).collect();
    let m = seg.iter().cloned().fold(f64::INFINITY, f64::min);
    seg.iter_mut().for_each(|v| *v -= m);
    PeakFeatures {
        peak: peak("s", 73, rt, group),
        mass_spectrum: mass,
        peak_profile: profile,
        chrom_segment: seg,
        rt,
        apex_height: 100.0,
        empty_spectrum: false,
    }
}

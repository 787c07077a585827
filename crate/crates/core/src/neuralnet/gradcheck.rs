//! Central finite-difference check of analytic gradients.

use super::rng::RngStream;
use super::tensor::ParamSet;

/// Loss value plus a fingerprint of every non-smooth branch taken (relu
/// on/off, pooling argmax, sign of absolute differences). Coordinates whose
/// perturbation changes the fingerprint straddle a kink and are skipped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub pattern: u64,
}

impl Evaluation {
    pub fn smooth(loss: f64) -> Self {
        Self { loss, pattern: 0 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Check at most this many randomly chosen coordinates per tensor.
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub skipped_kinks: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn gradient_check<F>(
    params: &ParamSet,
    analytic: &ParamSet,
    mut evaluate: F,
    opts: GradCheckOptions,
) -> GradCheckReport
where
    F: FnMut(&ParamSet) -> Evaluation,
{
    let mut rng = RngStream::new(opts.seed);
    let base = evaluate(params);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped_kinks: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.get(id).len();
        let mut coords: Vec<usize> = (0..n).collect();
        if let Some(limit) = opts.max_coords_per_tensor {
            if limit < n {
                rng.shuffle(&mut coords);
                coords.truncate(limit);
                coords.sort_unstable();
            }
        }
        for i in coords {
            let orig = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + opts.step;
            let plus = evaluate(&work);
            work.get_mut(id).data_mut()[i] = orig - opts.step;
            let minus = evaluate(&work);
            work.get_mut(id).data_mut()[i] = orig;
            if plus.pattern != base.pattern || minus.pattern != base.pattern {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * opts.step);
            let err = relative_error(analytic.get(id).data()[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((params.name(id).to_string(), i));
                }
            }
        }
    }
    report
}

//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::param::ParamSet;

/// Minimum number of coordinates probed per check (all of them if fewer exist).
pub const MIN_SAMPLES: usize = 100;

/// Denominator floor for the relative error, so coordinates whose true gradient
/// is zero compare on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the gradients stored in `params` against `(f(p+h) - f(p-h)) / 2h`
/// on a random subsample of at least [`MIN_SAMPLES`] coordinates.
pub fn finite_diff_check<F, R>(
    f: F,
    params: &ParamSet,
    h: f64,
    tol: f64,
    samples: usize,
    rng: &mut R,
) -> GradCheckReport
where
    F: Fn(&ParamSet) -> f64,
    R: Rng + ?Sized,
{
    let coords = params.coordinates();
    let n = samples.max(MIN_SAMPLES).min(coords.len());
    let picked = sample(rng, coords.len(), n);

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: n,
        tol,
        passed: true,
    };
    for idx in picked.iter() {
        let c = coords[idx];
        let orig = *probe.value_at_mut(c);
        *probe.value_at_mut(c) = orig + h;
        let up = f(&probe);
        *probe.value_at_mut(c) = orig - h;
        let down = f(&probe);
        *probe.value_at_mut(c) = orig;

        let numeric = (up - down) / (2.0 * h);
        let analytic = params.grad_at(c);
        let err = relative_error(analytic, numeric);
        if err > report.max_rel_error || err.is_nan() {
            report.max_rel_error = err;
            report.worst_param = Some(params.name_at(c).to_string());
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    }
    report.passed = report.max_rel_error < tol;
    report
}

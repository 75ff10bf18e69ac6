//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls forward passes, so it stays independent
//! of the hand-written backward code it is used to verify.

use crate::encoders::EncoderParams;
use crate::error::Result;
use crate::tensor::Tensor;

/// Default perturbation step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error with a floor so near-zero gradients compare on an
/// absolute scale.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between two gradient vectors.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    debug_assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Central finite differences of `f` with respect to every entry of `t`.
/// `t` is restored to its original values afterwards.
pub fn finite_diff_tensor(t: &mut Tensor, step: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; t.len()];
    for i in 0..t.len() {
        let orig = t.data()[i];
        t.data_mut()[i] = orig + step;
        let up = f(&*t);
        t.data_mut()[i] = orig - step;
        let down = f(&*t);
        t.data_mut()[i] = orig;
        out[i] = (up - down) / (2.0 * step);
    }
    out
}

/// Summary of one whole-parameter-set gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Check the gradients currently stored in `params` against central finite
/// differences of `loss` over every entry of every parameter tensor.
///
/// The caller runs forward + backward first so the analytic gradients are
/// populated; `loss` must recompute the same objective from scratch.
pub fn check_params(
    params: &mut EncoderParams,
    step: f64,
    mut loss: impl FnMut(&EncoderParams) -> Result<f64>,
) -> Result<GradCheckReport> {
    let names: Vec<&'static str> = params.tensor_names();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for name in names {
        let len = params.tensor(name).len();
        for i in 0..len {
            let analytic = params.tensor(name).grad()[i];
            let orig = params.tensor(name).data()[i];
            params.tensor_mut(name).data_mut()[i] = orig + step;
            let up = loss(&*params)?;
            params.tensor_mut(name).data_mut()[i] = orig - step;
            let down = loss(&*params)?;
            params.tensor_mut(name).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let e = rel_err(analytic, numeric);
            report.checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = Some((name.to_string(), i));
            }
        }
    }
    Ok(report)
}

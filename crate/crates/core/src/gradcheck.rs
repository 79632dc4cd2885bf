//! Central finite-difference gradient checking over a [`ParamSet`].

use serde::Serialize;

use crate::error::Result;
use crate::tensors::ParamSet;

/// Finite-difference step for double precision.
pub const FD_STEP: f64 = 1e-5;

/// Relative-error denominators are floored at `REL_FLOOR * max(1, |loss|)`,
/// the scale below which central differences are dominated by rounding.
pub const REL_FLOOR: f64 = 1e-6;

/// Loss value plus the piecewise-linear branch pattern of the evaluation.
pub struct Probe {
    pub loss: f64,
    pub pattern: Vec<bool>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Entries whose +/- step crossed a ReLU or clamp boundary.
    pub skipped_kinks: usize,
    pub non_finite: bool,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        !self.non_finite && self.max_rel_error < tolerance
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst_param = other.worst_param;
            self.worst_index = other.worst_index;
        }
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
        self.non_finite |= other.non_finite;
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `eval` at `params`,
/// element by element over every tensor.
pub fn check<P, F>(params: &P, analytic: &P, mut eval: F) -> Result<GradCheckReport>
where
    P: ParamSet + Clone,
    F: FnMut(&P) -> Result<Probe>,
{
    let base = eval(params)?;
    let floor = REL_FLOOR * base.loss.abs().max(1.0);
    let mut report = GradCheckReport {
        non_finite: !base.loss.is_finite() || !analytic.all_finite(),
        ..Default::default()
    };
    let mut work = params.clone();
    let layout: Vec<(String, usize)> = params
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.values.len()))
        .collect();
    let grads: Vec<Vec<f64>> = analytic.params().iter().map(|p| p.values.to_vec()).collect();

    for (pi, (name, len)) in layout.iter().enumerate() {
        #[allow(clippy::needless_range_loop)]
        for j in 0..*len {
            let orig = work.params_mut()[pi].values[j];
            work.params_mut()[pi].values[j] = orig + FD_STEP;
            let plus = eval(&work)?;
            work.params_mut()[pi].values[j] = orig - FD_STEP;
            let minus = eval(&work)?;
            work.params_mut()[pi].values[j] = orig;

            if plus.pattern != base.pattern || minus.pattern != base.pattern {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * FD_STEP);
            let a = grads[pi][j];
            if !numeric.is_finite() || !a.is_finite() {
                report.non_finite = true;
                continue;
            }
            let err = relative_error(a, numeric, floor);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = Some(name.clone());
                report.worst_index = Some(j);
            }
        }
    }
    Ok(report)
}

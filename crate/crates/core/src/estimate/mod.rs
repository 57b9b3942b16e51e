//! Estimating scan parameters from data, and detecting artifacts.
//!
//! Every fit minimizes half the mean squared residual with bounded
//! Levenberg–Marquardt started from a fixed grid, so results are
//! deterministic.

mod calibration;
mod detect;
mod lsq;
mod report;
mod shape_fit;
mod whitespace;

use serde::{Deserialize, Serialize};

use crate::geometry::{unfolded_theta0, ScanParams};
use lsq::{levenberg_marquardt, LmOptions, LmOutcome};

pub use calibration::fit_calibration_strip;
pub use detect::{detect_artifacts, DetectorReport};
pub use report::{column_rms_report, ColumnRms};
pub use shape_fit::fit_shape;
pub use whitespace::estimate_from_whitespace;

/// The subset of [`ScanParams`] a particular fit determines.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FittedParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_px: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta0_rad: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_px: Option<f64>,
    /// Exposure scale `c` of a whitespace fit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

impl FittedParams {
    /// Copies the fitted values over `base`.
    pub fn apply_to(&self, base: &ScanParams) -> ScanParams {
        let mut p = *base;
        if let Some(l) = self.l_px {
            p.l = l;
        }
        if let Some(t) = self.theta0_rad {
            p.theta0 = t;
        }
        if let Some(d) = self.d_px {
            p.d = d;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: FittedParams,
    pub residual_rms: f64,
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest projected gradient component of `½·mean(r²)` at the result.
    pub gradient_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub(crate) fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// `n` points geometrically spaced over `[lo, hi]`.
pub(crate) fn geomspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    lsq::linspace(lo.ln(), hi.ln(), n)
        .into_iter()
        .map(f64::exp)
        .collect()
}

/// Replaces a folded-page optimum by its unfolded twin and polishes it
/// there, so that each visible shape has one reported `θ₀`.
pub(crate) fn prefer_unfolded<F>(
    best: LmOutcome,
    f: &F,
    theta_index: usize,
    lower: &[f64],
    upper: &[f64],
) -> LmOutcome
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let theta0 = best.params[theta_index];
    let unfolded = unfolded_theta0(theta0);
    if unfolded == theta0 {
        return best;
    }
    let mut start = best.params.clone();
    start[theta_index] = unfolded;
    let mut upper = upper.to_vec();
    upper[theta_index] = upper[theta_index].min(std::f64::consts::FRAC_PI_2);
    levenberg_marquardt(f, &start, lower, &upper, LmOptions::default()).unwrap_or(best)
}

use crate::error::{Error, Result};
use crate::geometry::PageShape;

use super::lsq::{linspace, multistart, LmOptions};
use super::{geomspace, prefer_unfolded, rms, FitResult, FittedParams};

const MIN_POINTS: usize = 8;
const THETA0_MAX: f64 = 3.0;

/// Height of the page above the platen at each `x`, for shape `(l, θ₀)`.
///
/// The grid reaches `2.5 l` of arc length past the last query, which always
/// projects beyond it, and is fine enough that linear interpolation between
/// nodes is far below pixel precision.
pub(crate) fn model_heights(l: f64, theta0: f64, xs: &[f64]) -> Option<Vec<f64>> {
    let x_last = xs.iter().copied().fold(0.0, f64::max);
    let s_max = x_last / l + 2.5;
    let ds = (0.5 / l).clamp(1e-3, 0.02);
    let n = ((s_max / ds).ceil() as usize + 1).clamp(64, 20_000);
    let shape = PageShape::new(l, theta0, s_max, n).ok()?;
    let lo = shape.x_min_visible();
    xs.iter()
        .map(|&x| shape.at_x(x.max(lo)).ok().map(|s| s.height))
        .collect()
}

/// Fits `(l, θ₀)` to measured `(x, z)` page-profile samples in pixels, with
/// `x` measured from the spine and `z` the height above the platen.
pub fn fit_shape(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < MIN_POINTS {
        return Err(Error::Estimation {
            reason: format!("need at least {MIN_POINTS} points, got {}", points.len()),
            best_residual: None,
        });
    }
    if let Some(bad) = points
        .iter()
        .find(|(x, z)| !(x.is_finite() && z.is_finite() && *x >= 0.0))
    {
        return Err(Error::Estimation {
            reason: format!("point {bad:?} is not finite with x >= 0"),
            best_residual: None,
        });
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let zs: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let x_range = xs[xs.len() - 1] - xs[0];
    if x_range <= 0.0 {
        return Err(Error::Estimation {
            reason: "points span no horizontal range".into(),
            best_residual: None,
        });
    }

    // Parameters: (ln l, θ₀).
    let residuals = |p: &[f64]| -> Option<Vec<f64>> {
        let h = model_heights(p[0].exp(), p[1], &xs)?;
        Some(h.iter().zip(&zs).map(|(m, z)| m - z).collect())
    };
    let lower = [(x_range / 100.0).ln(), 0.0];
    let upper = [(x_range * 100.0).ln(), THETA0_MAX];
    let mut starts = Vec::with_capacity(25);
    for l in geomspace(x_range / 20.0, x_range, 5) {
        for t in linspace(0.1, 2.5, 5) {
            starts.push(vec![l.ln(), t]);
        }
    }

    let best = multistart(&residuals, &starts, &lower, &upper, LmOptions::default()).ok_or_else(
        || Error::Estimation {
            reason: "no start produced a finite residual".into(),
            best_residual: None,
        },
    )?;
    let best = prefer_unfolded(best, &residuals, 1, &lower, &upper);
    Ok(FitResult {
        params: FittedParams {
            l_px: Some(best.params[0].exp()),
            theta0_rad: Some(best.params[1]),
            ..FittedParams::default()
        },
        residual_rms: rms(&best.residuals),
        residuals: best.residuals,
        converged: best.converged,
        iterations: best.iterations,
        gradient_norm: best.gradient_norm,
        note: None,
    })
}

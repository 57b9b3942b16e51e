use crate::error::{Error, Result};
use crate::forward::darkening_factors;
use crate::geometry::{PageShape, ScanParams};
use crate::raster::{Image, Mask};

use super::lsq::{linspace, multistart, LmOptions};
use super::{geomspace, prefer_unfolded, rms, FitResult, FittedParams};

/// Relative spread below which a whitespace profile carries no darkening.
const FLAT_PROFILE: f64 = 1e-9;

/// Mean luminance of the masked pixels in each column, with the column
/// index; columns without any masked pixel are skipped.
fn column_profile(scan: &Image, mask: &Mask) -> Vec<(usize, f64)> {
    let lum = scan.luminance();
    let w = scan.width();
    (0..w)
        .filter_map(|c| {
            let (sum, n) = (0..scan.height())
                .filter(|&r| mask.get(c, r))
                .fold((0.0, 0usize), |(s, n), r| (s + lum[r * w + c], n + 1));
            (n > 0).then(|| (c, sum / n as f64))
        })
        .collect()
}

fn predicted(
    l: f64,
    theta0: f64,
    d: f64,
    alpha: u32,
    width: usize,
    columns: &[usize],
) -> Option<Vec<f64>> {
    let params = ScanParams {
        l,
        theta0,
        d,
        alpha,
        ..ScanParams::flat()
    };
    let shape = PageShape::for_columns(&params, width).ok()?;
    let factors = darkening_factors(&shape.column_heights(width), &params);
    Some(columns.iter().map(|&c| factors[c]).collect())
}

/// Fits `(l, θ₀, d)` and an exposure scale `c` to the darkening of
/// whitespace, modelling the mean masked luminance of column `x` as
/// `c·(d / (height(x) + d))^α` with `α` held fixed. The spine is at column 0.
pub fn estimate_from_whitespace(scan: &Image, whitespace: &Mask, alpha: u32) -> Result<FitResult> {
    if whitespace.width() != scan.width() || whitespace.height() != scan.height() {
        return Err(Error::Shape(format!(
            "mask is {}x{} but the scan is {}x{}",
            whitespace.width(),
            whitespace.height(),
            scan.width(),
            scan.height()
        )));
    }
    if alpha == 0 {
        return Err(Error::param("alpha", "must be positive"));
    }
    let w = scan.width();
    let profile = column_profile(scan, whitespace);
    let covered = whitespace.count();
    if covered * 100 < scan.pixel_count() || profile.len() * 2 < w || w < 2 {
        return Err(Error::Estimation {
            reason: format!(
                "whitespace mask covers {covered} pixels in {} of {w} columns; need 1% of pixels spanning half the columns",
                profile.len()
            ),
            best_residual: None,
        });
    }
    let columns: Vec<usize> = profile.iter().map(|p| p.0).collect();
    let lum: Vec<f64> = profile.iter().map(|p| p.1).collect();
    let lum_max = lum.iter().copied().fold(f64::MIN, f64::max);
    let lum_min = lum.iter().copied().fold(f64::MAX, f64::min);

    if lum_max <= 0.0 {
        return Err(Error::Estimation {
            reason: "whitespace is black".into(),
            best_residual: None,
        });
    }
    if (lum_max - lum_min) <= FLAT_PROFILE * lum_max {
        let residuals: Vec<f64> = lum.iter().map(|v| v - lum_max).collect();
        return Ok(FitResult {
            params: FittedParams {
                theta0_rad: Some(0.0),
                scale: Some(lum_max),
                ..FittedParams::default()
            },
            residual_rms: rms(&residuals),
            residuals,
            converged: false,
            iterations: 0,
            gradient_norm: 0.0,
            note: Some(
                "whitespace is uniformly lit: no darkening signal, so l and d are unidentifiable".into(),
            ),
        });
    }

    // Parameters: (ln l, θ₀, ln d, c).
    let residuals = |p: &[f64]| -> Option<Vec<f64>> {
        let f = predicted(p[0].exp(), p[1], p[2].exp(), alpha, w, &columns)?;
        Some(f.iter().zip(&lum).map(|(m, y)| p[3] * m - y).collect())
    };
    let wf = w as f64;
    let lower = [(wf / 100.0).ln(), 0.0, (wf / 1000.0).ln(), 0.0];
    let upper = [(wf * 100.0).ln(), 3.0, (wf * 1000.0).ln(), 10.0 * lum_max];

    // The darkest column fixes lift/d for a given shape, which seeds d.
    let dark_ratio = (lum_min / lum_max).max(1e-6);
    let inv = dark_ratio.powf(-1.0 / alpha as f64) - 1.0;
    let mut starts = Vec::with_capacity(25);
    for l in geomspace(wf / 20.0, wf, 5) {
        for t in linspace(0.1, 2.5, 5) {
            let lift = 2.0 * l * (0.5 * t).sin();
            let d = (lift / inv.max(1e-9)).clamp(wf / 1000.0, wf * 1000.0);
            starts.push(vec![l.ln(), t, d.ln(), lum_max]);
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
            d_px: Some(best.params[2].exp()),
            scale: Some(best.params[3]),
        },
        residual_rms: rms(&best.residuals),
        residuals: best.residuals,
        converged: best.converged,
        iterations: best.iterations,
        gradient_norm: best.gradient_norm,
        note: None,
    })
}

use crate::error::{Error, Result};
use crate::geometry::PageShape;
use crate::raster::Image;

use super::lsq::{linspace, multistart, LmOptions};
use super::{geomspace, prefer_unfolded, rms, FitResult, FittedParams};

const MIN_PERIODS: usize = 6;

/// Fraction of the local half-range the signal must clear on each side of
/// the midline before a crossing counts.
const HYSTERESIS: f64 = 0.25;

/// Row-averaged luminance of the strip, smoothed by a `[1, 2, 1] / 4`
/// kernel so that squeezed edges span several samples and their midpoints
/// interpolate accurately.
fn strip_profile(strip: &Image) -> Vec<f64> {
    let lum = strip.luminance();
    let (w, h) = (strip.width(), strip.height());
    let mean: Vec<f64> = (0..w)
        .map(|c| (0..h).map(|r| lum[r * w + c]).sum::<f64>() / h as f64)
        .collect();
    (0..w)
        .map(|c| {
            let left = mean[c.saturating_sub(1)];
            let right = mean[(c + 1).min(w - 1)];
            0.25 * left + 0.5 * mean[c] + 0.25 * right
        })
        .collect()
}

/// Upward crossings of the signal through its local midline, at sub-pixel
/// positions. The midline and half-range come from the min and max over a
/// window one true period wide, which follows slow changes in exposure.
fn upward_crossings(signal: &[f64], period: f64) -> Vec<f64> {
    let n = signal.len();
    let half = (period / 2.0).ceil() as usize;
    let window = |i: usize| {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        let slice = &signal[lo..hi];
        let mn = slice.iter().copied().fold(f64::MAX, f64::min);
        let mx = slice.iter().copied().fold(f64::MIN, f64::max);
        (0.5 * (mx + mn), 0.5 * (mx - mn))
    };
    let centred: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let (mid, amp) = window(i);
            (signal[i] - mid, amp)
        })
        .collect();

    let mut out = Vec::new();
    // Armed once the signal has been clearly low.
    let mut armed = false;
    let mut last_low = 0usize;
    for i in 0..n {
        let (v, amp) = centred[i];
        if amp <= 0.0 {
            continue;
        }
        if v < -HYSTERESIS * amp {
            armed = true;
            last_low = i;
        } else if armed && v > HYSTERESIS * amp {
            // Locate the zero crossing between the last low sample and here.
            let mut pos = None;
            for j in last_low..i {
                let (a, b) = (centred[j].0, centred[j + 1].0);
                if a <= 0.0 && b > 0.0 {
                    pos = Some(j as f64 + a / (a - b));
                }
            }
            if let Some(p) = pos {
                out.push(p);
            }
            armed = false;
        }
    }
    out
}

/// Fits `(l, θ₀)` to a scanned calibration strip: a square wave of
/// `true_period` pixels printed along the page, spine at column 0.
///
/// Each measured period, divided by the true one, is the mean of `cos θ`
/// over that stretch of page; the model reproduces exactly that by
/// projecting both ends of one printed period.
pub fn fit_calibration_strip(strip: &Image, true_period: f64) -> Result<FitResult> {
    if !(true_period.is_finite() && true_period >= 2.0) {
        return Err(Error::param(
            "true_period",
            format!("must be at least 2 pixels, got {true_period}"),
        ));
    }
    let signal = strip_profile(strip);
    let inverted: Vec<f64> = signal.iter().map(|v| -v).collect();
    let rising = upward_crossings(&signal, true_period);
    let falling = upward_crossings(&inverted, true_period);
    let periods = rising.len().saturating_sub(1);
    if periods < MIN_PERIODS {
        return Err(Error::Calibration(format!(
            "found {periods} full periods, need at least {MIN_PERIODS}"
        )));
    }
    // One sample per period between like edges: (start, measured / true).
    let mut samples: Vec<(f64, f64)> = [&rising, &falling]
        .iter()
        .flat_map(|c| c.windows(2).map(|w| (w[0], (w[1] - w[0]) / true_period)))
        .collect();
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let starts_x: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let ratios: Vec<f64> = samples.iter().map(|s| s.1).collect();

    let width = strip.width() as f64;
    let x_last = starts_x[starts_x.len() - 1] + true_period;
    let residuals = |p: &[f64]| -> Option<Vec<f64>> {
        let (l, theta0) = (p[0].exp(), p[1]);
        let s_max = (x_last + true_period) / l + 2.5;
        let ds = (0.25 / l).clamp(1e-3, 0.02);
        let n = ((s_max / ds).ceil() as usize + 1).clamp(64, 20_000);
        let shape = PageShape::new(l, theta0, s_max, n).ok()?;
        let lo = shape.x_min_visible();
        starts_x
            .iter()
            .zip(&ratios)
            .map(|(&x, &ratio)| {
                let s = shape.at_x(x.max(lo)).ok()?.s_hat;
                let x_end = shape.x_at_s_hat(s + true_period / l).ok()?;
                Some((x_end - x.max(lo)) / true_period - ratio)
            })
            .collect()
    };
    let lower = [(width / 100.0).ln(), 0.0];
    let upper = [(width * 100.0).ln(), 3.0];
    let mut starts = Vec::with_capacity(25);
    for l in geomspace(width / 20.0, width, 5) {
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

#[cfg(test)]
mod tests {
    use super::*;

    fn square_wave(width: usize, period: f64) -> Image {
        Image::from_fn(width, 4, |c, _| {
            if ((c as f64 + 0.5) / period).fract() < 0.5 {
                0.0
            } else {
                1.0
            }
        })
        .unwrap()
    }

    #[test]
    fn crossings_of_a_clean_wave_are_one_period_apart() {
        let sig = strip_profile(&square_wave(200, 16.0));
        let c = upward_crossings(&sig, 16.0);
        assert!(c.len() >= 11);
        for w in c.windows(2) {
            assert!((w[1] - w[0] - 16.0).abs() < 1e-9);
        }
    }

    #[test]
    fn undistorted_strip_is_flat() {
        let fit = fit_calibration_strip(&square_wave(256, 16.0), 16.0).unwrap();
        assert!(fit.params.theta0_rad.unwrap() < 1e-3);
        assert!(fit.residual_rms < 1e-9);
    }

    #[test]
    fn too_few_periods() {
        assert!(matches!(
            fit_calibration_strip(&square_wave(64, 16.0), 16.0),
            Err(Error::Calibration(_))
        ));
        assert!(fit_calibration_strip(&square_wave(64, 16.0), 1.0).is_err());
    }
}

//! Elastica model of a page bound at the spine and pressed onto the platen.
//!
//! The page cross-section satisfies `θ'' = sin θ` in the dimensionless arc
//! length `ŝ = s / l`, with the page flattening out far from the spine. Its
//! closed-form solution `tan(θ/4) = tan(θ₀/4)·exp(−ŝ)` gives the angle on any
//! grid; the horizontal position and lift are then integrated numerically.
//!
//! Heights are measured above the platen: largest at the spine and decaying
//! to zero as the page lies down, which is what the optics consume.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default dimensionless extent of the arc-length grid.
pub const DEFAULT_S_MAX: f64 = 5.0;

/// Largest trapezoid sub-step, in units of `ŝ`, used when integrating between
/// grid nodes. Keeps `x` and the lift accurate on coarse grids.
const MAX_SUBSTEP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpineSide {
    #[default]
    Left,
    Right,
}

impl FromStr for SpineSide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" => Ok(SpineSide::Left),
            "right" => Ok(SpineSide::Right),
            other => Err(Error::param(
                "spine_side",
                format!("expected `left` or `right`, got `{other}`"),
            )),
        }
    }
}

impl fmt::Display for SpineSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpineSide::Left => "left",
            SpineSide::Right => "right",
        })
    }
}

fn default_s_max() -> f64 {
    DEFAULT_S_MAX
}

/// Complete physical description of a curved-page scan.
///
/// Lengths are in pixels. Only the ratio `l = √(B/f)` of bending modulus to
/// spine force is observable, so neither enters separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanParams {
    #[serde(rename = "l_px")]
    pub l: f64,
    #[serde(rename = "theta0_rad")]
    pub theta0: f64,
    /// Blur width per pixel of height: `σ = sigma_slope · height`.
    pub sigma_slope: f64,
    /// Distance from the light source to the platen.
    #[serde(rename = "d_px")]
    pub d: f64,
    /// Illumination falloff exponent: 1 for a bar source, 2 for a point source.
    pub alpha: u32,
    #[serde(default = "default_s_max")]
    pub s_max: f64,
    #[serde(default)]
    pub spine_side: SpineSide,
}

impl ScanParams {
    /// A flat page with no optical artifacts; useful as a base for overrides.
    pub fn flat() -> Self {
        ScanParams {
            l: 1.0,
            theta0: 0.0,
            sigma_slope: 0.0,
            d: 1.0,
            alpha: 2,
            s_max: DEFAULT_S_MAX,
            spine_side: SpineSide::Left,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_shape_params(self.l, self.theta0)?;
        if !(self.sigma_slope.is_finite() && self.sigma_slope >= 0.0) {
            return Err(Error::param(
                "sigma_slope",
                format!("must be finite and >= 0, got {}", self.sigma_slope),
            ));
        }
        if !(self.d.is_finite() && self.d > 0.0) {
            return Err(Error::param(
                "d_px",
                format!("must be finite and > 0, got {}", self.d),
            ));
        }
        if !matches!(self.alpha, 1 | 2) {
            return Err(Error::param(
                "alpha",
                format!("must be 1 or 2, got {}", self.alpha),
            ));
        }
        if !(self.s_max.is_finite() && self.s_max > 0.0) {
            return Err(Error::param(
                "s_max",
                format!("must be finite and > 0, got {}", self.s_max),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: ScanParams = serde_json::from_str(text).map_err(|e| Error::Parameter {
            name: "params",
            reason: e.to_string(),
        })?;
        params.validate()?;
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ScanParams always serializes")
    }
}

fn check_shape_params(l: f64, theta0: f64) -> Result<()> {
    if !(l.is_finite() && l > 0.0) {
        return Err(Error::param("l_px", format!("must be finite and > 0, got {l}")));
    }
    if !(theta0.is_finite() && (0.0..PI).contains(&theta0)) {
        return Err(Error::param(
            "theta0_rad",
            format!("must lie in [0, pi), got {theta0}"),
        ));
    }
    Ok(())
}

/// Page angle at dimensionless arc length `s_hat`.
#[inline]
pub fn elastica_angle(theta0: f64, s_hat: f64) -> f64 {
    4.0 * ((theta0 / 4.0).tan() * (-s_hat).exp()).atan()
}

/// Lift of the spine above the platen for a page extending to infinity.
#[inline]
pub fn total_lift(l: f64, theta0: f64) -> f64 {
    2.0 * l * (theta0 / 2.0).sin()
}

/// A page shape sampled on a grid of dimensionless arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct PageShape {
    pub l: f64,
    pub theta0: f64,
    pub s_max: f64,
    pub s_hat: Vec<f64>,
    pub theta: Vec<f64>,
    /// Horizontal distance from the spine, pixels.
    pub x: Vec<f64>,
    /// Accumulated vertical travel from the spine, pixels.
    pub z_arc: Vec<f64>,
    /// Height above the platen, pixels.
    pub height: Vec<f64>,
    /// First node of the part of the page visible from below. Non-zero only
    /// when `θ₀ > π/2` and the page near the spine folds back over itself.
    visible_start: usize,
}

/// Interpolated page state at a horizontal position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeSample {
    pub s_hat: f64,
    pub theta: f64,
    pub height: f64,
}

/// Solves the page shape on `n_grid` evenly spaced nodes over `[0, s_max]`.
pub fn solve_shape(params: &ScanParams, n_grid: usize) -> Result<PageShape> {
    params.validate()?;
    PageShape::new(params.l, params.theta0, params.s_max, n_grid)
}

impl PageShape {
    pub fn new(l: f64, theta0: f64, s_max: f64, n_grid: usize) -> Result<Self> {
        if n_grid < 2 {
            return Err(Error::param("n_grid", format!("need at least 2 nodes, got {n_grid}")));
        }
        if !(s_max.is_finite() && s_max > 0.0) {
            return Err(Error::param("s_max", format!("must be finite and > 0, got {s_max}")));
        }
        let last = (n_grid - 1) as f64;
        let s_hat = (0..n_grid).map(|i| s_max * i as f64 / last).collect();
        Self::from_grid(l, theta0, s_hat)
    }

    /// One node per pixel column of a `width`-wide flat page: column `j` sits
    /// at arc length `j` pixels, so `ŝ_j = j / l`.
    pub fn for_columns(params: &ScanParams, width: usize) -> Result<Self> {
        params.validate()?;
        if width < 2 {
            return Err(Error::Shape(format!("image must be at least 2 columns wide, got {width}")));
        }
        let s_hat = (0..width).map(|j| j as f64 / params.l).collect();
        Self::from_grid(params.l, params.theta0, s_hat)
    }

    /// Builds the shape on an arbitrary non-decreasing `ŝ` grid starting at 0.
    pub fn from_grid(l: f64, theta0: f64, s_hat: Vec<f64>) -> Result<Self> {
        check_shape_params(l, theta0)?;
        if s_hat.len() < 2 || s_hat[0] != 0.0 || s_hat.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param(
                "s_hat",
                "grid must start at 0 and be strictly increasing with at least 2 nodes",
            ));
        }
        let n = s_hat.len();
        let theta: Vec<f64> = s_hat.iter().map(|&s| elastica_angle(theta0, s)).collect();

        // x is accumulated as arc length minus the foreshortening deficit,
        // which is exactly zero on a flat page.
        let mut x = vec![0.0; n];
        let mut z_arc = vec![0.0; n];
        let mut deficit = 0.0;
        for i in 1..n {
            let (dd, dz) = integrate_interval(l, theta0, s_hat[i - 1], s_hat[i]);
            deficit += dd;
            x[i] = l * s_hat[i] - deficit;
            z_arc[i] = z_arc[i - 1] + dz;
        }

        let lift = total_lift(l, theta0);
        let height = z_arc.iter().map(|&z| (lift - z).max(0.0)).collect();

        let visible_start = x
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(best, min), (i, &xi)| {
                if xi < min {
                    (i, xi)
                } else {
                    (best, min)
                }
            })
            .0;

        Ok(PageShape {
            l,
            theta0,
            s_max: s_hat[n - 1],
            s_hat,
            theta,
            x,
            z_arc,
            height,
            visible_start,
        })
    }

    pub fn len(&self) -> usize {
        self.s_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_hat.is_empty()
    }

    pub fn x_max(&self) -> f64 {
        self.x[self.len() - 1]
    }

    /// Leftmost horizontal position seen from below: 0 unless the page folds.
    pub fn x_min_visible(&self) -> f64 {
        self.x[self.visible_start]
    }

    pub fn visible_start(&self) -> usize {
        self.visible_start
    }

    /// Horizontal position of the page point at normalized arc length
    /// `s_hat`, interpolated on the grid.
    pub fn x_at_s_hat(&self, s_hat: f64) -> Result<f64> {
        let s_last = self.s_hat[self.len() - 1];
        if !(s_hat >= 0.0 && s_hat <= s_last) {
            return Err(Error::Domain(format!("s_hat = {s_hat} outside [0, {s_last}]")));
        }
        let k = self.s_hat.partition_point(|&v| v <= s_hat).clamp(1, self.len() - 1) - 1;
        let (s0, s1) = (self.s_hat[k], self.s_hat[k + 1]);
        let t = (s_hat - s0) / (s1 - s0);
        Ok(self.x[k] + t * (self.x[k + 1] - self.x[k]))
    }

    fn bracket(&self, x_query: f64) -> Result<(usize, f64)> {
        let lo = self.x_min_visible();
        let hi = self.x_max();
        if !(x_query >= lo && x_query <= hi) {
            return Err(Error::Domain(format!(
                "x = {x_query} outside the page extent [{lo}, {hi}]"
            )));
        }
        let xs = &self.x[self.visible_start..];
        let k = xs.partition_point(|&v| v <= x_query);
        let i = self.visible_start + k.clamp(1, xs.len() - 1) - 1;
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let t = if x1 > x0 { (x_query - x0) / (x1 - x0) } else { 0.0 };
        Ok((i, t))
    }

    /// Fractional grid index of the visible page point above `x_query`.
    pub fn node_position(&self, x_query: f64) -> Result<f64> {
        self.bracket(x_query).map(|(i, t)| i as f64 + t)
    }

    /// Interpolates the shape at horizontal position `x_query` (pixels).
    pub fn at_x(&self, x_query: f64) -> Result<ShapeSample> {
        let (i, t) = self.bracket(x_query)?;
        let lerp = |v: &[f64]| v[i] + t * (v[i + 1] - v[i]);
        Ok(ShapeSample {
            s_hat: lerp(&self.s_hat),
            theta: lerp(&self.theta),
            height: lerp(&self.height),
        })
    }

    /// Height above the platen under each pixel column `0..width`. Columns
    /// past the end of the grid take the last node's height.
    pub fn column_heights(&self, width: usize) -> Vec<f64> {
        let last = self.height[self.len() - 1];
        (0..width)
            .map(|c| {
                let xc = c as f64;
                if xc > self.x_max() {
                    last
                } else {
                    self.at_x(xc.max(self.x_min_visible()))
                        .map(|s| s.height)
                        .unwrap_or(last)
                }
            })
            .collect()
    }
}

/// For a folded page (`θ₀ > π/2`), the unfolded `θ₀` with the same visible
/// shape in front of the spine.
///
/// A folded page always curls behind the spine before coming forward, and
/// from the point where it crosses `x = 0` on the way out it is exactly the
/// elastica that starts at that angle. Heights and positions at `x ≥ 0` are
/// therefore identical for both parameter sets. Returns `theta0` unchanged
/// when the page does not fold.
pub fn unfolded_theta0(theta0: f64) -> f64 {
    if theta0 <= FRAC_PI_2 {
        return theta0;
    }
    // x(θ)/l along the outer branch, decreasing in θ on (0, π/2].
    let t0 = (theta0 / 4.0).tan();
    let x_over_l = |t: f64| (t0 / (t / 4.0).tan()).ln() - 2.0 * (t / 2.0).cos() + 2.0 * (theta0 / 2.0).cos();
    let (mut lo, mut hi) = (1e-300_f64, FRAC_PI_2);
    if x_over_l(hi) >= 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if x_over_l(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Trapezoid integrals of `l·(1 − cos θ)` and `l·sin θ` over `[a, b]`.
fn integrate_interval(l: f64, theta0: f64, a: f64, b: f64) -> (f64, f64) {
    let steps = ((b - a) / MAX_SUBSTEP).ceil().max(1.0) as usize;
    let h = (b - a) / steps as f64;
    let mut deficit = 0.0;
    let mut dz = 0.0;
    let mut prev = elastica_angle(theta0, a);
    for k in 1..=steps {
        let s = if k == steps { b } else { a + h * k as f64 };
        let next = elastica_angle(theta0, s);
        // 1 − cos θ = 2 sin²(θ/2), without cancellation for small θ.
        let foreshortening = |t: f64| 2.0 * (0.5 * t).sin().powi(2);
        deficit += 0.5 * h * (foreshortening(prev) + foreshortening(next));
        dz += 0.5 * h * (prev.sin() + next.sin());
        prev = next;
    }
    (l * deficit, l * dz)
}

/// Convenience wrapper for [`PageShape::at_x`].
pub fn shape_at_x(shape: &PageShape, x_query: f64) -> Result<ShapeSample> {
    shape.at_x(x_query)
}

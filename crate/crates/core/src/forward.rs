//! Forward model: what a flat page looks like after being scanned curved.
//!
//! Three artifacts, applied in physical order:
//! 1. distortion, a horizontal squeeze by `cos θ` from projecting the page,
//! 2. blur, a Gaussian whose width grows linearly with height above the platen,
//! 3. darkening by `(d / (height + d))^α` from the receding light source.
//!
//! All operators assume the spine sits at column 0; [`simulate`] mirrors
//! right-spine images in and out.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PageShape, ScanParams, SpineSide};
use crate::raster::Image;
use crate::sparse::CsrMatrix;

/// Blur widths below this many pixels are treated as no blur at all.
pub const SIGMA_MIN: f64 = 0.3;

/// Kernel support, in standard deviations.
pub const CUTOFF_SIGMAS: f64 = 5.0;

/// Slack on the right edge of the projected page, absorbing quadrature
/// round-off when the page is flat.
const EDGE_SLACK: f64 = 1e-6;

/// Which artifacts to simulate or invert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ArtifactSet {
    pub distort: bool,
    pub blur: bool,
    pub darken: bool,
}

impl ArtifactSet {
    pub const NONE: ArtifactSet = ArtifactSet {
        distort: false,
        blur: false,
        darken: false,
    };
    pub const ALL: ArtifactSet = ArtifactSet {
        distort: true,
        blur: true,
        darken: true,
    };

    pub fn is_empty(&self) -> bool {
        *self == Self::NONE
    }
}

impl FromStr for ArtifactSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut set = ArtifactSet::NONE;
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            match name {
                "distort" => set.distort = true,
                "blur" => set.blur = true,
                "darken" => set.darken = true,
                "all" => set = ArtifactSet::ALL,
                "none" => {}
                other => {
                    return Err(Error::param(
                        "artifacts",
                        format!("unknown artifact `{other}` (expected distort, blur, darken)"),
                    ))
                }
            }
        }
        Ok(set)
    }
}

impl fmt::Display for ArtifactSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (self.distort, "distort"),
            (self.blur, "blur"),
            (self.darken, "darken"),
        ]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect();
        f.write_str(&names.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortOptions {
    /// Samples per output pixel; values above 1 box-filter the remap.
    pub supersample: usize,
    /// Value written where no part of the page projects.
    pub padding: f64,
}

impl Default for DistortOptions {
    fn default() -> Self {
        DistortOptions {
            supersample: 1,
            padding: 1.0,
        }
    }
}

fn check_grid(image: &Image, shape: &PageShape) -> Result<()> {
    if image.width() != shape.len() {
        return Err(Error::Shape(format!(
            "image is {} columns wide but the page grid has {} nodes",
            image.width(),
            shape.len()
        )));
    }
    Ok(())
}

/// Linear interpolation along a row at fractional column `u`.
#[inline]
pub(crate) fn sample_row(image: &Image, row: usize, channel: usize, u: f64) -> f64 {
    let last = image.width() - 1;
    let u = u.clamp(0.0, last as f64);
    let i = (u.floor() as usize).min(last);
    let t = u - i as f64;
    let a = image.get(i, row, channel);
    if t == 0.0 || i == last {
        a
    } else {
        a + t * (image.get(i + 1, row, channel) - a)
    }
}

/// Projects the page onto the platen: output column `c` shows the page point
/// whose horizontal position is `c`.
pub fn distort(image: &Image, shape: &PageShape) -> Result<Image> {
    distort_with(image, shape, &DistortOptions::default())
}

pub fn distort_with(image: &Image, shape: &PageShape, opts: &DistortOptions) -> Result<Image> {
    check_grid(image, shape)?;
    if opts.supersample == 0 {
        return Err(Error::param("supersample", "must be at least 1"));
    }
    let k = opts.supersample;
    let x_lo = shape.x_min_visible().max(0.0);
    let x_hi = shape.x_max();
    // Per output column: source positions, or None for padding.
    let taps: Vec<Vec<Option<f64>>> = (0..image.width())
        .map(|c| {
            (0..k)
                .map(|m| {
                    let x = c as f64 + (m as f64 + 0.5) / k as f64 - 0.5;
                    if x > x_hi + EDGE_SLACK {
                        None
                    } else {
                        shape.node_position(x.clamp(x_lo, x_hi)).ok()
                    }
                })
                .collect()
        })
        .collect();

    let mut out = image.clone();
    for row in 0..image.height() {
        for (c, col_taps) in taps.iter().enumerate() {
            for ch in 0..image.channels() {
                let sum: f64 = col_taps
                    .iter()
                    .map(|tap| match tap {
                        Some(u) => sample_row(image, row, ch, *u),
                        None => opts.padding,
                    })
                    .sum();
                out.set(c, row, ch, sum / k as f64);
            }
        }
    }
    Ok(out)
}

/// Spatially varying Gaussian blur as a sparse linear map on flattened
/// row-major pixels. Entry `(μ, ν)` is the weight source pixel `ν` sends to
/// destination `μ`.
#[derive(Debug, Clone)]
pub struct BlurOperator {
    width: usize,
    height: usize,
    sigma_by_column: Vec<f64>,
    cutoff_radius_by_column: Vec<f64>,
    /// Destination-major (`K`).
    by_dest: CsrMatrix,
    /// Source-major (`Kᵀ`).
    by_source: CsrMatrix,
}

/// Blur operator for a `width × height` projected image of `shape`.
pub fn build_blur_operator(
    shape: &PageShape,
    params: &ScanParams,
    width: usize,
    height: usize,
) -> Result<BlurOperator> {
    params.validate()?;
    let sigmas = shape
        .column_heights(width)
        .into_iter()
        .map(|h| params.sigma_slope * h)
        .collect();
    BlurOperator::from_column_sigmas(width, height, sigmas)
}

impl BlurOperator {
    /// Builds the operator from an explicit blur width per column.
    pub fn from_column_sigmas(width: usize, height: usize, sigma_by_column: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("empty image {width}x{height}")));
        }
        if sigma_by_column.len() != width {
            return Err(Error::Shape(format!(
                "{} sigmas for {width} columns",
                sigma_by_column.len()
            )));
        }
        if let Some(bad) = sigma_by_column.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::param("sigma", format!("blur width must be >= 0, got {bad}")));
        }
        if width * height > u32::MAX as usize {
            return Err(Error::Shape("image too large for a blur operator".into()));
        }

        let cutoff_radius_by_column: Vec<f64> =
            sigma_by_column.iter().map(|s| CUTOFF_SIGMAS * s).collect();
        let stencils: Vec<Vec<(i64, i64, f64)>> = sigma_by_column
            .iter()
            .map(|&s| gaussian_stencil(s))
            .collect();

        let (w, h) = (width as i64, height as i64);
        let rows: Vec<Vec<(u32, f64)>> = (0..width * height)
            .into_par_iter()
            .map(|src| {
                let (sx, sy) = ((src % width) as i64, (src / width) as i64);
                let stencil = &stencils[src % width];
                let mut row: Vec<(u32, f64)> = stencil
                    .iter()
                    .filter_map(|&(dx, dy, wgt)| {
                        let (x, y) = (sx + dx, sy + dy);
                        (x >= 0 && x < w && y >= 0 && y < h).then(|| ((y * w + x) as u32, wgt))
                    })
                    .collect();
                let total: f64 = row.iter().map(|e| e.1).sum();
                for e in &mut row {
                    e.1 /= total;
                }
                row
            })
            .collect();

        let by_source = CsrMatrix::from_rows(width * height, rows);
        let by_dest = by_source.transpose();
        Ok(BlurOperator {
            width,
            height,
            sigma_by_column,
            cutoff_radius_by_column,
            by_dest,
            by_source,
        })
    }

    /// Same blur width everywhere.
    pub fn uniform(width: usize, height: usize, sigma: f64) -> Result<Self> {
        Self::from_column_sigmas(width, height, vec![sigma; width])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_rows(&self) -> usize {
        self.width * self.height
    }

    pub fn n_cols(&self) -> usize {
        self.width * self.height
    }

    pub fn nnz(&self) -> usize {
        self.by_dest.nnz()
    }

    pub fn sigma_by_column(&self) -> &[f64] {
        &self.sigma_by_column
    }

    pub fn cutoff_radius_by_column(&self) -> &[f64] {
        &self.cutoff_radius_by_column
    }

    /// `K` in destination-major form.
    pub fn matrix(&self) -> &CsrMatrix {
        &self.by_dest
    }

    /// `Kᵀ`: row `ν` lists where source pixel `ν` spreads its light.
    pub fn transpose_matrix(&self) -> &CsrMatrix {
        &self.by_source
    }

    pub fn is_identity(&self) -> bool {
        self.sigma_by_column.iter().all(|&s| s < SIGMA_MIN)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.by_dest.mul_vec(x)
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.by_dest.mul_vec_into(x, out)
    }

    pub fn apply_transpose_into(&self, y: &[f64], out: &mut [f64]) {
        self.by_source.mul_vec_into(y, out)
    }

    pub(crate) fn check_image(&self, image: &Image) -> Result<()> {
        if image.width() != self.width || image.height() != self.height {
            return Err(Error::Shape(format!(
                "operator is for {}x{} images, got {}x{}",
                self.width,
                self.height,
                image.width(),
                image.height()
            )));
        }
        Ok(())
    }
}

/// Truncated Gaussian offsets `(dx, dy, weight)`, unnormalized. A single
/// unit tap when `sigma` is below [`SIGMA_MIN`].
fn gaussian_stencil(sigma: f64) -> Vec<(i64, i64, f64)> {
    if sigma < SIGMA_MIN {
        return vec![(0, 0, 1.0)];
    }
    let radius = CUTOFF_SIGMAS * sigma;
    let r2 = radius * radius;
    let reach = radius.floor() as i64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut taps = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let d2 = (dx * dx + dy * dy) as f64;
            if d2 <= r2 {
                taps.push((dx, dy, (-d2 * inv).exp()));
            }
        }
    }
    taps
}

/// Applies the blur operator to each channel.
pub fn blur(image: &Image, op: &BlurOperator) -> Result<Image> {
    op.check_image(image)?;
    let mut out = image.clone();
    for ch in 0..image.channels() {
        let plane = op.apply(&image.plane(ch));
        out.set_plane(ch, &plane);
    }
    Ok(out)
}

/// Darkening factor `(d / (h + d))^α` for each column height.
pub fn darkening_factors(heights: &[f64], params: &ScanParams) -> Vec<f64> {
    heights
        .iter()
        .map(|&h| {
            if h <= 0.0 {
                1.0
            } else {
                (params.d / (h + params.d)).powi(params.alpha as i32)
            }
        })
        .collect()
}

fn scale_columns(image: &Image, factors: &[f64], divide: bool) -> Image {
    let mut out = image.clone();
    let (w, ch) = (image.width(), image.channels());
    for (i, s) in out.samples_mut().iter_mut().enumerate() {
        let f = factors[(i / ch) % w];
        if divide {
            *s /= f;
        } else {
            *s *= f;
        }
    }
    out
}

pub fn darken(image: &Image, shape: &PageShape, params: &ScanParams) -> Result<Image> {
    params.validate()?;
    let factors = darkening_factors(&shape.column_heights(image.width()), params);
    Ok(scale_columns(image, &factors, false))
}

/// Divides out the darkening factor without clamping.
pub(crate) fn undo_darkening(image: &Image, shape: &PageShape, params: &ScanParams) -> Result<Image> {
    params.validate()?;
    let factors = darkening_factors(&shape.column_heights(image.width()), params);
    Ok(scale_columns(image, &factors, true))
}

/// Runs the selected artifacts in the order distort, blur, darken.
pub fn simulate(image: &Image, params: &ScanParams, artifacts: ArtifactSet) -> Result<Image> {
    params.validate()?;
    let flip = params.spine_side == SpineSide::Right;
    let mut work = if flip {
        image.mirror_horizontal()
    } else {
        image.clone()
    };
    let shape = PageShape::for_columns(params, image.width())?;
    if artifacts.distort {
        work = distort(&work, &shape)?;
    }
    if artifacts.blur {
        let op = build_blur_operator(&shape, params, work.width(), work.height())?;
        work = blur(&work, &op)?;
    }
    if artifacts.darken {
        work = darken(&work, &shape, params)?;
    }
    let work = work.clamp01();
    Ok(if flip { work.mirror_horizontal() } else { work })
}

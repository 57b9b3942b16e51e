//! Inverse model: lighten, deblur, undistort.
//!
//! Deblurring solves the Tikhonov problem
//!
//! ```text
//! minimize ‖K·x − b‖² + λ²‖x‖²
//! ```
//!
//! per channel without ever forming `K⁻¹`. The default route is CGLS
//! (conjugate gradients on the normal equations applied through `K` and
//! `Kᵀ`); small images can instead be factored directly with an envelope
//! Cholesky of `KᵀK + λ²I`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{build_blur_operator, sample_row, undo_darkening, ArtifactSet, BlurOperator};
use crate::geometry::{PageShape, ScanParams, SpineSide};
use crate::raster::Image;

/// Refinement steps after a direct solve.
const REFINEMENT_STEPS: usize = 2;

/// Upper bound on stored factor entries for the direct solver.
const MAX_ENVELOPE: usize = 60_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    #[default]
    IterativeNormalEquations,
    SparseDirect,
}

impl FromStr for SolveMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iterative-normal-equations" | "iterative" | "cgls" => {
                Ok(SolveMethod::IterativeNormalEquations)
            }
            "sparse-direct" | "direct" => Ok(SolveMethod::SparseDirect),
            other => Err(Error::param(
                "method",
                format!("expected iterative-normal-equations or sparse-direct, got `{other}`"),
            )),
        }
    }
}

impl fmt::Display for SolveMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveMethod::IterativeNormalEquations => "iterative-normal-equations",
            SolveMethod::SparseDirect => "sparse-direct",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Tikhonov weight `λ`.
    pub regularization: f64,
    pub max_iterations: usize,
    /// Target for `‖Kᵀ(b − Kx) − λ²x‖ / ‖Kᵀb‖`.
    pub tolerance: f64,
    pub method: SolveMethod,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            regularization: 1e-3,
            max_iterations: 2000,
            tolerance: 1e-8,
            method: SolveMethod::IterativeNormalEquations,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.regularization.is_finite() && self.regularization >= 0.0) {
            return Err(Error::param(
                "regularization",
                format!("must be finite and >= 0, got {}", self.regularization),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::param("max_iterations", "must be positive"));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::param(
                "tolerance",
                format!("must lie in (0, 1), got {}", self.tolerance),
            ));
        }
        Ok(())
    }
}

/// Outcome of one regularized least-squares solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Final relative normal-equation residual.
    pub relative_residual: f64,
    pub converged: bool,
    /// `√(‖Kx − b‖² + λ²‖x‖²)` after each iteration, starting from `x₀`.
    pub objective_history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// CGLS for `min ‖Kx − b‖² + λ²‖x‖²`, optionally warm-started from `x0`.
///
/// Returns the report even when the tolerance was not met; `converged`
/// tells the caller which happened.
pub fn cgls(
    op: &BlurOperator,
    b: &[f64],
    lambda: f64,
    tolerance: f64,
    max_iterations: usize,
    x0: Option<&[f64]>,
) -> SolveReport {
    let n = op.n_cols();
    assert_eq!(b.len(), op.n_rows());
    let lam2 = lambda * lambda;

    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r = op.apply(&x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut s = vec![0.0; n];
    op.apply_transpose_into(&r, &mut s);
    for (si, xi) in s.iter_mut().zip(&x) {
        *si -= lam2 * xi;
    }

    let mut ktb = vec![0.0; n];
    op.apply_transpose_into(b, &mut ktb);
    let scale = dot(&ktb, &ktb).sqrt();
    let objective = |r: &[f64], x: &[f64]| (dot(r, r) + lam2 * dot(x, x)).sqrt();
    let mut history = vec![objective(&r, &x)];

    let mut gamma = dot(&s, &s);
    if scale == 0.0 || gamma.sqrt() <= tolerance * scale {
        return SolveReport {
            solution: x,
            iterations: 0,
            relative_residual: if scale == 0.0 { 0.0 } else { gamma.sqrt() / scale },
            converged: true,
            objective_history: history,
        };
    }

    let mut p = s.clone();
    let mut q = vec![0.0; op.n_rows()];
    let mut rel = gamma.sqrt() / scale;
    for it in 1..=max_iterations {
        op.apply_into(&p, &mut q);
        let delta = dot(&q, &q) + lam2 * dot(&p, &p);
        if delta <= 0.0 {
            break;
        }
        let alpha = gamma / delta;
        for (xi, pi) in x.iter_mut().zip(&p) {
            *xi += alpha * pi;
        }
        for (ri, qi) in r.iter_mut().zip(&q) {
            *ri -= alpha * qi;
        }
        op.apply_transpose_into(&r, &mut s);
        for (si, xi) in s.iter_mut().zip(&x) {
            *si -= lam2 * xi;
        }
        history.push(objective(&r, &x));
        let gamma_next = dot(&s, &s);
        rel = gamma_next.sqrt() / scale;
        if rel <= tolerance {
            return SolveReport {
                solution: x,
                iterations: it,
                relative_residual: rel,
                converged: true,
                objective_history: history,
            };
        }
        let beta = gamma_next / gamma;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = si + beta * *pi;
        }
        gamma = gamma_next;
    }
    SolveReport {
        solution: x,
        iterations: max_iterations,
        relative_residual: rel,
        converged: false,
        objective_history: history,
    }
}

/// Envelope (skyline) Cholesky factor of `KᵀK + λ²I`.
///
/// Row `i` stores columns `first[i]..=i` contiguously starting at `start[i]`.
pub struct NormalFactor {
    first: Vec<usize>,
    start: Vec<usize>,
    values: Vec<f64>,
}

impl NormalFactor {
    pub fn new(op: &BlurOperator, lambda: f64) -> Result<Self> {
        let n = op.n_cols();
        let k = op.matrix();

        // Envelope of the normal matrix: for every destination row of K, all
        // pairs of its sources couple.
        let mut first: Vec<usize> = (0..n).collect();
        for mu in 0..k.n_rows() {
            let lo = k.row(mu).map(|(c, _)| c).min();
            if let Some(lo) = lo {
                for (c, _) in k.row(mu) {
                    first[c] = first[c].min(lo);
                }
            }
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut total = 0usize;
        for (i, &f) in first.iter().enumerate() {
            start.push(total);
            total += i - f + 1;
        }
        start.push(total);
        if total > MAX_ENVELOPE {
            return Err(Error::param(
                "method",
                format!(
                    "sparse-direct factor would hold {total} entries; use the iterative method"
                ),
            ));
        }

        let mut values = vec![0.0; total];
        let idx = |i: usize, j: usize| start[i] + (j - first[i]);
        for mu in 0..k.n_rows() {
            let entries: Vec<(usize, f64)> = k.row(mu).collect();
            for &(a, wa) in &entries {
                for &(b, wb) in &entries {
                    if b <= a {
                        values[idx(a, b)] += wa * wb;
                    }
                }
            }
        }
        let lam2 = lambda * lambda;
        for i in 0..n {
            values[idx(i, i)] += lam2;
        }

        // In-place row Cholesky over the envelope.
        for i in 0..n {
            for j in first[i]..=i {
                let lo = first[i].max(first[j]);
                let mut s = values[idx(i, j)];
                let (ri, rj) = (start[i] - first[i], start[j] - first[j]);
                for m in lo..j {
                    s -= values[ri + m] * values[rj + m];
                }
                if j < i {
                    values[idx(i, j)] = s / values[idx(j, j)];
                } else if s > 0.0 {
                    values[idx(i, i)] = s.sqrt();
                } else {
                    return Err(Error::Singular(format!(
                        "normal matrix is not positive definite at pivot {i}; increase the regularization"
                    )));
                }
            }
        }
        start.pop();
        Ok(NormalFactor {
            first,
            start,
            values,
        })
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.start[i] + (j - self.first[i])]
    }

    /// Solves `(KᵀK + λ²I)·x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.first.len();
        let mut y = rhs.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for j in self.first[i]..i {
                s -= self.at(i, j) * y[j];
            }
            y[i] = s / self.at(i, i);
        }
        for i in (0..n).rev() {
            y[i] /= self.at(i, i);
            let yi = y[i];
            for j in self.first[i]..i {
                y[j] -= self.at(i, j) * yi;
            }
        }
        y
    }
}

/// Divides out the darkening and clamps to `[0, 1]`.
pub fn lighten(image: &Image, shape: &PageShape, params: &ScanParams) -> Result<Image> {
    Ok(lighten_unclamped(image, shape, params)?.clamp01())
}

/// Divides out the darkening. Exact inverse of [`crate::forward::darken`]
/// up to one rounding per sample.
pub fn lighten_unclamped(image: &Image, shape: &PageShape, params: &ScanParams) -> Result<Image> {
    undo_darkening(image, shape, params)
}

/// Solves the normal equations with `factor`, then takes corrected
/// seminormal steps `x += F⁻¹(Kᵀ(b − Kx) − λ²x)`. Each step recovers most of
/// the accuracy lost to the squared condition number when `λ` is small.
fn refined_solve(op: &BlurOperator, factor: &NormalFactor, b: &[f64], lambda: f64) -> Vec<f64> {
    let mut g = vec![0.0; op.n_cols()];
    op.apply_transpose_into(b, &mut g);
    let mut x = factor.solve(&g);
    let mut r = vec![0.0; b.len()];
    for _ in 0..REFINEMENT_STEPS {
        op.apply_into(&x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        op.apply_transpose_into(&r, &mut g);
        for (gi, xi) in g.iter_mut().zip(&x) {
            *gi -= lambda * lambda * xi;
        }
        for (xi, d) in x.iter_mut().zip(factor.solve(&g)) {
            *xi += d;
        }
    }
    x
}

/// Regularized deconvolution of each channel, without clamping.
pub fn deblur_unclamped(image: &Image, op: &BlurOperator, cfg: &SolverConfig) -> Result<Image> {
    cfg.validate()?;
    op.check_image(image)?;
    let planes: Vec<Vec<f64>> = (0..image.channels()).map(|c| image.plane(c)).collect();
    let solved: Vec<Vec<f64>> = match cfg.method {
        SolveMethod::IterativeNormalEquations => planes
            .par_iter()
            .map(|b| {
                let rep = cgls(op, b, cfg.regularization, cfg.tolerance, cfg.max_iterations, None);
                if rep.converged {
                    Ok(rep.solution)
                } else {
                    Err(Error::NotConverged {
                        iterations: rep.iterations,
                        residual: rep.relative_residual,
                    })
                }
            })
            .collect::<Result<_>>()?,
        SolveMethod::SparseDirect => {
            let factor = NormalFactor::new(op, cfg.regularization)?;
            planes
                .iter()
                .map(|b| refined_solve(op, &factor, b, cfg.regularization))
                .collect()
        }
    };
    let mut out = image.clone();
    for (c, plane) in solved.iter().enumerate() {
        out.set_plane(c, plane);
    }
    Ok(out)
}

/// Regularized deconvolution of each channel, clamped to `[0, 1]`.
pub fn deblur(image: &Image, op: &BlurOperator, cfg: &SolverConfig) -> Result<Image> {
    Ok(deblur_unclamped(image, op, cfg)?.clamp01())
}

/// Maps a projected image back onto the page's arc-length grid. Page columns
/// that project outside the image, or behind the spine, become `padding`.
pub fn undistort_with(image: &Image, shape: &PageShape, padding: f64) -> Result<Image> {
    if image.width() != shape.len() {
        return Err(Error::Shape(format!(
            "image is {} columns wide but the page grid has {} nodes",
            image.width(),
            shape.len()
        )));
    }
    let last = (image.width() - 1) as f64;
    // Columns past the projected page edge hold padding. Page points in the
    // last partial pixel are extrapolated from the two columns before it.
    let edge = (shape.x_max() + 1e-6).floor().min(last);
    let sources: Vec<Option<f64>> = (0..image.width())
        .map(|j| {
            let x = shape.x[j];
            let visible = j >= shape.visible_start() && x >= -1e-9 && x <= last + 1e-6;
            visible.then_some(x)
        })
        .collect();
    let mut out = image.clone();
    for row in 0..image.height() {
        for (j, src) in sources.iter().enumerate() {
            for ch in 0..image.channels() {
                let v = match *src {
                    Some(x) if x > edge && edge >= 1.0 => {
                        let e = edge as usize;
                        let a = image.get(e, row, ch);
                        a + (x - edge) * (a - image.get(e - 1, row, ch))
                    }
                    Some(x) => sample_row(image, row, ch, x.min(edge)),
                    None => padding,
                };
                out.set(j, row, ch, v);
            }
        }
    }
    Ok(out)
}

pub fn undistort(image: &Image, shape: &PageShape) -> Result<Image> {
    undistort_with(image, shape, 1.0)
}

/// Inverts the selected artifacts in reverse order: lighten, deblur,
/// undistort. Intermediate stages are left unclamped.
pub fn recover(
    image: &Image,
    params: &ScanParams,
    cfg: &SolverConfig,
    artifacts: ArtifactSet,
) -> Result<Image> {
    params.validate()?;
    cfg.validate()?;
    let flip = params.spine_side == SpineSide::Right;
    let mut work = if flip {
        image.mirror_horizontal()
    } else {
        image.clone()
    };
    let shape = PageShape::for_columns(params, image.width())?;
    if artifacts.darken {
        work = undo_darkening(&work, &shape, params)?;
    }
    if artifacts.blur {
        let op = build_blur_operator(&shape, params, work.width(), work.height())?;
        work = deblur_unclamped(&work, &op, cfg)?;
    }
    if artifacts.distort {
        work = undistort(&work, &shape)?;
    }
    let work = work.clamp01();
    Ok(if flip { work.mirror_horizontal() } else { work })
}

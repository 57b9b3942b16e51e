use std::collections::BTreeSet;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;

const MIN_SIDE: usize = 16;
/// Fraction of the wavenumber range counted as "low".
const LOW_BAND: f64 = 0.05;
const MAX_RADIUS: usize = 16;
const ORIENTATIONS: usize = 8;
const MAX_ANCHORS: usize = 65_536;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    /// Mean row-spectrum magnitude over the lowest wavenumbers, DC excluded.
    pub low_wavenumber_energy: f64,
    /// Magnitude-weighted mean wavenumber of the row spectra, in cycles per
    /// pixel.
    pub mean_wavenumber: f64,
    /// Orientation-averaged Pearson correlation at radius `r = 1..=r_max`;
    /// entry `r − 1` holds radius `r`.
    pub radial_correlation: Vec<f64>,
    /// `1/√n` for the `n` anchor pixels used.
    pub baseline: f64,
}

/// Spectral and spatial statistics that respond to darkening, distortion
/// and blur respectively. Colour images are reduced to luminance.
pub fn detect_artifacts(image: &Image) -> Result<DetectorReport> {
    let (w, h) = (image.width(), image.height());
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(Error::Detector(format!(
            "image is {w}x{h}; need at least {MIN_SIDE}x{MIN_SIDE}"
        )));
    }
    let lum = image.luminance();
    let (low_wavenumber_energy, mean_wavenumber) = row_spectrum_stats(&lum, w, h);
    let (radial_correlation, n) = radial_correlations(&lum, w, h);
    Ok(DetectorReport {
        low_wavenumber_energy,
        mean_wavenumber,
        radial_correlation,
        baseline: 1.0 / (n as f64).sqrt(),
    })
}

fn row_spectrum_stats(lum: &[f64], w: usize, h: usize) -> (f64, f64) {
    let fft = FftPlanner::<f64>::new().plan_fft_forward(w);
    let k_nyq = w / 2;
    let k_low = ((LOW_BAND * k_nyq as f64).floor() as usize).max(1);
    let mut low_sum = 0.0;
    let mut weighted = 0.0;
    let mut total = 0.0;
    let mut buf = vec![Complex::new(0.0, 0.0); w];
    for row in lum.chunks_exact(w).take(h) {
        for (b, &v) in buf.iter_mut().zip(row) {
            *b = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        for (k, z) in buf.iter().enumerate().take(k_nyq + 1).skip(1) {
            let mag = z.norm() / w as f64;
            if k <= k_low {
                low_sum += mag;
            }
            weighted += mag * k as f64 / w as f64;
            total += mag;
        }
    }
    let low = low_sum / (k_low * h) as f64;
    let mean_k = if total > 0.0 { weighted / total } else { 0.0 };
    (low, mean_k)
}

/// Distinct integer offsets at radius `r` over orientations `kπ/8`.
fn offsets(r: usize) -> Vec<(isize, isize)> {
    let set: BTreeSet<(isize, isize)> = (0..ORIENTATIONS)
        .map(|k| {
            let phi = k as f64 * std::f64::consts::PI / ORIENTATIONS as f64;
            let rf = r as f64;
            (
                (rf * phi.cos()).round() as isize,
                (rf * phi.sin()).round() as isize,
            )
        })
        .filter(|&o| o != (0, 0))
        .collect();
    set.into_iter().collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    // Zero variance up to the round-off of removing the mean.
    let floor = |m: f64| n * (1e-12 * (1.0 + m.abs())).powi(2);
    if saa <= floor(ma) || sbb <= floor(mb) {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Returns the correlation curve and the number of anchor pixels.
fn radial_correlations(lum: &[f64], w: usize, h: usize) -> (Vec<f64>, usize) {
    let r_max = MAX_RADIUS.min(w.min(h) / 4);
    let mut stride = 1;
    while (w.div_ceil(stride)) * (h.div_ceil(stride)) > MAX_ANCHORS {
        stride += 1;
    }
    let anchors: Vec<(usize, usize)> = (0..h)
        .step_by(stride)
        .flat_map(|r| (0..w).step_by(stride).map(move |c| (c, r)))
        .collect();

    let curve = (1..=r_max)
        .map(|r| {
            let offs = offsets(r);
            let sum: f64 = offs
                .iter()
                .map(|&(dx, dy)| {
                    let (mut a, mut b) = (Vec::new(), Vec::new());
                    for &(c, row) in &anchors {
                        let (c2, r2) = (c as isize + dx, row as isize + dy);
                        if c2 >= 0 && r2 >= 0 && (c2 as usize) < w && (r2 as usize) < h {
                            a.push(lum[row * w + c]);
                            b.push(lum[r2 as usize * w + c2 as usize]);
                        }
                    }
                    pearson(&a, &b)
                })
                .sum();
            sum / offs.len() as f64
        })
        .collect();
    (curve, anchors.len())
}

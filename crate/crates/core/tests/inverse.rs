use std::f64::consts::{FRAC_PI_4, PI};

use descan::inverse::cgls;
use descan::{
    blur, column_rms_report, darken, deblur_unclamped, distort, estimate_from_whitespace,
    lighten_unclamped, recover, simulate, undistort, ArtifactSet, BlurOperator, Image, Mask,
    PageShape, ScanParams, SolveMethod, SolverConfig,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_image(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::new(w, h, 1, (0..w * h).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn curled(l: f64, theta0: f64) -> ScanParams {
    ScanParams {
        l,
        theta0,
        sigma_slope: 0.05,
        d: 4.0 * l,
        alpha: 2,
        ..ScanParams::flat()
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn unregularized_deblur_inverts_a_mild_blur() {
    let img = random_image(24, 24, 1);
    let op = BlurOperator::uniform(24, 24, 0.6).unwrap();
    let cfg = SolverConfig {
        regularization: 0.0,
        tolerance: 1e-12,
        ..SolverConfig::default()
    };
    let back = deblur_unclamped(&blur(&img, &op).unwrap(), &op, &cfg).unwrap();
    assert!(max_diff(back.samples(), img.samples()) < 1e-9);
}

/// Minimizer of `‖Kx − b‖² + λ²‖x‖²` by dense Householder QR of `[K; λI]`.
fn dense_oracle(op: &BlurOperator, b: &[f64], lambda: f64) -> Vec<f64> {
    let (m, n) = (op.n_rows(), op.n_cols());
    let mut a = DMatrix::zeros(m + n, n);
    for (i, row) in op.matrix().to_dense().iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    for j in 0..n {
        a[(m + j, j)] = lambda;
    }
    let mut rhs = DVector::zeros(m + n);
    rhs.rows_mut(0, m).copy_from_slice(b);
    let qr = a.qr();
    let x = qr.r().solve_upper_triangular(&qr.q().tr_mul(&rhs)).unwrap();
    x.as_slice().to_vec()
}

#[test]
fn light_regularization_recovers_a_blurred_image() {
    // Smooth content: at λ = 1e-6 the highest diagonal frequencies, damped
    // below λ by the blur, are unrecoverable by any solver.
    let n = 32;
    let img = Image::from_fn(n, n, |c, r| {
        let (x, y) = (c as f64, r as f64);
        0.5 + 0.3 * (x / 4.0).sin() * (y / 5.0).cos() + 0.1 * (x / 2.5 + y / 3.0).cos()
    })
    .unwrap();
    let op = BlurOperator::uniform(n, n, 1.5).unwrap();
    let b = blur(&img, &op).unwrap();
    let cfg = SolverConfig {
        regularization: 1e-6,
        method: SolveMethod::SparseDirect,
        ..SolverConfig::default()
    };
    let back = deblur_unclamped(&b, &op, &cfg).unwrap();
    let oracle = dense_oracle(&op, b.samples(), 1e-6);
    assert!(max_diff(back.samples(), &oracle) < 1e-6);
    let mut interior = 0.0f64;
    for r in 8..n - 8 {
        for c in 8..n - 8 {
            interior = interior.max((back.get(c, r, 0) - img.get(c, r, 0)).abs());
        }
    }
    assert!(interior < 1e-3, "{interior}");
}

#[test]
fn data_residual_falls_with_every_iteration() {
    let img = random_image(24, 24, 3);
    let op = BlurOperator::uniform(24, 24, 1.2).unwrap();
    let b = blur(&img, &op).unwrap().into_samples();
    let mut previous = f64::INFINITY;
    for k in 1..=30 {
        let x = cgls(&op, &b, 1e-2, 1e-14, k, None).solution;
        let r = op.apply(&x);
        let residual = r.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(residual <= previous, "iteration {k}: {residual} > {previous}");
        previous = residual;
    }
}

#[test]
fn linear_rows_survive_the_remap_away_from_the_spine() {
    let (w, l) = (160, 20.0);
    let img = Image::from_fn(w, 4, |c, r| 0.1 + 0.004 * c as f64 + 0.01 * r as f64).unwrap();
    let shape = PageShape::for_columns(&curled(l, FRAC_PI_4), w).unwrap();
    let back = undistort(&distort(&img, &shape).unwrap(), &shape).unwrap();
    for r in 0..4 {
        for c in (3.0 * l) as usize..w {
            assert!((back.get(c, r, 0) - img.get(c, r, 0)).abs() < 1e-5, "({c}, {r})");
        }
    }
}

fn band_limited(w: usize, h: usize) -> Image {
    let tau = 2.0 * PI;
    Image::from_fn(w, h, |c, r| {
        let (x, y) = (c as f64, r as f64);
        0.5 + 0.25 * (tau * x / 23.0).sin() * (tau * y / 17.0).cos() + 0.15 * (tau * x / 41.0 + 1.0).cos()
    })
    .unwrap()
}

#[test]
fn remap_round_trip_is_close_outside_the_spine_band() {
    let (w, l) = (200, 25.0);
    let img = band_limited(w, 24);
    let shape = PageShape::for_columns(&curled(l, FRAC_PI_4), w).unwrap();
    let back = undistort(&distort(&img, &shape).unwrap(), &shape).unwrap();
    let rep = column_rms_report(&img, &back).unwrap();
    let band = (3.0 * l) as usize;
    let outside = (rep.per_column[band..].iter().map(|v| v * v).sum::<f64>()
        / (w - band) as f64)
        .sqrt();
    assert!(outside < 0.02, "{outside}");
}

#[test]
fn round_trip_error_falls_away_from_the_spine() {
    let (w, l) = (192, 32.0);
    // Brightest at the spine. Tikhonov bias scales with intensity, so a ramp
    // rising away from the spine would grow a tail of its own.
    let img = Image::from_fn(w, 48, |c, r| {
        0.85 - 0.7 * c as f64 / w as f64 + 0.05 * (r as f64 / 5.0).sin()
    })
    .unwrap();
    let p = curled(l, FRAC_PI_4);
    let scan = simulate(&img, &p, ArtifactSet::ALL).unwrap();
    let back = recover(&scan, &p, &SolverConfig::default(), ArtifactSet::ALL).unwrap();
    let rep = column_rms_report(&img, &back).unwrap();
    let windows: Vec<f64> = rep
        .per_column
        .chunks(l as usize)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    assert!(windows.windows(2).all(|p| p[1] <= p[0]), "{windows:?}");
}

/// A page of grey text blocks framed by white margins, darkened and scanned
/// with mild sensor noise.
fn margin_scan(p: &ScanParams, seed: u64) -> (Image, Mask) {
    let (w, h) = (320, 96);
    let is_margin = |c: usize, r: usize| r < 16 || r >= h - 16 || c % 64 >= 52;
    let page = Image::from_fn(w, h, |c, r| {
        if is_margin(c, r) {
            1.0
        } else if (r / 4) % 2 == 0 {
            0.25 + 0.1 * ((c as f64) / 3.0).sin()
        } else {
            1.0
        }
    })
    .unwrap();
    let shape = PageShape::for_columns(p, w).unwrap();
    let mut scan = darken(&page, &shape, p).unwrap();
    let noise = Normal::new(0.0, 0.005).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in scan.samples_mut() {
        *s = (*s + noise.sample(&mut rng)).clamp(0.0, 1.0);
    }
    (scan, Mask::from_fn(w, h, is_margin))
}

fn margin_deviation(img: &Image, mask: &Mask, band: usize) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for r in 0..img.height() {
        for c in 0..band {
            if mask.get(c, r) {
                sum += (1.0 - img.get(c, r, 0)).abs();
                n += 1;
            }
        }
    }
    sum / n as f64
}

#[test]
fn fitted_relighting_whitens_the_spine_margins() {
    let truth = ScanParams {
        l: 66.0,
        theta0: 0.63,
        sigma_slope: 0.0,
        d: 180.0,
        alpha: 2,
        ..ScanParams::flat()
    };
    let (scan, mask) = margin_scan(&truth, 9);
    let fit = estimate_from_whitespace(&scan, &mask, 2).unwrap();
    let fitted = fit.params.apply_to(&truth);
    assert!((fitted.l - 66.0).abs() / 66.0 < 0.1, "{fitted:?}");
    assert!((fitted.theta0 - 0.63).abs() / 0.63 < 0.1, "{fitted:?}");

    // Relight, with the exposure scale folded back to unit white.
    let relit = recover(&scan, &fitted, &SolverConfig::default(), "darken".parse().unwrap()).unwrap();
    let c = fit.params.scale.unwrap();
    let relit = descan::channel_map(&relit, |_, v| (v / c).min(1.0));
    let band = (3.0 * truth.l) as usize;
    let before = margin_deviation(&scan, &mask, band);
    let after = margin_deviation(&relit, &mask, band);
    assert!(before >= 5.0 * after, "before {before}, after {after}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lighten_undoes_darken(
        l in 2.0f64..300.0,
        theta0 in 0.0f64..2.5,
        d in 1.0f64..2000.0,
        alpha in 1u32..=2,
        seed in 0u64..1000,
    ) {
        let p = ScanParams { l, theta0, d, alpha, ..ScanParams::flat() };
        let img = random_image(48, 6, seed);
        let shape = PageShape::for_columns(&p, 48).unwrap();
        let back = lighten_unclamped(&darken(&img, &shape, &p).unwrap(), &shape, &p).unwrap();
        for (a, b) in back.samples().iter().zip(img.samples()) {
            prop_assert!(a.to_bits().abs_diff(b.to_bits()) <= 1);
        }
    }

    #[test]
    fn flat_remap_round_trip_is_exact(seed in 0u64..1000, w in 2usize..64, l in 1.0f64..100.0) {
        let img = random_image(w, 3, seed);
        let shape = PageShape::for_columns(&ScanParams { l, ..ScanParams::flat() }, w).unwrap();
        let back = undistort(&distort(&img, &shape).unwrap(), &shape).unwrap();
        // Node positions l·(j/l) may round by an ulp.
        prop_assert!(max_diff(back.samples(), img.samples()) < 1e-12);
    }
}

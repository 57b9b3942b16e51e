use descan::{
    blur, build_blur_operator, darken, distort, simulate, ArtifactSet, BlurOperator, Image,
    PageShape, ScanParams,
};
use proptest::prelude::*;

/// Direct evaluation of a per-source normalized Gaussian truncated at 5σ,
/// applied to a row-major plane.
fn dense_blur(plane: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    let r2 = (5.0 * sigma).powi(2);
    for sy in 0..h {
        for sx in 0..w {
            let mut taps = Vec::new();
            for dy in 0..h {
                for dx in 0..w {
                    let d2 = (dx as f64 - sx as f64).powi(2) + (dy as f64 - sy as f64).powi(2);
                    if d2 <= r2 {
                        taps.push((dy * w + dx, (-d2 / (2.0 * sigma * sigma)).exp()));
                    }
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for (dst, g) in taps {
                out[dst] += plane[sy * w + sx] * g / total;
            }
        }
    }
    out
}

fn texture(w: usize, h: usize) -> Image {
    Image::from_fn(w, h, |c, r| {
        let (x, y) = (c as f64, r as f64);
        0.5 + 0.3 * (x * 0.9).sin() * (y * 0.7 + 0.3).cos() + 0.1 * ((x * y) * 0.05).sin()
    })
    .unwrap()
}

#[test]
fn uniform_operator_matches_dense_gaussian() {
    let img = texture(16, 16);
    for sigma in [0.6, 1.0, 1.5, 2.5] {
        let op = BlurOperator::uniform(16, 16, sigma).unwrap();
        let sparse = blur(&img, &op).unwrap();
        let dense = dense_blur(img.samples(), 16, 16, sigma);
        for (a, b) in sparse.samples().iter().zip(&dense) {
            assert!((a - b).abs() < 1e-9, "σ {sigma}: {a} vs {b}");
        }
    }
}

#[test]
fn constant_interior_is_preserved() {
    let (w, h, sigma) = (40, 40, 1.5);
    let op = BlurOperator::uniform(w, h, sigma).unwrap();
    let out = op.apply(&vec![1.0; w * h]);
    // Sources within 5σ of the border are renormalized, and they reach 5σ.
    let margin = 2 * (5.0 * sigma).ceil() as usize + 1;
    for r in margin..h - margin {
        for c in margin..w - margin {
            assert!((out[r * w + c] - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn delta_becomes_a_round_gaussian_spot() {
    let (w, h, sigma) = (31, 31, 2.0);
    let op = BlurOperator::uniform(w, h, sigma).unwrap();
    let mut delta = vec![0.0; w * h];
    let centre = 15 * w + 15;
    delta[centre] = 1.0;
    let spot = op.apply(&delta);
    let norm: f64 = (-10i64..=10)
        .flat_map(|dy| (-10i64..=10).map(move |dx| (dx * dx + dy * dy) as f64))
        .filter(|&d2| d2 <= 100.0)
        .map(|d2| (-d2 / 8.0).exp())
        .sum();
    for r in 0..h {
        for c in 0..w {
            let (dx, dy) = (c as f64 - 15.0, r as f64 - 15.0);
            let d2 = dx * dx + dy * dy;
            let expected = if d2 <= 100.0 { (-d2 / 8.0).exp() / norm } else { 0.0 };
            let got = spot[r * w + c];
            assert!((got - expected).abs() < 1e-12, "({c}, {r})");
            // Eight-fold grid symmetry.
            let (mc, mr) = (30 - c, 30 - r);
            assert!((got - spot[mr * w + mc]).abs() < 1e-15);
            assert!((got - spot[c * w + r]).abs() < 1e-15);
        }
    }
}

fn second_moment(op: &BlurOperator, w: usize, h: usize, src: (usize, usize)) -> f64 {
    let mut delta = vec![0.0; w * h];
    delta[src.1 * w + src.0] = 1.0;
    op.apply(&delta)
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let (x, y) = ((i % w) as f64 - src.0 as f64, (i / w) as f64 - src.1 as f64);
            v * (x * x + y * y)
        })
        .sum()
}

#[test]
fn wider_profile_spreads_a_delta_further() {
    let (w, h) = (48, 48);
    let p: Vec<f64> = (0..w).map(|c| 0.2 + 2.0 * (-(c as f64) / 12.0).exp()).collect();
    let q: Vec<f64> = p.iter().enumerate().map(|(c, s)| s + 0.1 + 0.02 * c as f64).collect();
    let op_p = BlurOperator::from_column_sigmas(w, h, p).unwrap();
    let op_q = BlurOperator::from_column_sigmas(w, h, q).unwrap();
    for src in [(2, 24), (10, 20), (24, 24), (40, 30)] {
        let (mp, mq) = (second_moment(&op_p, w, h, src), second_moment(&op_q, w, h, src));
        assert!(mq >= mp, "{src:?}: {mq} < {mp}");
    }
}

fn total_variation(img: &Image) -> f64 {
    let (w, h) = (img.width(), img.height());
    let mut tv = 0.0;
    for r in 0..h {
        for c in 0..w {
            let v = img.get(c, r, 0);
            if c + 1 < w {
                tv += (img.get(c + 1, r, 0) - v).abs();
            }
            if r + 1 < h {
                tv += (img.get(c, r + 1, 0) - v).abs();
            }
        }
    }
    tv
}

fn curled(l: f64, theta0: f64, sigma_slope: f64, d: f64, alpha: u32) -> ScanParams {
    ScanParams {
        l,
        theta0,
        sigma_slope,
        d,
        alpha,
        ..ScanParams::flat()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn operator_is_nonnegative_mass_preserving_and_truncated(
        l in 5.0f64..60.0,
        theta0 in 0.0f64..1.5,
        slope in 0.0f64..0.15,
        w in 8usize..40,
        h in 4usize..20,
    ) {
        let p = curled(l, theta0, slope, 100.0, 2);
        let shape = PageShape::for_columns(&p, w).unwrap();
        let op = build_blur_operator(&shape, &p, w, h).unwrap();
        let kt = op.transpose_matrix();
        for src in 0..w * h {
            let (sx, sy) = ((src % w) as f64, (src / w) as f64);
            let radius = op.cutoff_radius_by_column()[src % w];
            let mut total = 0.0;
            for (dst, v) in kt.row(src) {
                prop_assert!(v >= 0.0);
                let (dx, dy) = ((dst % w) as f64 - sx, (dst / w) as f64 - sy);
                prop_assert!(dx * dx + dy * dy <= radius * radius + 1e-9);
                total += v;
            }
            prop_assert!((total - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn darken_and_blur_nearly_commute_on_a_constant_page(
        l in 5.0f64..60.0,
        theta0 in 0.05f64..1.5,
        slope in 0.0f64..0.1,
        d in 20.0f64..400.0,
    ) {
        // Per destination, the two orders differ by at most the spread of the
        // darkening factor over the pixels feeding it.
        let (w, h, c) = (48, 12, 0.8);
        let p = curled(l, theta0, slope, d, 2);
        let shape = PageShape::for_columns(&p, w).unwrap();
        let op = build_blur_operator(&shape, &p, w, h).unwrap();
        let f = descan::forward::darkening_factors(&shape.column_heights(w), &p);
        let constant = Image::filled(w, h, 1, c).unwrap();
        let a = darken(&blur(&constant, &op).unwrap(), &shape, &p).unwrap();
        let b = blur(&darken(&constant, &shape, &p).unwrap(), &op).unwrap();
        for dst in 0..w * h {
            let feeders: Vec<(usize, f64)> = op.matrix().row(dst).collect();
            let mass: f64 = feeders.iter().map(|e| e.1).sum();
            let spread = feeders
                .iter()
                .map(|&(src, _)| (f[src % w] - f[dst % w]).abs())
                .fold(0.0, f64::max);
            let diff = (a.samples()[dst] - b.samples()[dst]).abs();
            prop_assert!(diff <= c * mass * spread + 1e-12);
        }
    }

    #[test]
    fn blur_does_not_increase_total_variation(
        sigma in 0.3f64..3.0,
        seed in 0u64..1000,
    ) {
        let img = Image::from_fn(24, 24, |c, r| {
            let k = (c * 31 + r * 17 + seed as usize * 7) % 23;
            k as f64 / 22.0
        }).unwrap();
        let op = BlurOperator::uniform(24, 24, sigma).unwrap();
        prop_assert!(total_variation(&blur(&img, &op).unwrap()) <= total_variation(&img) + 1e-9);
    }

    #[test]
    fn distortion_keeps_rows_monotone(
        l in 4.0f64..60.0,
        theta0 in 0.0f64..1.5,
        w in 8usize..80,
        gamma in 0.3f64..3.0,
    ) {
        let img = Image::from_fn(w, 3, |c, _| (c as f64 / (w - 1) as f64).powf(gamma)).unwrap();
        let p = curled(l, theta0, 0.0, 100.0, 2);
        let shape = PageShape::for_columns(&p, w).unwrap();
        let out = distort(&img, &shape).unwrap();
        for r in 0..3 {
            for c in 1..w {
                prop_assert!(out.get(c, r, 0) >= out.get(c - 1, r, 0) - 1e-12);
            }
        }
    }

    #[test]
    fn darkening_is_a_contraction_that_grows_with_height(
        l in 5.0f64..100.0,
        theta0 in 0.05f64..1.5,
        d in 10.0f64..1000.0,
        alpha in 1u32..=2,
    ) {
        let w = 64;
        let p = curled(l, theta0, 0.0, d, alpha);
        let shape = PageShape::for_columns(&p, w).unwrap();
        let img = Image::from_fn(w, 2, |c, r| 0.2 + 0.01 * c as f64 + 0.1 * r as f64).unwrap();
        let out = darken(&img, &shape, &p).unwrap();
        for (a, b) in out.samples().iter().zip(img.samples()) {
            prop_assert!(a.abs() <= b.abs());
        }
        let heights = shape.column_heights(w);
        let factors = descan::forward::darkening_factors(&heights, &p);
        for i in 0..w {
            for j in 0..w {
                if heights[i] > heights[j] {
                    prop_assert!(factors[i] < factors[j]);
                }
            }
        }
    }

    #[test]
    fn degenerate_composition_is_identity(
        seed in 0u64..10_000,
        w in 2usize..40,
        h in 1usize..20,
        l in 1.0f64..200.0,
    ) {
        let img = Image::from_fn(w, h, |c, r| {
            ((c as u64 * 2654435761 + r as u64 * 40503 + seed) % 256) as f64 / 255.0
        }).unwrap();
        let p = curled(l, 1e-9, 0.0, 50.0, 2);
        let out = simulate(&img, &p, ArtifactSet::ALL).unwrap();
        for (a, b) in out.samples().iter().zip(img.samples()) {
            prop_assert!((a - b).abs() < 0.5 / 255.0);
        }
    }

    #[test]
    fn channels_are_processed_independently(
        l in 10.0f64..60.0,
        theta0 in 0.1f64..1.2,
        slope in 0.0f64..0.08,
    ) {
        let (w, h) = (40, 12);
        let rgb = Image::new(w, h, 3, (0..w * h * 3)
            .map(|i| 0.2 + 0.6 * (((i * 37) % 101) as f64 / 100.0))
            .collect()).unwrap();
        let p = curled(l, theta0, slope, 80.0, 2);
        let out = simulate(&rgb, &p, ArtifactSet::ALL).unwrap();
        for ch in 0..3 {
            let gray = Image::new(w, h, 1, rgb.plane(ch)).unwrap();
            let single = simulate(&gray, &p, ArtifactSet::ALL).unwrap();
            prop_assert_eq!(single.samples(), &out.plane(ch)[..]);
        }
    }
}

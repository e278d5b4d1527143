use auxfuse_core::data::{synthetic_scene, Image};
use auxfuse_core::losses::{ssim, SsimParams};
use auxfuse_core::metrics::{average_gradient, entropy, evaluate_pair, mos_aggregate, vif, MetricReport};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mean SSIM by direct summation over every valid window position.
fn brute_force_ssim(x: &Image, y: &Image, window: usize, sigma: f64) -> f64 {
    let r = window / 2;
    let g: Vec<f64> = (0..window).map(|i| (-((i as f64 - r as f64).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = g.iter().sum::<f64>().powi(2);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (w, h) = x.dims();
    let mut acc = 0.0;
    let mut count = 0;
    for oy in 0..=h - window {
        for ox in 0..=w - window {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in 0..window {
                for i in 0..window {
                    let k = g[i] * g[j] / total;
                    let a = x.get(ox + i, oy + j);
                    let b = y.get(ox + i, oy + j);
                    mx += k * a;
                    my += k * b;
                    sxx += k * a * a;
                    syy += k * b * b;
                    sxy += k * a * b;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            acc += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    Image::new(w, h, (0..w * h).map(|_| rng.random::<f64>()).collect()).unwrap()
}

#[test]
fn ssim_matches_direct_window_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = SsimParams::default();
    for i in 0..50 {
        let x = random_image(&mut rng, 16, 16);
        // Correlated partner so SSIM is not near zero.
        let y = Image::from_clipped(16, 16, x.pixels().iter().map(|v| 0.7 * v + 0.3 * rng.random::<f64>()).collect()).unwrap();
        let ours = ssim(&x, &y, &p).unwrap();
        let oracle = brute_force_ssim(&x, &y, p.window, p.sigma);
        assert!((ours - oracle).abs() < 1e-6, "pair {i}: {ours} vs {oracle}");
        assert!((ours - ssim(&y, &x, &p).unwrap()).abs() < 1e-12);
        assert!((ssim(&x, &x, &p).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn ssim_small_windows_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for window in [3, 5, 7] {
        let p = SsimParams::with_window(window);
        let x = random_image(&mut rng, 16, 12);
        let y = random_image(&mut rng, 16, 12);
        assert!((ssim(&x, &y, &p).unwrap() - brute_force_ssim(&x, &y, window, p.sigma)).abs() < 1e-6);
    }
}

#[test]
fn no_reference_invariants() {
    let flat = Image::constant(32, 32, 0.4).unwrap();
    assert_eq!(average_gradient(&flat).unwrap(), 0.0);
    assert_eq!(entropy(&flat, 256).unwrap(), 0.0);
    let card = Image::from_fn(16, 16, |x, y| (y * 16 + x) as f64 / 255.0).unwrap();
    assert!((entropy(&card, 256).unwrap() - 8.0).abs() < 1e-6);
}

#[test]
fn full_reference_invariants() {
    let x = synthetic_scene(64, 48, 3).unwrap();
    assert!((vif(&x, &x).unwrap() - 1.0).abs() < 1e-6);
    assert_eq!(mos_aggregate(&[1.0, 2.0, 3.0, 4.0, 10.0]).unwrap(), 3.0);
    assert!(mos_aggregate(&[1.0, 2.0]).is_err());
}

#[test]
fn report_means_are_row_averages() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut report = MetricReport::new("test", "synthetic");
    let mut rows = Vec::new();
    for i in 0..4 {
        let a = synthetic_scene(40, 32, i).unwrap();
        let b = random_image(&mut rng, 40, 32);
        let f = Image::from_clipped(40, 32, a.pixels().iter().zip(b.pixels()).map(|(x, y)| 0.5 * (x + y)).collect()).unwrap();
        let row = evaluate_pair(&f, &a, &b, &SsimParams::default()).unwrap();
        rows.push(row.values());
        report.push(format!("p{i}"), row);
    }
    let means = report.means();
    for (c, m) in means.iter().enumerate() {
        let avg = rows.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64;
        assert!((m - avg).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ssim_is_bounded_and_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = SsimParams::with_window(5);
        let x = random_image(&mut rng, 12, 12);
        let y = random_image(&mut rng, 12, 12);
        let s = ssim(&x, &y, &p).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((s - ssim(&y, &x, &p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn entropy_is_bounded_by_bin_count(seed in any::<u64>(), bins in 2usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = random_image(&mut rng, 9, 7);
        let e = entropy(&img, bins).unwrap();
        prop_assert!(e >= 0.0 && e <= (bins as f64).log2().min((63f64).log2()) + 1e-12);
    }

    #[test]
    fn average_gradient_scales_linearly(seed in any::<u64>(), k in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = random_image(&mut rng, 8, 8);
        let scaled = Image::new(8, 8, img.pixels().iter().map(|v| k * v).collect()).unwrap();
        let (g, gs) = (average_gradient(&img).unwrap(), average_gradient(&scaled).unwrap());
        prop_assert!((gs - k * g).abs() < 1e-12);
    }
}

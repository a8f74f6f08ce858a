use dyntomo::metrics::{psnr, psnr_masked, ssim, ssim_masked, SsimConfig};
use dyntomo::tomo::inscribed_circle_mask;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct per-pixel SSIM with raw-moment variances and border-renormalised windows.
fn naive_ssim(x: &Array2<f64>, y: &Array2<f64>, l: f64) -> f64 {
    let (h, w) = x.dim();
    let c1 = (0.01 * l) * (0.01 * l);
    let c2 = (0.03 * l) * (0.03 * l);
    let mut acc = 0.0;
    for i in 0..h as i64 {
        for j in 0..w as i64 {
            let mut taps = Vec::new();
            for a in -5i64..=5 {
                for b in -5i64..=5 {
                    let (p, q) = (i + a, j + b);
                    if p >= 0 && q >= 0 && p < h as i64 && q < w as i64 {
                        let wt = (-((a * a + b * b) as f64) / (2.0 * 1.5 * 1.5)).exp();
                        taps.push((wt, x[[p as usize, q as usize]], y[[p as usize, q as usize]]));
                    }
                }
            }
            let sw: f64 = taps.iter().map(|t| t.0).sum();
            let mx = taps.iter().map(|t| t.0 * t.1).sum::<f64>() / sw;
            let my = taps.iter().map(|t| t.0 * t.2).sum::<f64>() / sw;
            let sxx = taps.iter().map(|t| t.0 * t.1 * t.1).sum::<f64>() / sw - mx * mx;
            let syy = taps.iter().map(|t| t.0 * t.2 * t.2).sum::<f64>() / sw - my * my;
            let sxy = taps.iter().map(|t| t.0 * t.1 * t.2).sum::<f64>() / sw - mx * my;
            acc += (2.0 * mx * my + c1) * (2.0 * sxy + c2) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
        }
    }
    acc / (h * w) as f64
}

#[test]
fn ssim_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Array2::from_shape_fn((32, 32), |_| rng.random::<f64>());
    let y = Array2::from_shape_fn((32, 32), |_| rng.random::<f64>());
    let fast = ssim(&x, &y, 1.0, &SsimConfig::default()).unwrap();
    let slow = naive_ssim(&x, &y, 1.0);
    assert!((fast - slow).abs() <= 1e-8, "{fast} vs {slow}");
}

#[test]
fn metrics_are_symmetric_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = SsimConfig::default();
    for _ in 0..5 {
        let x = Array2::from_shape_fn((20, 24), |_| rng.random::<f64>());
        let y = Array2::from_shape_fn((20, 24), |_| rng.random::<f64>());
        assert_eq!(psnr(&x, &y, 1.0).unwrap(), psnr(&y, &x, 1.0).unwrap());
        let a = ssim(&x, &y, 1.0, &cfg).unwrap();
        let b = ssim(&y, &x, 1.0, &cfg).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!((-1.0..=1.0).contains(&a));
        assert_eq!(ssim(&x, &x, 1.0, &cfg).unwrap(), 1.0);
    }
}

#[test]
fn masked_metrics_never_read_outside_the_circle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 24;
    let mask = inscribed_circle_mask(n, n);
    let mut x = Array2::from_shape_fn((n, n), |_| rng.random::<f64>());
    let y = Array2::from_shape_fn((n, n), |_| rng.random::<f64>());
    for (idx, &inside) in mask.indexed_iter() {
        if !inside {
            x[idx] = f64::NAN;
        }
    }
    assert!(psnr_masked(&x, &y, 1.0, Some(&mask)).unwrap().is_finite());
    assert!(ssim_masked(&x, &y, 1.0, &SsimConfig::default(), Some(&mask)).unwrap().is_finite());
}

//! Finite-difference and hand-derived oracles for every analytic gradient.

mod common;

use common::*;
use dyntomo::inr::{
    adam_step, encode, inr_backward, inr_forward, jittered_grid, pixel_to_coord, tv_axial, tv_spatial, tv_temporal,
    AdamConfig, AdamState, EncodingConfig, InrModel, Modulation,
};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn network_gradients_match_central_differences() {
    let mut worst = 0.0f64;
    for seed in 0..24u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = small_model(seed, 3, 4, 2, 3.0);
        let feats = encode(random_coords(&mut rng, 7, 3).view(), &model.encoding).unwrap();
        let w: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, cache) = inr_forward(&model, feats.view()).unwrap();
        let g = inr_backward(&model, &cache, &w).unwrap();
        let fd = fd_model_grad(&model, &feats, &w);
        let e = rel_err(&g, &fd);
        worst = worst.max(e);
        assert!(e <= TOL, "seed {seed}: relative gradient error {e:e}");
    }
    println!("worst network gradient error {worst:e}");
}

#[test]
fn default_frequency_network_gradients_match() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let model = small_model(seed, 2, 4, 1, 30.0);
        let feats = encode(random_coords(&mut rng, 5, 2).view(), &model.encoding).unwrap();
        let w: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, cache) = inr_forward(&model, feats.view()).unwrap();
        let g = inr_backward(&model, &cache, &w).unwrap();
        let e = rel_err(&g, &fd_model_grad(&model, &feats, &w));
        assert!(e <= TOL, "seed {seed}: relative gradient error {e:e}");
    }
}

#[test]
fn offset_gradient_is_sum_of_downstream_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = small_model(9, 3, 4, 2, 3.0);
    let feats = encode(random_coords(&mut rng, 6, 3).view(), &model.encoding).unwrap();
    let w: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, cache) = inr_forward(&model, feats.view()).unwrap();
    let g = inr_backward(&model, &cache, &w).unwrap();
    // d of the last hidden layer feeds the head directly: dL/dd = s * sum_i w_i * sum_j head_j.
    let head_sum: f64 = model.head.sum();
    let expect = model.output_scale * w.iter().sum::<f64>() * head_sum;
    let d_index = model.n_params() - model.head.len() - 1 - 1;
    assert!((g[d_index] - expect).abs() <= 1e-12 * expect.abs().max(1.0), "{} vs {expect}", g[d_index]);
}

/// Straight-line evaluation of a one-hidden-layer modulated network.
fn symbolic_forward(model: &InrModel, v: &[f64]) -> f64 {
    let b = &model.encoding.b;
    let m = b.nrows();
    let mut feats = vec![0.0; 2 * m];
    for r in 0..m {
        let mut dot = 0.0;
        for c in 0..v.len() {
            dot += b[[r, c]] * v[c];
        }
        feats[r] = (2.0 * std::f64::consts::PI * dot).cos();
        feats[m + r] = (2.0 * std::f64::consts::PI * dot).sin();
    }
    let layer = &model.layers[0];
    let md = layer.modulation;
    let mut out = 0.0;
    for u in 0..layer.weight.nrows() {
        let mut z = layer.bias[u];
        for (k, f) in feats.iter().enumerate() {
            z += layer.weight[[u, k]] * f;
        }
        let h = md.a * (md.b * model.omega0 * z + md.c).sin() + md.d;
        out += model.head[u] * h;
    }
    model.output_scale * (out + model.head_bias)
}

#[test]
fn forward_matches_symbolic_composition() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = small_model(seed, 2, 4, 1, 30.0);
        let coords = random_coords(&mut rng, 9, 2);
        let out = model.predict(coords.view()).unwrap();
        for (i, row) in coords.rows().into_iter().enumerate() {
            let expect = symbolic_forward(&model, &row.to_vec());
            assert!((out[i] - expect).abs() <= 1e-12, "{} vs {expect}", out[i]);
        }
    }
}

#[test]
fn neutral_modulation_is_a_plain_sine_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut model = small_model(3, 3, 8, 3, 30.0);
    for l in &mut model.layers {
        l.modulation = Modulation::default();
    }
    let feats = encode(random_coords(&mut rng, 11, 3).view(), &model.encoding).unwrap();
    let (out, _) = inr_forward(&model, feats.view()).unwrap();
    let mut h = feats.clone();
    for l in &model.layers {
        let z = h.dot(&l.weight.t()) + &l.bias;
        h = z.mapv(|v| (model.omega0 * v).sin());
    }
    let plain: Array1<f64> = (h.dot(&model.head) + model.head_bias) * model.output_scale;
    let diff = (&out - &plain).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(diff <= 1e-12, "max diff {diff:e}");
}

#[test]
fn collapsed_last_layer_gives_constant_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = small_model(4, 3, 6, 2, 30.0);
    let last = model.layers.last_mut().unwrap();
    last.modulation.a = 0.0;
    last.modulation.d = 0.7;
    let out = model.predict(random_coords(&mut rng, 20, 3).view()).unwrap();
    let expect = model.output_scale * (0.7 * model.head.sum() + model.head_bias);
    assert!(out.iter().all(|v| (v - expect).abs() < 1e-12));
}

#[test]
fn encoding_of_origin_and_range() {
    let enc = dyntomo::inr::FourierEncoding::new(&EncodingConfig {
        mapping_size: 5,
        scale: 5.0,
        input_dim: 3,
        time_scale: 5.0,
        seed: 1,
    })
    .unwrap();
    let f = encode(Array2::zeros((1, 3)).view(), &enc).unwrap();
    assert_eq!(f.row(0).to_vec(), [vec![1.0; 5], vec![0.0; 5]].concat());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let f = encode(random_coords(&mut rng, 50, 3).view(), &enc).unwrap();
    assert!(f.iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn adam_on_quadratic_follows_reference_trajectory() {
    let cfg = AdamConfig {
        lr: 0.1,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(1, cfg);
    let mut p = [1.0];
    // Independent scalar Adam.
    let (mut m, mut v, mut q) = (0.0f64, 0.0f64, 1.0f64);
    for t in 1..=100 {
        let g = 2.0 * p[0];
        adam_step(&mut state, &mut p, &[g]).unwrap();
        let gq = 2.0 * q;
        m = 0.9 * m + 0.1 * gq;
        v = 0.999 * v + 0.001 * gq * gq;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        q -= 0.1 * mh / (vh.sqrt() + 1e-8);
        assert!((p[0] - q).abs() < 1e-12);
    }
    assert!(p[0].abs() < 0.1, "|p| = {}", p[0].abs());
}

#[test]
fn spatial_tv_gradient_matches() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = random_image(&mut rng, 5 + (seed as usize % 3), 6);
        let (_, g) = tv_spatial(&img, 1e-6).unwrap();
        let fd = fd_image(&img, |x| tv_spatial(x, 1e-6).unwrap().0);
        let e = rel_err(g.as_slice().unwrap(), fd.as_slice().unwrap());
        assert!(e <= TOL, "seed {seed}: {e:e}");
    }
}

#[test]
fn temporal_tv_gradient_matches() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_image(&mut rng, 4, 7);
        let b = random_image(&mut rng, 4, 7);
        let (_, g) = tv_temporal(&a, &b, 1e-6).unwrap();
        let fd = fd_image(&a, |x| tv_temporal(x, &b, 1e-6).unwrap().0);
        let e = rel_err(g.as_slice().unwrap(), fd.as_slice().unwrap());
        assert!(e <= TOL, "seed {seed}: {e:e}");
    }
}

#[test]
fn axial_tv_gradient_matches() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slices: Vec<Array2<f64>> = (0..3).map(|_| random_image(&mut rng, 4, 5)).collect();
        let (_, grads) = tv_axial(&slices, 1e-6).unwrap();
        for z in 0..slices.len() {
            let fd = fd_image(&slices[z], |x| {
                let mut s = slices.clone();
                s[z] = x.clone();
                tv_axial(&s, 1e-6).unwrap().0
            });
            let e = rel_err(grads[z].as_slice().unwrap(), fd.as_slice().unwrap());
            assert!(e <= TOL, "seed {seed}, slice {z}: {e:e}");
        }
    }
}

#[test]
fn tv_losses_are_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let a = random_image(&mut rng, 6, 6);
        let b = random_image(&mut rng, 6, 6);
        assert!(tv_spatial(&a, 1e-6).unwrap().0 >= 0.0);
        assert!(tv_temporal(&a, &b, 1e-6).unwrap().0 >= 0.0);
        assert!(tv_axial(&[a, b], 1e-6).unwrap().0 >= 0.0);
    }
}

#[test]
fn jitter_is_unbiased() {
    let (h, w, s) = (8, 8, 2);
    let n = 10_000;
    let lattice = jittered_grid::<ChaCha8Rng>(h, w, s, None).unwrap();
    let mut sum = Array2::<f64>::zeros(lattice.dim());
    for seed in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sum += &jittered_grid(h, w, s, Some(&mut rng)).unwrap();
    }
    let mean = sum / n as f64;
    // Uniform jitter over one cell: std s/sqrt(12) pixels, 2/w per pixel in coordinates.
    let sigma = s as f64 / 12f64.sqrt() * 2.0 / w as f64 / (n as f64).sqrt();
    for (m, l) in mean.iter().zip(lattice.iter()) {
        assert!((m - l).abs() <= 3.0 * sigma, "{m} vs {l}");
    }
    assert_eq!(pixel_to_coord(-0.5, 8), -1.0);
}

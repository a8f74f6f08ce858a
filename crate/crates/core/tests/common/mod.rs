//! Oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use dyntomo::inr::{inr_forward, EncodingConfig, InrConfig, InrModel, Modulation};
use dyntomo::tomo::{radon_forward, ProjectorGeometry};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-6;

pub fn small_model(seed: u64, input_dim: usize, hidden: usize, layers: usize, omega0: f64) -> InrModel {
    let cfg = InrConfig {
        hidden,
        layers,
        omega0,
        encoding: EncodingConfig {
            mapping_size: 3,
            scale: 1.0,
            input_dim,
            time_scale: 5.0,
            seed,
        },
        seed,
    };
    let mut m = InrModel::new(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    for l in &mut m.layers {
        l.modulation = Modulation {
            a: rng.random_range(0.5..1.5),
            b: rng.random_range(0.5..1.5),
            c: rng.random_range(-0.5..0.5),
            d: rng.random_range(-0.5..0.5),
        };
    }
    m.head_bias = rng.random_range(-0.2..0.2);
    m.output_scale = rng.random_range(0.5..2.0);
    m
}

pub fn random_coords(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, dim), |_| rng.random_range(-1.0..1.0))
}

/// Relative error `||a - b||_inf / ||a||_inf`.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

pub fn fd_model_grad(model: &InrModel, feats: &Array2<f64>, w: &[f64]) -> Vec<f64> {
    let loss = |m: &InrModel| -> f64 {
        let (out, _) = inr_forward(m, feats.view()).unwrap();
        out.iter().zip(w).map(|(o, w)| o * w).sum()
    };
    let p0 = model.params();
    let mut m = model.clone();
    (0..p0.len())
        .map(|i| {
            let mut p = p0.clone();
            p[i] = p0[i] + H;
            m.set_params(&p).unwrap();
            let up = loss(&m);
            p[i] = p0[i] - H;
            m.set_params(&p).unwrap();
            let down = loss(&m);
            (up - down) / (2.0 * H)
        })
        .collect()
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array2<f64> {
    Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..1.0))
}

pub fn fd_image<F: Fn(&Array2<f64>) -> f64>(img: &Array2<f64>, f: F) -> Array2<f64> {
    let mut g = Array2::zeros(img.dim());
    let mut x = img.clone();
    for idx in ndarray::indices(img.dim()) {
        let v = img[idx];
        x[idx] = v + H;
        let up = f(&x);
        x[idx] = v - H;
        let down = f(&x);
        x[idx] = v;
        g[idx] = (up - down) / (2.0 * H);
    }
    g
}

/// Columns are projections of unit images.
pub fn dense_operator(geom: &ProjectorGeometry) -> DMatrix<f64> {
    let n = geom.height * geom.width;
    let m = geom.n_angles() * geom.n_det;
    let mut p = DMatrix::zeros(m, n);
    for j in 0..n {
        let mut e = Array2::zeros((geom.height, geom.width));
        e[[j / geom.width, j % geom.width]] = 1.0;
        let col = radon_forward(&e, geom).unwrap();
        for (i, v) in col.iter().enumerate() {
            p[(i, j)] = *v;
        }
    }
    p
}

pub fn direct_solve(p: &DMatrix<f64>, w: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>, mu: f64) -> DVector<f64> {
    let pw = DMatrix::from_diagonal(w) * p;
    let a = p.transpose() * &pw + DMatrix::identity(p.ncols(), p.ncols()) * mu;
    let b = p.transpose() * w.component_mul(y) + z * mu;
    if mu > 0.0 {
        a.cholesky().expect("SPD").solve(&b)
    } else {
        // Minimum-norm least squares, which CGLS from zero converges to.
        a.svd(true, true).solve(&b, 1e-10).unwrap()
    }
}


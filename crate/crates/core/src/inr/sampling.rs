//! Evaluation grids in normalised `[-1, 1]` coordinates.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

/// Continuous pixel coordinate (pixel centers at integers) to `[-1, 1]`.
pub fn pixel_to_coord(p: f64, n: usize) -> f64 {
    (2.0 * (p + 0.5) / n as f64 - 1.0).clamp(-1.0, 1.0)
}

/// Coarse-cell centers of an `h x w` image pooled by `s`, as `(x, y)` rows in row-major cell order.
///
/// With `rng` each point moves by an independent uniform offset in
/// `(-s/2, s/2)` pixels per axis.
pub fn jittered_grid<R: Rng + ?Sized>(
    h: usize,
    w: usize,
    s: usize,
    mut rng: Option<&mut R>,
) -> Result<Array2<f64>> {
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::invalid(format!(
            "downsample factor {s} must divide the {h}x{w} grid"
        )));
    }
    let (hc, wc) = (h / s, w / s);
    let half = 0.5 * s as f64;
    let mut out = Array2::zeros((hc * wc, 2));
    for i in 0..hc {
        for j in 0..wc {
            let mut py = (s * i) as f64 + 0.5 * (s as f64 - 1.0);
            let mut px = (s * j) as f64 + 0.5 * (s as f64 - 1.0);
            if let Some(r) = rng.as_deref_mut() {
                px += r.random_range(-half..half);
                py += r.random_range(-half..half);
            }
            let row = i * wc + j;
            out[[row, 0]] = pixel_to_coord(px, w);
            out[[row, 1]] = pixel_to_coord(py, h);
        }
    }
    Ok(out)
}

/// Pixel-center lattice of an `h x w` image.
pub fn full_grid(h: usize, w: usize) -> Array2<f64> {
    jittered_grid::<rand_chacha::ChaCha8Rng>(h, w, 1, None).expect("factor 1 always divides")
}

/// `s x s` mean pooling.
pub fn downsample_mean(image: &Array2<f64>, s: usize) -> Result<Array2<f64>> {
    let (h, w) = image.dim();
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::invalid(format!("pool factor {s} must divide {h}x{w}")));
    }
    let norm = 1.0 / (s * s) as f64;
    Ok(Array2::from_shape_fn((h / s, w / s), |(i, j)| {
        let mut acc = 0.0;
        for a in 0..s {
            for b in 0..s {
                acc += image[[i * s + a, j * s + b]];
            }
        }
        acc * norm
    }))
}

//! Charbonnier-smoothed total variation.
//!
//! `phi(d) = sqrt(d^2 + eps^2) - eps` stands in for `|d|`; it is zero at
//! `d = 0`, so constant inputs cost exactly nothing.

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TvConfig {
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub lambda_a: f64,
    /// Charbonnier smoothing.
    pub eps_tv: f64,
    /// Spatial TV is active for outer iterations `k > k_s`.
    pub k_s: usize,
    /// Temporal TV is active for outer iterations `k > k_t`.
    pub k_t: usize,
}

impl Default for TvConfig {
    fn default() -> Self {
        Self {
            lambda_s: 1e-3,
            lambda_t: 1e-3,
            lambda_a: 1e-3,
            eps_tv: 1e-6,
            k_s: 2,
            k_t: 2,
        }
    }
}

impl TvConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda_s) || !ok(self.lambda_t) || !ok(self.lambda_a) {
            return Err(Error::invalid("TV weights must be finite and >= 0"));
        }
        if !(self.eps_tv > 0.0) {
            return Err(Error::invalid("eps_tv must be > 0"));
        }
        Ok(())
    }
}

#[inline]
fn phi(d: f64, eps: f64) -> (f64, f64) {
    let r = (d * d + eps * eps).sqrt();
    (r - eps, d / r)
}

/// Spatial TV of one image and its gradient.
///
/// Forward differences are taken on the leading `(H-1) x (W-1)` block, where
/// both directions exist; the sum is divided by `H W`.
pub fn tv_spatial(image: &Array2<f64>, eps: f64) -> Result<(f64, Array2<f64>)> {
    let (h, w) = image.dim();
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!("spatial TV needs at least 2x2 pixels, got {h}x{w}")));
    }
    let norm = 1.0 / (h * w) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros((h, w));
    for i in 0..h - 1 {
        for j in 0..w - 1 {
            let v = image[[i, j]];
            let (lx, gx) = phi(image[[i, j + 1]] - v, eps);
            let (ly, gy) = phi(image[[i + 1, j]] - v, eps);
            loss += lx + ly;
            grad[[i, j + 1]] += gx * norm;
            grad[[i + 1, j]] += gy * norm;
            grad[[i, j]] -= (gx + gy) * norm;
        }
    }
    Ok((loss * norm, grad))
}

/// Mean smoothed absolute difference to a detached previous frame; gradient w.r.t. `frame` only.
pub fn tv_temporal(frame: &Array2<f64>, previous: &Array2<f64>, eps: f64) -> Result<(f64, Array2<f64>)> {
    if frame.dim() != previous.dim() {
        return Err(Error::dims("temporal TV frames", format!("{:?}", frame.dim()), format!("{:?}", previous.dim())));
    }
    let norm = 1.0 / frame.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(frame.dim());
    ndarray::Zip::from(&mut grad)
        .and(frame)
        .and(previous)
        .for_each(|g, &a, &b| {
            let (l, d) = phi(a - b, eps);
            loss += l;
            *g = d * norm;
        });
    Ok((loss * norm, grad))
}

/// TV along the axial direction of a stack of slices, averaged over adjacent pairs.
///
/// Gradients flow into every slice. Fewer than two slices cost nothing.
pub fn tv_axial(slices: &[Array2<f64>], eps: f64) -> Result<(f64, Vec<Array2<f64>>)> {
    let mut grads: Vec<Array2<f64>> = slices.iter().map(|s| Array2::zeros(s.dim())).collect();
    if slices.len() < 2 {
        return Ok((0.0, grads));
    }
    let dim = slices[0].dim();
    if let Some(s) = slices.iter().find(|s| s.dim() != dim) {
        return Err(Error::dims("axial slices", format!("{dim:?}"), format!("{:?}", s.dim())));
    }
    let norm = 1.0 / ((slices.len() - 1) * slices[0].len().max(1)) as f64;
    let mut loss = 0.0;
    for z in 0..slices.len() - 1 {
        let (lo, hi) = grads.split_at_mut(z + 1);
        ndarray::Zip::from(&mut lo[z])
            .and(&mut hi[0])
            .and(&slices[z])
            .and(&slices[z + 1])
            .for_each(|g0, g1, &a, &b| {
                let (l, d) = phi(b - a, eps);
                loss += l;
                *g1 += d * norm;
                *g0 -= d * norm;
            });
    }
    Ok((loss * norm, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_cost_nothing() {
        let c = Array2::from_elem((5, 6), 0.7);
        let (l, g) = tv_spatial(&c, 1e-6).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
        assert_eq!(tv_temporal(&c, &c, 1e-6).unwrap().0, 0.0);
        assert_eq!(tv_axial(&[c.clone(), c.clone()], 1e-6).unwrap().0, 0.0);
        assert_eq!(tv_axial(&[c], 1e-6).unwrap().0, 0.0);
    }

    #[test]
    fn step_edge_closed_form() {
        let n = 10;
        let h = 0.8;
        let img = Array2::from_shape_fn((n, n), |(_, j)| if j < 4 { 0.0 } else { h });
        let (l, _) = tv_spatial(&img, 1e-12).unwrap();
        let expect = (n - 1) as f64 * h / (n * n) as f64;
        assert!((l - expect).abs() < 1e-10);
    }

    #[test]
    fn constant_offset_costs_its_magnitude() {
        let a = Array2::from_elem((3, 3), 1.0);
        let b = Array2::from_elem((3, 3), 1.25);
        assert!((tv_temporal(&b, &a, 1e-12).unwrap().0 - 0.25).abs() < 1e-10);
        assert!(tv_temporal(&a, &Array2::zeros((2, 3)), 1e-6).is_err());
        assert!(tv_spatial(&Array2::zeros((1, 3)), 1e-6).is_err());
    }
}

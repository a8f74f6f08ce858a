//! Parallel-beam projector pair and filtered back-projection.
//!
//! The forward projector marches along each ray at a fixed step and gathers
//! bilinearly interpolated pixel values. The adjoint walks the very same
//! samples and scatters with the very same weights, so the pair is an exact
//! transpose up to floating-point rounding.
//!
//! Conventions: the rotation axis sits at pixel coordinate
//! `((W - 1) / 2, (H - 1) / 2)`, `x` runs along columns and `y` along rows.
//! The ray at angle `theta` and detector offset `s` (mm) is the line
//! `s * (cos theta, sin theta) + tau * (-sin theta, cos theta)`.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Angles per deterministic partial image in the adjoint reduction.
const ADJOINT_ANGLE_BLOCK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectorGeometry {
    pub height: usize,
    pub width: usize,
    /// Pixel edge, mm.
    pub pixel_size: f64,
    pub n_det: usize,
    /// Detector bin spacing, mm.
    pub det_spacing: f64,
    /// Projection angles, radians in `[0, pi)`.
    pub angles: Vec<f64>,
    /// Ray marching step as a fraction of the pixel size.
    pub step: f64,
}

impl ProjectorGeometry {
    /// Square-pixel geometry with detector spacing equal to the pixel size and step 0.5.
    pub fn new(
        height: usize,
        width: usize,
        pixel_size: f64,
        n_det: usize,
        angles: Vec<f64>,
    ) -> Result<Self> {
        let g = Self {
            height,
            width,
            pixel_size,
            n_det,
            det_spacing: pixel_size,
            angles,
            step: 0.5,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.n_det == 0 {
            return Err(Error::invalid("image size and n_det must be >= 1"));
        }
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.pixel_size) || !pos(self.det_spacing) || !pos(self.step) {
            return Err(Error::invalid(
                "pixel_size, det_spacing and step must be finite and > 0",
            ));
        }
        if let Some(a) = self.angles.iter().find(|a| !(0.0..PI).contains(*a)) {
            return Err(Error::invalid(format!("angle {a} outside [0, pi)")));
        }
        Ok(())
    }

    /// Same grid and detector, different angle set.
    pub fn with_angles(&self, angles: Vec<f64>) -> Result<Self> {
        let g = Self {
            angles,
            ..self.clone()
        };
        g.validate()?;
        Ok(g)
    }

    pub fn n_angles(&self) -> usize {
        self.angles.len()
    }

    /// Detector count that covers the image diagonal, `ceil(sqrt(2) * W) + 1`.
    pub fn full_coverage_det(width: usize) -> usize {
        (std::f64::consts::SQRT_2 * width as f64).ceil() as usize + 1
    }

    fn check_image(&self, image: &ArrayView2<f64>) -> Result<()> {
        if image.dim() != (self.height, self.width) {
            return Err(Error::dims(
                "image",
                format!("{}x{}", self.height, self.width),
                format!("{:?}", image.dim()),
            ));
        }
        Ok(())
    }

    fn check_sinogram(&self, sino: &ArrayView2<f64>) -> Result<()> {
        if sino.dim() != (self.n_angles(), self.n_det) {
            return Err(Error::dims(
                "sinogram",
                format!("{}x{}", self.n_angles(), self.n_det),
                format!("{:?}", sino.dim()),
            ));
        }
        Ok(())
    }

    /// Calls `visit(pixel_index, weight)` for every bilinear tap of one ray.
    ///
    /// The weight already includes the step length in mm. Both projector
    /// directions go through here.
    #[inline]
    fn walk_ray(&self, cos_t: f64, sin_t: f64, det: usize, mut visit: impl FnMut(usize, f64)) {
        let (h, w) = (self.height as f64, self.width as f64);
        let ps = self.pixel_size;
        let s = (det as f64 - 0.5 * (self.n_det as f64 - 1.0)) * self.det_spacing / ps;
        let dtau = self.step; // in pixels
        let cx = 0.5 * (w - 1.0);
        let cy = 0.5 * (h - 1.0);
        // Point on the ray (pixel units): (cx + s cos - tau sin, cy + s sin + tau cos).
        let x0 = cx + s * cos_t;
        let y0 = cy + s * sin_t;
        // Samples live on the fixed lattice tau = i * dtau; clip the index range
        // to the slab (-1, W) x (-1, H), which holds every nonzero tap.
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for (origin, dir, extent) in [(x0, -sin_t, w), (y0, cos_t, h)] {
            if dir.abs() < 1e-12 {
                if origin <= -1.0 || origin >= extent {
                    return;
                }
            } else {
                let a = (-1.0 - origin) / dir;
                let b = (extent - origin) / dir;
                lo = lo.max(a.min(b));
                hi = hi.min(a.max(b));
            }
        }
        if lo >= hi {
            return;
        }
        let i_lo = (lo / dtau).floor() as i64;
        let i_hi = (hi / dtau).ceil() as i64;
        let weight = self.step * ps;
        let (wi, hi_px) = (self.width as i64, self.height as i64);
        for i in i_lo..=i_hi {
            let tau = i as f64 * dtau;
            let x = x0 - tau * sin_t;
            let y = y0 + tau * cos_t;
            let xf = x.floor();
            let yf = y.floor();
            let (c0, r0) = (xf as i64, yf as i64);
            if c0 < -1 || r0 < -1 || c0 >= wi || r0 >= hi_px {
                continue;
            }
            let fx = x - xf;
            let fy = y - yf;
            let taps = [
                (r0, c0, (1.0 - fy) * (1.0 - fx)),
                (r0, c0 + 1, (1.0 - fy) * fx),
                (r0 + 1, c0, fy * (1.0 - fx)),
                (r0 + 1, c0 + 1, fy * fx),
            ];
            for (r, c, wgt) in taps {
                if r >= 0 && c >= 0 && r < hi_px && c < wi && wgt != 0.0 {
                    visit((r * wi + c) as usize, wgt * weight);
                }
            }
        }
    }
}

/// Line integrals of `image` along every (angle, detector) ray.
pub fn radon_forward(image: &Array2<f64>, geom: &ProjectorGeometry) -> Result<Array2<f64>> {
    geom.check_image(&image.view())?;
    let pixels = image
        .as_slice()
        .map(std::borrow::Cow::Borrowed)
        .unwrap_or_else(|| std::borrow::Cow::Owned(image.iter().copied().collect()));
    let mut sino = Array2::zeros((geom.n_angles(), geom.n_det));
    sino.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(geom.angles.par_iter())
        .for_each(|(mut row, &theta)| {
            let (sin_t, cos_t) = theta.sin_cos();
            for (det, out) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                geom.walk_ray(cos_t, sin_t, det, |idx, w| acc += w * pixels[idx]);
                *out = acc;
            }
        });
    Ok(sino)
}

/// Exact transpose of [`radon_forward`].
///
/// Angles are processed in fixed blocks, each block scattering into its own
/// partial image; partials are summed in block order, so the result does not
/// depend on the thread count.
pub fn radon_adjoint(sinogram: &Array2<f64>, geom: &ProjectorGeometry) -> Result<Array2<f64>> {
    geom.check_sinogram(&sinogram.view())?;
    let n_pix = geom.height * geom.width;
    let blocks: Vec<Vec<f64>> = (0..geom.n_angles())
        .collect::<Vec<_>>()
        .par_chunks(ADJOINT_ANGLE_BLOCK)
        .map(|chunk| {
            let mut part = vec![0.0; n_pix];
            for &a in chunk {
                let (sin_t, cos_t) = geom.angles[a].sin_cos();
                for det in 0..geom.n_det {
                    let y = sinogram[[a, det]];
                    if y == 0.0 {
                        continue;
                    }
                    geom.walk_ray(cos_t, sin_t, det, |idx, w| part[idx] += w * y);
                }
            }
            part
        })
        .collect();
    let mut out = vec![0.0; n_pix];
    for part in &blocks {
        for (o, p) in out.iter_mut().zip(part) {
            *o += p;
        }
    }
    Ok(Array2::from_shape_vec((geom.height, geom.width), out).expect("pixel count matches"))
}

/// Frequency-domain window applied on top of the ramp.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RampFilter {
    #[default]
    Ramlak,
    Hann,
}

/// Discrete ramp response on `n` FFT bins (twice the band-limited ramp, in
/// cycles per sample), built from the spatial Ram-Lak kernel.
pub fn ramp_response(n: usize, filter: RampFilter) -> Vec<f64> {
    let mut kernel: Vec<Complex<f64>> = (0..n)
        .map(|i| {
            let m = i.min(n - i);
            let v = if i == 0 {
                0.25
            } else if m % 2 == 1 {
                -1.0 / (PI * m as f64).powi(2)
            } else {
                0.0
            };
            Complex::new(v, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut kernel);
    kernel
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let ramp = 2.0 * k.re;
            match filter {
                RampFilter::Ramlak => ramp,
                RampFilter::Hann => ramp * 0.5 * (1.0 + (2.0 * PI * i as f64 / n as f64).cos()),
            }
        })
        .collect()
}

/// Ramp-filters every projection row (zero-padded to a power of two >= 2 n_det).
pub fn filter_sinogram(
    sinogram: &Array2<f64>,
    det_spacing: f64,
    filter: RampFilter,
) -> Array2<f64> {
    let (n_angles, n_det) = sinogram.dim();
    let n = (2 * n_det).next_power_of_two().max(64);
    let response = ramp_response(n, filter);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut out = Array2::zeros((n_angles, n_det));
    let scale = 1.0 / (n as f64 * det_spacing);
    let mut buf = vec![Complex::default(); n];
    for (row, mut dst) in sinogram.outer_iter().zip(out.outer_iter_mut()) {
        buf.iter_mut().for_each(|v| *v = Complex::default());
        for (b, &v) in buf.iter_mut().zip(row.iter()) {
            b.re = v;
        }
        fwd.process(&mut buf);
        for (b, r) in buf.iter_mut().zip(&response) {
            *b *= *r;
        }
        inv.process(&mut buf);
        for (d, b) in dst.iter_mut().zip(&buf) {
            *d = b.re * scale;
        }
    }
    out
}

/// Filtered back-projection over the geometry's angle set.
pub fn fbp(sinogram: &Array2<f64>, geom: &ProjectorGeometry, filter: RampFilter) -> Result<Array2<f64>> {
    geom.check_sinogram(&sinogram.view())?;
    if geom.n_angles() == 0 {
        return Err(Error::invalid("fbp needs at least one angle"));
    }
    let filtered = filter_sinogram(sinogram, geom.det_spacing, filter);
    let mut img = radon_adjoint(&filtered, geom)?;
    let scale = PI / (2.0 * geom.n_angles() as f64) * geom.det_spacing
        / (geom.pixel_size * geom.pixel_size);
    img.mapv_inplace(|v| v * scale);
    Ok(img)
}

/// `true` inside the circle inscribed in an `h x w` grid.
pub fn inscribed_circle_mask(h: usize, w: usize) -> Array2<bool> {
    let cy = 0.5 * (h as f64 - 1.0);
    let cx = 0.5 * (w as f64 - 1.0);
    let r = 0.5 * h.min(w) as f64;
    Array2::from_shape_fn((h, w), |(i, j)| {
        let dy = i as f64 - cy;
        let dx = j as f64 - cx;
        dx * dx + dy * dy <= r * r
    })
}

/// Centered disk of `radius` pixels, anti-aliased by `ss x ss` supersampling.
pub fn disk_phantom(h: usize, w: usize, radius: f64, value: f64, ss: usize) -> Array2<f64> {
    let cy = 0.5 * (h as f64 - 1.0);
    let cx = 0.5 * (w as f64 - 1.0);
    let ss = ss.max(1);
    Array2::from_shape_fn((h, w), |(i, j)| {
        let mut hits = 0usize;
        for a in 0..ss {
            for b in 0..ss {
                let y = i as f64 - 0.5 + (a as f64 + 0.5) / ss as f64 - cy;
                let x = j as f64 - 0.5 + (b as f64 + 0.5) / ss as f64 - cx;
                if x * x + y * y <= radius * radius {
                    hits += 1;
                }
            }
        }
        value * hits as f64 / (ss * ss) as f64
    })
}

/// Evenly spaced angles `j * pi / n`.
pub fn uniform_angles(n: usize) -> Vec<f64> {
    (0..n).map(|j| j as f64 * PI / n as f64).collect()
}

/// Relative dot-product defect `|<Px, y> - <x, P^T y>| / (||Px|| ||y||)`.
pub fn adjoint_defect(x: &Array2<f64>, y: &Array2<f64>, geom: &ProjectorGeometry) -> Result<f64> {
    let px = radon_forward(x, geom)?;
    let pty = radon_adjoint(y, geom)?;
    let lhs: f64 = px.iter().zip(y).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.iter().zip(&pty).map(|(a, b)| a * b).sum();
    let norm = px.iter().map(|v| v * v).sum::<f64>().sqrt() * y.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(if norm == 0.0 { 0.0 } else { (lhs - rhs).abs() / norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn(shape, |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn zero_in_zero_out() {
        let g = ProjectorGeometry::new(16, 16, 1.0, 16, uniform_angles(8)).unwrap();
        assert!(radon_forward(&Array2::zeros((16, 16)), &g).unwrap().iter().all(|&v| v == 0.0));
        let z = Array2::zeros((8, 16));
        assert!(radon_adjoint(&z, &g).unwrap().iter().all(|&v| v == 0.0));
        assert!(fbp(&z, &g, RampFilter::Ramlak).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_mismatched_dims_and_angles() {
        let g = ProjectorGeometry::new(16, 16, 1.0, 16, uniform_angles(8)).unwrap();
        assert!(radon_forward(&Array2::zeros((8, 16)), &g).is_err());
        assert!(radon_adjoint(&Array2::zeros((8, 15)), &g).is_err());
        assert!(ProjectorGeometry::new(4, 4, 1.0, 4, vec![PI]).is_err());
    }

    #[test]
    fn adjoint_identity_on_odd_geometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (h, w, nd, na, ps) in [(13, 21, 9, 7, 0.5), (32, 16, 40, 5, 0.003), (9, 9, 1, 3, 2.0)] {
            let mut g = ProjectorGeometry::new(h, w, ps, nd, uniform_angles(na)).unwrap();
            g.det_spacing = 0.7 * ps;
            g.step = 0.37;
            let x = random((h, w), &mut rng);
            let y = random((na, nd), &mut rng);
            assert!(adjoint_defect(&x, &y, &g).unwrap() < 1e-12);
        }
    }

    #[test]
    fn single_ray_column_of_transpose() {
        let g = ProjectorGeometry::new(10, 10, 1.0, 7, vec![0.3, 1.2]).unwrap();
        let mut y = Array2::zeros((2, 7));
        y[[1, 4]] = 1.0;
        let back = radon_adjoint(&y, &g).unwrap();
        // Entry (i) of the back-projection is the forward response of pixel i on that ray.
        for idx in [0usize, 37, 55, 99] {
            let mut e = Array2::zeros((10, 10));
            e[[idx / 10, idx % 10]] = 1.0;
            let p = radon_forward(&e, &g).unwrap();
            assert!((p[[1, 4]] - back[[idx / 10, idx % 10]]).abs() < 1e-14);
        }
    }

    #[test]
    fn ramp_has_no_dc_gain() {
        let r = ramp_response(256, RampFilter::Ramlak);
        let peak = r.iter().cloned().fold(0.0, f64::max);
        assert!(r[0].abs() < 1e-2 * peak);
        let h = ramp_response(256, RampFilter::Hann);
        assert!(h[128].abs() < 1e-12);
    }
}

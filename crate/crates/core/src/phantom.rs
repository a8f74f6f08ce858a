//! Spinodal-decomposition phantoms.
//!
//! A periodic concentration field is evolved with a semi-implicit spectral
//! Cahn-Hilliard scheme, then thresholded into a two-phase attenuation map.
//! The chemical free energy is the double well `f(c) = W c^2 (1 - c)^2`, the
//! mobility is constant, and the stiff `eps * k^4` term is treated implicitly:
//!
//! ```text
//! c_hat' = (c_hat - dt M k^2 fft(f'(c))) / (1 + dt M eps k^4)
//! ```

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{ensure_finite, Error, Result};

/// Attenuation of the alpha-Al matrix at 60 keV, mm^-1.
pub const MU_AL: f64 = 0.0750;
/// Attenuation of the Al2Cu precipitate at 60 keV, mm^-1.
pub const MU_AL2CU: f64 = 0.4303;
/// Default voxel edge, mm (3 um).
pub const DEFAULT_PIXEL_SIZE_MM: f64 = 0.003;

/// Scalar concentration field on a periodic, unit-spaced grid.
///
/// Values are stored row-major with the last axis fastest. Every axis length
/// is a power of two.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseField {
    shape: Vec<usize>,
    values: Vec<f64>,
    /// Number of solver steps applied since the initial state.
    pub step: u64,
}

impl PhaseField {
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        if !(2..=3).contains(&shape.len()) {
            return Err(Error::invalid(format!(
                "phase field must be 2D or 3D, got {} axes",
                shape.len()
            )));
        }
        if let Some(&bad) = shape.iter().find(|&&n| n < 2 || !n.is_power_of_two()) {
            return Err(Error::invalid(format!(
                "phase-field axis length {bad} is not a power of two >= 2"
            )));
        }
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::dims("phase-field values", n, values.len()));
        }
        ensure_finite("phase field", &values)?;
        Ok(Self {
            shape: shape.to_vec(),
            values,
            step: 0,
        })
    }

    pub fn uniform(shape: &[usize], c: f64) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![c; n])
    }

    /// Homogeneous composition `c0` plus uniform noise in `[-amplitude, amplitude]`.
    pub fn spinodal_initial(shape: &[usize], c0: f64, amplitude: f64, seed: u64) -> Result<Self> {
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..n)
            .map(|_| c0 + amplitude * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        Self::new(shape, values)
    }

    pub fn from_array2(a: &Array2<f64>) -> Result<Self> {
        let (h, w) = a.dim();
        Self::new(&[h, w], a.iter().copied().collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// The field as an `H x W` image. Fails for 3D fields.
    pub fn to_array2(&self) -> Result<Array2<f64>> {
        match self.shape[..] {
            [h, w] => Ok(Array2::from_shape_vec((h, w), self.values.clone())
                .expect("shape validated at construction")),
            _ => Err(Error::invalid("expected a 2D phase field")),
        }
    }

    /// Axial slice `z` of a 3D field (axes ordered z, y, x).
    pub fn slice_z(&self, z: usize) -> Result<Array2<f64>> {
        match self.shape[..] {
            [nz, h, w] if z < nz => {
                let start = z * h * w;
                Ok(Array2::from_shape_vec((h, w), self.values[start..start + h * w].to_vec())
                    .expect("slice length matches"))
            }
            [nz, _, _] => Err(Error::invalid(format!("slice {z} out of range 0..{nz}"))),
            _ => Err(Error::invalid("expected a 3D phase field")),
        }
    }

    /// Inverse of the mean gradient magnitude (periodic central differences).
    ///
    /// Grows as the microstructure coarsens.
    pub fn characteristic_length(&self) -> f64 {
        let nd = self.shape.len();
        let strides = strides(&self.shape);
        let mut total = 0.0;
        let mut idx = vec![0usize; nd];
        for (flat, _) in self.values.iter().enumerate() {
            unravel(flat, &self.shape, &mut idx);
            let mut g2 = 0.0;
            for a in 0..nd {
                let n = self.shape[a];
                let up = flat - idx[a] * strides[a] + ((idx[a] + 1) % n) * strides[a];
                let dn = flat - idx[a] * strides[a] + ((idx[a] + n - 1) % n) * strides[a];
                let d = 0.5 * (self.values[up] - self.values[dn]);
                g2 += d * d;
            }
            total += g2.sqrt();
        }
        let mean = total / self.values.len() as f64;
        if mean == 0.0 {
            f64::INFINITY
        } else {
            1.0 / mean
        }
    }
}

/// Cahn-Hilliard parameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChParams {
    /// Constant mobility `M`.
    pub mobility: f64,
    /// Gradient energy coefficient `eps` (sets interface width).
    pub epsilon: f64,
    pub dt: f64,
    /// Height `W` of the double well `W c^2 (1 - c)^2`.
    pub barrier: f64,
}

impl Default for ChParams {
    fn default() -> Self {
        Self {
            mobility: 1.0,
            epsilon: 1.0,
            dt: 0.5,
            barrier: 1.0,
        }
    }
}

impl ChParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.mobility) || !ok(self.epsilon) || !ok(self.barrier) {
            return Err(Error::invalid(
                "mobility, epsilon and barrier must be finite and > 0",
            ));
        }
        if !ok(self.dt) {
            return Err(Error::invalid(format!("dt must be > 0, got {}", self.dt)));
        }
        Ok(())
    }

    /// `f'(c)` of the double well.
    pub fn chemical_potential(&self, c: f64) -> f64 {
        2.0 * self.barrier * c * (1.0 - c) * (1.0 - 2.0 * c)
    }

    /// `f''(c)` of the double well.
    pub fn curvature(&self, c: f64) -> f64 {
        self.barrier * (2.0 - 12.0 * c + 12.0 * c * c)
    }

    /// Per-mode amplification of the scheme linearised about a uniform state `c_bar`.
    pub fn linear_amplification(&self, k2: f64, c_bar: f64) -> f64 {
        let m = self.mobility * self.dt;
        (1.0 - m * k2 * self.curvature(c_bar)) / (1.0 + m * self.epsilon * k2 * k2)
    }
}

/// Squared angular wavenumber `(2 pi n / N)^2` for FFT bin `i` of an axis of length `n`.
pub fn wavenumber_sq(i: usize, n: usize) -> f64 {
    let signed = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
    let k = 2.0 * PI * signed / n as f64;
    k * k
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * shape[a + 1];
    }
    s
}

fn unravel(mut flat: usize, shape: &[usize], out: &mut [usize]) {
    for a in (0..shape.len()).rev() {
        out[a] = flat % shape[a];
        flat /= shape[a];
    }
}

/// Reusable spectral stepper for one grid shape and parameter set.
pub struct SpectralSolver {
    shape: Vec<usize>,
    params: ChParams,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    /// `k^2` per spectral bin.
    k2: Vec<f64>,
    scratch: Vec<Complex<f64>>,
    lanes: Vec<Complex<f64>>,
}

impl SpectralSolver {
    pub fn new(shape: &[usize], params: ChParams) -> Result<Self> {
        params.validate()?;
        // Reuse the field constructor's shape checks.
        PhaseField::uniform(shape, 0.0)?;
        let mut planner = FftPlanner::new();
        let forward = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let n: usize = shape.iter().product();
        let mut idx = vec![0; shape.len()];
        let k2 = (0..n)
            .map(|flat| {
                unravel(flat, shape, &mut idx);
                idx.iter()
                    .zip(shape)
                    .map(|(&i, &len)| wavenumber_sq(i, len))
                    .sum()
            })
            .collect();
        Ok(Self {
            shape: shape.to_vec(),
            params,
            forward,
            inverse,
            k2,
            scratch: Vec::new(),
            lanes: vec![Complex::default(); n],
        })
    }

    /// In-place N-d transform, one axis at a time.
    fn transform(&mut self, data: &mut [Complex<f64>], inverse: bool) {
        let strides = strides(&self.shape);
        let total = data.len();
        for (a, &n) in self.shape.iter().enumerate() {
            let stride = strides[a];
            let outer = total / (n * stride);
            // Gather every lane along axis `a` into contiguous storage.
            let mut pos = 0;
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * n * stride + s;
                    for i in 0..n {
                        self.lanes[pos] = data[base + i * stride];
                        pos += 1;
                    }
                }
            }
            let plan = if inverse {
                &self.inverse[a]
            } else {
                &self.forward[a]
            };
            let need = plan.get_inplace_scratch_len();
            if self.scratch.len() < need {
                self.scratch.resize(need, Complex::default());
            }
            plan.process_with_scratch(&mut self.lanes, &mut self.scratch[..need]);
            let mut pos = 0;
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * n * stride + s;
                    for i in 0..n {
                        data[base + i * stride] = self.lanes[pos];
                        pos += 1;
                    }
                }
            }
        }
        if inverse {
            let scale = 1.0 / total as f64;
            data.iter_mut().for_each(|v| *v *= scale);
        }
    }

    /// Forward spectrum of a real field.
    pub fn spectrum(&mut self, values: &[f64]) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.transform(&mut buf, false);
        buf
    }

    /// Advances `field` by one time step.
    pub fn step(&mut self, field: &PhaseField) -> Result<PhaseField> {
        if field.shape != self.shape {
            return Err(Error::dims(
                "phase-field shape",
                format!("{:?}", self.shape),
                format!("{:?}", field.shape),
            ));
        }
        ensure_finite("phase field", &field.values)?;
        let p = self.params;
        let mut c_hat = self.spectrum(&field.values);
        let mu: Vec<f64> = field.values.iter().map(|&c| p.chemical_potential(c)).collect();
        let mu_hat = self.spectrum(&mu);
        let m = p.mobility * p.dt;
        for ((c, mu), &k2) in c_hat.iter_mut().zip(&mu_hat).zip(&self.k2) {
            *c = (*c - mu * (m * k2)) / (1.0 + m * p.epsilon * k2 * k2);
        }
        self.transform(&mut c_hat, true);
        let values: Vec<f64> = c_hat.iter().map(|v| v.re).collect();
        ensure_finite("phase field after step", &values)?;
        Ok(PhaseField {
            shape: field.shape.clone(),
            values,
            step: field.step + 1,
        })
    }
}

/// Advances `field` by one step of the semi-implicit spectral scheme.
pub fn ch_step(field: &PhaseField, params: &ChParams) -> Result<PhaseField> {
    SpectralSolver::new(field.shape(), *params)?.step(field)
}

/// Evolves `init` for `n_steps`, keeping every `save_every`-th state.
///
/// Returns `ceil(n_steps / save_every) + 1` snapshots: the initial state, each
/// multiple of `save_every`, and the final state when it is not a multiple.
pub fn simulate_sequence(
    init: &PhaseField,
    params: &ChParams,
    n_steps: usize,
    save_every: usize,
) -> Result<Vec<PhaseField>> {
    if save_every == 0 {
        return Err(Error::invalid("save_every must be >= 1"));
    }
    let mut solver = SpectralSolver::new(init.shape(), *params)?;
    let mut out = Vec::with_capacity(n_steps.div_ceil(save_every) + 1);
    out.push(init.clone());
    let mut current = init.clone();
    for i in 1..=n_steps {
        current = solver.step(&current)?;
        if i % save_every == 0 || i == n_steps {
            out.push(current.clone());
        }
    }
    Ok(out)
}

/// Two-phase attenuation map with its physical pixel size.
#[derive(Clone, Debug, PartialEq)]
pub struct AttenuationImage {
    /// Linear attenuation, mm^-1.
    pub values: Array2<f64>,
    /// Pixel edge, mm.
    pub pixel_size: f64,
}

/// Thresholds a 2D concentration field: `mu_low` below `threshold`, `mu_high` otherwise.
pub fn map_attenuation(
    field: &PhaseField,
    threshold: f64,
    mu_low: f64,
    mu_high: f64,
    pixel_size: f64,
) -> Result<AttenuationImage> {
    if !(mu_low < mu_high) || mu_low < 0.0 {
        return Err(Error::invalid(format!(
            "need 0 <= mu_low < mu_high, got {mu_low} and {mu_high}"
        )));
    }
    if !(pixel_size > 0.0) {
        return Err(Error::invalid("pixel size must be > 0"));
    }
    let c = field.to_array2()?;
    Ok(AttenuationImage {
        values: c.mapv(|v| if v < threshold { mu_low } else { mu_high }),
        pixel_size,
    })
}

/// Binarisation rule applied before the Sobel complexity score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Binarization {
    /// Halfway between the image minimum and maximum.
    #[default]
    Midpoint,
    Otsu,
}

/// Maps an image to {0, 1}: 1 where the value is at or above the threshold.
pub fn binarize(image: &Array2<f64>, rule: Binarization) -> Array2<f64> {
    let (lo, hi) = image
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let t = match rule {
        Binarization::Midpoint => 0.5 * (lo + hi),
        Binarization::Otsu => otsu_threshold(image, lo, hi),
    };
    image.mapv(|v| if v >= t { 1.0 } else { 0.0 })
}

fn otsu_threshold(image: &Array2<f64>, lo: f64, hi: f64) -> f64 {
    const BINS: usize = 256;
    if !(hi > lo) {
        return lo;
    }
    let width = (hi - lo) / BINS as f64;
    let mut hist = [0usize; BINS];
    for &v in image {
        let b = (((v - lo) / width) as usize).min(BINS - 1);
        hist[b] += 1;
    }
    let total = image.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_bin) = (-1.0, 0);
    for (i, &h) in hist.iter().enumerate().take(BINS - 1) {
        w0 += h as f64;
        sum0 += i as f64 * h as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_bin = i;
        }
    }
    // Pixels in bins above `best_bin` form the upper class.
    lo + (best_bin + 1) as f64 * width
}

/// Sobel gradient-magnitude map and its mean.
#[derive(Clone, Debug)]
pub struct SpatialInformation {
    pub si_map: Array2<f64>,
    pub si_mean: f64,
}

/// Spatial-information complexity score of an (already binarised) image.
///
/// Uses the 3x3 Sobel pair with replicate padding at the borders.
pub fn spatial_information(image: &Array2<f64>) -> Result<SpatialInformation> {
    let (h, w) = image.dim();
    if h < 3 || w < 3 {
        return Err(Error::invalid(format!(
            "spatial information needs at least 3x3 pixels, got {h}x{w}"
        )));
    }
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        image[[r, c]]
    };
    let mut si_map = Array2::zeros((h, w));
    for r in 0..h as isize {
        for c in 0..w as isize {
            let sh = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
            let sv = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
            si_map[[r as usize, c as usize]] = (sh * sh + sv * sv).sqrt();
        }
    }
    let si_mean = si_map.mean().unwrap_or(0.0);
    Ok(SpatialInformation { si_map, si_mean })
}

/// Largest binarised spatial information over a sequence of frames.
pub fn sequence_spatial_information(frames: &[Array2<f64>], rule: Binarization) -> Result<f64> {
    frames.iter().try_fold(0.0f64, |acc, f| {
        Ok(acc.max(spatial_information(&binarize(f, rule))?.si_mean))
    })
}

/// Copies the `size x size` window at (`row`, `col`) out of a larger image.
pub fn crop(image: &Array2<f64>, row: usize, col: usize, size: usize) -> Result<Array2<f64>> {
    let (h, w) = image.dim();
    if row + size > h || col + size > w {
        return Err(Error::invalid(format!(
            "crop {size}x{size} at ({row}, {col}) exceeds {h}x{w} image"
        )));
    }
    Ok(image
        .slice(ndarray::s![row..row + size, col..col + size])
        .to_owned())
}

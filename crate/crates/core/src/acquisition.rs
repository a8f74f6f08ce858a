//! Interlaced acquisition: angle schedules, dynamic scans, dose and detector bias.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{ensure_finite, Error, Result};
use crate::tomo::{radon_forward, ProjectorGeometry};

/// Reverses the lowest `bits` bits of `v`.
pub fn bit_reverse(v: usize, bits: u32) -> usize {
    if bits == 0 {
        return 0;
    }
    v.reverse_bits() >> (usize::BITS - bits)
}

fn check_interlace(n_theta: usize, k: usize) -> Result<()> {
    if n_theta == 0 || k == 0 {
        return Err(Error::invalid("n_theta and k must be >= 1"));
    }
    if !k.is_power_of_two() {
        return Err(Error::invalid(format!("sub-frame count {k} is not a power of two")));
    }
    if n_theta % k != 0 {
        return Err(Error::invalid(format!("k = {k} does not divide n_theta = {n_theta}")));
    }
    Ok(())
}

/// Angle of projection `n` in the bit-reversal interlaced order.
///
/// `theta_n = [(n mod N/K) K + Br(floor(nK/N) mod K)] pi / N` with the
/// bit reversal taken over `log2 K` bits.
pub fn interlaced_angle(n: usize, n_theta: usize, k: usize) -> Result<f64> {
    check_interlace(n_theta, k)?;
    Ok(lattice_index(n, n_theta, k) as f64 * PI / n_theta as f64)
}

fn lattice_index(n: usize, n_theta: usize, k: usize) -> usize {
    let per_frame = n_theta / k;
    (n % per_frame) * k + bit_reverse((n * k / n_theta) % k, k.trailing_zeros())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleEntry {
    /// Global projection index (one object state per projection).
    pub index: usize,
    /// Radians in `[0, pi)`.
    pub angle: f64,
    /// Reconstructed frame that owns this projection.
    pub subframe: usize,
}

/// Projection order for `n_cycles` rotations of `n_theta` views split into `k` sub-frames.
#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionSchedule {
    pub n_theta: usize,
    pub k: usize,
    pub n_cycles: usize,
    pub entries: Vec<ScheduleEntry>,
}

/// Builds the interlaced schedule; entry `n` belongs to sub-frame `floor(nK / N_theta)`.
pub fn build_schedule(n_theta: usize, k: usize, n_cycles: usize) -> Result<AcquisitionSchedule> {
    check_interlace(n_theta, k)?;
    if n_cycles == 0 {
        return Err(Error::invalid("n_cycles must be >= 1"));
    }
    let entries = (0..n_cycles * n_theta)
        .map(|n| ScheduleEntry {
            index: n,
            angle: lattice_index(n, n_theta, k) as f64 * PI / n_theta as f64,
            subframe: n * k / n_theta,
        })
        .collect();
    Ok(AcquisitionSchedule {
        n_theta,
        k,
        n_cycles,
        entries,
    })
}

impl AcquisitionSchedule {
    /// Total reconstructed frames, `k * n_cycles`.
    pub fn n_frames(&self) -> usize {
        self.k * self.n_cycles
    }

    pub fn views_per_frame(&self) -> usize {
        self.n_theta / self.k
    }

    pub fn frame_entries(&self, t: usize) -> &[ScheduleEntry] {
        let p = self.views_per_frame();
        &self.entries[t * p..(t + 1) * p]
    }

    pub fn frame_angles(&self, t: usize) -> Vec<f64> {
        self.frame_entries(t).iter().map(|e| e.angle).collect()
    }

    /// Object state used as ground truth for frame `t`: the central projection
    /// of the group, the earlier one when the group size is even.
    pub fn reference_state(&self, t: usize) -> usize {
        let p = self.views_per_frame();
        t * p + (p - 1) / 2
    }
}

/// Time-ordered attenuation images on a common grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicSequence {
    pub frames: Vec<Array2<f64>>,
    /// Pixel edge, mm.
    pub pixel_size: f64,
    /// Time stamp of each frame (solver time units).
    pub times: Vec<f64>,
}

impl DynamicSequence {
    pub fn new(frames: Vec<Array2<f64>>, pixel_size: f64, times: Vec<f64>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::invalid("sequence has no frames"));
        }
        if times.len() != frames.len() {
            return Err(Error::dims("time stamps", frames.len(), times.len()));
        }
        let dim = frames[0].dim();
        if let Some(f) = frames.iter().find(|f| f.dim() != dim) {
            return Err(Error::dims("frame shape", format!("{dim:?}"), format!("{:?}", f.dim())));
        }
        if !(pixel_size > 0.0) {
            return Err(Error::invalid("pixel size must be > 0"));
        }
        Ok(Self {
            frames,
            pixel_size,
            times,
        })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.frames[0].dim()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// One reconstructed frame's measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct SinogramFrame {
    /// Angles in acquisition order; row `i` of `data` was taken at `angles[i]`.
    pub angles: Vec<f64>,
    /// Line integrals, `n_angles x n_det`.
    pub data: Array2<f64>,
    /// Photon counts per ray, when simulated with finite dose.
    pub counts: Option<Array2<f64>>,
    /// Weighted-least-squares weights per ray (strictly positive).
    pub weights: Option<Array2<f64>>,
}

/// Per-detector additive offset, constant over angles and time.
#[derive(Clone, Debug, PartialEq)]
pub struct RingBias {
    pub c: Vec<f64>,
}

impl RingBias {
    pub fn zeros(n_det: usize) -> Self {
        Self { c: vec![0.0; n_det] }
    }

    /// Sum of Gaussian bumps `(center, width, amplitude)` with center and width
    /// given as fractions of the detector length, shifted to zero mean.
    pub fn gaussian_bumps(n_det: usize, bumps: &[(f64, f64, f64)]) -> Self {
        let n = n_det as f64;
        let mut c: Vec<f64> = (0..n_det)
            .map(|d| {
                bumps
                    .iter()
                    .map(|&(center, width, amp)| {
                        let z = (d as f64 - center * n) / (width * n);
                        amp * (-0.5 * z * z).exp()
                    })
                    .sum()
            })
            .collect();
        let mean = c.iter().sum::<f64>() / n;
        c.iter_mut().for_each(|v| *v -= mean);
        Self { c }
    }

    /// Two off-center bumps of height `amplitude` (before the zero-mean shift).
    pub fn two_bumps(n_det: usize, amplitude: f64) -> Self {
        Self::gaussian_bumps(n_det, &[(0.3, 0.03, amplitude), (0.64, 0.04, amplitude)])
    }

    pub fn mean(&self) -> f64 {
        self.c.iter().sum::<f64>() / self.c.len().max(1) as f64
    }
}

/// Measurements of a whole dynamic scan grouped by reconstructed frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SinogramStack {
    pub frames: Vec<SinogramFrame>,
    pub n_det: usize,
    pub n_theta: usize,
    pub k: usize,
    /// Ground-truth object state index for each frame.
    pub reference_states: Vec<usize>,
    /// Incident photons per ray, when noise was applied.
    pub dose: Option<f64>,
    pub noise_seed: Option<u64>,
    /// Detector bias injected into the data, kept for round-trip evaluation.
    pub ring: Option<RingBias>,
}

impl SinogramStack {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn has_counts(&self) -> bool {
        !self.frames.is_empty() && self.frames.iter().all(|f| f.counts.is_some())
    }

    /// Checks the stack invariants: shapes, coverage of the angle lattice and weights.
    pub fn validate(&self) -> Result<()> {
        for (t, f) in self.frames.iter().enumerate() {
            if f.data.dim() != (f.angles.len(), self.n_det) {
                return Err(Error::dims(
                    "frame sinogram",
                    format!("{}x{}", f.angles.len(), self.n_det),
                    format!("{:?} in frame {t}", f.data.dim()),
                ));
            }
            ensure_finite("sinogram", f.data.iter())?;
            for extra in [&f.counts, &f.weights].into_iter().flatten() {
                if extra.dim() != f.data.dim() {
                    return Err(Error::dims("counts/weights", format!("{:?}", f.data.dim()), format!("{:?}", extra.dim())));
                }
            }
            if let Some(w) = &f.weights {
                if w.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
                    return Err(Error::invalid("WLS weights must be finite and > 0"));
                }
            }
        }
        if let Some(r) = &self.ring {
            if r.c.len() != self.n_det {
                return Err(Error::dims("ring bias", self.n_det, r.c.len()));
            }
        }
        Ok(())
    }
}

/// Projects each object state at its scheduled angle and groups the rows by frame.
///
/// `geom` supplies the grid and detector; its angle list is ignored.
pub fn simulate_scan(
    seq: &DynamicSequence,
    sched: &AcquisitionSchedule,
    geom: &ProjectorGeometry,
) -> Result<SinogramStack> {
    if seq.len() < sched.entries.len() {
        return Err(Error::dims(
            "object states (one per projection)",
            sched.entries.len(),
            seq.len(),
        ));
    }
    if seq.dim() != (geom.height, geom.width) {
        return Err(Error::dims(
            "sequence frame",
            format!("{}x{}", geom.height, geom.width),
            format!("{:?}", seq.dim()),
        ));
    }
    let rows: Vec<Array2<f64>> = sched
        .entries
        .par_iter()
        .map(|e| {
            let g = geom.with_angles(vec![e.angle])?;
            radon_forward(&seq.frames[e.index], &g)
        })
        .collect::<Result<_>>()?;
    let p = sched.views_per_frame();
    let frames = (0..sched.n_frames())
        .map(|t| {
            let mut data = Array2::zeros((p, geom.n_det));
            for (i, row) in rows[t * p..(t + 1) * p].iter().enumerate() {
                data.row_mut(i).assign(&row.row(0));
            }
            SinogramFrame {
                angles: sched.frame_angles(t),
                data,
                counts: None,
                weights: None,
            }
        })
        .collect();
    Ok(SinogramStack {
        frames,
        n_det: geom.n_det,
        n_theta: sched.n_theta,
        k: sched.k,
        reference_states: (0..sched.n_frames()).map(|t| sched.reference_state(t)).collect(),
        dose: None,
        noise_seed: None,
        ring: None,
    })
}

/// Poisson transmission noise at `dose` incident photons per ray.
///
/// Counts are clamped to at least one photon before taking the log. Frame `t`
/// draws from stream `t` of the seeded generator, so frames are independent
/// and reproducible.
pub fn apply_poisson(stack: &SinogramStack, dose: f64, seed: u64) -> Result<SinogramStack> {
    if !(dose > 0.0 && dose.is_finite()) {
        return Err(Error::invalid(format!("dose must be > 0, got {dose}")));
    }
    let frames = stack
        .frames
        .par_iter()
        .enumerate()
        .map(|(t, f)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let mut counts = Array2::zeros(f.data.dim());
            for (c, &p) in counts.iter_mut().zip(f.data.iter()) {
                let mean = dose * (-p).exp();
                let draw = if mean > 0.0 {
                    Poisson::new(mean)
                        .map_err(|e| Error::invalid(format!("poisson mean {mean}: {e}")))?
                        .sample(&mut rng)
                } else {
                    0.0
                };
                *c = draw.max(1.0);
            }
            Ok(SinogramFrame {
                angles: f.angles.clone(),
                data: counts.mapv(|i| (dose / i).ln()),
                weights: Some(counts.mapv(|i| i / dose)),
                counts: Some(counts),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SinogramStack {
        frames,
        dose: Some(dose),
        noise_seed: Some(seed),
        ..stack.clone()
    })
}

/// Adds the detector offset `c` to every row of every frame.
pub fn inject_ring_bias(stack: &SinogramStack, bias: &RingBias) -> Result<SinogramStack> {
    if bias.c.len() != stack.n_det {
        return Err(Error::dims("ring bias", stack.n_det, bias.c.len()));
    }
    let mut out = stack.clone();
    for f in &mut out.frames {
        for mut row in f.data.rows_mut() {
            row.iter_mut().zip(&bias.c).for_each(|(v, c)| *v += c);
        }
    }
    out.ring = Some(match &stack.ring {
        Some(prev) => RingBias {
            c: prev.c.iter().zip(&bias.c).map(|(a, b)| a + b).collect(),
        },
        None => bias.clone(),
    });
    Ok(out)
}

//! Least-squares x-update (CGLS) and robust detector-bias estimation.

use ndarray::{Array2, Zip};
use rayon::prelude::*;

use crate::acquisition::{RingBias, SinogramStack};
use crate::error::{ensure_finite, Error, Result};
use crate::tomo::{radon_adjoint, radon_forward, ProjectorGeometry};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CglsConfig {
    pub max_iters: usize,
    /// Stop once `||A^T r||` falls below this fraction of its initial value.
    pub rel_tol: f64,
    /// Penalty weight on `||x - z||^2`.
    pub mu: f64,
}

impl Default for CglsConfig {
    fn default() -> Self {
        Self {
            max_iters: 20,
            rel_tol: 1e-6,
            mu: 1.0,
        }
    }
}

impl CglsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("CGLS max_iters must be >= 1"));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) || !(self.rel_tol >= 0.0) {
            return Err(Error::invalid("CGLS mu and rel_tol must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CglsStatus {
    /// Ran the full iteration budget.
    MaxIters,
    /// Normal-equation residual dropped below the tolerance.
    Converged,
    /// The search direction vanished under the operator; the iterate is returned as is.
    Breakdown,
}

#[derive(Clone, Debug)]
pub struct CglsOutcome {
    pub x: Array2<f64>,
    pub status: CglsStatus,
    pub iterations: usize,
    /// Final `||A^T (b - A x)||` of the stacked system.
    pub normal_residual: f64,
    /// `||b - A x||` after each iteration, starting with the initial guess.
    pub residual_history: Vec<f64>,
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Approximately minimises `1/2 ||W^(1/2) (P x - y)||^2 + mu/2 ||x - z||^2`.
///
/// Runs CGLS on the stacked operator `[W^(1/2) P; sqrt(mu) I]` with data
/// `[W^(1/2) y; sqrt(mu) z]`, starting from `warm_start` (or zero).
pub fn cgls_xupdate(
    geom: &ProjectorGeometry,
    y: &Array2<f64>,
    z: &Array2<f64>,
    cfg: &CglsConfig,
    weights: Option<&Array2<f64>>,
    warm_start: Option<&Array2<f64>>,
) -> Result<CglsOutcome> {
    cfg.validate()?;
    let img_dim = (geom.height, geom.width);
    if z.dim() != img_dim {
        return Err(Error::dims("penalty target", format!("{img_dim:?}"), format!("{:?}", z.dim())));
    }
    if y.dim() != (geom.n_angles(), geom.n_det) {
        return Err(Error::dims(
            "sinogram",
            format!("{}x{}", geom.n_angles(), geom.n_det),
            format!("{:?}", y.dim()),
        ));
    }
    ensure_finite("sinogram", y.iter())?;
    ensure_finite("penalty target", z.iter())?;
    let sqrt_w = match weights {
        Some(w) => {
            if w.dim() != y.dim() {
                return Err(Error::dims("weights", format!("{:?}", y.dim()), format!("{:?}", w.dim())));
            }
            if w.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
                return Err(Error::invalid("weights must be finite and > 0"));
            }
            Some(w.mapv(f64::sqrt))
        }
        None => None,
    };
    let mut x = match warm_start {
        Some(x0) => {
            if x0.dim() != img_dim {
                return Err(Error::dims("warm start", format!("{img_dim:?}"), format!("{:?}", x0.dim())));
            }
            ensure_finite("warm start", x0.iter())?;
            x0.clone()
        }
        None => Array2::zeros(img_dim),
    };
    let sm = cfg.mu.sqrt();
    let apply_w = |v: &mut Array2<f64>| {
        if let Some(sw) = &sqrt_w {
            Zip::from(v).and(sw).for_each(|a, &b| *a *= b);
        }
    };
    // A^T [r1; r2] = P^T W^(1/2) r1 + sqrt(mu) r2
    let adjoint = |r1: &Array2<f64>, r2: &Array2<f64>| -> Result<Array2<f64>> {
        let mut t = r1.clone();
        apply_w(&mut t);
        let mut out = radon_adjoint(&t, geom)?;
        Zip::from(&mut out).and(r2).for_each(|o, &v| *o += sm * v);
        Ok(out)
    };
    let forward = |v: &Array2<f64>| -> Result<(Array2<f64>, Array2<f64>)> {
        let mut q1 = radon_forward(v, geom)?;
        apply_w(&mut q1);
        Ok((q1, v.mapv(|a| sm * a)))
    };

    let mut px = radon_forward(&x, geom)?;
    apply_w(&mut px);
    let mut r1 = y.clone();
    apply_w(&mut r1);
    r1 -= &px;
    let mut r2 = (z - &x).mapv(|v| sm * v);
    let mut s = adjoint(&r1, &r2)?;
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    let gamma0 = gamma;
    let res_norm = |r1: &Array2<f64>, r2: &Array2<f64>| (dot(r1, r1) + dot(r2, r2)).sqrt();
    let mut residual_history = vec![res_norm(&r1, &r2)];
    let mut status = CglsStatus::MaxIters;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        if gamma <= cfg.rel_tol * cfg.rel_tol * gamma0 || gamma == 0.0 {
            status = CglsStatus::Converged;
            break;
        }
        let (q1, q2) = forward(&p)?;
        let delta = dot(&q1, &q1) + dot(&q2, &q2);
        if !(delta > 0.0) {
            status = CglsStatus::Breakdown;
            break;
        }
        let alpha = gamma / delta;
        x.scaled_add(alpha, &p);
        r1.scaled_add(-alpha, &q1);
        r2.scaled_add(-alpha, &q2);
        s = adjoint(&r1, &r2)?;
        let gamma_next = dot(&s, &s);
        let beta = gamma_next / gamma;
        Zip::from(&mut p).and(&s).for_each(|pv, &sv| *pv = sv + beta * *pv);
        gamma = gamma_next;
        iterations += 1;
        residual_history.push(res_norm(&r1, &r2));
    }
    if iterations == cfg.max_iters && gamma <= cfg.rel_tol * cfg.rel_tol * gamma0 {
        status = CglsStatus::Converged;
    }
    Ok(CglsOutcome {
        x,
        status,
        iterations,
        normal_residual: gamma.sqrt(),
        residual_history,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RingEstimatorConfig {
    /// Huber threshold in sinogram units; `None` uses 1.345 x MAD of the residuals.
    pub huber_delta: Option<f64>,
    pub irls_iters: usize,
    /// Weight of the first-difference Tikhonov smoother along the detector axis.
    pub smooth_lambda: f64,
}

impl Default for RingEstimatorConfig {
    fn default() -> Self {
        Self {
            huber_delta: None,
            irls_iters: 10,
            smooth_lambda: 0.0,
        }
    }
}

/// Huber penalty: quadratic inside `delta`, linear outside.
pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median absolute deviation of every entry of `r`.
pub fn mad(r: &Array2<f64>) -> f64 {
    let mut v: Vec<f64> = r.iter().copied().collect();
    let m = median(&mut v);
    let mut dev: Vec<f64> = r.iter().map(|x| (x - m).abs()).collect();
    median(&mut dev)
}

/// Huber location of one column by IRLS, starting from the median.
fn huber_location(col: &[f64], delta: f64, iters: usize) -> f64 {
    let mut sorted = col.to_vec();
    let mut c = median(&mut sorted);
    for _ in 0..iters {
        let (mut num, mut den) = (0.0, 0.0);
        for &r in col {
            let a = (r - c).abs();
            let w = if a <= delta { 1.0 } else { delta / a };
            num += w * r;
            den += w;
        }
        c = num / den;
    }
    c
}

/// Solves `(I + lambda D^T D) c = rhs` for the first-difference operator `D`.
fn tikhonov_smooth(rhs: &[f64], lambda: f64) -> Vec<f64> {
    let n = rhs.len();
    if n < 2 || lambda == 0.0 {
        return rhs.to_vec();
    }
    // Thomas algorithm on the symmetric tridiagonal system.
    let diag = |i: usize| 1.0 + lambda * if i == 0 || i == n - 1 { 1.0 } else { 2.0 };
    let off = -lambda;
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = off / diag(0);
    dp[0] = rhs[0] / diag(0);
    for i in 1..n {
        let m = diag(i) - off * cp[i - 1];
        cp[i] = off / m;
        dp[i] = (rhs[i] - off * dp[i - 1]) / m;
    }
    let mut out = vec![0.0; n];
    out[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        out[i] = dp[i] - cp[i] * out[i + 1];
    }
    out
}

/// Robust per-detector bias from stacked residuals `R` (rays x detectors).
///
/// Each column gets a Huber location estimate; the profile is optionally
/// smoothed along the detector axis and finally shifted to zero mean.
pub fn estimate_ring_bias(residuals: &Array2<f64>, cfg: &RingEstimatorConfig) -> Result<RingBias> {
    let (m, n_det) = residuals.dim();
    if m == 0 || n_det == 0 {
        return Err(Error::invalid("residual matrix is empty"));
    }
    ensure_finite("residual matrix", residuals.iter())?;
    if cfg.irls_iters == 0 || cfg.smooth_lambda < 0.0 {
        return Err(Error::invalid("irls_iters must be >= 1 and smooth_lambda >= 0"));
    }
    let delta = match cfg.huber_delta {
        Some(d) if d > 0.0 => d,
        Some(d) => return Err(Error::invalid(format!("huber delta must be > 0, got {d}"))),
        None => (1.345 * mad(residuals)).max(1e-12),
    };
    let raw: Vec<f64> = (0..n_det)
        .into_par_iter()
        .map(|d| {
            let col: Vec<f64> = residuals.column(d).to_vec();
            huber_location(&col, delta, cfg.irls_iters)
        })
        .collect();
    let mut c = tikhonov_smooth(&raw, cfg.smooth_lambda);
    let mean = c.iter().sum::<f64>() / n_det as f64;
    c.iter_mut().for_each(|v| *v -= mean);
    Ok(RingBias { c })
}

/// Stacks `y_t - P_t x_t` over frames and angles into an `M x N_d` matrix.
///
/// `geom` supplies the grid and detector; each frame's own angles are used.
pub fn compute_residuals(
    stack: &SinogramStack,
    frames: &[Array2<f64>],
    geom: &ProjectorGeometry,
) -> Result<Array2<f64>> {
    if frames.len() != stack.n_frames() {
        return Err(Error::dims("reconstructed frames", stack.n_frames(), frames.len()));
    }
    if geom.n_det != stack.n_det {
        return Err(Error::dims("detector count", stack.n_det, geom.n_det));
    }
    let parts: Vec<Array2<f64>> = stack
        .frames
        .par_iter()
        .zip(frames.par_iter())
        .map(|(f, x)| {
            let g = geom.with_angles(f.angles.clone())?;
            Ok(&f.data - &radon_forward(x, &g)?)
        })
        .collect::<Result<_>>()?;
    let m: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = Array2::zeros((m, stack.n_det));
    let mut row = 0;
    for p in &parts {
        out.slice_mut(ndarray::s![row..row + p.nrows(), ..]).assign(p);
        row += p.nrows();
    }
    Ok(out)
}

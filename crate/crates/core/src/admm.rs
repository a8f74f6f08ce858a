//! ADMM splitting between data-consistent images `x` and a coordinate network `q`.
//!
//! Each outer iteration runs, in order: CGLS x-updates (parallel over frames),
//! network updates frame by frame in alternating chronological order, a
//! full-resolution render `q`, the dual update `u += x - q`, and optionally a
//! re-estimate of the detector ring bias. The parameters from the iteration
//! with the smallest mean `||x_t - q_t||` are kept.

use ndarray::{s, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::acquisition::{RingBias, SinogramStack};
use crate::error::{Error, Result};
use crate::inr::{
    adam_step, downsample_mean, encode, full_grid, inr_backward, inr_forward, jittered_grid, tv_axial,
    tv_spatial, tv_temporal, AdamConfig, AdamState, InrConfig, InrModel, TvConfig,
};
use crate::solvers::{cgls_xupdate, compute_residuals, estimate_ring_bias, CglsConfig, CglsStatus, RingEstimatorConfig};
use crate::tomo::{fbp, inscribed_circle_mask, radon_forward, ProjectorGeometry, RampFilter};

/// Images used to form the residuals for ring re-estimation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RingResidualSource {
    /// Network renders `q`, which are regularised and cannot absorb the bias per frame.
    #[default]
    Model,
    /// Data-consistent iterates `x`.
    Data,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RingCorrectionConfig {
    pub enabled: bool,
    /// Re-estimate the profile after every outer iteration; otherwise `initial` stays fixed.
    pub estimate: bool,
    pub estimator: RingEstimatorConfig,
    pub residual_source: RingResidualSource,
    /// Starting profile (zeros when absent).
    pub initial: Option<Vec<f64>>,
}

impl Default for RingCorrectionConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            estimate: true,
            estimator: RingEstimatorConfig::default(),
            residual_source: RingResidualSource::Model,
            initial: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructionConfig {
    pub outer_iters: usize,
    pub inr_updates_per_iter: usize,
    /// `mu` is relative to a unit-pixel projector; it is multiplied by `pixel_size^2` internally.
    pub cgls: CglsConfig,
    pub tv: TvConfig,
    /// Mean-pooling factor of the network training target.
    pub downsample: usize,
    pub jitter: bool,
    pub wls: bool,
    pub ring: RingCorrectionConfig,
    /// Slices per independent network in volume reconstructions.
    pub axial_batch: usize,
    pub inr: InrConfig,
    pub adam: AdamConfig,
    /// Seed of the jitter stream.
    pub seed: u64,
    /// Zero the x-iterates outside the inscribed circle.
    pub mask_circle: bool,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            outer_iters: 30,
            inr_updates_per_iter: 50,
            cgls: CglsConfig { mu: 100.0, ..CglsConfig::default() },
            tv: TvConfig::default(),
            downsample: 2,
            jitter: true,
            wls: false,
            ring: RingCorrectionConfig::default(),
            axial_batch: 4,
            inr: InrConfig::default(),
            adam: AdamConfig::default(),
            seed: 0,
            mask_circle: false,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("outer_iters", self.outer_iters),
            ("inr_updates_per_iter", self.inr_updates_per_iter),
            ("downsample", self.downsample),
            ("axial_batch", self.axial_batch),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        self.cgls.validate()?;
        self.tv.validate()?;
        Ok(())
    }
}

/// Per-outer-iteration log entry.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean over frames of `||x_t - q_t||_2`.
    pub mean_residual: f64,
    /// `||P q_t - (y_t - c)|| / ||y_t||` per frame (slices flattened slice-major).
    pub data_residual: Vec<f64>,
    pub loss_mse: f64,
    pub loss_tv_spatial: f64,
    pub loss_tv_temporal: f64,
    pub loss_tv_axial: f64,
    /// Learning rate used during this iteration.
    pub lr: f64,
    pub frame_order: Vec<usize>,
    /// Frames whose CGLS hit a breakdown this iteration.
    pub cgls_breakdowns: usize,
}

impl IterationRecord {
    pub fn mean_data_residual(&self) -> f64 {
        self.data_residual.iter().sum::<f64>() / self.data_residual.len().max(1) as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<IterationRecord>,
    pub best_iteration: usize,
    pub best_residual: f64,
}

/// Result of a 2D+t reconstruction.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    /// Selected network (best iteration).
    pub model: InrModel,
    /// Full-grid renders of the selected network, one per frame.
    pub frames: Vec<Array2<f64>>,
    pub history: History,
    /// Final ring profile when correction was enabled.
    pub ring: Option<RingBias>,
}

/// Result of a volume reconstruction.
#[derive(Clone, Debug)]
pub struct VolumeReconstruction {
    /// `frames[z][t]`.
    pub frames: Vec<Vec<Array2<f64>>>,
    pub batches: Vec<BatchResult>,
}

#[derive(Clone, Debug)]
pub struct BatchResult {
    pub first_slice: usize,
    pub n_slices: usize,
    pub model: InrModel,
    pub history: History,
    pub rings: Option<Vec<RingBias>>,
}

/// Index of the smallest residual and its checkpoint; ties go to the earlier entry.
pub fn select_model<'a, T>(residuals: &[f64], checkpoints: &'a [T]) -> Result<(usize, &'a T)> {
    if residuals.is_empty() {
        return Err(Error::invalid("no recorded iterations to select from"));
    }
    if residuals.len() != checkpoints.len() {
        return Err(Error::dims("checkpoints", residuals.len(), checkpoints.len()));
    }
    let mut best = 0;
    for (i, &r) in residuals.iter().enumerate() {
        if r < residuals[best] {
            best = i;
        }
    }
    Ok((best, &checkpoints[best]))
}

/// Snapshot handed to an observer after every outer iteration.
pub struct IterationView<'a> {
    pub record: &'a IterationRecord,
    /// Data-consistent iterates, slice-major.
    pub x: &'a [Array2<f64>],
    /// Network renders.
    pub q: &'a [Array2<f64>],
    pub u: &'a [Array2<f64>],
    /// Current bias estimates, one per slice, when ring correction is on.
    pub rings: Option<&'a [RingBias]>,
}

/// Reconstructs a dynamic 2D sequence with one network over `(x, y, t)`.
pub fn admm_reconstruct(stack: &SinogramStack, geom: &ProjectorGeometry, cfg: &ReconstructionConfig) -> Result<Reconstruction> {
    admm_reconstruct_observed(stack, geom, cfg, &mut |_| {})
}

/// [`admm_reconstruct`] with a callback after every outer iteration (progress, diagnostics).
pub fn admm_reconstruct_observed(
    stack: &SinogramStack,
    geom: &ProjectorGeometry,
    cfg: &ReconstructionConfig,
    observer: &mut dyn FnMut(&IterationView<'_>),
) -> Result<Reconstruction> {
    let out = run_slab(&[stack], geom, cfg, false, cfg.inr.seed, observer)?;
    Ok(Reconstruction {
        model: out.model,
        frames: out.frames.into_iter().next().unwrap_or_default(),
        history: out.history,
        ring: out.rings.map(|mut r| r.remove(0)),
    })
}

/// Reconstructs a volume sequence from one stack per axial slice.
///
/// Slices are split into contiguous batches of `cfg.axial_batch` (the last may
/// be smaller); each batch gets its own network over `(x, y, z, t)` with `z`
/// normalised within the batch, and batches never interact.
pub fn reconstruct_4d(stacks: &[SinogramStack], geom: &ProjectorGeometry, cfg: &ReconstructionConfig) -> Result<VolumeReconstruction> {
    cfg.validate()?;
    if stacks.is_empty() {
        return Err(Error::invalid("no slices to reconstruct"));
    }
    let starts: Vec<usize> = (0..stacks.len()).step_by(cfg.axial_batch).collect();
    let outputs: Vec<(usize, SlabOutput)> = starts
        .par_iter()
        .enumerate()
        .map(|(b, &start)| {
            let end = (start + cfg.axial_batch).min(stacks.len());
            let slab: Vec<&SinogramStack> = stacks[start..end].iter().collect();
            Ok((start, run_slab(&slab, geom, cfg, true, cfg.inr.seed.wrapping_add(b as u64), &mut |_| {})?))
        })
        .collect::<Result<_>>()?;
    let mut frames = Vec::with_capacity(stacks.len());
    let mut batches = Vec::with_capacity(outputs.len());
    for (start, out) in outputs {
        batches.push(BatchResult {
            first_slice: start,
            n_slices: out.frames.len(),
            model: out.model,
            history: out.history,
            rings: out.rings,
        });
        frames.extend(out.frames);
    }
    Ok(VolumeReconstruction { frames, batches })
}

struct SlabOutput {
    model: InrModel,
    frames: Vec<Vec<Array2<f64>>>,
    history: History,
    rings: Option<Vec<RingBias>>,
}

fn normalized(i: usize, n: usize) -> f64 {
    if n > 1 {
        2.0 * i as f64 / (n - 1) as f64 - 1.0
    } else {
        0.0
    }
}

/// Appends the optional `z` and the `t` column to a 2-column spatial grid.
fn slab_coords(grid: &Array2<f64>, z: Option<(usize, usize)>, t: usize, n_t: usize) -> Array2<f64> {
    let dim = if z.is_some() { 4 } else { 3 };
    let mut out = Array2::zeros((grid.nrows(), dim));
    out.slice_mut(s![.., 0..2]).assign(grid);
    if let Some((zi, nz)) = z {
        out.column_mut(2).fill(normalized(zi, nz));
    }
    out.column_mut(dim - 1).fill(normalized(t, n_t));
    out
}

fn norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn subtract_ring(data: &Array2<f64>, ring: Option<&RingBias>) -> Array2<f64> {
    match ring {
        Some(r) => data - &ArrayView1::from(&r.c[..]).insert_axis(Axis(0)),
        None => data.clone(),
    }
}

fn percentile_abs<'a>(frames: impl Iterator<Item = &'a Array2<f64>>, q: f64) -> f64 {
    let mut v: Vec<f64> = frames.flat_map(|f| f.iter().map(|x| x.abs())).collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * q).round() as usize]
}

/// Shared state of one slab: slices `z` of `n_z`, frames `t` of `n_t`, flattened as `z * n_t + t`.
struct Slab<'a> {
    slices: &'a [&'a SinogramStack],
    geoms: Vec<ProjectorGeometry>,
    volumetric: bool,
    n_t: usize,
    h: usize,
    w: usize,
}

impl Slab<'_> {
    fn n_z(&self) -> usize {
        self.slices.len()
    }

    fn len(&self) -> usize {
        self.n_z() * self.n_t
    }

    fn split(&self, i: usize) -> (usize, usize) {
        (i / self.n_t, i % self.n_t)
    }

    fn z_coord(&self, z: usize) -> Option<(usize, usize)> {
        self.volumetric.then_some((z, self.n_z()))
    }

    fn render(&self, model: &InrModel, i: usize) -> Result<Array2<f64>> {
        let (z, t) = self.split(i);
        let coords = slab_coords(&full_grid(self.h, self.w), self.z_coord(z), t, self.n_t);
        let v = model.predict(coords.view())?;
        Ok(v.into_shape_with_order((self.h, self.w)).expect("grid matches image"))
    }

    fn render_all(&self, model: &InrModel) -> Result<Vec<Array2<f64>>> {
        (0..self.len()).into_par_iter().map(|i| self.render(model, i)).collect()
    }

    /// `||P q - (y - c)|| / ||y||` for every frame.
    fn data_residuals(&self, q: &[Array2<f64>], rings: Option<&[RingBias]>) -> Result<Vec<f64>> {
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                let (z, t) = self.split(i);
                let f = &self.slices[z].frames[t];
                let target = subtract_ring(&f.data, rings.map(|r| &r[z]));
                let r = &radon_forward(&q[i], &self.geoms[i])? - &target;
                Ok(norm(&r) / norm(&f.data).max(f64::MIN_POSITIVE))
            })
            .collect()
    }
}

#[derive(Default)]
struct LossTotals {
    mse: f64,
    tv_s: f64,
    tv_t: f64,
    tv_a: f64,
    count: usize,
}

fn run_slab(
    slices: &[&SinogramStack],
    geom: &ProjectorGeometry,
    cfg: &ReconstructionConfig,
    volumetric: bool,
    model_seed: u64,
    observer: &mut dyn FnMut(&IterationView<'_>),
) -> Result<SlabOutput> {
    cfg.validate()?;
    geom.validate()?;
    let n_t = slices[0].n_frames();
    if n_t == 0 {
        return Err(Error::invalid("sinogram stack has no frames"));
    }
    for st in slices {
        st.validate()?;
        if st.n_frames() != n_t {
            return Err(Error::dims("frames per slice", n_t, st.n_frames()));
        }
        if st.n_det != geom.n_det {
            return Err(Error::dims("detector count", geom.n_det, st.n_det));
        }
        if cfg.wls && !st.frames.iter().all(|f| f.weights.is_some()) {
            return Err(Error::Config("WLS requires photon counts".into()));
        }
    }
    let (h, w) = (geom.height, geom.width);
    let s_f = cfg.downsample;
    if h % s_f != 0 || w % s_f != 0 {
        return Err(Error::Config(format!("downsample factor {s_f} must divide the {h}x{w} grid")));
    }
    let geoms = slices
        .iter()
        .flat_map(|st| st.frames.iter().map(|f| geom.with_angles(f.angles.clone())))
        .collect::<Result<Vec<_>>>()?;
    let slab = Slab { slices, geoms, volumetric, n_t, h, w };
    let n = slab.len();

    let mut rings: Option<Vec<RingBias>> = if cfg.ring.enabled {
        let init = match &cfg.ring.initial {
            Some(c) if c.len() != geom.n_det => return Err(Error::dims("initial ring profile", geom.n_det, c.len())),
            Some(c) => RingBias { c: c.clone() },
            None => RingBias::zeros(geom.n_det),
        };
        Some(vec![init; slab.n_z()])
    } else {
        None
    };
    let mask = cfg.mask_circle.then(|| inscribed_circle_mask(h, w));
    let apply_mask = |x: &mut Array2<f64>| {
        if let Some(m) = &mask {
            ndarray::Zip::from(x).and(m).for_each(|v, &keep| {
                if !keep {
                    *v = 0.0;
                }
            });
        }
    };

    // x^0: filtered backprojection of each frame's own views.
    let mut x: Vec<Array2<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (z, t) = slab.split(i);
            let data = subtract_ring(&slices[z].frames[t].data, rings.as_ref().map(|r| &r[z]));
            let mut xi = fbp(&data, &slab.geoms[i], RampFilter::Ramlak)?;
            apply_mask(&mut xi);
            Ok(xi)
        })
        .collect::<Result<_>>()?;

    let mut inr_cfg = cfg.inr.clone();
    inr_cfg.encoding.input_dim = if volumetric { 4 } else { 3 };
    inr_cfg.seed = model_seed;
    let mut model = InrModel::new(&inr_cfg)?;
    let scale = percentile_abs(x.iter(), 0.99);
    model.output_scale = if scale > 0.0 { scale } else { 1.0 };
    let mean_x0 = x.iter().map(|f| f.mean().unwrap_or(0.0)).sum::<f64>() / n as f64;
    model.head_bias = mean_x0 / model.output_scale;

    let mut params = model.params();
    let mut adam = AdamState::new(params.len(), cfg.adam);
    let mut q = slab.render_all(&model)?;
    let mut u: Vec<Array2<f64>> = vec![Array2::zeros((h, w)); n];
    let mu_eff = cfg.cgls.mu * geom.pixel_size * geom.pixel_size;
    let cgls_cfg = CglsConfig { mu: mu_eff, ..cfg.cgls };
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    jitter_rng.set_stream(model_seed);
    let (hc, wc) = (h / s_f, w / s_f);
    let n_coarse = hc * wc;

    let mut history = History {
        records: Vec::with_capacity(cfg.outer_iters),
        best_iteration: 0,
        best_residual: f64::INFINITY,
    };
    let mut best_params = params.clone();

    for k in 0..cfg.outer_iters {
        // x-update.
        let outcomes: Vec<(Array2<f64>, CglsStatus)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (z, t) = slab.split(i);
                let f = &slices[z].frames[t];
                let y = subtract_ring(&f.data, rings.as_ref().map(|r| &r[z]));
                let target = &q[i] - &u[i];
                let weights = if cfg.wls { f.weights.as_ref() } else { None };
                let out = cgls_xupdate(&slab.geoms[i], &y, &target, &cgls_cfg, weights, Some(&x[i]))?;
                let mut xi = out.x;
                apply_mask(&mut xi);
                Ok((xi, out.status))
            })
            .collect::<Result<_>>()?;
        let mut breakdowns = 0;
        for (i, (xi, status)) in outcomes.into_iter().enumerate() {
            breakdowns += usize::from(status == CglsStatus::Breakdown);
            x[i] = xi;
        }

        // Network update, one frame (all slices at that time) after another.
        let order: Vec<usize> = if k % 2 == 0 { (0..n_t).collect() } else { (0..n_t).rev().collect() };
        let lr = adam.lr;
        let use_tv_s = k > cfg.tv.k_s && cfg.tv.lambda_s > 0.0;
        let use_tv_t = k > cfg.tv.k_t && cfg.tv.lambda_t > 0.0;
        let use_tv_a = slab.n_z() > 1 && cfg.tv.lambda_a > 0.0;
        let mut totals = LossTotals::default();
        let mut prev: Option<Vec<Array2<f64>>> = None;
        for &t in &order {
            let targets: Vec<Array2<f64>> = (0..slab.n_z())
                .map(|z| downsample_mean(&(&x[slab_idx(&slab, z, t)] + &u[slab_idx(&slab, z, t)]), s_f))
                .collect::<Result<_>>()?;
            let mut last: Vec<Array2<f64>> = Vec::new();
            for step in 0..cfg.inr_updates_per_iter {
                let grid = jittered_grid(h, w, s_f, cfg.jitter.then_some(&mut jitter_rng))?;
                let coords = ndarray::concatenate(
                    Axis(0),
                    &(0..slab.n_z())
                        .map(|z| slab_coords(&grid, slab.z_coord(z), t, n_t))
                        .collect::<Vec<_>>()
                        .iter()
                        .map(|a| a.view())
                        .collect::<Vec<_>>(),
                )
                .expect("equal column counts");
                let feats = encode(coords.view(), &model.encoding)?;
                let (pred, cache) = inr_forward(&model, feats.view())?;
                let preds: Vec<Array2<f64>> = (0..slab.n_z())
                    .map(|z| {
                        pred.slice(s![z * n_coarse..(z + 1) * n_coarse])
                            .to_owned()
                            .into_shape_with_order((hc, wc))
                            .expect("coarse grid")
                    })
                    .collect();
                let inv_z = 1.0 / slab.n_z() as f64;
                let mut upstream = vec![0.0; pred.len()];
                let mut loss = [0.0; 4];
                for z in 0..slab.n_z() {
                    let off = z * n_coarse;
                    let mut grad = Array2::<f64>::zeros((hc, wc));
                    let scale = 2.0 * inv_z / n_coarse as f64;
                    ndarray::Zip::from(&mut grad).and(&preds[z]).and(&targets[z]).for_each(|g, &p, &tg| {
                        let d = p - tg;
                        loss[0] += d * d * inv_z / n_coarse as f64;
                        *g = scale * d;
                    });
                    if use_tv_s {
                        let (l, g) = tv_spatial(&preds[z], cfg.tv.eps_tv)?;
                        loss[1] += cfg.tv.lambda_s * inv_z * l;
                        grad.scaled_add(cfg.tv.lambda_s * inv_z, &g);
                    }
                    if let (true, Some(p)) = (use_tv_t, prev.as_ref()) {
                        let (l, g) = tv_temporal(&preds[z], &p[z], cfg.tv.eps_tv)?;
                        loss[2] += cfg.tv.lambda_t * inv_z * l;
                        grad.scaled_add(cfg.tv.lambda_t * inv_z, &g);
                    }
                    for (dst, g) in upstream[off..off + n_coarse].iter_mut().zip(grad.iter()) {
                        *dst += g;
                    }
                }
                if use_tv_a {
                    let (l, gs) = tv_axial(&preds, cfg.tv.eps_tv)?;
                    loss[3] += cfg.tv.lambda_a * l;
                    for (z, g) in gs.iter().enumerate() {
                        let off = z * n_coarse;
                        for (dst, gv) in upstream[off..off + n_coarse].iter_mut().zip(g.iter()) {
                            *dst += cfg.tv.lambda_a * gv;
                        }
                    }
                }
                if loss.iter().any(|l| !l.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "network loss at outer iteration {k}, frame {t}, step {step}: \
                         mse {:e}, tv_s {:e}, tv_t {:e}, tv_a {:e}, lr {:e}",
                        loss[0], loss[1], loss[2], loss[3], adam.lr
                    )));
                }
                totals.mse += loss[0];
                totals.tv_s += loss[1];
                totals.tv_t += loss[2];
                totals.tv_a += loss[3];
                totals.count += 1;
                let grads = inr_backward(&model, &cache, &upstream)?;
                adam_step(&mut adam, &mut params, &grads).map_err(|e| {
                    Error::NonFinite(format!("outer iteration {k}, frame {t}, step {step}: {e}"))
                })?;
                model.set_params(&params)?;
                last = preds;
            }
            prev = Some(last);
        }

        // q- and u-updates at full resolution.
        q = slab.render_all(&model)?;
        let mut mean_residual = 0.0;
        for i in 0..n {
            let r = &x[i] - &q[i];
            mean_residual += norm(&r) / n as f64;
            u[i] += &r;
        }

        if let (Some(rs), true) = (rings.as_mut(), cfg.ring.estimate) {
            for (z, ring) in rs.iter_mut().enumerate() {
                let images = match cfg.ring.residual_source {
                    RingResidualSource::Model => &q[z * n_t..(z + 1) * n_t],
                    RingResidualSource::Data => &x[z * n_t..(z + 1) * n_t],
                };
                let resid = compute_residuals(slices[z], images, geom)?;
                *ring = estimate_ring_bias(&resid, &cfg.ring.estimator)?;
            }
        }

        let data_residual = slab.data_residuals(&q, rings.as_deref())?;
        let c = totals.count.max(1) as f64;
        history.records.push(IterationRecord {
            iteration: k,
            mean_residual,
            data_residual,
            loss_mse: totals.mse / c,
            loss_tv_spatial: totals.tv_s / c,
            loss_tv_temporal: totals.tv_t / c,
            loss_tv_axial: totals.tv_a / c,
            lr,
            frame_order: order,
            cgls_breakdowns: breakdowns,
        });
        observer(&IterationView {
            record: history.records.last().expect("just pushed"),
            x: &x,
            q: &q,
            u: &u,
            rings: rings.as_deref(),
        });
        if mean_residual < history.best_residual {
            history.best_residual = mean_residual;
            history.best_iteration = k;
            best_params.clone_from(&params);
        }
        adam.decay();
    }

    model.set_params(&best_params)?;
    let frames = slab.render_all(&model)?;
    let mut per_slice = Vec::with_capacity(slab.n_z());
    let mut it = frames.into_iter();
    for _ in 0..slab.n_z() {
        per_slice.push(it.by_ref().take(n_t).collect());
    }
    Ok(SlabOutput {
        model,
        frames: per_slice,
        history,
        rings,
    })
}

fn slab_idx(slab: &Slab<'_>, z: usize, t: usize) -> usize {
    z * slab.n_t + t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_prefers_minimum_then_earlier() {
        let cps = ["a", "b", "c"];
        assert_eq!(select_model(&[3.0, 1.0, 2.0], &cps).unwrap().0, 1);
        assert_eq!(select_model(&[2.0, 1.0, 1.0], &cps).unwrap().0, 1);
        assert_eq!(select_model(&[3.0, 2.0, 1.0], &cps).unwrap().0, 2);
        assert!(select_model::<&str>(&[], &[]).is_err());
    }

    #[test]
    fn coordinates_put_time_last() {
        let g = full_grid(2, 2);
        let c = slab_coords(&g, None, 2, 3);
        assert_eq!(c.ncols(), 3);
        assert!(c.column(2).iter().all(|&v| v == 1.0));
        let c = slab_coords(&g, Some((0, 2)), 0, 3);
        assert_eq!(c.ncols(), 4);
        assert!(c.column(2).iter().all(|&v| v == -1.0));
        assert!(c.column(3).iter().all(|&v| v == -1.0));
    }

    #[test]
    fn zero_counts_are_config_errors() {
        let cfg = ReconstructionConfig { outer_iters: 0, ..Default::default() };
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    }
}

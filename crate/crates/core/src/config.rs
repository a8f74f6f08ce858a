//! Experiment configuration (TOML) and the stage builders it drives.
//!
//! Every section rejects unknown keys so typos fail loudly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acquisition::{apply_poisson, build_schedule, inject_ring_bias, simulate_scan, DynamicSequence, RingBias, SinogramStack};
use crate::admm::ReconstructionConfig;
use crate::error::{Error, Result};
use crate::metrics::{MaskMode, SsimConfig};
use crate::phantom::{crop, map_attenuation, simulate_sequence, ChParams, PhaseField, DEFAULT_PIXEL_SIZE_MM, MU_AL, MU_AL2CU};
use crate::tomo::{ProjectorGeometry, RampFilter};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropConfig {
    pub row: usize,
    pub col: usize,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    /// Simulation grid side (power of two).
    pub size: usize,
    /// Object states written (one per projection of the scan).
    pub n_frames: usize,
    /// Mean initial composition.
    pub c0: f64,
    /// Half-width of the uniform initial perturbation.
    pub amplitude: f64,
    pub seed: u64,
    pub ch: ChParams,
    /// Steps discarded before the first saved state.
    pub warmup_steps: usize,
    /// Steps between consecutive saved states.
    pub steps_per_frame: usize,
    pub threshold: f64,
    /// mm^-1.
    pub mu_low: f64,
    /// mm^-1.
    pub mu_high: f64,
    /// mm.
    pub pixel_size: f64,
    pub crop: Option<CropConfig>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            size: 128,
            n_frames: 64,
            c0: 0.5,
            amplitude: 0.05,
            seed: 0,
            ch: ChParams::default(),
            warmup_steps: 600,
            steps_per_frame: 4,
            threshold: 0.5,
            mu_low: MU_AL,
            mu_high: MU_AL2CU,
            pixel_size: DEFAULT_PIXEL_SIZE_MM,
            crop: None,
        }
    }
}

impl PhantomConfig {
    /// Runs the phase-field simulation and maps each saved state to attenuation.
    pub fn generate(&self) -> Result<DynamicSequence> {
        if self.n_frames == 0 || self.steps_per_frame == 0 {
            return Err(Error::Config("n_frames and steps_per_frame must be >= 1".into()));
        }
        self.ch.validate()?;
        let init = PhaseField::spinodal_initial(&[self.size, self.size], self.c0, self.amplitude, self.seed)?;
        let start = if self.warmup_steps > 0 {
            simulate_sequence(&init, &self.ch, self.warmup_steps, self.warmup_steps)?
                .pop()
                .expect("at least one snapshot")
        } else {
            init
        };
        let states = simulate_sequence(&start, &self.ch, (self.n_frames - 1) * self.steps_per_frame, self.steps_per_frame)?;
        let frames = states
            .iter()
            .take(self.n_frames)
            .map(|s| {
                let img = map_attenuation(s, self.threshold, self.mu_low, self.mu_high, self.pixel_size)?.values;
                match self.crop {
                    Some(c) => crop(&img, c.row, c.col, c.size),
                    None => Ok(img),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let times = (0..self.n_frames)
            .map(|i| (self.warmup_steps + i * self.steps_per_frame) as f64 * self.ch.dt)
            .collect();
        DynamicSequence::new(frames, self.pixel_size, times)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RingProfile {
    /// Two off-centre Gaussian bumps.
    #[default]
    TwoBumps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RingInjection {
    pub profile: RingProfile,
    /// Bump height as a fraction of the clean sinogram maximum.
    pub amplitude: f64,
}

impl Default for RingInjection {
    fn default() -> Self {
        Self {
            profile: RingProfile::TwoBumps,
            amplitude: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub n_theta: usize,
    /// Sub-frames per rotation.
    pub k: usize,
    pub n_cycles: usize,
    /// Detector bins; image width when absent.
    pub n_det: Option<usize>,
    /// Use `ceil(sqrt(2) W) + 1` bins instead of the width.
    pub full_coverage: bool,
    /// Incident photons per ray; noiseless when absent.
    pub dose: Option<f64>,
    pub noise_seed: u64,
    pub ring: Option<RingInjection>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            n_theta: 64,
            k: 8,
            n_cycles: 1,
            n_det: None,
            full_coverage: false,
            dose: None,
            noise_seed: 0,
            ring: None,
        }
    }
}

impl ScanConfig {
    pub fn n_det_for(&self, width: usize) -> usize {
        match (self.n_det, self.full_coverage) {
            (Some(n), _) => n,
            (None, true) => ProjectorGeometry::full_coverage_det(width),
            (None, false) => width,
        }
    }

    /// Projector grid for a `height x width` sequence (angles are set per frame later).
    pub fn geometry(&self, height: usize, width: usize, pixel_size: f64) -> Result<ProjectorGeometry> {
        ProjectorGeometry::new(height, width, pixel_size, self.n_det_for(width), vec![0.0])
    }

    /// Interlaced scan, then Poisson noise, then detector bias (in the log domain).
    pub fn run(&self, seq: &DynamicSequence) -> Result<SinogramStack> {
        let (h, w) = seq.dim();
        let geom = self.geometry(h, w, seq.pixel_size)?;
        let sched = build_schedule(self.n_theta, self.k, self.n_cycles).map_err(|e| Error::Config(e.to_string()))?;
        let mut stack = simulate_scan(seq, &sched, &geom)?;
        let peak = stack
            .frames
            .iter()
            .flat_map(|f| f.data.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if let Some(dose) = self.dose {
            stack = apply_poisson(&stack, dose, self.noise_seed)?;
        }
        if let Some(r) = &self.ring {
            let bias = match r.profile {
                RingProfile::TwoBumps => RingBias::two_bumps(stack.n_det, r.amplitude * peak),
            };
            stack = inject_ring_bias(&stack, &bias)?;
        }
        Ok(stack)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructSection {
    pub fbp_filter: RampFilter,
    pub admm: ReconstructionConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub mask: MaskMode,
    pub ssim: SsimConfig,
}

/// Overrides applied to the base configuration for one sweep row.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepEntry {
    pub label: String,
    pub n_theta: Option<usize>,
    pub k: Option<usize>,
    pub n_cycles: Option<usize>,
    pub n_frames: Option<usize>,
    pub steps_per_frame: Option<usize>,
    pub dose: Option<f64>,
    pub wls: Option<bool>,
    pub ring: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Reconstruction methods per entry.
    pub methods: Vec<String>,
    pub entries: Vec<SweepEntry>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            methods: vec!["fbp".into(), "admm-inr".into()],
            entries: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub phantom: PhantomConfig,
    pub scan: ScanConfig,
    pub reconstruct: ReconstructSection,
    pub metrics: MetricsConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Runtime(format!("cannot serialise config: {e}")))
    }

    pub fn to_table(&self) -> Result<toml::Table> {
        toml::Table::try_from(self).map_err(|e| Error::Runtime(format!("cannot serialise config: {e}")))
    }

    /// Base configuration with one sweep entry's overrides applied.
    pub fn with_entry(&self, e: &SweepEntry) -> Self {
        let mut c = self.clone();
        c.sweep = SweepConfig {
            methods: self.sweep.methods.clone(),
            entries: Vec::new(),
        };
        if let Some(v) = e.n_theta {
            c.scan.n_theta = v;
        }
        if let Some(v) = e.k {
            c.scan.k = v;
        }
        if let Some(v) = e.n_cycles {
            c.scan.n_cycles = v;
        }
        if let Some(v) = e.n_frames {
            c.phantom.n_frames = v;
        }
        if let Some(v) = e.steps_per_frame {
            c.phantom.steps_per_frame = v;
        }
        if e.dose.is_some() {
            c.scan.dose = e.dose;
        }
        if let Some(v) = e.wls {
            c.reconstruct.admm.wls = v;
        }
        if let Some(v) = e.ring {
            c.reconstruct.admm.ring.enabled = v;
        }
        c
    }
}

//! Subcommands behind the `dyntomo` binary.
//!
//! Each `cmd_*` reads its inputs from disk, writes a self-describing output
//! directory (data, sidecar, `run.toml`) and returns what it wrote. The
//! experiment runner chains the same functions, so its outputs match a manual
//! chain byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::admm::admm_reconstruct;
use crate::config::{ExperimentConfig, RingInjection};
use crate::error::{Error, Result};
use crate::io;
use crate::metrics::{evaluate_sequence, write_report_csv, MaskMode, MetricReport};
use crate::tomo::{adjoint_defect, fbp, uniform_angles, ProjectorGeometry};

#[derive(Debug, Parser)]
#[command(name = "dyntomo", version, about = "Interlaced dynamic CT simulation and reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Fbp,
    AdmmInr,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fbp => "fbp",
            Method::AdmmInr => "admm-inr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fbp" => Ok(Method::Fbp),
            "admm-inr" => Ok(Method::AdmmInr),
            other => Err(Error::Config(format!("unknown method `{other}` (expected fbp or admm-inr)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MaskArg {
    Full,
    Circle,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a phase-field sequence and write attenuation frames.
    Phantom {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interlaced scan of a sequence, with optional noise and detector bias.
    Scan {
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Incident photons per ray (overrides the config).
        #[arg(long)]
        dose: Option<f64>,
        /// Inject the default two-bump detector bias.
        #[arg(long)]
        ring: bool,
    },
    /// Reconstruct a sinogram stack.
    Reconstruct {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long, value_enum, default_value = "admm-inr")]
        method: Method,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Weighted least squares (needs photon counts).
        #[arg(long)]
        wls: bool,
        /// Estimate and remove a detector ring bias.
        #[arg(long)]
        ring_correction: bool,
    },
    /// PSNR/SSIM of a reconstruction against the ground-truth sequence.
    Metrics {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        mask: Option<MaskArg>,
        /// CSV destination.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run phantom, scan, reconstruct and metrics for every sweep entry.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the dot-product defect of the projector pair on random pairs.
    CertifyAdjoint {
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 32)]
        angles: usize,
        #[arg(long)]
        n_det: Option<usize>,
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export frames as 16-bit PNG (or PGM), normalised to the truth range when given.
    ExportPng {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth sequence whose min/max define the grey scale.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        pgm: bool,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn stamp(out: &Path, command: &str, inputs: &[(&str, &Path)], cfg: &ExperimentConfig) -> Result<()> {
    let mut hashes = BTreeMap::new();
    for (label, dir) in inputs {
        let files = if dir.is_dir() {
            io::hash_dir(dir)?
        } else {
            let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            BTreeMap::from([(name, io::sha256_file(dir)?)])
        };
        for (f, h) in files {
            hashes.insert(format!("{label}/{f}"), h);
        }
    }
    io::write_run_stamp(
        out,
        &io::RunStamp {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: hashes,
            config: cfg.to_table()?,
        },
    )
}

/// Writes the attenuation sequence described by `[phantom]`.
pub fn cmd_phantom(config: Option<&Path>, out: &Path) -> Result<usize> {
    let cfg = load_config(config)?;
    let seq = cfg.phantom.generate()?;
    let generator = toml::Table::try_from(&cfg.phantom).map_err(|e| Error::Runtime(e.to_string()))?;
    io::write_sequence(out, &seq, Some(generator))?;
    let inputs: Vec<(&str, &Path)> = config.map(|c| ("config", c)).into_iter().collect();
    stamp(out, "phantom", &inputs, &cfg)?;
    Ok(seq.len())
}

/// Scans a sequence directory according to `[scan]`.
pub fn cmd_scan(sequence: &Path, config: Option<&Path>, out: &Path, dose: Option<f64>, ring: bool) -> Result<()> {
    let mut cfg = load_config(config)?;
    if dose.is_some() {
        cfg.scan.dose = dose;
    }
    if ring && cfg.scan.ring.is_none() {
        cfg.scan.ring = Some(RingInjection::default());
    }
    let seq = io::read_sequence(sequence)?;
    let stack = cfg.scan.run(&seq)?;
    let profile = cfg.scan.ring.as_ref().map(|r| format!("{:?} amplitude {}", r.profile, r.amplitude));
    io::write_stack(out, &stack, profile)?;
    stamp(out, "scan", &[("sequence", sequence)], &cfg)
}

/// Reconstructs a stack directory with FBP or the network method.
pub fn cmd_reconstruct(
    stack_dir: &Path,
    method: Method,
    config: Option<&Path>,
    out: &Path,
    wls: bool,
    ring_correction: bool,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    cfg.reconstruct.admm.wls |= wls;
    cfg.reconstruct.admm.ring.enabled |= ring_correction;
    let stack = io::read_stack(stack_dir)?;
    if method == Method::AdmmInr && cfg.reconstruct.admm.wls && !stack.has_counts() {
        return Err(Error::Config("WLS requires photon counts".into()));
    }
    let scan_stamp: io::RunStamp = io::read_toml(&stack_dir.join(io::RUN_STAMP))?;
    let pixel_size = scan_stamp
        .config
        .get("phantom")
        .and_then(|p| p.get("pixel_size"))
        .and_then(|v| v.as_float())
        .unwrap_or(cfg.phantom.pixel_size);
    let width = stack_width(&scan_stamp, &cfg);
    let geom = ProjectorGeometry::new(width, width, pixel_size, stack.n_det, vec![0.0])?;
    io::ensure_dir(out)?;
    let mut sidecar = io::ReconSidecar {
        method: method.name().to_string(),
        height: width,
        width,
        n_frames: stack.n_frames(),
        pixel_size,
        reference_states: stack.reference_states.clone(),
        best_iteration: None,
        best_residual: None,
    };
    let frames = match method {
        Method::Fbp => stack
            .frames
            .par_iter()
            .map(|f| fbp(&f.data, &geom.with_angles(f.angles.clone())?, cfg.reconstruct.fbp_filter))
            .collect::<Result<Vec<_>>>()?,
        Method::AdmmInr => {
            let rec = admm_reconstruct(&stack, &geom, &cfg.reconstruct.admm)?;
            io::write_history_csv(&out.join(io::HISTORY_CSV), &rec.history)?;
            let mut inr_cfg = cfg.reconstruct.admm.inr.clone();
            inr_cfg.encoding.input_dim = 3;
            io::write_checkpoint(&out.join(io::CHECKPOINT), &inr_cfg, &rec.model)?;
            if let Some(r) = &rec.ring {
                io::write_ring_csv(&out.join(io::RING_CSV), r)?;
            }
            sidecar.best_iteration = Some(rec.history.best_iteration);
            sidecar.best_residual = Some(rec.history.best_residual);
            rec.frames
        }
    };
    io::write_frames(out, &frames, &sidecar)?;
    stamp(out, "reconstruct", &[("stack", stack_dir)], &cfg)
}

/// Image side of the scanned sequence, recorded by the phantom stage.
fn stack_width(scan_stamp: &io::RunStamp, cfg: &ExperimentConfig) -> usize {
    let phantom = scan_stamp.config.get("phantom");
    let crop = phantom
        .and_then(|p| p.get("crop"))
        .and_then(|c| c.get("size"))
        .and_then(|v| v.as_integer());
    let size = phantom.and_then(|p| p.get("size")).and_then(|v| v.as_integer());
    crop.or(size).map(|v| v as usize).unwrap_or(cfg.phantom.size)
}

/// Scores a reconstruction directory against the sequence it was scanned from.
pub fn cmd_metrics(recon: &Path, truth: &Path, config: Option<&Path>, mask: Option<MaskMode>, out: &Path) -> Result<MetricReport> {
    let cfg = load_config(config)?;
    let (frames, side) = io::read_frames(recon)?;
    let seq = io::read_sequence(truth)?;
    let reference = side
        .reference_states
        .iter()
        .map(|&i| {
            seq.frames
                .get(i)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("reference state {i} outside the {}-frame sequence", seq.len())))
        })
        .collect::<Result<Vec<Array2<f64>>>>()?;
    let report = evaluate_sequence(&frames, &reference, mask.unwrap_or(cfg.metrics.mask), &cfg.metrics.ssim)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        io::ensure_dir(parent)?;
    }
    write_report_csv(out, &side.method, &report)?;
    Ok(report)
}

/// One row of the experiment table.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRow {
    pub label: String,
    pub method: String,
    pub n_theta: usize,
    pub k: usize,
    pub dose: Option<f64>,
    pub report: Option<MetricReport>,
    pub error: Option<String>,
}

fn run_entry(dir: &Path, cfg: &ExperimentConfig, label: &str) -> Vec<ExperimentRow> {
    let row = |method: &str, report: Option<MetricReport>, error: Option<String>| ExperimentRow {
        label: label.to_string(),
        method: method.to_string(),
        n_theta: cfg.scan.n_theta,
        k: cfg.scan.k,
        dose: cfg.scan.dose,
        report,
        error,
    };
    let prepare = || -> Result<PathBuf> {
        io::ensure_dir(dir)?;
        let cfg_path = dir.join("config.toml");
        std::fs::write(&cfg_path, cfg.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
        cmd_phantom(Some(&cfg_path), &dir.join("phantom"))?;
        cmd_scan(&dir.join("phantom"), Some(&cfg_path), &dir.join("scan"), None, false)?;
        Ok(cfg_path)
    };
    let cfg_path = match prepare() {
        Ok(p) => p,
        Err(e) => return cfg.sweep.methods.iter().map(|m| row(m, None, Some(e.to_string()))).collect(),
    };
    cfg.sweep
        .methods
        .iter()
        .map(|m| {
            let result = Method::parse(m).and_then(|method| {
                let rdir = dir.join(m);
                cmd_reconstruct(&dir.join("scan"), method, Some(&cfg_path), &rdir, false, false)?;
                cmd_metrics(&rdir, &dir.join("phantom"), Some(&cfg_path), None, &dir.join(format!("metrics_{m}.csv")))
            });
            match result {
                Ok(r) => row(m, Some(r), None),
                Err(e) => row(m, None, Some(e.to_string())),
            }
        })
        .collect()
}

fn table_value(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_infinite() => "inf".into(),
        Some(v) => format!("{v:.6}"),
        None => String::new(),
    }
}

/// Runs every sweep entry (or the base config alone) and writes `table.csv`.
///
/// A failing entry is recorded as a `failed` row; the others still run.
pub fn cmd_experiment(config: &Path, out: &Path) -> Result<Vec<ExperimentRow>> {
    let base = ExperimentConfig::load(config)?;
    for m in &base.sweep.methods {
        Method::parse(m)?;
    }
    io::ensure_dir(out)?;
    let started = Instant::now();
    let entries: Vec<(String, ExperimentConfig)> = if base.sweep.entries.is_empty() {
        vec![("base".to_string(), base.with_entry(&Default::default()))]
    } else {
        base.sweep
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let label = if e.label.is_empty() { format!("entry{i}") } else { e.label.clone() };
                (label, base.with_entry(e))
            })
            .collect()
    };
    let rows: Vec<ExperimentRow> = entries
        .par_iter()
        .flat_map_iter(|(label, cfg)| run_entry(&out.join(label), cfg, label))
        .collect();
    let path = out.join("table.csv");
    let csv_err = |e: csv::Error| Error::Format {
        path: path.clone(),
        reason: e.to_string(),
    };
    let mut wr = csv::Writer::from_path(&path).map_err(csv_err)?;
    wr.write_record(["label", "method", "n_theta", "k", "dose", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std", "status"])
        .map_err(csv_err)?;
    for r in &rows {
        let rep = r.report.as_ref();
        wr.write_record([
            r.label.clone(),
            r.method.clone(),
            r.n_theta.to_string(),
            r.k.to_string(),
            r.dose.map(|d| d.to_string()).unwrap_or_default(),
            table_value(rep.map(|m| m.psnr_mean)),
            table_value(rep.map(|m| m.psnr_std)),
            table_value(rep.map(|m| m.ssim_mean)),
            table_value(rep.map(|m| m.ssim_std)),
            r.error.as_ref().map_or("ok".to_string(), |e| format!("failed: {e}")),
        ])
        .map_err(csv_err)?;
    }
    wr.flush().map_err(|e| Error::io(&path, e))?;
    stamp(out, "experiment", &[("config", config)], &base)?;
    if started.elapsed() > Duration::from_secs(30 * 60) {
        eprintln!("warning: experiment took {:.1} min (desk-scale budget is 30 min)", started.elapsed().as_secs_f64() / 60.0);
    }
    Ok(rows)
}

/// Maximum relative defect `|<Px,y> - <x,P^T y>| / (||Px|| ||y||)` over random pairs.
pub fn cmd_certify_adjoint(size: usize, angles: usize, n_det: Option<usize>, pairs: usize, seed: u64) -> Result<f64> {
    let geom = ProjectorGeometry::new(size, size, 1.0, n_det.unwrap_or(size), uniform_angles(angles))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let x = Array2::from_shape_fn((size, size), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((angles, geom.n_det), |_| rng.random_range(-1.0..1.0));
        worst = worst.max(adjoint_defect(&x, &y, &geom)?);
    }
    Ok(worst)
}

/// Writes one image per frame; returns the grey-scale range used.
pub fn cmd_export_png(frames_dir: &Path, out: &Path, truth: Option<&Path>, pgm: bool) -> Result<(f64, f64)> {
    let frames = if frames_dir.join(io::RECON_SIDECAR).exists() {
        io::read_frames(frames_dir)?.0
    } else {
        io::read_sequence(frames_dir)?.frames
    };
    let range_of = |fs: &[Array2<f64>]| {
        fs.iter()
            .flat_map(|f| f.iter())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    };
    let (lo, hi) = match truth {
        Some(t) => range_of(&io::read_sequence(t)?.frames),
        None => range_of(&frames),
    };
    io::ensure_dir(out)?;
    for (t, f) in frames.iter().enumerate() {
        if pgm {
            io::write_pgm16(&out.join(format!("frame_{t:04}.pgm")), f, lo, hi)?;
        } else {
            io::write_png16(&out.join(format!("frame_{t:04}.png")), f, lo, hi)?;
        }
    }
    io::write_toml(&out.join("export.toml"), &toml::toml! { lo = lo hi = hi })?;
    Ok((lo, hi))
}

/// Dispatches a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Phantom { config, out } => cmd_phantom(config.as_deref(), &out).map(|n| println!("wrote {n} frames to {}", out.display())),
        Command::Scan { sequence, config, out, dose, ring } => cmd_scan(&sequence, config.as_deref(), &out, dose, ring),
        Command::Reconstruct {
            stack,
            method,
            config,
            out,
            wls,
            ring_correction,
        } => cmd_reconstruct(&stack, method, config.as_deref(), &out, wls, ring_correction),
        Command::Metrics { recon, truth, config, mask, out } => {
            let mask = mask.map(|m| match m {
                MaskArg::Full => MaskMode::Full,
                MaskArg::Circle => MaskMode::Circle,
            });
            cmd_metrics(&recon, &truth, config.as_deref(), mask, &out).map(|r| {
                println!(
                    "PSNR {:.2} ± {:.2} dB, SSIM {:.4} ± {:.4}",
                    r.psnr_mean, r.psnr_std, r.ssim_mean, r.ssim_std
                )
            })
        }
        Command::Experiment { config, out } => cmd_experiment(&config, &out).map(|rows| {
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            println!("{} rows ({failed} failed) in {}", rows.len(), out.join("table.csv").display());
        }),
        Command::CertifyAdjoint {
            size,
            angles,
            n_det,
            pairs,
            seed,
        } => cmd_certify_adjoint(size, angles, n_det, pairs, seed).map(|d| println!("max relative defect {d:.3e}")),
        Command::ExportPng { frames, out, truth, pgm } => {
            cmd_export_png(&frames, &out, truth.as_deref(), pgm).map(|(lo, hi)| println!("grey range [{lo}, {hi}]"))
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

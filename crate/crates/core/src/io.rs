//! On-disk formats.
//!
//! Arrays are raw little-endian `f32` with a TOML sidecar describing shape and
//! provenance. Every output directory also gets a `run.toml` stamp with the
//! resolved configuration, crate version and SHA-256 of the inputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acquisition::{DynamicSequence, RingBias, SinogramFrame, SinogramStack};
use crate::admm::History;
use crate::error::{Error, Result};
use crate::inr::{InrConfig, InrModel};

pub const SEQUENCE_SIDECAR: &str = "sequence.toml";
pub const STACK_SIDECAR: &str = "stack.toml";
pub const RECON_SIDECAR: &str = "reconstruction.toml";
pub const RUN_STAMP: &str = "run.toml";
pub const HISTORY_CSV: &str = "history.csv";
pub const RING_CSV: &str = "ring.csv";
pub const CHECKPOINT: &str = "model.bin";

const CHECKPOINT_MAGIC: &[u8; 8] = b"DTINRCK\0";
const CHECKPOINT_VERSION: u32 = 1;

fn fmt_err(path: &Path, reason: impl ToString) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_f32(path: &Path, values: impl IntoIterator<Item = f64>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in values {
        w.write_all(&(v as f32).to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_f32(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(fmt_err(path, format!("expected {} bytes, found {}", expected * 4, bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn read_f32_image(path: &Path, h: usize, w: usize) -> Result<Array2<f64>> {
    Ok(Array2::from_shape_vec((h, w), read_f32(path, h * w)?).expect("length checked"))
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string_pretty(value).map_err(|e| fmt_err(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| fmt_err(path, e.message()))
}

fn frame_name(t: usize) -> String {
    format!("frame_{t:04}.f32")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSidecar {
    pub height: usize,
    pub width: usize,
    pub n_frames: usize,
    /// mm.
    pub pixel_size: f64,
    pub times: Vec<f64>,
    /// Slice index for volume sequences.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice: Option<usize>,
    /// Generator settings (free-form).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<toml::Table>,
}

/// Writes `frame_XXXX.f32` files plus `sequence.toml`.
pub fn write_sequence(dir: &Path, seq: &DynamicSequence, generator: Option<toml::Table>) -> Result<()> {
    ensure_dir(dir)?;
    let (h, w) = seq.dim();
    for (t, f) in seq.frames.iter().enumerate() {
        write_f32(&dir.join(frame_name(t)), f.iter().copied())?;
    }
    write_toml(
        &dir.join(SEQUENCE_SIDECAR),
        &SequenceSidecar {
            height: h,
            width: w,
            n_frames: seq.len(),
            pixel_size: seq.pixel_size,
            times: seq.times.clone(),
            slice: None,
            generator,
        },
    )
}

pub fn read_sequence(dir: &Path) -> Result<DynamicSequence> {
    let side: SequenceSidecar = read_toml(&dir.join(SEQUENCE_SIDECAR))?;
    let frames = (0..side.n_frames)
        .map(|t| read_f32_image(&dir.join(frame_name(t)), side.height, side.width))
        .collect::<Result<Vec<_>>>()?;
    DynamicSequence::new(frames, side.pixel_size, side.times)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackSidecar {
    pub n_frames: usize,
    pub n_det: usize,
    pub n_theta: usize,
    pub k: usize,
    pub angles_per_frame: usize,
    /// Radians, one list per frame in acquisition order.
    pub angles: Vec<Vec<f64>>,
    pub reference_states: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dose: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<u64>,
    pub has_counts: bool,
    /// Injected detector bias.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ring: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ring_profile: Option<String>,
}

/// Writes `sinograms.f32` (frame, angle, detector), optional `counts.f32` and `stack.toml`.
pub fn write_stack(dir: &Path, stack: &SinogramStack, ring_profile: Option<String>) -> Result<()> {
    stack.validate()?;
    ensure_dir(dir)?;
    let per = stack.frames.first().map_or(0, |f| f.angles.len());
    if stack.frames.iter().any(|f| f.angles.len() != per) {
        return Err(Error::invalid("frames must share the number of angles"));
    }
    write_f32(&dir.join("sinograms.f32"), stack.frames.iter().flat_map(|f| f.data.iter().copied()))?;
    let has_counts = stack.has_counts();
    if has_counts {
        write_f32(
            &dir.join("counts.f32"),
            stack.frames.iter().flat_map(|f| f.counts.as_ref().expect("checked").iter().copied()),
        )?;
    }
    write_toml(
        &dir.join(STACK_SIDECAR),
        &StackSidecar {
            n_frames: stack.n_frames(),
            n_det: stack.n_det,
            n_theta: stack.n_theta,
            k: stack.k,
            angles_per_frame: per,
            angles: stack.frames.iter().map(|f| f.angles.clone()).collect(),
            reference_states: stack.reference_states.clone(),
            dose: stack.dose,
            noise_seed: stack.noise_seed,
            has_counts,
            ring: stack.ring.as_ref().map(|r| r.c.clone()),
            ring_profile,
        },
    )
}

/// Reads a stack; weights are rebuilt as `counts / dose`.
pub fn read_stack(dir: &Path) -> Result<SinogramStack> {
    let side_path = dir.join(STACK_SIDECAR);
    let side: StackSidecar = read_toml(&side_path)?;
    if side.angles.len() != side.n_frames || side.angles.iter().any(|a| a.len() != side.angles_per_frame) {
        return Err(fmt_err(&side_path, "angle lists disagree with n_frames/angles_per_frame"));
    }
    let plane = side.angles_per_frame * side.n_det;
    let data = read_f32(&dir.join("sinograms.f32"), side.n_frames * plane)?;
    let counts = if side.has_counts {
        Some(read_f32(&dir.join("counts.f32"), side.n_frames * plane)?)
    } else {
        None
    };
    if side.has_counts && side.dose.is_none() {
        return Err(fmt_err(&side_path, "counts present without a dose"));
    }
    let shape = (side.angles_per_frame, side.n_det);
    let frames = (0..side.n_frames)
        .map(|t| {
            let rng = t * plane..(t + 1) * plane;
            let counts = counts
                .as_ref()
                .map(|c| Array2::from_shape_vec(shape, c[rng.clone()].to_vec()).expect("length checked"));
            let weights = counts.as_ref().zip(side.dose).map(|(c, d)| c.mapv(|v| v / d));
            SinogramFrame {
                angles: side.angles[t].clone(),
                data: Array2::from_shape_vec(shape, data[rng].to_vec()).expect("length checked"),
                counts,
                weights,
            }
        })
        .collect();
    let stack = SinogramStack {
        frames,
        n_det: side.n_det,
        n_theta: side.n_theta,
        k: side.k,
        reference_states: side.reference_states,
        dose: side.dose,
        noise_seed: side.noise_seed,
        ring: side.ring.map(|c| RingBias { c }),
    };
    stack.validate()?;
    Ok(stack)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconSidecar {
    pub method: String,
    pub height: usize,
    pub width: usize,
    pub n_frames: usize,
    pub pixel_size: f64,
    /// Ground-truth object state of each frame.
    pub reference_states: Vec<usize>,
    /// Iteration whose model was kept (network reconstructions).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_iteration: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_residual: Option<f64>,
}

pub fn write_frames(dir: &Path, frames: &[Array2<f64>], sidecar: &ReconSidecar) -> Result<()> {
    ensure_dir(dir)?;
    for (t, f) in frames.iter().enumerate() {
        write_f32(&dir.join(frame_name(t)), f.iter().copied())?;
    }
    write_toml(&dir.join(RECON_SIDECAR), sidecar)
}

pub fn read_frames(dir: &Path) -> Result<(Vec<Array2<f64>>, ReconSidecar)> {
    let side: ReconSidecar = read_toml(&dir.join(RECON_SIDECAR))?;
    let frames = (0..side.n_frames)
        .map(|t| read_f32_image(&dir.join(frame_name(t)), side.height, side.width))
        .collect::<Result<_>>()?;
    Ok((frames, side))
}

/// One row per outer iteration.
pub fn write_history_csv(path: &Path, history: &History) -> Result<()> {
    let csv_err = |e: csv::Error| fmt_err(path, e);
    let mut wr = csv::Writer::from_path(path).map_err(csv_err)?;
    wr.write_record([
        "iteration",
        "mean_residual",
        "mean_data_residual",
        "data_residual_per_frame",
        "loss_mse",
        "loss_tv_spatial",
        "loss_tv_temporal",
        "loss_tv_axial",
        "lr",
        "frame_order",
        "cgls_breakdowns",
        "best",
    ])
    .map_err(csv_err)?;
    for r in &history.records {
        let join = |v: Vec<String>| v.join(";");
        wr.write_record([
            r.iteration.to_string(),
            format!("{:e}", r.mean_residual),
            format!("{:e}", r.mean_data_residual()),
            join(r.data_residual.iter().map(|v| format!("{v:e}")).collect()),
            format!("{:e}", r.loss_mse),
            format!("{:e}", r.loss_tv_spatial),
            format!("{:e}", r.loss_tv_temporal),
            format!("{:e}", r.loss_tv_axial),
            format!("{:e}", r.lr),
            join(r.frame_order.iter().map(|v| v.to_string()).collect()),
            r.cgls_breakdowns.to_string(),
            u8::from(r.iteration == history.best_iteration).to_string(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush().map_err(|e| Error::io(path, e))
}

pub fn write_ring_csv(path: &Path, ring: &RingBias) -> Result<()> {
    let csv_err = |e: csv::Error| fmt_err(path, e);
    let mut wr = csv::Writer::from_path(path).map_err(csv_err)?;
    wr.write_record(["detector", "c"]).map_err(csv_err)?;
    for (j, c) in ring.c.iter().enumerate() {
        wr.write_record([j.to_string(), format!("{c:e}")]).map_err(csv_err)?;
    }
    wr.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    config: InrConfig,
    output_scale: f64,
    n_params: usize,
}

/// Model checkpoint layout:
///
/// ```text
/// 8 bytes   magic "DTINRCK\0"
/// u32 LE    format version
/// u32 LE    header length L
/// L bytes   TOML header (network config, output scale, parameter count)
/// 4*n bytes parameters as f32 LE, in `InrModel::params` order
/// ```
///
/// The Fourier matrix is regenerated from the seed in the header.
pub fn write_checkpoint(path: &Path, cfg: &InrConfig, model: &InrModel) -> Result<()> {
    let header = toml::to_string(&CheckpointHeader {
        config: cfg.clone(),
        output_scale: model.output_scale,
        n_params: model.n_params(),
    })
    .map_err(|e| fmt_err(path, e))?;
    let mut bytes = Vec::with_capacity(16 + header.len() + 4 * model.n_params());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    for p in model.params() {
        bytes.extend_from_slice(&(p as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(InrConfig, InrModel)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(fmt_err(path, "not a model checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(fmt_err(path, format!("unsupported checkpoint version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| fmt_err(path, "truncated header"))?;
    let text = std::str::from_utf8(body).map_err(|e| fmt_err(path, e))?;
    let header: CheckpointHeader = toml::from_str(text).map_err(|e| fmt_err(path, e.message()))?;
    let mut model = InrModel::new(&header.config)?;
    let raw = &bytes[16 + hlen..];
    if raw.len() != 4 * header.n_params || header.n_params != model.n_params() {
        return Err(fmt_err(path, "parameter block does not match the header"));
    }
    let params: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    model.set_params(&params)?;
    model.output_scale = header.output_scale;
    Ok((header.config, model))
}

fn to_u16(image: &Array2<f64>, lo: f64, hi: f64) -> Vec<u16> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    image
        .iter()
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect()
}

/// 16-bit grayscale PNG with `[lo, hi]` mapped to the full range.
pub fn write_png16(path: &Path, image: &Array2<f64>, lo: f64, hi: f64) -> Result<()> {
    let (h, w) = image.dim();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut wr = enc.write_header().map_err(|e| fmt_err(path, e))?;
    let data: Vec<u8> = to_u16(image, lo, hi).iter().flat_map(|v| v.to_be_bytes()).collect();
    wr.write_image_data(&data).map_err(|e| fmt_err(path, e))?;
    wr.finish().map_err(|e| fmt_err(path, e))
}

/// Binary 16-bit PGM (P5, big-endian samples).
pub fn write_pgm16(path: &Path, image: &Array2<f64>, lo: f64, hi: f64) -> Result<()> {
    let (h, w) = image.dim();
    let mut bytes = format!("P5\n{w} {h}\n65535\n").into_bytes();
    bytes.extend(to_u16(image, lo, hi).iter().flat_map(|v| v.to_be_bytes()));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// SHA-256 of every regular file directly inside `dir`, keyed by file name.
pub fn hash_dir(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    for p in paths {
        let name = p.file_name().expect("file").to_string_lossy().into_owned();
        if name != RUN_STAMP {
            out.insert(name, sha256_file(&p)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunStamp {
    pub command: String,
    pub version: String,
    /// Input file hashes, keyed `"<input>/<file>"`.
    pub inputs: BTreeMap<String, String>,
    pub config: toml::Table,
}

pub fn write_run_stamp(dir: &Path, stamp: &RunStamp) -> Result<()> {
    write_toml(&dir.join(RUN_STAMP), stamp)
}

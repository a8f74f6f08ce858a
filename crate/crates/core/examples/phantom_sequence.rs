//! Spinodal decomposition phantom: simulate, map to attenuation, export PNGs.
//!
//! `cargo run --release --example phantom_sequence -- [size] [frames] [out_dir]`

use std::path::PathBuf;

use dyntomo::config::PhantomConfig;
use dyntomo::io::write_png16;
use dyntomo::metrics::dynamic_range;
use dyntomo::phantom::{sequence_spatial_information, Binarization};

pub fn run_example(args: &[String]) -> dyntomo::Result<()> {
    let size = args.first().and_then(|s| s.parse().ok()).unwrap_or(128);
    let n_frames = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(16);
    let out = args.get(2).map(PathBuf::from);

    let cfg = PhantomConfig {
        size,
        n_frames,
        ..PhantomConfig::default()
    };
    let seq = cfg.generate()?;
    let lo = seq.frames.iter().flat_map(|f| f.iter()).fold(f64::INFINITY, |m, &v| m.min(v));
    println!("{} frames of {size}x{size}, attenuation range {:.4} mm^-1 from {lo:.4}", seq.len(), dynamic_range(&seq.frames));
    println!("times {:.1} .. {:.1}", seq.times[0], seq.times[seq.len() - 1]);
    println!("spatial information {:.4}", sequence_spatial_information(&seq.frames, Binarization::Midpoint)?);

    if let Some(dir) = out {
        dyntomo::io::ensure_dir(&dir)?;
        let hi = lo + dynamic_range(&seq.frames);
        for (t, f) in seq.frames.iter().enumerate() {
            write_png16(&dir.join(format!("frame_{t:04}.png")), f, lo, hi)?;
        }
        println!("wrote {} PNGs to {}", seq.len(), dir.display());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> dyntomo::Result<()> {
    run_example(&std::env::args().skip(1).collect::<Vec<_>>())
}

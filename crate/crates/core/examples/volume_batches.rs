//! 4D reconstruction in independent axial batches with an axial TV term.
//!
//! `cargo run --release --example volume_batches -- [size] [slices] [batch] [outer_iters]`

use dyntomo::admm::reconstruct_4d;
use dyntomo::config::ExperimentConfig;
use dyntomo::metrics::{dynamic_range, psnr};

pub fn run_example(args: &[String]) -> dyntomo::Result<()> {
    let size: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(32);
    let n_z: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let batch: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2);
    let iters: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3);

    let mut cfg = ExperimentConfig::default();
    cfg.phantom.size = size;
    cfg.phantom.n_frames = 64;
    cfg.phantom.steps_per_frame = 1;
    cfg.scan.k = 4;
    cfg.scan.full_coverage = true;
    let admm = &mut cfg.reconstruct.admm;
    admm.outer_iters = iters;
    admm.axial_batch = batch;
    admm.inr.hidden = 32;
    admm.inr.encoding.mapping_size = 32;

    // Each slice is the same evolving cross-section, so the volume is z-invariant.
    let seq = cfg.phantom.generate()?;
    let stack = cfg.scan.run(&seq)?;
    let geom = cfg.scan.geometry(size, size, seq.pixel_size)?;
    let vol = reconstruct_4d(&vec![stack.clone(); n_z], &geom, &cfg.reconstruct.admm)?;

    let range = dynamic_range(&seq.frames);
    println!("{} batches over {n_z} slices", vol.batches.len());
    for b in &vol.batches {
        println!("  slices {}..{}: best iteration {}", b.first_slice, b.first_slice + b.n_slices, b.history.best_iteration);
    }
    for z in 1..n_z {
        let p: f64 = (0..stack.n_frames()).map(|t| psnr(&vol.frames[z - 1][t], &vol.frames[z][t], range)).sum::<dyntomo::Result<f64>>()?;
        println!("slice {} vs {z}: mean PSNR {:.2} dB", z - 1, p / stack.n_frames() as f64);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> dyntomo::Result<()> {
    run_example(&std::env::args().skip(1).collect::<Vec<_>>())
}

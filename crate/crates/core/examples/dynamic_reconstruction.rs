//! ADMM with a space-time network against per-frame FBP on an interlaced scan.
//!
//! `cargo run --release --example dynamic_reconstruction -- [size] [outer_iters] [hidden]`
//!
//! `128 10 64` reproduces the desk-scale comparison (about ten minutes on one core).

use dyntomo::admm::admm_reconstruct_observed;
use dyntomo::config::ExperimentConfig;
use dyntomo::metrics::{evaluate_sequence, MaskMode, SsimConfig};
use dyntomo::tomo::{fbp, RampFilter};

pub fn run_example(args: &[String]) -> dyntomo::Result<()> {
    let size: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(64);
    let iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let hidden: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(32);

    let mut cfg = ExperimentConfig::default();
    cfg.phantom.size = size;
    cfg.scan.full_coverage = true;
    let admm = &mut cfg.reconstruct.admm;
    admm.outer_iters = iters;
    admm.inr.hidden = hidden;
    admm.inr.encoding.mapping_size = hidden;

    let seq = cfg.phantom.generate()?;
    let stack = cfg.scan.run(&seq)?;
    let geom = cfg.scan.geometry(size, size, seq.pixel_size)?;
    let truth: Vec<_> = stack.reference_states.iter().map(|&i| seq.frames[i].clone()).collect();
    let sc = SsimConfig::default();

    let fbps = stack
        .frames
        .iter()
        .map(|f| fbp(&f.data, &geom.with_angles(f.angles.clone())?, RampFilter::Ramlak))
        .collect::<dyntomo::Result<Vec<_>>>()?;
    let base = evaluate_sequence(&fbps, &truth, MaskMode::Full, &sc)?;

    let rec = admm_reconstruct_observed(&stack, &geom, &cfg.reconstruct.admm, &mut |v| {
        let r = v.record;
        println!(
            "iter {:2}: mean ||x - q|| {:.4}, data residual {:.4}, order {:?}",
            r.iteration,
            r.mean_residual,
            r.mean_data_residual(),
            r.frame_order
        );
    })?;
    let ours = evaluate_sequence(&rec.frames, &truth, MaskMode::Full, &sc)?;
    println!("FBP      PSNR {:6.2} +- {:.2} dB  SSIM {:.3}", base.psnr_mean, base.psnr_std, base.ssim_mean);
    println!("ADMM-INR PSNR {:6.2} +- {:.2} dB  SSIM {:.3}  (iteration {})", ours.psnr_mean, ours.psnr_std, ours.ssim_mean, rec.history.best_iteration);
    Ok(())
}

#[allow(dead_code)]
fn main() -> dyntomo::Result<()> {
    run_example(&std::env::args().skip(1).collect::<Vec<_>>())
}

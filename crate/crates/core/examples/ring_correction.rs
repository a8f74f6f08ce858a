//! Detector bias round trip: inject a two-bump ring profile, estimate it inside ADMM.
//!
//! `cargo run --release --example ring_correction -- [size] [outer_iters]`

use dyntomo::admm::admm_reconstruct;
use dyntomo::config::{ExperimentConfig, RingInjection};

pub fn run_example(args: &[String]) -> dyntomo::Result<()> {
    let size: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(64);
    let iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(15);

    let mut cfg = ExperimentConfig::default();
    cfg.phantom.size = size;
    cfg.phantom.steps_per_frame = 1;
    cfg.phantom.ch.epsilon = 2.0;
    cfg.scan.k = 1;
    cfg.scan.full_coverage = true;
    cfg.scan.ring = Some(RingInjection::default());
    let admm = &mut cfg.reconstruct.admm;
    admm.outer_iters = iters;
    admm.inr.hidden = 64;
    admm.inr.encoding.mapping_size = 64;
    admm.tv.lambda_s = 0.05;
    admm.tv.k_s = 0;

    let seq = cfg.phantom.generate()?;
    let stack = cfg.scan.run(&seq)?;
    let geom = cfg.scan.geometry(size, size, seq.pixel_size)?;
    let truth = stack.ring.clone().expect("bias was injected");

    cfg.reconstruct.admm.ring.enabled = true;
    let on = admm_reconstruct(&stack, &geom, &cfg.reconstruct.admm)?;
    cfg.reconstruct.admm.ring.enabled = false;
    let off = admm_reconstruct(&stack, &geom, &cfg.reconstruct.admm)?;

    let est = on.ring.clone().expect("correction was enabled");
    let err: f64 = est.c.iter().zip(&truth.c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        / truth.c.iter().map(|b| b * b).sum::<f64>().sqrt();
    println!("relative bias error {err:.4}");
    for (name, rec) in [("with correction", &on), ("without", &off)] {
        println!("{name:16} final data residual {:.5}", rec.history.records.last().expect("ran").mean_data_residual());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> dyntomo::Result<()> {
    run_example(&std::env::args().skip(1).collect::<Vec<_>>())
}

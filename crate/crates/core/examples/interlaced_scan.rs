//! Bit-reversal interlaced acquisition of a moving object, with dose and detector bias.
//!
//! `cargo run --release --example interlaced_scan -- [n_theta] [k] [dose]`

use dyntomo::acquisition::{apply_poisson, build_schedule, inject_ring_bias, simulate_scan, RingBias};
use dyntomo::config::PhantomConfig;
use dyntomo::tomo::ProjectorGeometry;

pub fn run_example(args: &[String]) -> dyntomo::Result<()> {
    let n_theta: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(32);
    let k: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let dose: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e4);

    let sched = build_schedule(n_theta, k, 1)?;
    for t in 0..sched.n_frames() {
        let deg: Vec<String> = sched.frame_angles(t).iter().map(|a| format!("{:.1}", a.to_degrees())).collect();
        println!("frame {t}: {}", deg.join(" "));
    }

    let seq = PhantomConfig {
        size: 64,
        n_frames: n_theta,
        warmup_steps: 200,
        ..PhantomConfig::default()
    }
    .generate()?;
    let geom = ProjectorGeometry::new(64, 64, seq.pixel_size, ProjectorGeometry::full_coverage_det(64), vec![0.0])?;
    let clean = simulate_scan(&seq, &sched, &geom)?;
    let noisy = apply_poisson(&clean, dose, 0)?;
    let peak = clean.frames.iter().flat_map(|f| f.data.iter()).fold(0.0f64, |m, v| m.max(*v));
    let biased = inject_ring_bias(&noisy, &RingBias::two_bumps(clean.n_det, 0.1 * peak))?;

    let err: f64 = clean.frames.iter().zip(&noisy.frames).map(|(a, b)| (&a.data - &b.data).mapv(|v| v * v).sum()).sum();
    let energy: f64 = clean.frames.iter().map(|f| f.data.mapv(|v| v * v).sum()).sum();
    println!("{} frames x {} views x {} bins", biased.n_frames(), n_theta / k, biased.n_det);
    println!("reference states {:?}", biased.reference_states);
    println!("relative noise at dose {dose:e}: {:.4}", (err / energy).sqrt());
    Ok(())
}

#[allow(dead_code)]
fn main() -> dyntomo::Result<()> {
    run_example(&std::env::args().skip(1).collect::<Vec<_>>())
}

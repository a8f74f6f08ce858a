//! PSNR / SSIM of a degraded sequence, full frame and inscribed circle, written as CSV.
//!
//! `cargo run --release --example metrics_report -- [out.csv]`

use dyntomo::config::PhantomConfig;
use dyntomo::metrics::{evaluate_sequence, write_report_csv, MaskMode, SsimConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn run_example(args: &[String]) -> dyntomo::Result<()> {
    let truth = PhantomConfig {
        size: 64,
        n_frames: 4,
        ..PhantomConfig::default()
    }
    .generate()?
    .frames;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Normal::new(0.0, 0.02).expect("valid sigma");
    let noisy: Vec<_> = truth.iter().map(|f| f.mapv(|v| v + noise.sample(&mut rng))).collect();

    let sc = SsimConfig::default();
    for mode in [MaskMode::Full, MaskMode::Circle] {
        let r = evaluate_sequence(&noisy, &truth, mode, &sc)?;
        println!("{mode:?}: PSNR {:.2} +- {:.2} dB, SSIM {:.4} +- {:.4} (peak {:.4})", r.psnr_mean, r.psnr_std, r.ssim_mean, r.ssim_std, r.max_val);
        if let (MaskMode::Full, Some(path)) = (mode, args.first()) {
            write_report_csv(std::path::Path::new(path), "noisy", &r)?;
            println!("wrote {path}");
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> dyntomo::Result<()> {
    run_example(&std::env::args().skip(1).collect::<Vec<_>>())
}

//! Fit the Fourier-feature network with modulated sine activations to one image.
//!
//! `cargo run --release --example inr_fit -- [size] [steps] [hidden]`

use dyntomo::config::PhantomConfig;
use dyntomo::inr::{adam_step, encode, full_grid, inr_backward, inr_forward, AdamConfig, AdamState, InrConfig, InrModel};
use dyntomo::metrics::{dynamic_range, psnr};
use ndarray::Array2;

pub fn run_example(args: &[String]) -> dyntomo::Result<()> {
    let n: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(64);
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let hidden: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(64);
    let img = PhantomConfig {
        size: n,
        n_frames: 1,
        ..PhantomConfig::default()
    }
    .generate()?
    .frames
    .remove(0);

    let mut cfg = InrConfig {
        hidden,
        ..InrConfig::default()
    };
    cfg.encoding.mapping_size = hidden;
    cfg.encoding.input_dim = 2;
    let mut model = InrModel::new(&cfg)?;
    model.output_scale = img.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    model.head_bias = img.mean().unwrap_or(0.0) / model.output_scale;

    let feats = encode(full_grid(n, n).view(), &model.encoding)?;
    let mut params = model.params();
    let mut adam = AdamState::new(params.len(), AdamConfig::default());
    let range = dynamic_range(std::slice::from_ref(&img));
    for step in 0..steps {
        let (pred, cache) = inr_forward(&model, feats.view())?;
        let upstream: Vec<f64> = pred.iter().zip(img.iter()).map(|(p, t)| 2.0 * (p - t) / (n * n) as f64).collect();
        let grads = inr_backward(&model, &cache, &upstream)?;
        adam_step(&mut adam, &mut params, &grads)?;
        model.set_params(&params)?;
        if (step + 1) % 50 == 0 || step + 1 == steps {
            let fit = Array2::from_shape_vec((n, n), pred.to_vec()).expect("grid");
            println!("step {:4}: PSNR {:.2} dB", step + 1, psnr(&fit, &img, range)?);
        }
    }
    println!("{} parameters", model.n_params());
    Ok(())
}

#[allow(dead_code)]
fn main() -> dyntomo::Result<()> {
    run_example(&std::env::args().skip(1).collect::<Vec<_>>())
}

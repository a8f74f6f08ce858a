//! The penalised least-squares x-update: plain and weighted CGLS from sparse views.
//!
//! `cargo run --release --example cgls_xupdate -- [size] [angles] [mu]`

use dyntomo::metrics::psnr;
use dyntomo::solvers::{cgls_xupdate, CglsConfig};
use dyntomo::tomo::{disk_phantom, radon_forward, uniform_angles, ProjectorGeometry};
use ndarray::Array2;

pub fn run_example(args: &[String]) -> dyntomo::Result<()> {
    let n: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(64);
    let n_angles: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(16);
    let mu: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let geom = ProjectorGeometry::new(n, n, 1.0, ProjectorGeometry::full_coverage_det(n), uniform_angles(n_angles))?;
    let truth = disk_phantom(n, n, 0.3 * n as f64, 1.0, 4);
    let y = radon_forward(&truth, &geom)?;

    // A blurred prior stands in for the network render.
    let prior = truth.mapv(|v| 0.8 * v + 0.05);
    let cfg = CglsConfig {
        max_iters: 20,
        rel_tol: 1e-8,
        mu,
    };
    let out = cgls_xupdate(&geom, &y, &prior, &cfg, None, None)?;
    println!("{:?} after {} iterations, ||A^T r|| = {:.3e}", out.status, out.iterations, out.normal_residual);
    println!("residual history {:?}", out.residual_history.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>());
    println!("PSNR prior {:.2} dB -> x {:.2} dB", psnr(&prior, &truth, 1.0)?, psnr(&out.x, &truth, 1.0)?);

    let w = Array2::from_shape_fn(y.dim(), |(a, _)| if a % 2 == 0 { 1.0 } else { 0.25 });
    let wls = cgls_xupdate(&geom, &y, &prior, &cfg, Some(&w), Some(&out.x))?;
    println!("weighted, warm-started: {:?} after {} iterations", wls.status, wls.iterations);
    Ok(())
}

#[allow(dead_code)]
fn main() -> dyntomo::Result<()> {
    run_example(&std::env::args().skip(1).collect::<Vec<_>>())
}

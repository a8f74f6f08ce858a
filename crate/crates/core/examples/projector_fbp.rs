//! Matched projector pair (dot-product test) and filtered back-projection of a disk.
//!
//! `cargo run --release --example projector_fbp -- [size] [angles]`

use dyntomo::metrics::psnr;
use dyntomo::tomo::{adjoint_defect, disk_phantom, fbp, radon_forward, uniform_angles, ProjectorGeometry, RampFilter};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example(args: &[String]) -> dyntomo::Result<()> {
    let n: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(64);
    let n_angles: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(90);
    let geom = ProjectorGeometry::new(n, n, 1.0, ProjectorGeometry::full_coverage_det(n), uniform_angles(n_angles))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
    let y = Array2::from_shape_fn((n_angles, geom.n_det), |_| rng.random_range(-1.0..1.0));
    println!("<Px, y> vs <x, P^T y> relative defect {:.2e}", adjoint_defect(&x, &y, &geom)?);

    let disk = disk_phantom(n, n, 0.35 * n as f64, 1.0, 4);
    let sino = radon_forward(&disk, &geom)?;
    for filter in [RampFilter::Ramlak, RampFilter::Hann] {
        let rec = fbp(&sino, &geom, filter)?;
        println!("FBP {filter:?}: PSNR {:.2} dB", psnr(&rec, &disk, 1.0)?);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> dyntomo::Result<()> {
    run_example(&std::env::args().skip(1).collect::<Vec<_>>())
}

//! Dynamic parallel-beam CT with implicit neural representations.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! - [`phantom`]: spinodal-decomposition phantoms from a spectral Cahn-Hilliard solver
//! - [`acquisition`]: bit-reversal interlaced schedules, dynamic scans, Poisson dose and ring bias
//! - [`tomo`]: matched ray-driven projector / back-projector and filtered back-projection
//! - [`solvers`]: CGLS for the (weighted) penalised x-update and Huber-IRLS ring estimation
//! - [`inr`]: Fourier-feature coordinate network with modulated sine activations, Adam, TV
//! - [`admm`]: the ADMM reconstruction loop, model selection and axial batching
//! - [`metrics`]: PSNR / SSIM reports
//! - [`io`], [`config`], [`cli`]: file formats and the command-line pipeline

pub mod acquisition;
pub mod admm;
pub mod cli;
pub mod config;
pub mod error;
pub mod inr;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod solvers;
pub mod tomo;

pub use error::{Error, Result};

//! Coordinate network: Fourier features, modulated-sine MLP, Adam and TV penalties.

mod adam;
mod encoding;
mod model;
mod sampling;
mod tv;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use encoding::{encode, EncodingConfig, FourierEncoding};
pub use model::{inr_backward, inr_forward, ForwardCache, InrConfig, InrModel, Modulation};
pub use sampling::{downsample_mean, full_grid, jittered_grid, pixel_to_coord};
pub use tv::{tv_axial, tv_spatial, tv_temporal, TvConfig};

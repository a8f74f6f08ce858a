use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncodingConfig {
    /// Number of random frequencies `m`; features have `2m` columns.
    pub mapping_size: usize,
    /// Standard deviation of the Gaussian frequency matrix.
    pub scale: f64,
    /// 3 for (x, y, t), 4 for (x, y, z, t).
    pub input_dim: usize,
    /// Standard deviation for the time column (last input when `input_dim >= 3`).
    ///
    /// Much smaller than `scale`, so neighbouring frames share features and
    /// per-frame updates do not overwrite each other.
    pub time_scale: f64,
    pub seed: u64,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            mapping_size: 256,
            scale: 5.0,
            input_dim: 3,
            time_scale: 0.05,
            seed: 0,
        }
    }
}

/// Frozen Gaussian frequency matrix `B` (`m x input_dim`).
#[derive(Clone, Debug, PartialEq)]
pub struct FourierEncoding {
    pub b: Array2<f64>,
}

impl FourierEncoding {
    pub fn new(cfg: &EncodingConfig) -> Result<Self> {
        if cfg.mapping_size == 0 || cfg.input_dim == 0 {
            return Err(Error::invalid("mapping_size and input_dim must be >= 1"));
        }
        if !(cfg.scale >= 0.0) || !(cfg.time_scale >= 0.0) {
            return Err(Error::invalid("encoding scales must be >= 0"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let last = cfg.input_dim - 1;
        let b = Array2::from_shape_fn((cfg.mapping_size, cfg.input_dim), |(_, j)| {
            let s = if j == last && cfg.input_dim >= 3 { cfg.time_scale } else { cfg.scale };
            s * normal.sample(&mut rng)
        });
        Ok(Self { b })
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.b.nrows()
    }
}

/// `[cos(2 pi B v), sin(2 pi B v)]` for every row `v` of `coords`.
pub fn encode(coords: ArrayView2<f64>, enc: &FourierEncoding) -> Result<Array2<f64>> {
    if coords.ncols() != enc.input_dim() {
        return Err(Error::dims("coordinate columns", enc.input_dim(), coords.ncols()));
    }
    let m = enc.b.nrows();
    let mut proj = coords.dot(&enc.b.t());
    proj.mapv_inplace(|v| 2.0 * PI * v);
    let mut out = Array2::zeros((coords.nrows(), 2 * m));
    let (mut cos_half, mut sin_half) = out.view_mut().split_at(Axis(1), m);
    ndarray::Zip::from(&mut cos_half)
        .and(&mut sin_half)
        .and(&proj)
        .for_each(|c, s, &p| {
            let (sv, cv) = p.sin_cos();
            *c = cv;
            *s = sv;
        });
    Ok(out)
}

//! Modulated-sine MLP with hand-written reverse mode.
//!
//! Hidden layer `l` computes `h' = a sin(b w0 (W h + bias) + c) + d` where
//! `(a, b, c, d)` are learnable scalars of that layer. The head is linear and
//! its output is multiplied by a fixed `output_scale`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::encoding::{encode, EncodingConfig, FourierEncoding};
use crate::error::{ensure_finite, Error, Result};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InrConfig {
    pub hidden: usize,
    pub layers: usize,
    /// Base frequency of the sine activations.
    pub omega0: f64,
    pub encoding: EncodingConfig,
    /// Seed for weight initialisation.
    pub seed: u64,
}

impl Default for InrConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            layers: 3,
            omega0: 30.0,
            encoding: EncodingConfig::default(),
            seed: 0,
        }
    }
}

/// Amplitude, frequency, phase and offset of one activation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Modulation {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Default for Modulation {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 1.0,
            c: 0.0,
            d: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub modulation: Modulation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InrModel {
    pub encoding: FourierEncoding,
    pub layers: Vec<Layer>,
    pub head: Array1<f64>,
    pub head_bias: f64,
    pub omega0: f64,
    /// Fixed multiplier applied to the head output (not trained).
    pub output_scale: f64,
}

/// Intermediate values kept by [`inr_forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    linear: Vec<Array2<f64>>,
    sin: Vec<Array2<f64>>,
    cos: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn n_points(&self) -> usize {
        self.inputs.first().map_or(0, |h| h.nrows())
    }
}

impl InrModel {
    pub fn new(cfg: &InrConfig) -> Result<Self> {
        if cfg.hidden == 0 || cfg.layers == 0 {
            return Err(Error::invalid("network needs at least one hidden layer of width >= 1"));
        }
        if !(cfg.omega0 > 0.0 && cfg.omega0.is_finite()) {
            return Err(Error::invalid("omega0 must be > 0"));
        }
        let encoding = FourierEncoding::new(&cfg.encoding)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut fan_in = encoding.output_dim();
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let bound = if l == 0 {
                1.0 / fan_in as f64
            } else {
                (6.0 / fan_in as f64).sqrt() / cfg.omega0
            };
            let bias_bound = 1.0 / (fan_in as f64).sqrt();
            layers.push(Layer {
                weight: Array2::from_shape_fn((cfg.hidden, fan_in), |_| {
                    rng.random_range(-bound..bound)
                }),
                bias: Array1::from_shape_fn(cfg.hidden, |_| rng.random_range(-bias_bound..bias_bound)),
                modulation: Modulation::default(),
            });
            fan_in = cfg.hidden;
        }
        let bound = (6.0 / fan_in as f64).sqrt() / cfg.omega0;
        let head = Array1::from_shape_fn(fan_in, |_| rng.random_range(-bound..bound));
        Ok(Self {
            encoding,
            layers,
            head,
            head_bias: 0.0,
            omega0: cfg.omega0,
            output_scale: 1.0,
        })
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len() + 4)
            .sum::<usize>()
            + self.head.len()
            + 1
    }

    /// Flat parameter vector: per layer `[weight (row-major), bias, a, b, c, d]`, then head and head bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
            let m = l.modulation;
            out.extend([m.a, m.b, m.c, m.d]);
        }
        out.extend(self.head.iter());
        out.push(self.head_bias);
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::dims("parameter vector", self.n_params(), flat.len()));
        }
        let mut pos = 0;
        let mut take = |n: usize| {
            let s = &flat[pos..pos + n];
            pos += n;
            s
        };
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.iter_mut().zip(take(n)).for_each(|(w, v)| *w = *v);
            let n = l.bias.len();
            l.bias.iter_mut().zip(take(n)).for_each(|(w, v)| *w = *v);
            let m = take(4);
            l.modulation = Modulation {
                a: m[0],
                b: m[1],
                c: m[2],
                d: m[3],
            };
        }
        let n = self.head.len();
        self.head.iter_mut().zip(take(n)).for_each(|(w, v)| *w = *v);
        self.head_bias = take(1)[0];
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        for l in &self.layers {
            let m = l.modulation;
            ensure_finite("layer weights", l.weight.iter().chain(l.bias.iter()).chain([&m.a, &m.b, &m.c, &m.d]))?;
        }
        ensure_finite("head", self.head.iter().chain([&self.head_bias, &self.output_scale]))
    }

    /// Encodes and evaluates coordinates without keeping a cache.
    pub fn predict(&self, coords: ArrayView2<f64>) -> Result<Array1<f64>> {
        let feats = encode(coords, &self.encoding)?;
        Ok(inr_forward(self, feats.view())?.0)
    }
}

/// Evaluates the network on encoded features (`n x 2m`), one value per row.
pub fn inr_forward(model: &InrModel, features: ArrayView2<f64>) -> Result<(Array1<f64>, ForwardCache)> {
    model.check_finite()?;
    let expected = model.layers[0].weight.ncols();
    if features.ncols() != expected {
        return Err(Error::dims("feature columns", expected, features.ncols()));
    }
    let n_layers = model.layers.len();
    let mut cache = ForwardCache {
        inputs: Vec::with_capacity(n_layers),
        linear: Vec::with_capacity(n_layers),
        sin: Vec::with_capacity(n_layers),
        cos: Vec::with_capacity(n_layers),
    };
    let mut h = features.to_owned();
    for layer in &model.layers {
        let mut z = h.dot(&layer.weight.t());
        z += &layer.bias;
        let m = layer.modulation;
        let freq = m.b * model.omega0;
        let mut s = Array2::zeros(z.dim());
        let mut c = Array2::zeros(z.dim());
        let mut next = Array2::zeros(z.dim());
        ndarray::Zip::from(&mut s)
            .and(&mut c)
            .and(&mut next)
            .and(&z)
            .for_each(|s, c, o, &zv| {
                let (sv, cv) = (freq * zv + m.c).sin_cos();
                *s = sv;
                *c = cv;
                *o = m.a * sv + m.d;
            });
        cache.inputs.push(std::mem::replace(&mut h, next));
        cache.linear.push(z);
        cache.sin.push(s);
        cache.cos.push(c);
    }
    let mut out = h.dot(&model.head);
    out.mapv_inplace(|v| model.output_scale * (v + model.head_bias));
    cache.inputs.push(h);
    Ok((out, cache))
}

/// Gradient of a scalar loss with respect to every parameter, in [`InrModel::params`] order.
///
/// `upstream[i]` is the derivative of the loss with respect to output `i`.
pub fn inr_backward(model: &InrModel, cache: &ForwardCache, upstream: &[f64]) -> Result<Vec<f64>> {
    let n = cache.n_points();
    if cache.inputs.len() != model.layers.len() + 1 {
        return Err(Error::invalid("forward cache does not belong to this model"));
    }
    if upstream.len() != n {
        return Err(Error::dims("upstream gradient", n, upstream.len()));
    }
    let g_out = Array1::from_iter(upstream.iter().map(|g| g * model.output_scale));
    let top = &cache.inputs[model.layers.len()];
    let mut grads_rev: Vec<Vec<f64>> = Vec::with_capacity(model.layers.len() + 1);
    let mut head_grad: Vec<f64> = top.t().dot(&g_out).to_vec();
    head_grad.push(g_out.sum());
    grads_rev.push(head_grad);

    // dL/dh for the top hidden activations.
    let mut g = g_out
        .view()
        .insert_axis(Axis(1))
        .dot(&model.head.view().insert_axis(Axis(0)));
    for (l, layer) in model.layers.iter().enumerate().rev() {
        let m = layer.modulation;
        let freq = m.b * model.omega0;
        let (s, c, z) = (&cache.sin[l], &cache.cos[l], &cache.linear[l]);
        let mut grad_a = 0.0;
        let grad_d = g.sum();
        let mut grad_c = 0.0;
        let mut grad_b = 0.0;
        // Reuse `g` as dL/d(pre-activation phase).
        ndarray::Zip::from(&mut g)
            .and(s)
            .and(c)
            .and(z)
            .for_each(|gv, &sv, &cv, &zv| {
                grad_a += *gv * sv;
                let dphase = *gv * m.a * cv;
                grad_c += dphase;
                grad_b += dphase * model.omega0 * zv;
                *gv = dphase * freq;
            });
        // `g` now holds dL/dz for the linear output.
        let grad_w = g.t().dot(&cache.inputs[l]);
        let grad_bias = g.sum_axis(Axis(0));
        let mut flat = Vec::with_capacity(grad_w.len() + grad_bias.len() + 4);
        flat.extend(grad_w.iter());
        flat.extend(grad_bias.iter());
        flat.extend([grad_a, grad_b, grad_c, grad_d]);
        grads_rev.push(flat);
        if l > 0 {
            g = g.dot(&layer.weight);
        }
    }
    Ok(grads_rev.into_iter().rev().flatten().collect())
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{xavier, ParamStore};
use super::tensor::Mat;
use crate::error::{Error, Result};
use crate::prescription::{Audiogram, MAX_THRESHOLD_DB_HL};
use crate::scalar::Real;
use crate::signal::Frames;

pub const OUT_BINS: usize = 257;
const N_THRESHOLDS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Cnn,
    Lstm,
    Crnn,
    Transformer,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Cnn, Arch::Lstm, Arch::Crnn, Arch::Transformer];
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::Cnn => "cnn",
            Arch::Lstm => "lstm",
            Arch::Crnn => "crnn",
            Arch::Transformer => "transformer",
        })
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.to_string() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown architecture `{s}`")))
    }
}

/// Network hyperparameters. Defaults are the desk-scale dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub audiogram_embed_dim: usize,
    pub cnn_filters: Vec<usize>,
    /// Temporal kernel width of every convolution (odd, same padding).
    pub conv_kernel: usize,
    pub lstm_units: usize,
    pub lstm_layers: usize,
    pub crnn_filters: Vec<usize>,
    pub tfm_blocks: usize,
    pub tfm_heads: usize,
    pub tfm_dim: usize,
    pub tfm_ffn_dim: usize,
    pub positional_encoding: bool,
    pub out_bins: usize,
    /// Multiplier on the log-magnitude features entering the core.
    pub input_scale: f64,
    /// Add the input log-magnitude to the output head's pre-activation.
    pub residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Lstm,
            audiogram_embed_dim: 32,
            cnn_filters: vec![8, 16],
            conv_kernel: 3,
            lstm_units: 64,
            lstm_layers: 2,
            crnn_filters: vec![8, 16],
            tfm_blocks: 2,
            tfm_heads: 4,
            tfm_dim: 64,
            tfm_ffn_dim: 128,
            positional_encoding: true,
            out_bins: OUT_BINS,
            input_scale: 0.1,
            residual: true,
        }
    }
}

impl ModelConfig {
    pub fn desk(arch: Arch) -> Self {
        Self { arch, ..Self::default() }
    }

    /// Dimensions as published for the full-size models.
    pub fn paper_scale(arch: Arch) -> Self {
        Self {
            arch,
            cnn_filters: vec![32, 64, 128, 256],
            lstm_units: 256,
            crnn_filters: vec![16, 32, 64, 128],
            tfm_blocks: 4,
            tfm_heads: 16,
            tfm_dim: 256,
            tfm_ffn_dim: 512,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("model config: {m}")));
        if self.out_bins != OUT_BINS {
            return bad("out_bins must be 257");
        }
        if self.audiogram_embed_dim == 0 {
            return bad("audiogram_embed_dim must be positive");
        }
        if self.conv_kernel % 2 == 0 {
            return bad("conv_kernel must be odd");
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return bad("input_scale must be positive");
        }
        match self.arch {
            Arch::Cnn if self.cnn_filters.is_empty() || self.cnn_filters.contains(&0) => bad("cnn_filters must be nonempty and positive"),
            Arch::Crnn if self.crnn_filters.is_empty() || self.crnn_filters.contains(&0) => bad("crnn_filters must be nonempty and positive"),
            Arch::Lstm | Arch::Crnn if self.lstm_units == 0 || self.lstm_layers == 0 => bad("lstm dims must be positive"),
            Arch::Transformer if self.tfm_heads == 0 || self.tfm_dim % self.tfm_heads != 0 => bad("tfm_dim must be divisible by tfm_heads"),
            Arch::Transformer if self.tfm_blocks == 0 || self.tfm_ffn_dim == 0 => bad("transformer dims must be positive"),
            _ => Ok(()),
        }
    }

    /// Width of the concatenated spectral + audiogram input.
    pub fn input_dim(&self) -> usize {
        self.out_bins + self.audiogram_embed_dim
    }
}

/// Sinusoidal position table, `n × d`.
pub fn positional_encoding<T: Real>(n: usize, d: usize) -> Mat<T> {
    let mut m = Mat::zeros(n, d);
    for t in 0..n {
        for i in 0..d {
            let rate = 10_000f64.powf(-((i / 2 * 2) as f64) / d as f64);
            let a = t as f64 * rate;
            m.data[t * d + i] = T::lit(if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    m
}

/// Trainable amplifier: audiogram embedding, architecture core, dense softplus head.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpModel<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub rng_seed: u64,
}

struct Builder<'a, T> {
    rng: ChaCha8Rng,
    store: &'a mut ParamStore<T>,
}

impl<T: Real> Builder<'_, T> {
    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        let w = xavier(&mut self.rng, fan_in, fan_out);
        self.store.push(format!("{name}.w"), w);
        self.store.push(format!("{name}.b"), Mat::zeros(1, fan_out));
    }

    fn conv(&mut self, name: &str, kernel: usize, c_in: usize, c_out: usize) {
        self.dense(name, kernel * c_in, c_out);
    }

    fn lstm(&mut self, name: &str, n_in: usize, units: usize) {
        let w_ih = xavier(&mut self.rng, n_in, 4 * units);
        let w_hh = xavier(&mut self.rng, units, 4 * units);
        self.store.push(format!("{name}.w_ih"), w_ih);
        self.store.push(format!("{name}.w_hh"), w_hh);
        // gate order i, f, g, o; forget bias starts at 1
        let mut b = Mat::zeros(1, 4 * units);
        b.data[units..2 * units].iter_mut().for_each(|v| *v = T::one());
        self.store.push(format!("{name}.b"), b);
    }

    fn layer_norm(&mut self, name: &str, d: usize) {
        self.store.push(format!("{name}.g"), Mat::filled(1, d, T::one()));
        self.store.push(format!("{name}.b"), Mat::zeros(1, d));
    }
}

/// Forward-pass helper that resolves parameters by name in registration order.
struct Fwd<'g, T> {
    g: &'g mut Graph<T>,
    next: usize,
}

impl<T: Real> Fwd<'_, T> {
    fn take(&mut self) -> Var {
        let v = self.g.param(self.next);
        self.next += 1;
        v
    }

    fn dense(&mut self, x: Var) -> Var {
        let (w, b) = (self.take(), self.take());
        let y = self.g.matmul(x, w);
        self.g.add_row(y, b)
    }

    fn conv_relu(&mut self, x: Var, kernel: usize) -> Var {
        let half = (kernel / 2) as isize;
        let taps: Vec<Var> = (-half..=half).rev().map(|k| if k == 0 { x } else { self.g.shift_rows(x, k) }).collect();
        let stacked = if taps.len() == 1 { x } else { self.g.concat_cols(&taps) };
        let y = self.dense(stacked);
        self.g.relu(y)
    }

    fn lstm(&mut self, x: Var, units: usize) -> Var {
        let (w_ih, w_hh, b) = (self.take(), self.take(), self.take());
        let t_len = self.g.shape(x).0;
        let xp = self.g.matmul(x, w_ih);
        let xp = self.g.add_row(xp, b);
        let mut h: Option<Var> = None;
        let mut c: Option<Var> = None;
        let mut outs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut gates = self.g.slice_rows(xp, t, 1);
            if let Some(hp) = h {
                let rec = self.g.matmul(hp, w_hh);
                gates = self.g.add(gates, rec);
            }
            let i = self.g.slice_cols(gates, 0, units);
            let i = self.g.sigmoid(i);
            let gg = self.g.slice_cols(gates, 2 * units, units);
            let gg = self.g.tanh(gg);
            let o = self.g.slice_cols(gates, 3 * units, units);
            let o = self.g.sigmoid(o);
            let ig = self.g.mul(i, gg);
            let cn = match c {
                Some(cp) => {
                    let f = self.g.slice_cols(gates, units, units);
                    let f = self.g.sigmoid(f);
                    let fc = self.g.mul(f, cp);
                    self.g.add(fc, ig)
                }
                None => ig,
            };
            let tc = self.g.tanh(cn);
            let hn = self.g.mul(o, tc);
            outs.push(hn);
            h = Some(hn);
            c = Some(cn);
        }
        self.g.concat_rows(&outs)
    }

    fn layer_norm(&mut self, x: Var) -> Var {
        let (gain, bias) = (self.take(), self.take());
        let n = self.g.layer_norm_rows(x);
        let n = self.g.mul_row(n, gain);
        self.g.add_row(n, bias)
    }

    fn attention(&mut self, x: Var, heads: usize) -> Var {
        let q = self.dense(x);
        let k = self.dense(x);
        let v = self.dense(x);
        let d = self.g.shape(q).1;
        let dh = d / heads;
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.g.slice_cols(q, h * dh, dh);
            let kh = self.g.slice_cols(k, h * dh, dh);
            let vh = self.g.slice_cols(v, h * dh, dh);
            let s = self.g.matmul_nt(qh, kh);
            let s = self.g.scale(s, 1.0 / (dh as f64).sqrt());
            let p = self.g.softmax_rows(s);
            outs.push(self.g.matmul(p, vh));
        }
        let cat = if heads == 1 { outs[0] } else { self.g.concat_cols(&outs) };
        self.dense(cat)
    }
}

impl<T: Real> AmpModel<T> {
    pub fn new(config: ModelConfig, rng_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::default();
        let mut b = Builder { rng: ChaCha8Rng::seed_from_u64(rng_seed), store: &mut params };
        let c = &config;
        b.dense("embed", N_THRESHOLDS, c.audiogram_embed_dim);
        let mut width = c.input_dim();
        let conv_stack = |b: &mut Builder<T>, filters: &[usize], width: &mut usize| {
            for (i, &f) in filters.iter().enumerate() {
                b.conv(&format!("conv{i}"), c.conv_kernel, *width, f);
                *width = f;
            }
        };
        let lstm_stack = |b: &mut Builder<T>, width: &mut usize| {
            for l in 0..c.lstm_layers {
                b.lstm(&format!("lstm{l}"), *width, c.lstm_units);
                *width = c.lstm_units;
            }
        };
        match c.arch {
            Arch::Cnn => conv_stack(&mut b, &c.cnn_filters, &mut width),
            Arch::Lstm => lstm_stack(&mut b, &mut width),
            Arch::Crnn => {
                conv_stack(&mut b, &c.crnn_filters, &mut width);
                lstm_stack(&mut b, &mut width);
            }
            Arch::Transformer => {
                b.dense("proj", width, c.tfm_dim);
                for i in 0..c.tfm_blocks {
                    b.layer_norm(&format!("block{i}.ln1"), c.tfm_dim);
                    for m in ["q", "k", "v", "o"] {
                        b.dense(&format!("block{i}.w{m}"), c.tfm_dim, c.tfm_dim);
                    }
                    b.layer_norm(&format!("block{i}.ln2"), c.tfm_dim);
                    b.dense(&format!("block{i}.ff1"), c.tfm_dim, c.tfm_ffn_dim);
                    b.dense(&format!("block{i}.ff2"), c.tfm_ffn_dim, c.tfm_dim);
                }
                b.layer_norm("final_ln", c.tfm_dim);
                width = c.tfm_dim;
            }
        }
        b.dense("head", width, c.out_bins);
        Ok(Self { config, params, rng_seed })
    }

    pub fn n_params(&self) -> usize {
        self.params.count()
    }

    fn check_input(&self, input: &Mat<T>) -> Result<()> {
        if input.cols != self.config.out_bins || input.rows == 0 {
            return Err(Error::ShapeMismatch(format!(
                "model expects T x {} features with T >= 1, got {} x {}",
                self.config.out_bins, input.rows, input.cols
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `g` and returns the prediction node (`T × 257`).
    pub fn forward_graph(&self, g: &mut Graph<T>, input_logmag: &Mat<T>, audiogram: &Audiogram) -> Result<Var> {
        self.check_input(input_logmag)?;
        let c = &self.config;
        let t_len = input_logmag.rows;
        let mut f = Fwd { g, next: 0 };
        let x = f.g.constant(input_logmag.clone());
        let e = embed_node(&mut f, audiogram);
        let e = f.g.broadcast_rows(e, t_len);
        let xs = f.g.scale(x, c.input_scale);
        let mut h = f.g.concat_cols(&[xs, e]);
        match c.arch {
            Arch::Cnn => {
                for _ in &c.cnn_filters {
                    h = f.conv_relu(h, c.conv_kernel);
                }
            }
            Arch::Lstm => {
                for _ in 0..c.lstm_layers {
                    h = f.lstm(h, c.lstm_units);
                }
            }
            Arch::Crnn => {
                for _ in &c.crnn_filters {
                    h = f.conv_relu(h, c.conv_kernel);
                }
                for _ in 0..c.lstm_layers {
                    h = f.lstm(h, c.lstm_units);
                }
            }
            Arch::Transformer => {
                h = f.dense(h);
                if c.positional_encoding {
                    let pe = f.g.constant(positional_encoding(t_len, c.tfm_dim));
                    h = f.g.add(h, pe);
                }
                for _ in 0..c.tfm_blocks {
                    let a = f.layer_norm(h);
                    let a = f.attention(a, c.tfm_heads);
                    h = f.g.add(h, a);
                    let m = f.layer_norm(h);
                    let m = f.dense(m);
                    let m = f.g.gelu(m);
                    let m = f.dense(m);
                    h = f.g.add(h, m);
                }
                h = f.layer_norm(h);
            }
        }
        let mut z = f.dense(h);
        if c.residual {
            z = f.g.add(z, x);
        }
        debug_assert_eq!(f.next, self.params.len());
        Ok(f.g.softplus(z))
    }

    /// Predicted log-magnitudes for one utterance.
    pub fn forward(&self, input_logmag: &Frames<T>, audiogram: &Audiogram) -> Result<Frames<T>> {
        let input = Mat { rows: input_logmag.n_frames, cols: input_logmag.n_bins, data: input_logmag.data.clone() };
        let mut g = Graph::new(self.params.values());
        let out = self.forward_graph(&mut g, &input, audiogram)?;
        let v = g.value(out).clone();
        Frames::from_vec(v.rows, v.cols, v.data)
    }

    /// The audiogram embedding vector.
    pub fn embed_audiogram(&self, audiogram: &Audiogram) -> Vec<T> {
        let mut g = Graph::new(self.params.values());
        let mut f = Fwd { g: &mut g, next: 0 };
        let e = embed_node(&mut f, audiogram);
        g.value(e).data.clone()
    }

    /// Loss and parameter gradients for one example.
    pub fn loss_and_grads(&self, input_logmag: &Mat<T>, target_logmag: &Mat<T>, audiogram: &Audiogram) -> Result<(f64, Vec<Mat<T>>)> {
        if input_logmag.shape() != target_logmag.shape() {
            return Err(Error::ShapeMismatch(format!(
                "input {:?} vs target {:?}",
                input_logmag.shape(),
                target_logmag.shape()
            )));
        }
        let mut g = Graph::new(self.params.values());
        let pred = self.forward_graph(&mut g, input_logmag, audiogram)?;
        let loss = g.mse(pred, target_logmag);
        let value = g.value(loss).data[0].as_f64();
        let grads = g
            .backward(loss)
            .into_iter()
            .zip(self.params.values())
            .map(|(gr, p)| gr.unwrap_or_else(|| Mat::zeros(p.rows, p.cols)))
            .collect();
        Ok((value, grads))
    }

    /// Loss without building gradients.
    pub fn loss(&self, input_logmag: &Mat<T>, target_logmag: &Mat<T>, audiogram: &Audiogram) -> Result<f64> {
        if input_logmag.shape() != target_logmag.shape() {
            return Err(Error::ShapeMismatch(format!(
                "input {:?} vs target {:?}",
                input_logmag.shape(),
                target_logmag.shape()
            )));
        }
        let mut g = Graph::new(self.params.values());
        let pred = self.forward_graph(&mut g, input_logmag, audiogram)?;
        let loss = g.mse(pred, target_logmag);
        Ok(g.value(loss).data[0].as_f64())
    }
}

fn embed_node<T: Real>(f: &mut Fwd<'_, T>, audiogram: &Audiogram) -> Var {
    let thr = audiogram.thresholds_db_hl().iter().map(|&v| T::lit(v / MAX_THRESHOLD_DB_HL)).collect();
    let thr = f.g.constant(Mat { rows: 1, cols: N_THRESHOLDS, data: thr });
    let e = f.dense(thr);
    f.g.relu(e)
}

/// `(1/T) · Σ_t ‖pred_t − target_t‖²`, summed in f64.
pub fn loss_mse<T: Real>(pred: &Frames<T>, target: &Frames<T>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!("pred {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let sum: f64 = pred.data.iter().zip(&target.data).map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
    Ok(sum / pred.n_frames.max(1) as f64)
}

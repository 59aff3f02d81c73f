use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Generator, PriorKind, DEFAULT_LATENT_DIM};
use crate::error::{Error, Result, WeightsError};

/// Length of the feature map produced by the dense projection.
pub const INITIAL_LEN: usize = 16;

/// Fully connected projection `z -> c0 × 16`, weights stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// 1-D transposed convolution with "same"-style cropping, so the output is
/// exactly `stride` times longer than the input. Weights stored
/// `in × out × kernel`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTransposeLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvTransposeLayer {
    fn pad(&self) -> usize {
        (self.kernel - self.stride).div_ceil(2)
    }

    fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        let out_len = n * self.stride;
        let pad = self.pad() as isize;
        let mut y = vec![0.0; self.out_ch * out_len];
        for (o, b) in self.bias.iter().enumerate() {
            y[o * out_len..(o + 1) * out_len].fill(*b as f64);
        }
        for c in 0..self.in_ch {
            for i in 0..n {
                let xv = x[c * n + i];
                if xv == 0.0 {
                    continue;
                }
                let base = (i * self.stride) as isize - pad;
                for o in 0..self.out_ch {
                    let w = &self.weight[(c * self.out_ch + o) * self.kernel..][..self.kernel];
                    let row = &mut y[o * out_len..(o + 1) * out_len];
                    for (k, &wk) in w.iter().enumerate() {
                        let tau = base + k as isize;
                        if tau >= 0 && (tau as usize) < out_len {
                            row[tau as usize] += wk as f64 * xv;
                        }
                    }
                }
            }
        }
        y
    }

    fn backward(&self, gy: &[f64], n: usize) -> Vec<f64> {
        let out_len = n * self.stride;
        let pad = self.pad() as isize;
        let mut gx = vec![0.0; self.in_ch * n];
        for c in 0..self.in_ch {
            for i in 0..n {
                let base = (i * self.stride) as isize - pad;
                let mut acc = 0.0;
                for o in 0..self.out_ch {
                    let w = &self.weight[(c * self.out_ch + o) * self.kernel..][..self.kernel];
                    let row = &gy[o * out_len..(o + 1) * out_len];
                    for (k, &wk) in w.iter().enumerate() {
                        let tau = base + k as isize;
                        if tau >= 0 && (tau as usize) < out_len {
                            acc += wk as f64 * row[tau as usize];
                        }
                    }
                }
                gx[c * n + i] = acc;
            }
        }
        gx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuralDecoderConfig {
    pub latent_dim: usize,
    /// Channel widths `c0..cR`; the last must be 1.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
}

impl Default for NeuralDecoderConfig {
    /// WaveGAN-sized generator: 16384 samples from a 100-d latent.
    fn default() -> Self {
        Self {
            latent_dim: DEFAULT_LATENT_DIM,
            channels: vec![1024, 512, 256, 128, 64, 1],
            kernel: 25,
            stride: 4,
        }
    }
}

impl NeuralDecoderConfig {
    /// Small decoder emitting 1024 samples, used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            latent_dim: 8,
            channels: vec![16, 8, 4, 1],
            kernel: 25,
            stride: 4,
        }
    }
}

/// Dense projection followed by strided transposed convolutions with ReLU
/// activations and a final tanh.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralDecoder {
    dense: DenseLayer,
    convs: Vec<ConvTransposeLayer>,
}

fn dim_err(layer: usize, detail: impl Into<String>) -> Error {
    WeightsError::DimensionMismatch {
        layer,
        detail: detail.into(),
    }
    .into()
}

impl NeuralDecoder {
    /// Assembles a decoder, checking that layer shapes chain together.
    pub fn from_layers(dense: DenseLayer, convs: Vec<ConvTransposeLayer>) -> Result<Self> {
        if dense.in_dim == 0 || dense.out_dim == 0 || !dense.out_dim.is_multiple_of(INITIAL_LEN) {
            return Err(dim_err(
                0,
                format!(
                    "dense out_dim {} must be a positive multiple of {INITIAL_LEN}",
                    dense.out_dim
                ),
            ));
        }
        if dense.weight.len() != dense.in_dim * dense.out_dim || dense.bias.len() != dense.out_dim {
            return Err(dim_err(
                0,
                "dense weight/bias sizes do not match in_dim × out_dim",
            ));
        }
        if convs.is_empty() {
            return Err(dim_err(1, "at least one transposed convolution is required"));
        }
        let mut channels = dense.out_dim / INITIAL_LEN;
        for (r, conv) in convs.iter().enumerate() {
            let layer = r + 1;
            if conv.in_ch != channels {
                return Err(dim_err(
                    layer,
                    format!(
                        "in channels {} do not match previous layer's {channels}",
                        conv.in_ch
                    ),
                ));
            }
            if conv.out_ch == 0 || conv.stride == 0 || conv.kernel < conv.stride {
                return Err(dim_err(
                    layer,
                    format!(
                        "need out_ch > 0 and kernel >= stride >= 1 (out_ch {}, kernel {}, stride {})",
                        conv.out_ch, conv.kernel, conv.stride
                    ),
                ));
            }
            if conv.weight.len() != conv.in_ch * conv.out_ch * conv.kernel || conv.bias.len() != conv.out_ch {
                return Err(dim_err(layer, "weight/bias sizes do not match layer shape"));
            }
            channels = conv.out_ch;
        }
        if channels != 1 {
            return Err(dim_err(
                convs.len(),
                format!("final layer must emit 1 channel, got {channels}"),
            ));
        }
        let all_finite = dense.weight.iter().chain(&dense.bias).all(|v| v.is_finite());
        if !all_finite {
            return Err(WeightsError::NonFiniteWeight { layer: 0 }.into());
        }
        for (r, c) in convs.iter().enumerate() {
            if !c.weight.iter().chain(&c.bias).all(|v| v.is_finite()) {
                return Err(WeightsError::NonFiniteWeight { layer: r + 1 }.into());
            }
        }
        Ok(Self { dense, convs })
    }

    /// Uniform `±1/sqrt(fan_in)` initialisation, deterministic in `seed`.
    pub fn random(cfg: &NeuralDecoderConfig, seed: u64) -> Result<Self> {
        Self::init_with(
            cfg,
            |fan_in, rng| {
                let s = 1.0 / (fan_in as f64).sqrt();
                rng.gen_range(-s..s) as f32
            },
            seed,
        )
    }

    /// Decoder whose every weight and bias is zero.
    pub fn zeros(cfg: &NeuralDecoderConfig) -> Result<Self> {
        Self::init_with(cfg, |_, _| 0.0, 0)
    }

    fn init_with(
        cfg: &NeuralDecoderConfig,
        mut draw: impl FnMut(usize, &mut ChaCha8Rng) -> f32,
        seed: u64,
    ) -> Result<Self> {
        if cfg.channels.len() < 2 {
            return Err(Error::InvalidParameter(
                "neural decoder needs at least two channel widths".into(),
            ));
        }
        if cfg.latent_dim == 0 {
            return Err(Error::InvalidParameter("latent_dim must be > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out_dim = cfg.channels[0] * INITIAL_LEN;
        let mut take = |n: usize, fan_in: usize, rng: &mut ChaCha8Rng| -> Vec<f32> {
            (0..n).map(|_| draw(fan_in, rng)).collect()
        };
        let dense = DenseLayer {
            in_dim: cfg.latent_dim,
            out_dim,
            weight: take(out_dim * cfg.latent_dim, cfg.latent_dim, &mut rng),
            bias: take(out_dim, cfg.latent_dim, &mut rng),
        };
        let mut convs = Vec::new();
        for pair in cfg.channels.windows(2) {
            let (in_ch, out_ch) = (pair[0], pair[1]);
            let fan_in = (in_ch * cfg.kernel / cfg.stride.max(1)).max(1);
            convs.push(ConvTransposeLayer {
                in_ch,
                out_ch,
                kernel: cfg.kernel,
                stride: cfg.stride,
                weight: take(in_ch * out_ch * cfg.kernel, fan_in, &mut rng),
                bias: take(out_ch, fan_in, &mut rng),
            });
        }
        Self::from_layers(dense, convs)
    }

    pub fn dense(&self) -> &DenseLayer {
        &self.dense
    }

    pub fn convs(&self) -> &[ConvTransposeLayer] {
        &self.convs
    }

    /// ReLU on/off pattern of every hidden unit at `z`.
    pub fn activation_pattern(&self, z: &[f64]) -> Vec<bool> {
        let pre = self.forward_trace(z);
        pre[..pre.len() - 1].iter().flatten().map(|v| *v > 0.0).collect()
    }

    /// True when moving any single latent coordinate by up to `radius` leaves
    /// the activation pattern unchanged at the endpoints, i.e. the map is
    /// smooth along every axis probed by a finite-difference stencil.
    pub fn is_smooth_near(&self, z: &[f64], radius: f64) -> bool {
        let base = self.activation_pattern(z);
        let mut probe = z.to_vec();
        for i in 0..z.len() {
            for d in [-radius, radius] {
                probe[i] = z[i] + d;
                if self.activation_pattern(&probe) != base {
                    return false;
                }
            }
            probe[i] = z[i];
        }
        true
    }

    /// Forward pass keeping every pre-activation for backprop.
    fn forward_trace(&self, z: &[f64]) -> Vec<Vec<f64>> {
        let d = &self.dense;
        let mut pre = Vec::with_capacity(self.convs.len() + 1);
        let h: Vec<f64> = (0..d.out_dim)
            .map(|j| {
                let row = &d.weight[j * d.in_dim..(j + 1) * d.in_dim];
                d.bias[j] as f64 + row.iter().zip(z).map(|(w, x)| *w as f64 * x).sum::<f64>()
            })
            .collect();
        pre.push(h);
        let mut n = INITIAL_LEN;
        for conv in &self.convs {
            let act: Vec<f64> = pre.last().unwrap().iter().map(|v| v.max(0.0)).collect();
            pre.push(conv.forward(&act, n));
            n *= conv.stride;
        }
        pre
    }
}

impl Generator for NeuralDecoder {
    fn kind(&self) -> PriorKind {
        PriorKind::Neural
    }

    fn latent_dim(&self) -> usize {
        self.dense.in_dim
    }

    fn output_len(&self) -> usize {
        self.convs.iter().fold(INITIAL_LEN, |n, c| n * c.stride)
    }

    fn generate(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_latent(z)?;
        let mut pre = self.forward_trace(z);
        Ok(pre.pop().unwrap().into_iter().map(f64::tanh).collect())
    }

    fn generate_vjp(&self, z: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        self.check_latent(z)?;
        self.check_cotangent(cotangent)?;
        let pre = self.forward_trace(z);
        let out = pre.last().unwrap();
        let mut g: Vec<f64> = out
            .iter()
            .zip(cotangent)
            .map(|(p, c)| c * (1.0 - p.tanh().powi(2)))
            .collect();
        let mut n = self.output_len();
        for (r, conv) in self.convs.iter().enumerate().rev() {
            n /= conv.stride;
            let gx = conv.backward(&g, n);
            g = gx
                .into_iter()
                .zip(&pre[r])
                .map(|(gv, p)| if *p > 0.0 { gv } else { 0.0 })
                .collect();
        }
        let d = &self.dense;
        let mut gz = vec![0.0; d.in_dim];
        for (j, gj) in g.iter().enumerate() {
            if *gj == 0.0 {
                continue;
            }
            let row = &d.weight[j * d.in_dim..(j + 1) * d.in_dim];
            for (gzi, w) in gz.iter_mut().zip(row) {
                *gzi += *w as f64 * gj;
            }
        }
        Ok(gz)
    }
}

//! Source-specific generators mapping a latent box `[-1, 1]^d_z` to waveforms.
//!
//! Each generator exposes a forward pass and an exact vector-Jacobian
//! product so latent gradients can be chained from waveform gradients.

mod harmonic;
mod neural;
mod percussive;
pub mod weights;

pub use harmonic::{HarmonicParams, HarmonicPrior};
pub use neural::{ConvTransposeLayer, DenseLayer, NeuralDecoder, NeuralDecoderConfig, INITIAL_LEN};
pub use percussive::{PercussiveParams, PercussivePrior};

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LATENT_DIM: usize = 100;

/// Point in the latent box, one per source prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentVector(Vec<f64>);

impl LatentVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "latent contains non-finite values".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// I.i.d. `U(-1, 1)` entries, deterministic in `seed`.
    pub fn sample(seed: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self((0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn project(&self) -> Self {
        Self(project(&self.0))
    }

    pub fn project_in_place(&mut self) {
        for v in &mut self.0 {
            *v = v.clamp(-1.0, 1.0);
        }
    }

    pub fn in_box(&self) -> bool {
        self.0.iter().all(|v| (-1.0..=1.0).contains(v))
    }
}

/// Elementwise clip to `[-1, 1]`.
pub fn project(z: &[f64]) -> Vec<f64> {
    z.iter().map(|v| v.clamp(-1.0, 1.0)).collect()
}

pub fn sample_latent(seed: u64, dim: usize) -> Result<LatentVector> {
    if dim == 0 {
        return Err(Error::InvalidParameter("latent dimension must be > 0".into()));
    }
    Ok(LatentVector::sample(seed, dim))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Harmonic,
    Percussive,
    Neural,
}

/// Differentiable map from a latent vector to a waveform.
pub trait Generator: Send + Sync {
    fn kind(&self) -> PriorKind;
    fn latent_dim(&self) -> usize;
    fn output_len(&self) -> usize;
    fn generate(&self, z: &[f64]) -> Result<Vec<f64>>;
    /// Latent gradient given the gradient w.r.t. the generated waveform.
    fn generate_vjp(&self, z: &[f64], cotangent: &[f64]) -> Result<Vec<f64>>;

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.latent_dim() {
            return Err(Error::LengthMismatch {
                expected: self.latent_dim(),
                actual: z.len(),
            });
        }
        Ok(())
    }

    fn check_cotangent(&self, cotangent: &[f64]) -> Result<()> {
        if cotangent.len() != self.output_len() {
            return Err(Error::LengthMismatch {
                expected: self.output_len(),
                actual: cotangent.len(),
            });
        }
        Ok(())
    }
}

/// Any of the built-in generator kinds.
#[derive(Debug, Clone)]
pub enum Prior {
    Harmonic(HarmonicPrior),
    Percussive(PercussivePrior),
    Neural(NeuralDecoder),
}

impl Prior {
    fn inner(&self) -> &dyn Generator {
        match self {
            Prior::Harmonic(p) => p,
            Prior::Percussive(p) => p,
            Prior::Neural(p) => p,
        }
    }
}

impl Generator for Prior {
    fn kind(&self) -> PriorKind {
        self.inner().kind()
    }
    fn latent_dim(&self) -> usize {
        self.inner().latent_dim()
    }
    fn output_len(&self) -> usize {
        self.inner().output_len()
    }
    fn generate(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.inner().generate(z)
    }
    fn generate_vjp(&self, z: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        self.inner().generate_vjp(z, cotangent)
    }
}

/// Serializable description of a prior, as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PriorSpec {
    Harmonic(HarmonicParams),
    Percussive(PercussiveParams),
    Neural {
        /// Weight file; when absent a randomly initialised decoder is built
        /// from `channels` and `seed`.
        #[serde(default)]
        weights: Option<PathBuf>,
        #[serde(default = "default_latent_dim")]
        latent_dim: usize,
        #[serde(default)]
        channels: Vec<usize>,
        #[serde(default)]
        seed: u64,
    },
}

fn default_latent_dim() -> usize {
    DEFAULT_LATENT_DIM
}

impl PriorSpec {
    pub fn harmonic() -> Self {
        PriorSpec::Harmonic(HarmonicParams::default())
    }

    pub fn percussive() -> Self {
        PriorSpec::Percussive(PercussiveParams::default())
    }

    pub fn kind(&self) -> PriorKind {
        match self {
            PriorSpec::Harmonic(_) => PriorKind::Harmonic,
            PriorSpec::Percussive(_) => PriorKind::Percussive,
            PriorSpec::Neural { .. } => PriorKind::Neural,
        }
    }

    /// Instantiates the prior for signals of `len` samples.
    pub fn build(&self, len: usize, sample_rate: u32) -> Result<Prior> {
        let prior = match self {
            PriorSpec::Harmonic(p) => Prior::Harmonic(HarmonicPrior::new(p.clone(), len, sample_rate)?),
            PriorSpec::Percussive(p) => Prior::Percussive(PercussivePrior::new(p.clone(), len, sample_rate)?),
            PriorSpec::Neural {
                weights,
                latent_dim,
                channels,
                seed,
            } => {
                let decoder = match weights {
                    Some(path) => weights::load_weights(path)?,
                    None => NeuralDecoder::random(
                        &NeuralDecoderConfig {
                            latent_dim: *latent_dim,
                            channels: if channels.is_empty() {
                                NeuralDecoderConfig::default().channels
                            } else {
                                channels.clone()
                            },
                            ..NeuralDecoderConfig::default()
                        },
                        *seed,
                    )?,
                };
                Prior::Neural(decoder)
            }
        };
        if prior.output_len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                actual: prior.output_len(),
            });
        }
        Ok(prior)
    }
}

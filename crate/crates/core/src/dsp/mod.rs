//! Differentiable signal-processing kernels.
//!
//! Every forward transform here has a matching vector-Jacobian product so the
//! spectral losses can be pulled back to waveform gradients. Nonlinear
//! elementwise maps also expose a Jacobian-vector product, which the adjoint
//! checks use.

mod spectral;
mod stft;

pub use spectral::{
    avg_pool2, avg_pool2_vjp, grad_field, grad_field_jvp, grad_field_vjp, log_power, log_power_jvp,
    log_power_vjp, pyramid, pyramid_vjp, GradientField,
};
pub use stft::{stft, stft_vjp, ComplexSpectrogram, StftConfig, StftPlan};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_SIGNAL_LEN: usize = 16_384;

/// Mono time-domain signal at a fixed sample rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("waveform has no samples"));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidParameter("sample rate must be > 0".into()));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(
                "waveform contains non-finite samples".into(),
            ));
        }
        Ok(Self { samples, sample_rate })
    }

    /// Waveform at the default 16 kHz rate.
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn silence(len: usize) -> Self {
        Self {
            samples: vec![0.0; len.max(1)],
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn peak(&self) -> f64 {
        peak(&self.samples)
    }

    /// Scales to max |x| = 1. Silent signals are returned unchanged.
    pub fn peak_normalized(&self) -> Self {
        Self {
            samples: peak_normalize(&self.samples),
            sample_rate: self.sample_rate,
        }
    }

    pub fn rms(&self) -> f64 {
        (self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

pub fn peak(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn peak_normalize(x: &[f64]) -> Vec<f64> {
    let p = peak(x);
    if p > 0.0 {
        x.iter().map(|v| v / p).collect()
    } else {
        x.to_vec()
    }
}

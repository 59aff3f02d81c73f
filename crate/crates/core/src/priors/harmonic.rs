use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Generator, PriorKind, DEFAULT_LATENT_DIM};
use crate::error::{Error, Result};

/// Decaying harmonic tone.
///
/// Latent layout: `z[0]` sets the fundamental on a log scale between
/// `f_min` and `f_max`, `z[1..=H]` set harmonic gains, `z[H+1]` sets the
/// exponential decay rate. Remaining dimensions are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarmonicParams {
    pub f_min: f64,
    pub f_max: f64,
    pub harmonics: usize,
    /// Maximum decay rate in 1/s.
    pub alpha_max: f64,
    pub latent_dim: usize,
}

impl Default for HarmonicParams {
    fn default() -> Self {
        Self {
            f_min: 80.0,
            f_max: 1000.0,
            harmonics: 8,
            alpha_max: 8.0,
            latent_dim: DEFAULT_LATENT_DIM,
        }
    }
}

impl HarmonicParams {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist_limit = sample_rate as f64 / 2.0 / self.harmonics.max(1) as f64;
        if self.harmonics == 0 {
            return Err(Error::InvalidParameter("harmonics must be >= 1".into()));
        }
        if !(self.f_min > 0.0 && self.f_min < self.f_max && self.f_max <= nyquist_limit) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < f_min < f_max <= {nyquist_limit} Hz, got f_min={} f_max={}",
                self.f_min, self.f_max
            )));
        }
        if !(self.alpha_max >= 0.0 && self.alpha_max.is_finite()) {
            return Err(Error::InvalidParameter("alpha_max must be >= 0".into()));
        }
        if self.latent_dim < self.harmonics + 2 {
            return Err(Error::InvalidParameter(format!(
                "latent_dim must be >= harmonics + 2 = {}",
                self.harmonics + 2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HarmonicPrior {
    params: HarmonicParams,
    len: usize,
    sample_rate: u32,
}

/// Physical parameters decoded from a latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicVoice {
    pub f0: f64,
    pub gains: Vec<f64>,
    pub alpha: f64,
}

impl HarmonicPrior {
    pub fn new(params: HarmonicParams, len: usize, sample_rate: u32) -> Result<Self> {
        params.validate(sample_rate)?;
        if len == 0 {
            return Err(Error::InvalidParameter("output length must be > 0".into()));
        }
        Ok(Self {
            params,
            len,
            sample_rate,
        })
    }

    pub fn params(&self) -> &HarmonicParams {
        &self.params
    }

    pub fn decode(&self, z: &[f64]) -> HarmonicVoice {
        let p = &self.params;
        let h = p.harmonics;
        let f0 = p.f_min * (p.f_max / p.f_min).powf((z[0] + 1.0) / 2.0);
        let gains = (1..=h).map(|k| (z[k] + 1.0) / 2.0 / k as f64).collect();
        let alpha = p.alpha_max * (z[h + 1] + 1.0) / 2.0;
        HarmonicVoice { f0, gains, alpha }
    }

    /// Visits every sample with its envelope and the harmonic phasors
    /// `(sin kφ, cos kφ)` for `k = 1..=H`.
    fn for_each_sample(&self, voice: &HarmonicVoice, mut f: impl FnMut(usize, f64, &[(f64, f64)])) {
        let fs = self.sample_rate as f64;
        let mut phasors = vec![(0.0, 0.0); self.params.harmonics];
        for t in 0..self.len {
            let time = t as f64 / fs;
            let (s1, c1) = (2.0 * PI * voice.f0 * time).sin_cos();
            let (mut s, mut c) = (s1, c1);
            for ph in phasors.iter_mut() {
                *ph = (s, c);
                let next_s = s * c1 + c * s1;
                c = c * c1 - s * s1;
                s = next_s;
            }
            f(t, (-voice.alpha * time).exp(), &phasors);
        }
    }
}

impl Generator for HarmonicPrior {
    fn kind(&self) -> PriorKind {
        PriorKind::Harmonic
    }

    fn latent_dim(&self) -> usize {
        self.params.latent_dim
    }

    fn output_len(&self) -> usize {
        self.len
    }

    fn generate(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_latent(z)?;
        let voice = self.decode(z);
        let mut out = vec![0.0; self.len];
        self.for_each_sample(&voice, |t, env, ph| {
            let sum: f64 = voice.gains.iter().zip(ph).map(|(g, (s, _))| g * s).sum();
            out[t] = env * sum;
        });
        Ok(out)
    }

    fn generate_vjp(&self, z: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        self.check_latent(z)?;
        self.check_cotangent(cotangent)?;
        let p = &self.params;
        let h = p.harmonics;
        let voice = self.decode(z);
        let fs = self.sample_rate as f64;

        let mut d_gain = vec![0.0; h];
        let mut d_f0 = 0.0;
        let mut d_alpha = 0.0;
        self.for_each_sample(&voice, |t, env, ph| {
            let c = cotangent[t];
            if c == 0.0 {
                return;
            }
            let time = t as f64 / fs;
            let ce = c * env;
            let mut sum = 0.0;
            let mut dphase = 0.0;
            for (k, (g, (s, co))) in voice.gains.iter().zip(ph).enumerate() {
                d_gain[k] += ce * s;
                sum += g * s;
                dphase += g * co * (k + 1) as f64;
            }
            d_f0 += ce * dphase * 2.0 * PI * time;
            d_alpha -= ce * sum * time;
        });

        let mut grad = vec![0.0; p.latent_dim];
        grad[0] = d_f0 * voice.f0 * (p.f_max / p.f_min).ln() / 2.0;
        for k in 1..=h {
            grad[k] = d_gain[k - 1] / (2.0 * k as f64);
        }
        grad[h + 1] = d_alpha * p.alpha_max / 2.0;
        Ok(grad)
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Generator, PriorKind, DEFAULT_LATENT_DIM};
use crate::error::{Error, Result};

/// Exponentially decaying, one-pole low-passed noise burst.
///
/// Latent layout: `z[0]` gain, `z[1]` decay rate, `z[2]` low-pass
/// coefficient, each mapped affinely from `[-1, 1]`. The noise table is
/// drawn once from `noise_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PercussiveParams {
    pub gain_max: f64,
    /// Decay range in 1/s.
    pub decay_min: f64,
    pub decay_max: f64,
    /// Range of the low-pass pole `a` in `y[t] = (1-a)·n[t] + a·y[t-1]`.
    pub coeff_min: f64,
    pub coeff_max: f64,
    pub noise_seed: u64,
    pub latent_dim: usize,
}

impl Default for PercussiveParams {
    fn default() -> Self {
        Self {
            gain_max: 1.0,
            decay_min: 4.0,
            decay_max: 40.0,
            coeff_min: 0.0,
            coeff_max: 0.95,
            noise_seed: 0x5eed_d12a,
            latent_dim: DEFAULT_LATENT_DIM,
        }
    }
}

impl PercussiveParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain_max > 0.0 && self.gain_max <= 1.5) {
            return Err(Error::InvalidParameter("gain_max must be in (0, 1.5]".into()));
        }
        if !(self.decay_min >= 0.0 && self.decay_min <= self.decay_max && self.decay_max.is_finite()) {
            return Err(Error::InvalidParameter("need 0 <= decay_min <= decay_max".into()));
        }
        if !(self.coeff_min >= 0.0 && self.coeff_min <= self.coeff_max && self.coeff_max < 1.0) {
            return Err(Error::InvalidParameter(
                "need 0 <= coeff_min <= coeff_max < 1".into(),
            ));
        }
        if self.latent_dim < 3 {
            return Err(Error::InvalidParameter("latent_dim must be >= 3".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PercussivePrior {
    params: PercussiveParams,
    noise: Vec<f64>,
    sample_rate: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercussiveVoice {
    pub gain: f64,
    pub decay: f64,
    pub coeff: f64,
}

impl PercussivePrior {
    pub fn new(params: PercussiveParams, len: usize, sample_rate: u32) -> Result<Self> {
        params.validate()?;
        if len == 0 {
            return Err(Error::InvalidParameter("output length must be > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.noise_seed);
        let noise = (0..len).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        Ok(Self {
            params,
            noise,
            sample_rate,
        })
    }

    pub fn params(&self) -> &PercussiveParams {
        &self.params
    }

    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn decode(&self, z: &[f64]) -> PercussiveVoice {
        let p = &self.params;
        let unit = |v: f64| (v + 1.0) / 2.0;
        PercussiveVoice {
            gain: p.gain_max * unit(z[0]),
            decay: p.decay_min + (p.decay_max - p.decay_min) * unit(z[1]),
            coeff: p.coeff_min + (p.coeff_max - p.coeff_min) * unit(z[2]),
        }
    }
}

impl Generator for PercussivePrior {
    fn kind(&self) -> PriorKind {
        PriorKind::Percussive
    }

    fn latent_dim(&self) -> usize {
        self.params.latent_dim
    }

    fn output_len(&self) -> usize {
        self.noise.len()
    }

    fn generate(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_latent(z)?;
        let v = self.decode(z);
        let fs = self.sample_rate as f64;
        let mut y = 0.0;
        Ok(self
            .noise
            .iter()
            .enumerate()
            .map(|(t, &n)| {
                y = (1.0 - v.coeff) * n + v.coeff * y;
                v.gain * (-v.decay * t as f64 / fs).exp() * y
            })
            .collect())
    }

    fn generate_vjp(&self, z: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        self.check_latent(z)?;
        self.check_cotangent(cotangent)?;
        let p = &self.params;
        let v = self.decode(z);
        let fs = self.sample_rate as f64;

        // dy/da follows its own recurrence: q[t] = y[t-1] - n[t] + a·q[t-1]
        let (mut y, mut q) = (0.0, 0.0);
        let (mut d_gain, mut d_decay, mut d_coeff) = (0.0, 0.0, 0.0);
        for (t, (&n, &c)) in self.noise.iter().zip(cotangent).enumerate() {
            q = y - n + v.coeff * q;
            y = (1.0 - v.coeff) * n + v.coeff * y;
            let time = t as f64 / fs;
            let env = (-v.decay * time).exp();
            d_gain += c * env * y;
            d_decay -= c * v.gain * env * y * time;
            d_coeff += c * v.gain * env * q;
        }

        let mut grad = vec![0.0; p.latent_dim];
        grad[0] = d_gain * p.gain_max / 2.0;
        grad[1] = d_decay * (p.decay_max - p.decay_min) / 2.0;
        grad[2] = d_coeff * (p.coeff_max - p.coeff_min) / 2.0;
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior() -> PercussivePrior {
        PercussivePrior::new(PercussiveParams::default(), 2048, 16_000).unwrap()
    }

    #[test]
    fn noise_table_is_deterministic() {
        assert_eq!(prior().noise(), prior().noise());
    }

    #[test]
    fn zero_gain_is_silent() {
        let mut z = vec![0.3; 100];
        z[0] = -1.0;
        assert!(prior().generate(&z).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn output_is_bounded() {
        let p = prior();
        for seed in 0..10 {
            let z = crate::priors::LatentVector::sample(seed, 100);
            let x = p.generate(z.as_slice()).unwrap();
            assert!(x.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn unused_dims_get_zero_gradient() {
        let p = prior();
        let cot = vec![1.0; 2048];
        let g = p.generate_vjp(&[0.2; 100], &cot).unwrap();
        assert!(g[3..].iter().all(|&v| v == 0.0));
        assert!(g[..3].iter().all(|&v| v != 0.0));
    }

    #[test]
    fn rejects_unstable_pole() {
        let params = PercussiveParams {
            coeff_max: 1.0,
            ..PercussiveParams::default()
        };
        assert!(PercussivePrior::new(params, 16, 16_000).is_err());
    }
}

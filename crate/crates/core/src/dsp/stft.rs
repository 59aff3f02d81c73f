use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_len: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_len: 256,
            hop: 128,
            fft_len: 256,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || self.hop == 0 {
            return Err(Error::InvalidParameter("frame_len and hop must be > 0".into()));
        }
        if self.fft_len < self.frame_len {
            return Err(Error::InvalidParameter(format!(
                "fft_len ({}) must be >= frame_len ({})",
                self.fft_len, self.frame_len
            )));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    /// Number of complete frames for a signal of `len` samples (no centering).
    pub fn num_frames(&self, len: usize) -> Result<usize> {
        if len < self.frame_len {
            return Err(Error::SignalTooShort {
                min: self.frame_len,
                actual: len,
            });
        }
        Ok((len - self.frame_len) / self.hop + 1)
    }

    pub fn shape(&self, len: usize) -> Result<(usize, usize)> {
        Ok((self.num_bins(), self.num_frames(len)?))
    }
}

/// Complex STFT, stored frequency-major (`F × T`).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub bins: Array2<Complex64>,
    pub config: StftConfig,
}

impl ComplexSpectrogram {
    pub fn shape(&self) -> (usize, usize) {
        self.bins.dim()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.bins.mapv(|c| c.norm())
    }
}

/// Precomputed window and FFT plans for one [`StftConfig`].
#[derive(Clone)]
pub struct StftPlan {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StftPlan")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

/// Periodic Hann window: `w[n] = 0.5 - 0.5 cos(2πn/N)`.
pub(crate) fn periodic_hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

impl StftPlan {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            config,
            window: periodic_hann(config.frame_len),
            forward: planner.plan_fft_forward(config.fft_len),
            inverse: planner.plan_fft_inverse(config.fft_len),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn forward(&self, signal: &[f64]) -> Result<ComplexSpectrogram> {
        let cfg = self.config;
        let (n_bins, n_frames) = cfg.shape(signal.len())?;
        let mut bins = Array2::<Complex64>::zeros((n_bins, n_frames));
        let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_len];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for t in 0..n_frames {
            let start = t * cfg.hop;
            buf.fill(Complex64::new(0.0, 0.0));
            for (n, (b, &w)) in buf.iter_mut().zip(&self.window).enumerate() {
                *b = Complex64::new(signal[start + n] * w, 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for f in 0..n_bins {
                bins[[f, t]] = buf[f];
            }
        }
        Ok(ComplexSpectrogram { bins, config: cfg })
    }

    /// Adjoint of [`StftPlan::forward`] under the real inner product
    /// `<A, B> = Re Σ conj(A)·B`.
    ///
    /// Each frame's cotangent is inverse-transformed (unnormalized, kept
    /// bins only), windowed, and overlap-added.
    pub fn adjoint(&self, signal_len: usize, cotangent: &Array2<Complex64>) -> Result<Vec<f64>> {
        let cfg = self.config;
        let expected = cfg.shape(signal_len)?;
        if cotangent.dim() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                actual: cotangent.dim(),
            });
        }
        let (n_bins, n_frames) = expected;
        let mut grad = vec![0.0; signal_len];
        let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_len];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        for t in 0..n_frames {
            buf.fill(Complex64::new(0.0, 0.0));
            for f in 0..n_bins {
                buf[f] = cotangent[[f, t]];
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = t * cfg.hop;
            for (n, &w) in self.window.iter().enumerate() {
                grad[start + n] += w * buf[n].re;
            }
        }
        Ok(grad)
    }
}

/// One-shot STFT: periodic Hann window, no centering, non-negative bins only.
pub fn stft(signal: &[f64], config: StftConfig) -> Result<ComplexSpectrogram> {
    StftPlan::new(config)?.forward(signal)
}

/// Gradient with respect to the signal given `dL/dS` (stored as `dL/dRe + i·dL/dIm`).
pub fn stft_vjp(signal_len: usize, config: StftConfig, cotangent: &Array2<Complex64>) -> Result<Vec<f64>> {
    StftPlan::new(config)?.adjoint(signal_len, cotangent)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_is_129_by_127() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.shape(16_384).unwrap(), (129, 127));
        assert_eq!(cfg.shape(4096).unwrap(), (129, 31));
        assert_eq!(cfg.shape(256).unwrap(), (129, 1));
    }

    #[test]
    fn rejects_short_signal() {
        let err = stft(&[0.0; 100], StftConfig::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::SignalTooShort {
                min: 256,
                actual: 100
            }
        ));
    }

    #[test]
    fn rejects_fft_shorter_than_frame() {
        let cfg = StftConfig {
            frame_len: 256,
            hop: 128,
            fft_len: 128,
        };
        assert!(stft(&[0.0; 512], cfg).is_err());
    }

    #[test]
    fn silence_gives_zero_spectrogram() {
        let s = stft(&vec![0.0; 16_384], StftConfig::default()).unwrap();
        assert_eq!(s.shape(), (129, 127));
        assert!(s.bins.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn impulse_at_origin_is_invisible() {
        let mut x = vec![0.0; 16_384];
        x[0] = 1.0;
        let s = stft(&x, StftConfig::default()).unwrap();
        assert!(s.bins.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn window_is_periodic_hann() {
        let w = periodic_hann(256);
        assert_eq!(w[0], 0.0);
        assert!((w[128] - 1.0).abs() < 1e-15);
        assert!((w[64] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn adjoint_rejects_wrong_shape() {
        let plan = StftPlan::new(StftConfig::default()).unwrap();
        let cot = Array2::<Complex64>::zeros((129, 3));
        assert!(matches!(
            plan.adjoint(4096, &cot),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let plan = StftPlan::new(StftConfig::default()).unwrap();
        let cot = Array2::<Complex64>::zeros((129, 31));
        assert!(plan.adjoint(4096, &cot).unwrap().iter().all(|&g| g == 0.0));
    }
}

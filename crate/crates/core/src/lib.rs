//! Source separation of single-channel audio by projected gradient descent
//! over the latent spaces of generative source priors, driven by a
//! multi-resolution spectral loss.

pub mod dsp;
pub mod engine;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod priors;

pub use dsp::{stft, ComplexSpectrogram, StftConfig, StftPlan, Waveform, SAMPLE_RATE};
pub use engine::{
    separate, separate_from, separate_observed, AdamConfig, PgdConfig, SeparationResult, TraceRecord,
};
pub use error::{AudioError, ConfigError, Error, Result, WeightsError};
pub use harness::{run_experiment, ExperimentConfig};
pub use losses::{LossBreakdown, LossConfig, SpectralLoss};
pub use metrics::{evaluate, MetricsReport, SourceMetrics};
pub use priors::{
    project, sample_latent, Generator, LatentVector, NeuralDecoder, Prior, PriorKind, PriorSpec,
};

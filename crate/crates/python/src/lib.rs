//! Python bindings. Signals cross the boundary as lists of floats.

use std::path::PathBuf;

use priorsep::engine::{separate_from, PgdConfig};
use priorsep::io::{read_audio as read_wav, write_audio as write_wav};
use priorsep::losses::{LossBreakdown, LossConfig, SpectralLoss};
use priorsep::metrics::evaluate as evaluate_metrics;
use priorsep::priors::{self, Generator, LatentVector, Prior as CorePrior, PriorSpec};
use priorsep::{Error, Waveform, SAMPLE_RATE};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(format!("{}: {}", other.kind(), other)),
    }
}

fn breakdown<'py>(py: Python<'py>, b: &LossBreakdown) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("l_ms", b.l_ms)?;
    d.set_item("l_sd", b.l_sd)?;
    d.set_item("l_mc", b.l_mc)?;
    d.set_item("l_fc", b.l_fc)?;
    d.set_item("total", b.total)?;
    Ok(d)
}

/// A source prior G mapping a latent vector in [-1, 1]^d to a waveform.
#[pyclass(name = "Prior", module = "priorsep_py", frozen)]
struct Prior {
    inner: CorePrior,
}

#[pymethods]
impl Prior {
    /// `kind` is "harmonic", "percussive" or "neural". Neural priors load
    /// `weights` when given, else build a random decoder from `channels`
    /// and `seed`.
    #[new]
    #[pyo3(signature = (kind, signal_len=16384, weights=None, channels=None, latent_dim=100, seed=0))]
    fn new(
        kind: &str,
        signal_len: usize,
        weights: Option<PathBuf>,
        channels: Option<Vec<usize>>,
        latent_dim: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = match kind {
            "harmonic" => PriorSpec::harmonic(),
            "percussive" => PriorSpec::percussive(),
            "neural" => PriorSpec::Neural {
                weights,
                latent_dim,
                channels: channels.unwrap_or_default(),
                seed,
            },
            other => return Err(PyValueError::new_err(format!("unknown prior kind {other:?}"))),
        };
        Ok(Self {
            inner: spec.build(signal_len, SAMPLE_RATE).map_err(to_py)?,
        })
    }

    #[getter]
    fn kind(&self) -> String {
        format!("{:?}", self.inner.kind()).to_lowercase()
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    #[getter]
    fn output_len(&self) -> usize {
        self.inner.output_len()
    }

    fn generate(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.generate(&z).map_err(to_py)
    }

    /// Gradient of ⟨cotangent, G(z)⟩ with respect to z.
    fn generate_vjp(&self, z: Vec<f64>, cotangent: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.generate_vjp(&z, &cotangent).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Prior(kind={:?}, latent_dim={}, output_len={})",
            self.kind(),
            self.inner.latent_dim(),
            self.inner.output_len()
        )
    }
}

#[pyfunction]
fn sample_latent(seed: u64, dim: usize) -> PyResult<Vec<f64>> {
    Ok(priors::sample_latent(seed, dim).map_err(to_py)?.into_inner())
}

#[pyfunction]
fn project(z: Vec<f64>) -> Vec<f64> {
    priors::project(&z)
}

fn loss_config(beta: Option<[f64; 4]>) -> LossConfig {
    let mut cfg = LossConfig::default();
    if let Some([a, b, c, d]) = beta {
        cfg.beta_ms = a;
        cfg.beta_sd = b;
        cfg.beta_mc = c;
        cfg.beta_fc = d;
    }
    cfg
}

/// Returns `(breakdown, gradients)` with one gradient per source.
#[pyfunction]
#[pyo3(signature = (mixture, sources, beta=None))]
fn total_loss<'py>(
    py: Python<'py>,
    mixture: Vec<f64>,
    sources: Vec<Vec<f64>>,
    beta: Option<[f64; 4]>,
) -> PyResult<(Bound<'py, PyDict>, Vec<Vec<f64>>)> {
    let loss = SpectralLoss::new(loss_config(beta)).map_err(to_py)?;
    let views: Vec<&[f64]> = sources.iter().map(Vec::as_slice).collect();
    let (b, grads) = loss.total_loss(&mixture, &views).map_err(to_py)?;
    Ok((breakdown(py, &b)?, grads))
}

/// Projected-Adam separation. Latents start at zero unless `init` is given.
#[pyfunction]
#[pyo3(signature = (mixture, priors, iterations=1000, learning_rate=0.05, beta=None, init=None, return_best=false))]
#[allow(clippy::too_many_arguments)]
fn separate<'py>(
    py: Python<'py>,
    mixture: Vec<f64>,
    priors: Vec<PyRef<'py, Prior>>,
    iterations: usize,
    learning_rate: f64,
    beta: Option<[f64; 4]>,
    init: Option<Vec<Vec<f64>>>,
    return_best: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let gens: Vec<CorePrior> = priors.iter().map(|p| p.inner.clone()).collect();
    let init = match init {
        Some(zs) => zs
            .into_iter()
            .map(LatentVector::new)
            .collect::<priorsep::Result<Vec<_>>>()
            .map_err(to_py)?,
        None => gens.iter().map(|g| LatentVector::zeros(g.latent_dim())).collect(),
    };
    let cfg = PgdConfig {
        iterations,
        learning_rate,
        loss: loss_config(beta),
        return_best,
        ..PgdConfig::default()
    };
    let r = py
        .detach(|| separate_from(&mixture, &gens, init, &cfg))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("sources", &r.sources)?;
    let latents: Vec<Vec<f64>> = r.latents.into_iter().map(LatentVector::into_inner).collect();
    d.set_item("latents", latents)?;
    d.set_item("initial", breakdown(py, &r.initial)?)?;
    d.set_item("final", breakdown(py, &r.final_loss)?)?;
    d.set_item("trace", r.trace.iter().map(|t| t.total).collect::<Vec<_>>())?;
    d.set_item("returned_iteration", r.returned_iteration)?;
    d.set_item("seconds", r.duration.as_secs_f64())?;
    Ok(d)
}

/// Per-source spectral SNR, RMS envelope distance and SIR, in input order.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    estimates: Vec<Vec<f64>>,
    references: Vec<Vec<f64>>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let e: Vec<&[f64]> = estimates.iter().map(Vec::as_slice).collect();
    let r: Vec<&[f64]> = references.iter().map(Vec::as_slice).collect();
    let report = evaluate_metrics(&e, &r).map_err(to_py)?;
    report
        .sources
        .iter()
        .map(|m| {
            let d = PyDict::new(py);
            d.set_item("spectral_snr_db", m.spectral_snr_db)?;
            d.set_item("rms_env_distance", m.rms_env_distance)?;
            d.set_item("sir_db", m.sir_db)?;
            Ok(d)
        })
        .collect()
}

/// Mono 16-bit 16 kHz PCM only.
#[pyfunction]
fn read_audio(path: PathBuf) -> PyResult<Vec<f64>> {
    Ok(read_wav(&path).map_err(to_py)?.samples().to_vec())
}

#[pyfunction]
fn write_audio(path: PathBuf, samples: Vec<f64>) -> PyResult<()> {
    let w = Waveform::from_samples(samples).map_err(to_py)?;
    write_wav(&w, &path).map_err(to_py)
}

#[pymodule]
fn priorsep_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SAMPLE_RATE", SAMPLE_RATE)?;
    m.add_class::<Prior>()?;
    m.add_function(wrap_pyfunction!(sample_latent, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(total_loss, m)?)?;
    m.add_function(wrap_pyfunction!(separate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(read_audio, m)?)?;
    m.add_function(wrap_pyfunction!(write_audio, m)?)?;
    Ok(())
}

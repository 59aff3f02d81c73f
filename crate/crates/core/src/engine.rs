//! Projected gradient descent over the latent spaces of K priors.
//!
//! Each iteration synthesizes every source from its latent, scores the
//! summed reconstruction against the observed mixture, steps every latent
//! with Adam, and clips the latents back into `[-1, 1]`.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, LossConfig, SpectralLoss};
use crate::priors::{Generator, LatentVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }

    /// Advances the moments with `grad` and returns the additive parameter
    /// delta. `iteration` is only used to label a non-finite gradient.
    pub fn step(
        &mut self,
        grad: &[f64],
        learning_rate: f64,
        cfg: &AdamConfig,
        iteration: usize,
    ) -> Result<Vec<f64>> {
        if grad.len() != self.m.len() {
            return Err(Error::LengthMismatch {
                expected: self.m.len(),
                actual: grad.len(),
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                what: "gradient",
                iteration,
            });
        }
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        Ok(grad
            .iter()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|(&g, (m, v))| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                -learning_rate * m_hat / (v_hat.sqrt() + cfg.eps)
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PgdConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    /// Record the loss breakdown every `trace_stride` iterations.
    pub trace_stride: usize,
    /// Return the lowest-loss iterate instead of the last one.
    pub return_best: bool,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            learning_rate: 0.05,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            trace_stride: 1,
            return_best: false,
        }
    }
}

impl PgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning_rate must be >= 0".into()));
        }
        if self.trace_stride == 0 {
            return Err(Error::InvalidParameter("trace_stride must be >= 1".into()));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::InvalidParameter(
                "adam betas must be in [0, 1) and eps > 0".into(),
            ));
        }
        self.loss.validate()
    }
}

/// Loss breakdown evaluated at the start of one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub l_ms: f64,
    pub l_sd: f64,
    pub l_mc: f64,
    pub l_fc: f64,
    pub total: f64,
}

impl TraceRecord {
    fn new(iteration: usize, b: &LossBreakdown) -> Self {
        Self {
            iteration,
            l_ms: b.l_ms,
            l_sd: b.l_sd,
            l_mc: b.l_mc,
            l_fc: b.l_fc,
            total: b.total,
        }
    }
}

/// Writes one JSON object per line.
pub fn write_trace<W: Write>(trace: &[TraceRecord], mut out: W) -> Result<()> {
    for rec in trace {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SeparationResult {
    pub latents: Vec<LatentVector>,
    pub sources: Vec<Vec<f64>>,
    pub trace: Vec<TraceRecord>,
    /// Loss at the initial latents.
    pub initial: LossBreakdown,
    /// Loss at the returned latents.
    pub final_loss: LossBreakdown,
    /// Iteration whose latents were returned; `iterations + 1` denotes the
    /// state after the last update.
    pub returned_iteration: usize,
    pub duration: Duration,
}

/// Separates `mixture` starting every latent at zero.
pub fn separate<G: Generator>(mixture: &[f64], priors: &[G], cfg: &PgdConfig) -> Result<SeparationResult> {
    let init = priors
        .iter()
        .map(|p| LatentVector::zeros(p.latent_dim()))
        .collect();
    separate_from(mixture, priors, init, cfg)
}

pub fn separate_from<G: Generator>(
    mixture: &[f64],
    priors: &[G],
    init: Vec<LatentVector>,
    cfg: &PgdConfig,
) -> Result<SeparationResult> {
    separate_observed(mixture, priors, init, cfg, |_, _| {})
}

/// Like [`separate_from`], calling `observe(t, latents)` after the projection
/// step of every iteration `t`.
pub fn separate_observed<G: Generator>(
    mixture: &[f64],
    priors: &[G],
    init: Vec<LatentVector>,
    cfg: &PgdConfig,
    mut observe: impl FnMut(usize, &[LatentVector]),
) -> Result<SeparationResult> {
    cfg.validate()?;
    if priors.is_empty() {
        return Err(Error::Empty("prior list"));
    }
    if init.len() != priors.len() {
        return Err(Error::LengthMismatch {
            expected: priors.len(),
            actual: init.len(),
        });
    }
    for (p, z) in priors.iter().zip(&init) {
        p.check_latent(z.as_slice())?;
        if p.output_len() != mixture.len() {
            return Err(Error::LengthMismatch {
                expected: mixture.len(),
                actual: p.output_len(),
            });
        }
    }
    let started = Instant::now();
    let loss = SpectralLoss::new(cfg.loss)?;
    let target = loss.prepare(mixture)?;

    let mut latents: Vec<LatentVector> = init.into_iter().map(|z| z.project()).collect();
    let mut adam: Vec<AdamState> = latents.iter().map(|z| AdamState::new(z.len())).collect();
    let mut trace = Vec::with_capacity(cfg.iterations.div_ceil(cfg.trace_stride));
    let mut initial = None;
    let mut best: Option<(f64, usize, Vec<LatentVector>)> = None;

    for t in 1..=cfg.iterations {
        let sources = synthesize(priors, &latents)?;
        let views: Vec<&[f64]> = sources.iter().map(Vec::as_slice).collect();
        let (breakdown, grads) = loss.total_loss_prepared(&target, &views)?;
        if !breakdown.is_finite() {
            return Err(Error::NonFinite {
                what: "loss",
                iteration: t,
            });
        }
        initial.get_or_insert(breakdown);
        if (t - 1) % cfg.trace_stride == 0 {
            trace.push(TraceRecord::new(t, &breakdown));
        }
        if cfg.return_best && best.as_ref().is_none_or(|(b, _, _)| breakdown.total < *b) {
            best = Some((breakdown.total, t, latents.clone()));
        }
        for (i, prior) in priors.iter().enumerate() {
            let gz = prior.generate_vjp(latents[i].as_slice(), &grads[i])?;
            let delta = adam[i].step(&gz, cfg.learning_rate, &cfg.adam, t)?;
            for (z, d) in latents[i].as_mut_slice().iter_mut().zip(delta) {
                *z += d;
            }
            latents[i].project_in_place();
            debug_assert!(latents[i].in_box());
        }
        observe(t, &latents);
    }

    let last_iteration = cfg.iterations + 1;
    let sources = synthesize(priors, &latents)?;
    let views: Vec<&[f64]> = sources.iter().map(Vec::as_slice).collect();
    let last = loss.total_value(&target, &views)?;
    if !last.is_finite() {
        return Err(Error::NonFinite {
            what: "loss",
            iteration: last_iteration,
        });
    }

    let (latents, sources, final_loss, returned_iteration) = match best {
        Some((b, it, z)) if b < last.total => {
            let s = synthesize(priors, &z)?;
            let views: Vec<&[f64]> = s.iter().map(Vec::as_slice).collect();
            let bd = loss.total_value(&target, &views)?;
            (z, s, bd, it)
        }
        _ => (latents, sources, last, last_iteration),
    };

    Ok(SeparationResult {
        latents,
        sources,
        trace,
        initial: initial.expect("at least one iteration"),
        final_loss,
        returned_iteration,
        duration: started.elapsed(),
    })
}

fn synthesize<G: Generator>(priors: &[G], latents: &[LatentVector]) -> Result<Vec<Vec<f64>>> {
    priors
        .iter()
        .zip(latents)
        .map(|(p, z)| p.generate(z.as_slice()))
        .collect()
}

//! Finite-difference verification of every analytic gradient in the crate.
//!
//! Derivatives are estimated with the five-point central stencil
//! `[f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)] / 12h`, which needs nothing but
//! forward evaluations and is therefore independent of the backward code it
//! checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::losses::{LossConfig, SpectralLoss};
use crate::priors::{
    Generator, HarmonicParams, HarmonicPrior, NeuralDecoder, NeuralDecoderConfig, PercussiveParams,
    PercussivePrior,
};

pub fn central_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let all: Vec<usize> = (0..x.len()).collect();
    partial_derivatives(f, x, h, &all)
}

/// Finite-difference partial derivatives for the listed coordinates only.
pub fn partial_derivatives(
    f: &mut impl FnMut(&[f64]) -> f64,
    x: &[f64],
    h: f64,
    coords: &[usize],
) -> Vec<f64> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let mut at = |d: f64| {
                probe[i] = x[i] + d;
                let v = f(&probe);
                probe[i] = x[i];
                v
            };
            let (m2, m1, p1, p2) = (at(-2.0 * h), at(-h), at(h), at(2.0 * h));
            (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GradCheckConfig {
    pub signal_len: usize,
    pub cases: usize,
    pub step: f64,
    /// Signal coordinates probed per loss case; 0 probes all of them.
    pub coordinates: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            signal_len: 2048,
            cases: 20,
            step: 1e-5,
            coordinates: 96,
            seed: 0x6ad,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckResult {
    pub name: &'static str,
    pub cases: usize,
    /// Cases redrawn because the stencil straddled a non-differentiable point.
    pub skipped: usize,
    pub worst_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckResult {
    fn from_errors(name: &'static str, errors: &[f64], skipped: usize, tolerance: f64) -> Self {
        let worst = errors.iter().copied().fold(0.0, f64::max);
        Self {
            name,
            cases: errors.len(),
            skipped,
            worst_relative_error: worst,
            tolerance,
            passed: errors.iter().all(|e| *e <= tolerance),
        }
    }
}

fn pick_coords(rng: &mut ChaCha8Rng, len: usize, count: usize) -> Vec<usize> {
    if count == 0 || count >= len {
        (0..len).collect()
    } else {
        rand::seq::index::sample(rng, len, count).into_vec()
    }
}

fn random_signal(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

type LossFn = fn(&SpectralLoss, &[f64], &[f64]) -> Result<(f64, Vec<f64>)>;

fn check_mixture_loss(
    name: &'static str,
    loss: &SpectralLoss,
    eval: LossFn,
    cfg: &GradCheckConfig,
    tolerance: f64,
    rng: &mut ChaCha8Rng,
) -> Result<GradCheckResult> {
    let mut errors = Vec::with_capacity(cfg.cases);
    for _ in 0..cfg.cases {
        let m = random_signal(rng, cfg.signal_len);
        let e = random_signal(rng, cfg.signal_len);
        let (_, analytic) = eval(loss, &m, &e)?;
        let coords = pick_coords(rng, e.len(), cfg.coordinates);
        let mut f = |x: &[f64]| eval(loss, &m, x).map(|r| r.0).unwrap_or(f64::NAN);
        let numeric = partial_derivatives(&mut f, &e, cfg.step, &coords);
        let picked: Vec<f64> = coords.iter().map(|&i| analytic[i]).collect();
        errors.push(relative_error(&picked, &numeric));
    }
    Ok(GradCheckResult::from_errors(name, &errors, 0, tolerance))
}

/// Checks a function of two concatenated sources.
fn check_pair_loss(
    name: &'static str,
    cfg: &GradCheckConfig,
    tolerance: f64,
    rng: &mut ChaCha8Rng,
    mut value_and_grad: impl FnMut(&[f64], &[f64], &[f64]) -> Result<(f64, Vec<f64>)>,
) -> Result<GradCheckResult> {
    let n = cfg.signal_len;
    let mut errors = Vec::with_capacity(cfg.cases);
    for _ in 0..cfg.cases {
        let m = random_signal(rng, n);
        let joint = random_signal(rng, 2 * n);
        let (_, analytic) = value_and_grad(&m, &joint[..n], &joint[n..])?;
        let coords = pick_coords(rng, joint.len(), cfg.coordinates);
        let mut f = |x: &[f64]| {
            value_and_grad(&m, &x[..n], &x[n..])
                .map(|r| r.0)
                .unwrap_or(f64::NAN)
        };
        let numeric = partial_derivatives(&mut f, &joint, cfg.step, &coords);
        let picked: Vec<f64> = coords.iter().map(|&i| analytic[i]).collect();
        errors.push(relative_error(&picked, &numeric));
    }
    Ok(GradCheckResult::from_errors(name, &errors, 0, tolerance))
}

fn check_generator<G: Generator>(
    name: &'static str,
    prior: &G,
    cfg: &GradCheckConfig,
    tolerance: f64,
    rng: &mut ChaCha8Rng,
    smooth_at: impl Fn(&[f64], f64) -> bool,
) -> Result<GradCheckResult> {
    let mut errors = Vec::with_capacity(cfg.cases);
    let mut skipped = 0;
    while errors.len() < cfg.cases {
        let z = random_signal(rng, prior.latent_dim());
        let cot = random_signal(rng, prior.output_len());
        if !smooth_at(&z, cfg.step) {
            skipped += 1;
            continue;
        }
        let analytic = prior.generate_vjp(&z, &cot)?;
        let mut f = |x: &[f64]| {
            prior
                .generate(x)
                .map(|y| y.iter().zip(&cot).map(|(a, b)| a * b).sum())
                .unwrap_or(f64::NAN)
        };
        let numeric = central_difference(&mut f, &z, cfg.step);
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(GradCheckResult::from_errors(name, &errors, skipped, tolerance))
}

/// Tolerances per check: loss terms and the percussive prior at 1e-4 or
/// tighter, harmonic 1e-6, neural decoder 1e-5.
pub fn run_suite(cfg: &GradCheckConfig) -> Result<Vec<GradCheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let loss = SpectralLoss::new(LossConfig::default())?;
    let mut out = Vec::new();

    out.push(check_mixture_loss(
        "loss_ms",
        &loss,
        SpectralLoss::loss_ms,
        cfg,
        1e-5,
        &mut rng,
    )?);
    out.push(check_mixture_loss(
        "loss_mc",
        &loss,
        SpectralLoss::loss_mc,
        cfg,
        1e-5,
        &mut rng,
    )?);
    out.push(check_mixture_loss(
        "loss_fc",
        &loss,
        SpectralLoss::loss_fc,
        cfg,
        1e-5,
        &mut rng,
    )?);
    out.push(check_pair_loss("loss_sd", cfg, 1e-4, &mut rng, |_, a, b| {
        let (v, g) = loss.loss_sd(&[a, b])?;
        Ok((v, g.concat()))
    })?);
    out.push(check_pair_loss("total_loss", cfg, 1e-4, &mut rng, |m, a, b| {
        let (bd, g) = loss.total_loss(m, &[a, b])?;
        Ok((bd.total, g.concat()))
    })?);

    let harmonic = HarmonicPrior::new(HarmonicParams::default(), cfg.signal_len, crate::dsp::SAMPLE_RATE)?;
    out.push(check_generator(
        "harmonic_prior",
        &harmonic,
        cfg,
        1e-6,
        &mut rng,
        |_, _| true,
    )?);
    let percussive = PercussivePrior::new(
        PercussiveParams::default(),
        cfg.signal_len,
        crate::dsp::SAMPLE_RATE,
    )?;
    out.push(check_generator(
        "percussive_prior",
        &percussive,
        cfg,
        1e-4,
        &mut rng,
        |_, _| true,
    )?);
    let neural = NeuralDecoder::random(&NeuralDecoderConfig::tiny(), cfg.seed)?;
    out.push(check_generator(
        "neural_decoder",
        &neural,
        cfg,
        1e-5,
        &mut rng,
        |z, h| neural.is_smooth_near(z, 2.0 * h),
    )?);
    Ok(out)
}

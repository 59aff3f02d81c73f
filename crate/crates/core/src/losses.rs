//! Spectral-domain separation losses and their weighted combination.
//!
//! All four terms are computed on STFT log-magnitudes and return analytic
//! waveform gradients:
//!
//! * multiresolution spectral loss: ℓ₁ distance between log-power pyramids
//!   of the observed and reconstructed mixtures;
//! * source dissociation: Frobenius norm of the gradient-field similarity Ψ
//!   between every pair of estimated sources, summed over pyramid levels;
//! * mixture coherence: negated Ψ similarity between observed and
//!   reconstructed mixtures;
//! * frequency consistency: per-bin ratio of `log(1+|M|)` to
//!   `log(1+|M̂|)`, full resolution only, clamped to `[0, ratio_cap]`.

use ndarray::{Array2, Zip};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{
    grad_field, grad_field_vjp, log_power, log_power_vjp, pyramid, pyramid_vjp, ComplexSpectrogram,
    GradientField, StftConfig, StftPlan,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub beta_ms: f64,
    pub beta_sd: f64,
    pub beta_mc: f64,
    pub beta_fc: f64,
    /// Number of pyramid resolutions.
    pub levels: usize,
    pub eps_den: f64,
    /// Upper clamp for each frequency-consistency ratio.
    pub ratio_cap: f64,
    /// Treat the Ψ normalizers λ₁, λ₂ as constants when differentiating.
    pub lambda_stop_gradient: bool,
    pub stft: StftConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta_ms: 0.8,
            beta_sd: 0.3,
            beta_mc: 0.1,
            beta_fc: 0.4,
            levels: 3,
            eps_den: 1e-6,
            ratio_cap: 1e3,
            lambda_stop_gradient: false,
            stft: StftConfig::default(),
        }
    }
}

impl LossConfig {
    pub fn weights(&self) -> [f64; 4] {
        [self.beta_ms, self.beta_sd, self.beta_mc, self.beta_fc]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, b) in [
            ("beta_ms", self.beta_ms),
            ("beta_sd", self.beta_sd),
            ("beta_mc", self.beta_mc),
            ("beta_fc", self.beta_fc),
        ] {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {b}")));
            }
        }
        if self.levels == 0 {
            return Err(Error::InvalidParameter("levels must be >= 1".into()));
        }
        if self.eps_den.is_nan() || self.eps_den <= 0.0 {
            return Err(Error::InvalidParameter("eps_den must be > 0".into()));
        }
        if self.ratio_cap.is_nan() || self.ratio_cap <= 1.0 {
            return Err(Error::InvalidParameter("ratio_cap must be > 1".into()));
        }
        self.stft.validate()
    }
}

/// Per-term values of the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ms: f64,
    pub l_sd: f64,
    pub l_mc: f64,
    pub l_fc: f64,
    pub total: f64,
    pub weights: [f64; 4],
}

impl LossBreakdown {
    fn new(l_ms: f64, l_sd: f64, l_mc: f64, l_fc: f64, weights: [f64; 4]) -> Self {
        let total = weights[0] * l_ms + weights[1] * l_sd + weights[2] * l_mc + weights[3] * l_fc;
        Self {
            l_ms,
            l_sd,
            l_mc,
            l_fc,
            total,
            weights,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_ms, self.l_sd, self.l_mc, self.l_fc, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Spectrogram, log-power pyramid, and gradient fields of one signal.
#[derive(Debug, Clone)]
struct Analysis {
    spec: ComplexSpectrogram,
    levels: Vec<Array2<f64>>,
    fields: Vec<GradientField>,
}

/// Ψ(x, y) = tanh(λ₁|∇x|) ⊙ tanh(λ₂|∇y|) with intermediates for backprop.
#[derive(Debug, Clone)]
struct PsiEval {
    value: Array2<f64>,
    tanh_x: Array2<f64>,
    tanh_y: Array2<f64>,
    lambda1: f64,
    lambda2: f64,
    norm_x: f64,
    norm_y: f64,
}

fn psi_forward(fx: &GradientField, fy: &GradientField, eps: f64) -> PsiEval {
    let norm_x = fx.frobenius();
    let norm_y = fy.frobenius();
    let lambda1 = (norm_y + eps).sqrt() / (norm_x + eps).sqrt();
    let lambda2 = (norm_x + eps).sqrt() / (norm_y + eps).sqrt();
    let tanh_x = fx.magnitude.mapv(|a| (lambda1 * a).tanh());
    let tanh_y = fy.magnitude.mapv(|b| (lambda2 * b).tanh());
    let value = &tanh_x * &tanh_y;
    PsiEval {
        value,
        tanh_x,
        tanh_y,
        lambda1,
        lambda2,
        norm_x,
        norm_y,
    }
}

/// Cotangents on `|∇x|` and `|∇y|` given a cotangent on Ψ.
fn psi_backward(
    eval: &PsiEval,
    fx: &GradientField,
    fy: &GradientField,
    cot: &Array2<f64>,
    eps: f64,
    stop_lambda: bool,
) -> (Array2<f64>, Array2<f64>) {
    let (l1, l2) = (eval.lambda1, eval.lambda2);
    let shape = cot.dim();
    let mut gx = Array2::zeros(shape);
    let mut gy = Array2::zeros(shape);
    Zip::from(&mut gx)
        .and(&mut gy)
        .and(cot)
        .and(&eval.tanh_x)
        .and(&eval.tanh_y)
        .for_each(|gx, gy, &c, &tx, &ty| {
            *gx = c * ty * (1.0 - tx * tx);
            *gy = c * tx * (1.0 - ty * ty);
        });
    // gx, gy now hold ∂/∂(λ₁a) and ∂/∂(λ₂b)
    let dl1: f64 = Zip::from(&gx)
        .and(&fx.magnitude)
        .fold(0.0, |acc, &g, &a| acc + g * a);
    let dl2: f64 = Zip::from(&gy)
        .and(&fy.magnitude)
        .fold(0.0, |acc, &g, &b| acc + g * b);
    gx *= l1;
    gy *= l2;
    if !stop_lambda {
        // λ₁ = sqrt((‖∇y‖+ε)/(‖∇x‖+ε)), λ₂ = 1/λ₁
        let d_norm_x = -dl1 * l1 / (2.0 * (eval.norm_x + eps)) + dl2 * l2 / (2.0 * (eval.norm_x + eps));
        let d_norm_y = dl1 * l1 / (2.0 * (eval.norm_y + eps)) - dl2 * l2 / (2.0 * (eval.norm_y + eps));
        if eval.norm_x > 0.0 {
            gx.scaled_add(d_norm_x / eval.norm_x, &fx.magnitude);
        }
        if eval.norm_y > 0.0 {
            gy.scaled_add(d_norm_y / eval.norm_y, &fy.magnitude);
        }
    }
    (gx, gy)
}

fn frobenius(x: &Array2<f64>) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cotangent of ‖x‖_F with respect to x.
fn frobenius_grad(x: &Array2<f64>, norm: f64) -> Array2<f64> {
    if norm > 0.0 {
        x / norm
    } else {
        Array2::zeros(x.dim())
    }
}

/// Ψ(x, y) for two real images of equal shape.
pub fn psi(x: &Array2<f64>, y: &Array2<f64>, eps_den: f64) -> Result<Array2<f64>> {
    if x.dim() != y.dim() {
        return Err(Error::ShapeMismatch {
            expected: x.dim(),
            actual: y.dim(),
        });
    }
    Ok(psi_forward(&grad_field(x), &grad_field(y), eps_den).value)
}

/// Loss evaluator holding an STFT plan for one configuration.
#[derive(Debug, Clone)]
pub struct SpectralLoss {
    cfg: LossConfig,
    plan: StftPlan,
}

/// Precomputed analysis of the observed mixture.
#[derive(Debug, Clone)]
pub struct MixtureTarget {
    analysis: Analysis,
    /// `log(1 + |M|)` at full resolution.
    log_mag: Array2<f64>,
    len: usize,
}

impl MixtureTarget {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Accumulated cotangents for one analysed signal.
struct Cotangent {
    levels: Vec<Array2<f64>>,
    spec: Array2<Complex64>,
}

impl Cotangent {
    fn zeros(a: &Analysis) -> Self {
        Self {
            levels: a.levels.iter().map(|l| Array2::zeros(l.dim())).collect(),
            spec: Array2::zeros(a.spec.bins.dim()),
        }
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch { expected, actual });
    }
    Ok(())
}

impl SpectralLoss {
    pub fn new(cfg: LossConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            plan: StftPlan::new(cfg.stft)?,
            cfg,
        })
    }

    pub fn config(&self) -> &LossConfig {
        &self.cfg
    }

    fn analyse(&self, x: &[f64]) -> Result<Analysis> {
        let spec = self.plan.forward(x)?;
        let levels = pyramid(&log_power(&spec), self.cfg.levels);
        let fields = levels.iter().map(grad_field).collect();
        Ok(Analysis { spec, levels, fields })
    }

    pub fn prepare(&self, mixture: &[f64]) -> Result<MixtureTarget> {
        let analysis = self.analyse(mixture)?;
        let log_mag = analysis.spec.bins.mapv(|c| c.norm().ln_1p());
        Ok(MixtureTarget {
            analysis,
            log_mag,
            len: mixture.len(),
        })
    }

    /// Pull an accumulated cotangent back to the waveform.
    fn backward(&self, a: &Analysis, mut cot: Cotangent, len: usize) -> Result<Vec<f64>> {
        let full_shape = a.levels[0].dim();
        let lp_cot = pyramid_vjp(full_shape, &cot.levels);
        cot.spec += &log_power_vjp(&a.spec, &lp_cot);
        self.plan.adjoint(len, &cot.spec)
    }

    fn ms_term(&self, target: &Analysis, est: &Analysis, cot: &mut Cotangent, weight: f64) -> f64 {
        let mut total = 0.0;
        for (l, (t, e)) in target.levels.iter().zip(&est.levels).enumerate() {
            Zip::from(&mut cot.levels[l])
                .and(t)
                .and(e)
                .for_each(|c, &tv, &ev| {
                    let diff = tv - ev;
                    total += diff.abs();
                    if diff > 0.0 {
                        *c -= weight;
                    } else if diff < 0.0 {
                        *c += weight;
                    }
                });
        }
        total
    }

    /// Σ_l ‖Ψ(x_l, y_l)‖_F with cotangents added to both sides (scaled by `weight`).
    fn psi_term(
        &self,
        x: &Analysis,
        y: &Analysis,
        cot_x: Option<&mut Cotangent>,
        cot_y: &mut Cotangent,
        weight: f64,
    ) -> f64 {
        let eps = self.cfg.eps_den;
        let mut total = 0.0;
        let mut cot_x = cot_x;
        for l in 0..x.levels.len() {
            let (fx, fy) = (&x.fields[l], &y.fields[l]);
            let eval = psi_forward(fx, fy, eps);
            let norm = frobenius(&eval.value);
            total += norm;
            if weight == 0.0 {
                continue;
            }
            let g = frobenius_grad(&eval.value, norm) * weight;
            let (gx, gy) = psi_backward(&eval, fx, fy, &g, eps, self.cfg.lambda_stop_gradient);
            cot_y.levels[l] += &grad_field_vjp(fy, &gy);
            if let Some(cx) = cot_x.as_deref_mut() {
                cx.levels[l] += &grad_field_vjp(fx, &gx);
            }
        }
        total
    }

    fn fc_term(&self, target: &MixtureTarget, est: &Analysis, cot: &mut Cotangent, weight: f64) -> f64 {
        let eps = self.cfg.eps_den;
        let cap = self.cfg.ratio_cap;
        let mut total = 0.0;
        Zip::from(&mut cot.spec)
            .and(&target.log_mag)
            .and(&est.spec.bins)
            .for_each(|c, &num, &s| {
                if num == 0.0 {
                    return;
                }
                let mag = s.norm();
                let den = mag.ln_1p() + eps;
                let ratio = num / den;
                if ratio >= cap {
                    total += cap;
                    return;
                }
                total += ratio;
                if mag > 0.0 {
                    let d_mag = -num / (den * den) / (1.0 + mag);
                    *c += s * (weight * d_mag / mag);
                }
            });
        total
    }

    /// Multiresolution ℓ₁ log-power distance and its gradient w.r.t. `estimate`.
    pub fn loss_ms(&self, mixture: &[f64], estimate: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len(mixture.len(), estimate.len())?;
        let t = self.analyse(mixture)?;
        let e = self.analyse(estimate)?;
        let mut cot = Cotangent::zeros(&e);
        let v = self.ms_term(&t, &e, &mut cot, 1.0);
        Ok((v, self.backward(&e, cot, estimate.len())?))
    }

    /// Pairwise source dissociation and its gradient w.r.t. every source.
    pub fn loss_sd(&self, sources: &[&[f64]]) -> Result<(f64, Vec<Vec<f64>>)> {
        let first = sources.first().ok_or(Error::Empty("source list"))?;
        for s in sources {
            check_len(first.len(), s.len())?;
        }
        let analyses = sources
            .iter()
            .map(|s| self.analyse(s))
            .collect::<Result<Vec<_>>>()?;
        let (v, cots) = self.sd_accumulate(&analyses, 1.0);
        let grads = analyses
            .iter()
            .zip(cots)
            .map(|(a, c)| self.backward(a, c, first.len()))
            .collect::<Result<Vec<_>>>()?;
        Ok((v, grads))
    }

    fn sd_accumulate(&self, analyses: &[Analysis], weight: f64) -> (f64, Vec<Cotangent>) {
        let mut cots: Vec<Cotangent> = analyses.iter().map(Cotangent::zeros).collect();
        let mut total = 0.0;
        for i in 0..analyses.len() {
            for j in i + 1..analyses.len() {
                let (head, tail) = cots.split_at_mut(j);
                total += self.psi_term(
                    &analyses[i],
                    &analyses[j],
                    Some(&mut head[i]),
                    &mut tail[0],
                    weight,
                );
            }
        }
        (total, cots)
    }

    /// Negated Ψ coherence between mixture and estimate, gradient w.r.t. `estimate`.
    pub fn loss_mc(&self, mixture: &[f64], estimate: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len(mixture.len(), estimate.len())?;
        let t = self.analyse(mixture)?;
        let e = self.analyse(estimate)?;
        let mut cot = Cotangent::zeros(&e);
        let v = -self.psi_term(&t, &e, None, &mut cot, -1.0);
        Ok((v, self.backward(&e, cot, estimate.len())?))
    }

    /// Clamped per-bin log-magnitude ratio, gradient w.r.t. `estimate`.
    pub fn loss_fc(&self, mixture: &[f64], estimate: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len(mixture.len(), estimate.len())?;
        let target = self.prepare(mixture)?;
        let e = self.analyse(estimate)?;
        let mut cot = Cotangent::zeros(&e);
        let v = self.fc_term(&target, &e, &mut cot, 1.0);
        Ok((v, self.backward(&e, cot, estimate.len())?))
    }

    /// Weighted total loss with the reconstructed mixture formed as the sum of
    /// `sources`. Returns the breakdown and the gradient w.r.t. each source.
    pub fn total_loss(&self, mixture: &[f64], sources: &[&[f64]]) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
        let target = self.prepare(mixture)?;
        self.total_loss_prepared(&target, sources)
    }

    pub fn total_loss_prepared(
        &self,
        target: &MixtureTarget,
        sources: &[&[f64]],
    ) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
        let (breakdown, grads) = self.evaluate(target, sources, true)?;
        Ok((breakdown, grads.unwrap_or_default()))
    }

    /// Loss only, skipping every backward pass.
    pub fn total_value(&self, target: &MixtureTarget, sources: &[&[f64]]) -> Result<LossBreakdown> {
        Ok(self.evaluate(target, sources, false)?.0)
    }

    fn evaluate(
        &self,
        target: &MixtureTarget,
        sources: &[&[f64]],
        with_grad: bool,
    ) -> Result<(LossBreakdown, Option<Vec<Vec<f64>>>)> {
        if sources.is_empty() {
            return Err(Error::Empty("source list"));
        }
        let len = target.len;
        for s in sources {
            check_len(len, s.len())?;
        }
        let w = self.cfg.weights();
        let gw = |b: f64| if with_grad { b } else { 0.0 };

        let mut mix = vec![0.0; len];
        for s in sources {
            for (m, v) in mix.iter_mut().zip(s.iter()) {
                *m += v;
            }
        }
        let est = self.analyse(&mix)?;
        let mut mix_cot = Cotangent::zeros(&est);
        let l_ms = self.ms_term(&target.analysis, &est, &mut mix_cot, gw(w[0]));
        let l_mc = -self.psi_term(&target.analysis, &est, None, &mut mix_cot, -gw(w[2]));
        let l_fc = self.fc_term(target, &est, &mut mix_cot, gw(w[3]));

        let analyses = sources
            .iter()
            .map(|s| self.analyse(s))
            .collect::<Result<Vec<_>>>()?;
        let (l_sd, source_cots) = self.sd_accumulate(&analyses, gw(w[1]));
        let breakdown = LossBreakdown::new(l_ms, l_sd, l_mc, l_fc, w);
        if !with_grad {
            return Ok((breakdown, None));
        }

        let mix_grad = self.backward(&est, mix_cot, len)?;
        let mut grads = Vec::with_capacity(sources.len());
        for (a, c) in analyses.iter().zip(source_cots) {
            let mut g = if w[1] != 0.0 && sources.len() > 1 {
                self.backward(a, c, len)?
            } else {
                vec![0.0; len]
            };
            for (gi, mg) in g.iter_mut().zip(&mix_grad) {
                *gi += mg;
            }
            grads.push(g);
        }
        Ok((breakdown, Some(grads)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tone(len: usize, bin: f64) -> Vec<f64> {
        (0..len)
            .map(|n| (2.0 * std::f64::consts::PI * bin * n as f64 / 256.0).sin())
            .collect()
    }

    fn loss() -> SpectralLoss {
        SpectralLoss::new(LossConfig::default()).unwrap()
    }

    #[test]
    fn defaults_match_published_weights() {
        let cfg = LossConfig::default();
        assert_eq!(cfg.weights(), [0.8, 0.3, 0.1, 0.4]);
        assert_eq!(cfg.levels, 3);
    }

    #[test]
    fn identical_signals_have_zero_ms() {
        let x = tone(2048, 17.0);
        let (v, g) = loss().loss_ms(&x, &x).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_source_has_zero_sd() {
        let x = tone(2048, 17.0);
        let (v, g) = loss().loss_sd(&[&x]).unwrap();
        assert_eq!(v, 0.0);
        assert!(g[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn silent_source_gives_zero_sd() {
        let x = tone(2048, 17.0);
        let z = vec![0.0; 2048];
        let (v, _) = loss().loss_sd(&[&x, &z]).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn silent_mixture_coherence_is_zero() {
        let z = vec![0.0; 2048];
        assert_eq!(loss().loss_mc(&z, &z).unwrap().0, 0.0);
    }

    #[test]
    fn silent_target_fc_is_zero() {
        let z = vec![0.0; 2048];
        let x = tone(2048, 9.0);
        assert_eq!(loss().loss_fc(&z, &x).unwrap().0, 0.0);
    }

    #[test]
    fn all_silent_total_is_zero() {
        let z = vec![0.0; 2048];
        let (b, g) = loss().total_loss(&z, &[&z, &z]).unwrap();
        assert_eq!(
            (b.l_ms, b.l_sd, b.l_mc, b.l_fc, b.total),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );
        assert!(g.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn psi_constant_partner_vanishes() {
        let x = array![[0.0, 1.0, 3.0], [2.0, 0.5, 1.0], [1.0, 1.0, 4.0]];
        let y = Array2::from_elem((3, 3), 7.0);
        assert!(psi(&x, &y, 1e-6).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn psi_self_is_squared_tanh() {
        let x = array![[0.0, 1.0, 3.0], [2.0, 0.5, 1.0], [1.0, 1.0, 4.0]];
        let p = psi(&x, &x, 1e-6).unwrap();
        let expected = grad_field(&x).magnitude.mapv(|m| m.tanh().powi(2));
        for (a, b) in p.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn psi_rejects_shape_mismatch() {
        let x = Array2::zeros((3, 3));
        let y = Array2::zeros((3, 4));
        assert!(matches!(psi(&x, &y, 1e-6), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let a = vec![0.0; 2048];
        let b = vec![0.0; 1024];
        assert!(matches!(
            loss().loss_ms(&a, &b),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            loss().loss_fc(&a, &b),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            loss().loss_mc(&a, &b),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            loss().loss_sd(&[&a, &b]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn empty_source_list_is_rejected() {
        let a = vec![0.0; 2048];
        assert!(matches!(loss().loss_sd(&[]), Err(Error::Empty(_))));
        assert!(matches!(loss().total_loss(&a, &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = LossConfig {
            beta_sd: -1.0,
            ..LossConfig::default()
        };
        assert!(SpectralLoss::new(cfg).is_err());
        let cfg = LossConfig {
            ratio_cap: 1.0,
            ..LossConfig::default()
        };
        assert!(SpectralLoss::new(cfg).is_err());
    }

    #[test]
    fn value_only_path_agrees_with_gradient_path() {
        let l = loss();
        let m = tone(2048, 20.0);
        let a = tone(2048, 11.0);
        let b = tone(2048, 40.5);
        let target = l.prepare(&m).unwrap();
        let (full, _) = l.total_loss_prepared(&target, &[&a, &b]).unwrap();
        let value = l.total_value(&target, &[&a, &b]).unwrap();
        assert_eq!(full, value);
    }
}

//! Closed-loop experiments: draw ground-truth latents, synthesize and mix
//! sources, separate, and score the estimates.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{peak_normalize, Waveform, DEFAULT_SIGNAL_LEN, SAMPLE_RATE};
use crate::engine::{separate, PgdConfig};
use crate::error::{ConfigError, Error, Result};
use crate::losses::LossBreakdown;
use crate::metrics::{evaluate, MetricsReport, SourceMetrics};
use crate::priors::{sample_latent, Generator, Prior, PriorKind, PriorSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub sources: Vec<PriorSpec>,
    /// Number of mixtures N.
    pub mixtures: usize,
    pub base_seed: u64,
    pub signal_len: usize,
    /// Peak-normalize each ground-truth source before mixing.
    pub normalize_sources: bool,
    /// Worker threads for the batch; 0 uses every core.
    pub workers: usize,
    pub output_dir: Option<PathBuf>,
    /// Also write mixtures, references and estimates as audio.
    pub export_audio: bool,
    pub pgd: PgdConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sources: vec![PriorSpec::harmonic(), PriorSpec::percussive()],
            mixtures: 1000,
            base_seed: 0,
            signal_len: DEFAULT_SIGNAL_LEN,
            normalize_sources: true,
            workers: 1,
            output_dir: None,
            export_audio: false,
            pgd: PgdConfig::default(),
        }
    }
}

fn out_of_range(key: &str, value: impl ToString, bound: &str) -> Error {
    ConfigError::OutOfRange {
        key: key.into(),
        value: value.to_string(),
        bound: bound.into(),
    }
    .into()
}

impl ExperimentConfig {
    /// Reduced problem size used by the fast test suite: 4096 samples, 300 iterations.
    pub fn desk_scale() -> Self {
        Self {
            signal_len: 4096,
            mixtures: 50,
            pgd: PgdConfig {
                iterations: 300,
                ..PgdConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.len() < 2 {
            return Err(out_of_range("sources", self.sources.len(), "at least 2 sources"));
        }
        if self.mixtures == 0 {
            return Err(out_of_range("mixtures", 0, "must be >= 1"));
        }
        if self.signal_len < self.pgd.loss.stft.frame_len {
            return Err(out_of_range(
                "signal_len",
                self.signal_len,
                &format!("must be >= frame_len ({})", self.pgd.loss.stft.frame_len),
            ));
        }
        let p = &self.pgd;
        if p.iterations == 0 {
            return Err(out_of_range("pgd.iterations", 0, "must be >= 1"));
        }
        if !(p.learning_rate >= 0.0 && p.learning_rate.is_finite()) {
            return Err(out_of_range("pgd.learning_rate", p.learning_rate, "must be >= 0"));
        }
        if p.trace_stride == 0 {
            return Err(out_of_range("pgd.trace_stride", 0, "must be >= 1"));
        }
        for (key, v) in [("pgd.adam.beta1", p.adam.beta1), ("pgd.adam.beta2", p.adam.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(out_of_range(key, v, "must be in [0, 1)"));
            }
        }
        if p.adam.eps.is_nan() || p.adam.eps <= 0.0 {
            return Err(out_of_range("pgd.adam.eps", p.adam.eps, "must be > 0"));
        }
        let l = &p.loss;
        for (key, v) in [
            ("pgd.loss.beta_ms", l.beta_ms),
            ("pgd.loss.beta_sd", l.beta_sd),
            ("pgd.loss.beta_mc", l.beta_mc),
            ("pgd.loss.beta_fc", l.beta_fc),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(out_of_range(key, v, "must be >= 0"));
            }
        }
        if l.levels == 0 {
            return Err(out_of_range("pgd.loss.levels", 0, "must be >= 1"));
        }
        if l.eps_den.is_nan() || l.eps_den <= 0.0 {
            return Err(out_of_range("pgd.loss.eps_den", l.eps_den, "must be > 0"));
        }
        if l.ratio_cap.is_nan() || l.ratio_cap <= 1.0 {
            return Err(out_of_range("pgd.loss.ratio_cap", l.ratio_cap, "must be > 1"));
        }
        let s = &l.stft;
        if s.frame_len == 0 || s.hop == 0 {
            return Err(out_of_range(
                "pgd.loss.stft",
                format!("{s:?}"),
                "frame_len and hop must be > 0",
            ));
        }
        if s.fft_len < s.frame_len {
            return Err(out_of_range(
                "pgd.loss.stft.fft_len",
                s.fft_len,
                "must be >= frame_len",
            ));
        }
        Ok(())
    }

    /// SHA-256 of the fields that determine results (execution settings such
    /// as worker count and output location are excluded).
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.workers = 0;
        canonical.output_dir = None;
        canonical.export_audio = false;
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_priors(&self) -> Result<Vec<Prior>> {
        self.sources
            .iter()
            .map(|s| s.build(self.signal_len, SAMPLE_RATE))
            .collect()
    }
}

/// Additive mixing; the result is not renormalized.
pub fn make_mixture(sources: &[&[f64]]) -> Result<Vec<f64>> {
    let first = sources.first().ok_or(Error::Empty("source list"))?;
    let mut mix = vec![0.0; first.len()];
    for s in sources {
        if s.len() != mix.len() {
            return Err(Error::LengthMismatch {
                expected: mix.len(),
                actual: s.len(),
            });
        }
        for (m, v) in mix.iter_mut().zip(s.iter()) {
            *m += v;
        }
    }
    Ok(mix)
}

/// Per-source seed derived from the mixture seed.
pub fn source_seed(mixture_seed: u64, source: usize) -> u64 {
    // splitmix64 finalizer
    let mut x = mixture_seed ^ (source as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Ground truth for one mixture index.
#[derive(Debug, Clone)]
pub struct SyntheticMixture {
    pub seed: u64,
    pub latents: Vec<Vec<f64>>,
    pub sources: Vec<Vec<f64>>,
    pub mixture: Vec<f64>,
}

pub fn synthesize_mixture(
    cfg: &ExperimentConfig,
    priors: &[Prior],
    index: usize,
) -> Result<SyntheticMixture> {
    let seed = cfg.base_seed.wrapping_add(index as u64);
    let mut latents = Vec::with_capacity(priors.len());
    let mut sources = Vec::with_capacity(priors.len());
    for (i, p) in priors.iter().enumerate() {
        let z = sample_latent(source_seed(seed, i), p.latent_dim())?.into_inner();
        let x = p.generate(&z)?;
        sources.push(if cfg.normalize_sources {
            peak_normalize(&x)
        } else {
            x
        });
        latents.push(z);
    }
    let views: Vec<&[f64]> = sources.iter().map(Vec::as_slice).collect();
    let mixture = make_mixture(&views)?;
    Ok(SyntheticMixture {
        seed,
        latents,
        sources,
        mixture,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Outcome {
    Ok {
        metrics: Vec<SourceMetrics>,
        initial_loss: LossBreakdown,
        final_loss: LossBreakdown,
    },
    Failed {
        kind: String,
        message: String,
    },
}

/// One line of the per-mixture result stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecord {
    pub index: usize,
    pub seed: u64,
    pub config_hash: String,
    #[serde(flatten)]
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceAggregate {
    pub mean: SourceMetrics,
    pub median: SourceMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub index: usize,
    pub seed: u64,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub config_hash: String,
    pub source_kinds: Vec<PriorKind>,
    pub mixtures: usize,
    pub succeeded: usize,
    pub per_source: Vec<SourceAggregate>,
    pub failures: Vec<FailureRecord>,
    pub duration_secs: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Mean and median of each metric, per source, over a nonempty report list.
pub fn aggregate(reports: &[MetricsReport]) -> Result<Vec<SourceAggregate>> {
    let first = reports.first().ok_or(Error::Empty("report list"))?;
    let k = first.sources.len();
    if let Some(bad) = reports.iter().find(|r| r.sources.len() != k) {
        return Err(Error::LengthMismatch {
            expected: k,
            actual: bad.sources.len(),
        });
    }
    let n = reports.len() as f64;
    Ok((0..k)
        .map(|i| {
            let column = |f: fn(&SourceMetrics) -> f64| -> Vec<f64> {
                reports.iter().map(|r| f(&r.sources[i])).collect()
            };
            let mut snr = column(|m| m.spectral_snr_db);
            let mut env = column(|m| m.rms_env_distance);
            let mut sir = column(|m| m.sir_db);
            let mean = SourceMetrics {
                spectral_snr_db: snr.iter().sum::<f64>() / n,
                rms_env_distance: env.iter().sum::<f64>() / n,
                sir_db: sir.iter().sum::<f64>() / n,
            };
            let median = SourceMetrics {
                spectral_snr_db: median(&mut snr),
                rms_env_distance: median(&mut env),
                sir_db: median(&mut sir),
            };
            SourceAggregate { mean, median }
        })
        .collect())
}

/// Estimates kept alongside a record when audio export is requested.
struct RunArtifacts {
    truth: SyntheticMixture,
    estimates: Vec<Vec<f64>>,
}

fn run_one(
    cfg: &ExperimentConfig,
    priors: &[Prior],
    index: usize,
    hash: &str,
) -> (MixtureRecord, Option<RunArtifacts>) {
    let seed = cfg.base_seed.wrapping_add(index as u64);
    let attempt = || -> Result<(Outcome, RunArtifacts)> {
        let truth = synthesize_mixture(cfg, priors, index)?;
        let result = separate(&truth.mixture, priors, &cfg.pgd)?;
        let est: Vec<&[f64]> = result.sources.iter().map(Vec::as_slice).collect();
        let refs: Vec<&[f64]> = truth.sources.iter().map(Vec::as_slice).collect();
        let report = evaluate(&est, &refs)?;
        Ok((
            Outcome::Ok {
                metrics: report.sources,
                initial_loss: result.initial,
                final_loss: result.final_loss,
            },
            RunArtifacts {
                truth,
                estimates: result.sources,
            },
        ))
    };
    let (outcome, artifacts) = match attempt() {
        Ok((o, a)) => (o, Some(a)),
        Err(e) => (
            Outcome::Failed {
                kind: e.kind().to_string(),
                message: e.to_string(),
            },
            None,
        ),
    };
    let record = MixtureRecord {
        index,
        seed,
        config_hash: hash.to_string(),
        outcome,
    };
    (record, artifacts.filter(|_| cfg.export_audio))
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<MixtureRecord>,
    pub table: AggregateTable,
}

/// Runs every mixture index, in parallel when `workers != 1`, and aggregates
/// over the successful runs. Results depend only on `base_seed + index`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let priors = cfg.build_priors()?;
    let hash = cfg.config_hash();
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir)?;
    }

    let indices: Vec<usize> = (0..cfg.mixtures).collect();
    let run = |&i: &usize| {
        let (rec, art) = run_one(cfg, &priors, i, &hash);
        if let (Some(dir), Some(art)) = (&cfg.output_dir, art) {
            export_run(dir, i, &art)?;
        }
        Ok(rec)
    };
    let records: Vec<MixtureRecord> = if cfg.workers == 1 {
        indices.iter().map(run).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        pool.install(|| indices.par_iter().map(run).collect::<Result<_>>())?
    };

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for r in &records {
        match &r.outcome {
            Outcome::Ok { metrics, .. } => reports.push(MetricsReport {
                sources: metrics.clone(),
                mean: mean_of(metrics),
            }),
            Outcome::Failed { kind, message } => failures.push(FailureRecord {
                index: r.index,
                seed: r.seed,
                kind: kind.clone(),
                message: message.clone(),
            }),
        }
    }
    let per_source = if reports.is_empty() {
        Vec::new()
    } else {
        aggregate(&reports)?
    };
    let table = AggregateTable {
        config_hash: hash,
        source_kinds: cfg.sources.iter().map(PriorSpec::kind).collect(),
        mixtures: cfg.mixtures,
        succeeded: reports.len(),
        per_source,
        failures,
        duration_secs: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = &cfg.output_dir {
        write_records(&dir.join("records.jsonl"), &records)?;
        crate::io::write_atomic(&dir.join("summary.json"), |f| {
            serde_json::to_writer_pretty(&mut *f, &table)?;
            f.write_all(b"\n")
        })?;
    }
    Ok(ExperimentOutcome { records, table })
}

fn mean_of(metrics: &[SourceMetrics]) -> SourceMetrics {
    let n = metrics.len().max(1) as f64;
    SourceMetrics {
        spectral_snr_db: metrics.iter().map(|m| m.spectral_snr_db).sum::<f64>() / n,
        rms_env_distance: metrics.iter().map(|m| m.rms_env_distance).sum::<f64>() / n,
        sir_db: metrics.iter().map(|m| m.sir_db).sum::<f64>() / n,
    }
}

pub fn write_records(path: &Path, records: &[MixtureRecord]) -> Result<()> {
    crate::io::write_atomic(path, |f| {
        let mut w = BufWriter::new(f);
        for r in records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    })
}

pub fn read_records(path: &Path) -> Result<Vec<MixtureRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

fn export_run(dir: &Path, index: usize, art: &RunArtifacts) -> Result<()> {
    let write = |name: String, x: &[f64]| {
        let w = Waveform::new(x.to_vec(), SAMPLE_RATE)?;
        crate::io::write_audio(&w, dir.join(name))
    };
    write(format!("mix{index:05}_mixture.wav"), &art.truth.mixture)?;
    for (i, (r, e)) in art.truth.sources.iter().zip(&art.estimates).enumerate() {
        write(format!("mix{index:05}_ref{i}.wav"), r)?;
        write(format!("mix{index:05}_est{i}.wav"), e)?;
    }
    Ok(())
}

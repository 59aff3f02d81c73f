//! `priorsep` command-line front end.
//!
//! Every subcommand reports failures as a single JSON object on stderr and
//! exits nonzero. Outputs are written through a temporary file and renamed
//! into place, so an error never leaves a partial file behind.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use priorsep::dsp::{peak, peak_normalize};
use priorsep::engine::write_trace;
use priorsep::gradcheck::{run_suite, GradCheckConfig};
use priorsep::harness::synthesize_mixture;
use priorsep::io::{parse_config, read_audio, write_atomic, write_audio};
use priorsep::priors::{sample_latent, Generator, Prior, PriorSpec};
use priorsep::{evaluate, run_experiment, separate, Error, ExperimentConfig, Waveform, SAMPLE_RATE};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(
    name = "priorsep",
    version,
    about = "Single-channel source separation with generative priors"
)]
struct Cli {
    /// TOML experiment config; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a mixture from audio files or from prior samples.
    Mix(MixArgs),
    /// Separate a mixture file into one estimate per prior.
    Separate(SeparateArgs),
    /// Score estimates against references.
    Eval(EvalArgs),
    /// Run the seeded synthetic benchmark.
    Bench(BenchArgs),
    /// Check every analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Sample one prior to an audio file.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PriorName {
    Harmonic,
    Percussive,
    Neural,
}

impl PriorName {
    fn matches(self, spec: &PriorSpec) -> bool {
        matches!(
            (self, spec),
            (PriorName::Harmonic, PriorSpec::Harmonic(_))
                | (PriorName::Percussive, PriorSpec::Percussive(_))
                | (PriorName::Neural, PriorSpec::Neural { .. })
        )
    }

    /// The config's spec for this kind if it has one, else the default.
    fn spec(self, cfg: &ExperimentConfig) -> PriorSpec {
        if let Some(s) = cfg.sources.iter().find(|s| self.matches(s)) {
            return s.clone();
        }
        match self {
            PriorName::Harmonic => PriorSpec::harmonic(),
            PriorName::Percussive => PriorSpec::percussive(),
            PriorName::Neural => PriorSpec::Neural {
                weights: None,
                latent_dim: 100,
                channels: Vec::new(),
                seed: 0,
            },
        }
    }
}

#[derive(clap::Args, Debug)]
struct MixArgs {
    /// Sum these audio files instead of sampling the configured priors.
    #[arg(long, num_args = 1.., conflicts_with = "seed")]
    inputs: Vec<PathBuf>,
    /// Mixture seed when sampling priors.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the ground-truth sources (prior sampling only).
    #[arg(long, requires = "seed")]
    refs_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct SeparateArgs {
    #[arg(long)]
    mixture: PathBuf,
    /// Priors in output order; defaults to the config's sources.
    #[arg(long = "prior", value_enum)]
    priors: Vec<PriorName>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(clap::Args, Debug)]
struct EvalArgs {
    #[arg(long, num_args = 1.., required = true)]
    estimates: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    references: Vec<PathBuf>,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    mixtures: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Export mixtures, references and estimates as audio.
    #[arg(long)]
    export_audio: bool,
}

#[derive(clap::Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 2048)]
    signal_len: usize,
    #[arg(long, default_value_t = 20)]
    cases: usize,
    /// Signal coordinates probed per loss case (0 = all).
    #[arg(long, default_value_t = 96)]
    coordinates: usize,
    #[arg(long, default_value_t = 0x6ad)]
    seed: u64,
}

#[derive(clap::Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum)]
    prior: PriorName,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Signal length in samples; defaults to the config's.
    #[arg(long)]
    len: Option<usize>,
}

/// Failure surfaced to the user as `{"error": {"kind", "message"}}`.
struct Failure {
    kind: String,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn fail(kind: &str, message: impl Into<String>) -> Failure {
    Failure {
        kind: kind.into(),
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report(&fail("usage", e.to_string().trim_end()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report(&f);
            ExitCode::FAILURE
        }
    }
}

fn report(f: &Failure) {
    let rec = json!({ "error": { "kind": f.kind, "message": f.message } });
    let _ = writeln!(std::io::stderr(), "{rec}");
}

fn emit(value: &serde_json::Value) {
    println!("{value}");
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(path) => parse_config(path)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::Mix(a) => mix(&cfg, a),
        Command::Separate(a) => separate_cmd(cfg, a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(cfg, a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Synth(a) => synth(&cfg, a),
    }
}

/// Creates the directory that will hold `path`, before any work is done.
fn prepare_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => Ok(std::fs::create_dir_all(p)?),
        _ => Ok(()),
    }
}

/// Reads an audio file, naming the path in any failure.
fn load(path: &PathBuf) -> CliResult<Waveform> {
    read_audio(path).map_err(|e| {
        let f = Failure::from(e);
        fail(&f.kind, format!("{}: {}", path.display(), f.message))
    })
}

fn save(samples: Vec<f64>, path: &Path) -> CliResult<()> {
    Ok(write_audio(&Waveform::new(samples, SAMPLE_RATE)?, path)?)
}

/// Writes every file or none: on failure the files already renamed into
/// place are removed again.
fn save_all(files: Vec<(PathBuf, Vec<f64>)>) -> CliResult<()> {
    let mut done: Vec<PathBuf> = Vec::new();
    for (path, samples) in files {
        if let Err(e) = save(samples, &path) {
            for p in &done {
                let _ = std::fs::remove_file(p);
            }
            return Err(e);
        }
        done.push(path);
    }
    Ok(())
}

fn mix(cfg: &ExperimentConfig, a: MixArgs) -> CliResult<()> {
    prepare_parent(&a.out)?;
    if let Some(dir) = &a.refs_dir {
        std::fs::create_dir_all(dir)?;
    }
    if !a.inputs.is_empty() {
        let sources = a.inputs.iter().map(load).collect::<CliResult<Vec<_>>>()?;
        let views: Vec<&[f64]> = sources.iter().map(|w| w.samples()).collect();
        let m = priorsep::harness::make_mixture(&views)?;
        let clipped = m.iter().filter(|v| v.abs() > 1.0).count();
        save(m, &a.out)?;
        emit(&json!({ "out": a.out, "sources": a.inputs.len(), "clipped_samples": clipped }));
        return Ok(());
    }
    let seed = a
        .seed
        .ok_or_else(|| fail("usage", "mix needs --inputs or --seed"))?;
    let priors = cfg.build_priors()?;
    let mut run_cfg = cfg.clone();
    run_cfg.base_seed = seed;
    let truth = synthesize_mixture(&run_cfg, &priors, 0)?;
    // Keep the mixture inside the 16-bit range; the references share the
    // same factor so they still sum to the mixture.
    let p = peak(&truth.mixture);
    let scale = if p > 1.0 - priorsep::io::QUANT_STEP {
        (1.0 - priorsep::io::QUANT_STEP) / p
    } else {
        1.0
    };
    let scaled = |x: &[f64]| x.iter().map(|v| v * scale).collect::<Vec<_>>();
    let mut files = vec![(a.out.clone(), scaled(&truth.mixture))];
    if let Some(dir) = &a.refs_dir {
        for (i, s) in truth.sources.iter().enumerate() {
            files.push((dir.join(format!("ref{i}.wav")), scaled(s)));
        }
    }
    save_all(files)?;
    emit(&json!({ "out": a.out, "seed": seed, "scale": scale, "sources": priors.len() }));
    Ok(())
}

fn separate_cmd(mut cfg: ExperimentConfig, a: SeparateArgs) -> CliResult<()> {
    std::fs::create_dir_all(&a.out_dir)?;
    if let Some(t) = a.iterations {
        cfg.pgd.iterations = t;
    }
    if let Some(lr) = a.learning_rate {
        cfg.pgd.learning_rate = lr;
    }
    let mixture = load(&a.mixture)?;
    let specs: Vec<PriorSpec> = if a.priors.is_empty() {
        cfg.sources.clone()
    } else {
        a.priors.iter().map(|p| p.spec(&cfg)).collect()
    };
    let priors = specs
        .iter()
        .map(|s| s.build(mixture.len(), SAMPLE_RATE))
        .collect::<priorsep::Result<Vec<Prior>>>()?;
    let result = separate(mixture.samples(), &priors, &cfg.pgd)?;

    let mut files = Vec::new();
    for (i, s) in result.sources.iter().enumerate() {
        files.push((a.out_dir.join(format!("est{i}.wav")), s.clone()));
    }
    let trace_path = a.out_dir.join("trace.jsonl");
    let latents_path = a.out_dir.join("latents.json");
    let latents: Vec<&[f64]> = result.latents.iter().map(|z| z.as_slice()).collect();
    write_atomic(&trace_path, |f| {
        write_trace(&result.trace, &mut *f).map_err(|e| std::io::Error::other(e.to_string()))
    })?;
    write_atomic(&latents_path, |f| {
        serde_json::to_writer(&mut *f, &latents)?;
        f.write_all(b"\n")
    })?;
    if let Err(e) = save_all(files) {
        let _ = std::fs::remove_file(&trace_path);
        let _ = std::fs::remove_file(&latents_path);
        return Err(e);
    }
    emit(&json!({
        "out_dir": a.out_dir,
        "priors": priors.iter().map(|p| p.kind()).collect::<Vec<_>>(),
        "iterations": cfg.pgd.iterations,
        "initial_loss": result.initial.total,
        "final_loss": result.final_loss.total,
        "seconds": result.duration.as_secs_f64(),
    }));
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult<()> {
    if a.estimates.len() != a.references.len() {
        return Err(fail(
            "usage",
            format!(
                "{} estimates but {} references",
                a.estimates.len(),
                a.references.len()
            ),
        ));
    }
    if let Some(out) = &a.out {
        prepare_parent(out)?;
    }
    let load = |paths: &[PathBuf]| paths.iter().map(load).collect::<CliResult<Vec<_>>>();
    let est = load(&a.estimates)?;
    let refs = load(&a.references)?;
    let ev: Vec<&[f64]> = est.iter().map(|w| w.samples()).collect();
    let rv: Vec<&[f64]> = refs.iter().map(|w| w.samples()).collect();
    let report = evaluate(&ev, &rv)?;
    let value = serde_json::to_value(&report).map_err(|e| fail("serialize", e.to_string()))?;
    if let Some(out) = &a.out {
        write_atomic(out, |f| {
            serde_json::to_writer_pretty(&mut *f, &value)?;
            f.write_all(b"\n")
        })?;
    }
    emit(&value);
    Ok(())
}

fn bench(mut cfg: ExperimentConfig, a: BenchArgs) -> CliResult<()> {
    if let Some(n) = a.mixtures {
        cfg.mixtures = n;
    }
    if let Some(s) = a.seed {
        cfg.base_seed = s;
    }
    if let Some(t) = a.iterations {
        cfg.pgd.iterations = t;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    cfg.export_audio |= a.export_audio;
    cfg.output_dir = Some(a.out_dir);
    let out = run_experiment(&cfg)?;
    let value = serde_json::to_value(&out.table).map_err(|e| fail("serialize", e.to_string()))?;
    emit(&value);
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CliResult<()> {
    let cfg = GradCheckConfig {
        signal_len: a.signal_len,
        cases: a.cases,
        coordinates: a.coordinates,
        seed: a.seed,
        ..GradCheckConfig::default()
    };
    let results = run_suite(&cfg)?;
    for r in &results {
        emit(&serde_json::to_value(r).map_err(|e| fail("serialize", e.to_string()))?);
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(fail(
            "gradcheck_failed",
            format!("failed checks: {}", failed.join(", ")),
        ))
    }
}

fn synth(cfg: &ExperimentConfig, a: SynthArgs) -> CliResult<()> {
    prepare_parent(&a.out)?;
    let len = a.len.unwrap_or(cfg.signal_len);
    let prior = a.prior.spec(cfg).build(len, SAMPLE_RATE)?;
    let z = sample_latent(a.seed, prior.latent_dim())?;
    let x = prior.generate(z.as_slice())?;
    let x = if cfg.normalize_sources {
        peak_normalize(&x)
    } else {
        x
    };
    save(x, &a.out)?;
    emit(&json!({ "out": a.out, "prior": prior.kind(), "seed": a.seed, "latent": z.as_slice() }));
    Ok(())
}

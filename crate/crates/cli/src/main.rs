//! `lpvc`: generate a synthetic corpus, train speaker maps, convert and
//! evaluate utterances, and run the experiment scenarios.
//!
//! Exit status: 0 on success, 2 for usage errors, 3 for data errors and 4
//! for numeric failures.

mod config;

/// `println!` that tolerates a closed stdout, e.g. when piped into `head`.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lpvc::corpus::{generate_synthetic_corpus, SyntheticSpeakerSpec};
use lpvc::eval::CepstralSpec;
use lpvc::experiment::{run_scenario, Scenario};
use lpvc::manifest::Manifest;
use lpvc::mapping::SpeakerMap;
use lpvc::pipeline::{
    analyze, convert, evaluate_pair, train_pair, ConvertOptions, EvalMode, NoiseSpec, ProsodyMode,
    ResidualSource, TargetSide,
};
use lpvc::prosody::PitchTrack;
use lpvc::signal::{load_wav, save_wav};
use lpvc::ErrorClass;

use config::{FileConfig, Flags, Settings, Switch};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] lpvc::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(e) => match e.class() {
                ErrorClass::Usage => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lpvc", version, about = "LPC voice conversion toolkit")]
struct Cli {
    /// TOML file supplying defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    /// Score the trained model.
    Model,
    /// Converted = source; success should be about 0%.
    Passthrough,
    /// Converted = target; success is 100%.
    Oracle,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Residual {
    Source,
    Target,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the four-speaker synthetic corpus and its manifest into --out.
    GenCorpus {
        /// Number of words per speaker.
        #[arg(long)]
        words: Option<usize>,
    },
    /// Train a source-to-target map and write it to --model.
    Train,
    /// Convert one recording with --model and write the result to --out.
    Convert {
        /// Source-speaker recording.
        #[arg(long)]
        input: PathBuf,
        /// Target-speaker recording supplying the pitch contour (and the
        /// excitation with --residual target).
        #[arg(long)]
        target_wav: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "source")]
        residual: Residual,
    },
    /// Score a pairing on its held-out words; CSV reports go to --out.
    Evaluate {
        #[arg(long, value_enum, default_value = "model")]
        mode: Mode,
    },
    /// Run a --scenario over the corpus; CSV and SVG go to --out.
    Experiment,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let s = Settings::new(cli.flags, file);
    match cli.command {
        Command::GenCorpus { words } => gen_corpus(&s, words),
        Command::Train => train(&s),
        Command::Convert {
            input,
            target_wav,
            residual,
        } => convert_cmd(&s, &input, target_wav.as_deref(), residual),
        Command::Evaluate { mode } => evaluate(&s, mode),
        Command::Experiment => experiment(&s),
    }
}

fn load_manifest(s: &Settings) -> Result<Manifest, CliError> {
    Ok(Manifest::load(Settings::require(&s.flags.manifest, "manifest")?)?)
}

fn gen_corpus(s: &Settings, words: Option<usize>) -> Result<(), CliError> {
    let out = Settings::require(&s.flags.out, "out")?;
    let words = words.or(s.file.corpus.words).unwrap_or(100);
    let seed = s.flags.seed.unwrap_or(42);
    let m = generate_synthetic_corpus(&SyntheticSpeakerSpec::defaults(), words, seed, out)?;
    say!(
        "wrote {} speakers x {words} words to {}",
        m.speakers.len(),
        out.join("manifest.toml").display()
    );
    Ok(())
}

fn train(s: &Settings) -> Result<(), CliError> {
    let m = load_manifest(s)?;
    let source = Settings::require(&s.flags.source, "source")?;
    let target = Settings::require(&s.flags.target, "target")?;
    let model_path = Settings::require(&s.flags.model, "model")?;
    let mut acfg = s.analysis();
    if s.flags.order.is_none() {
        acfg.order = m.order;
    }
    let tcfg = s.train()?;
    let noise = s.flags.noise_db.map(|level_db| NoiseSpec {
        level_db,
        seed: tcfg.seed,
    });
    let map = train_pair(&m, source, target, &acfg, &tcfg, noise)?;
    for (i, mse) in map.train_log.iter().enumerate() {
        match map.val_log.get(i) {
            Some(v) => say!("epoch {:3}  train mse {mse:.6e}  validation mse {v:.6e}", i + 1),
            None => say!("epoch {:3}  train mse {mse:.6e}", i + 1),
        }
    }
    say!("stopped: {:?}", map.stop);
    map.save(model_path)?;
    say!("model written to {}", model_path.display());
    Ok(())
}

fn convert_cmd(s: &Settings, input: &Path, target_wav: Option<&Path>, residual: Residual) -> Result<(), CliError> {
    let map = SpeakerMap::load(Settings::require(&s.flags.model, "model")?)?;
    let out_path = Settings::require(&s.flags.out, "out")?;
    let mut acfg = s.analysis();
    if s.flags.order.is_none() {
        acfg.order = map.order();
    }
    let src = analyze(&load_wav(input)?, &acfg)?;
    let prosody = s.flags.prosody.unwrap_or(Switch::Off) == Switch::On;
    let tgt = target_wav.map(|p| -> Result<_, CliError> { Ok(analyze(&load_wav(p)?, &acfg)?) }).transpose()?;
    if (prosody || matches!(residual, Residual::Target)) && tgt.is_none() {
        return Err(CliError::Usage("--prosody on and --residual target need --target-wav".into()));
    }
    // a target of a different length only lends its pitch statistics
    let flat;
    let track = match &tgt {
        Some(t) if t.track.len() != src.track.len() => {
            let f0 = t
                .track
                .median_voiced_f0()
                .ok_or_else(|| CliError::Usage("target recording has no voiced frames".into()))?;
            log::info!("target length differs; using its median f0 {f0:.1} Hz");
            flat = PitchTrack::constant(&src.track, f0);
            Some(&flat)
        }
        Some(t) => Some(&t.track),
        None => None,
    };
    let opts = ConvertOptions {
        prosody: if prosody { ProsodyMode::Waveform } else { ProsodyMode::Off },
        residual: match residual {
            Residual::Source => ResidualSource::Source,
            Residual::Target => ResidualSource::Target,
        },
    };
    let target = TargetSide {
        analysis: tgt.as_ref(),
        track,
    };
    let out = convert(&map, &src, target, opts)?;
    save_wav(&out.waveform, out_path)?;
    say!("converted {} -> {}", input.display(), out_path.display());
    Ok(())
}

fn evaluate(s: &Settings, mode: Mode) -> Result<(), CliError> {
    let m = load_manifest(s)?;
    let source = Settings::require(&s.flags.source, "source")?;
    let target = Settings::require(&s.flags.target, "target")?;
    let out = Settings::require(&s.flags.out, "out")?;
    let mut acfg = s.analysis();
    if s.flags.order.is_none() {
        acfg.order = m.order;
    }
    let map;
    let mode = match mode {
        Mode::Model => {
            map = SpeakerMap::load(Settings::require(&s.flags.model, "model")?)?;
            EvalMode::Model(&map)
        }
        Mode::Passthrough => EvalMode::PassThrough,
        Mode::Oracle => EvalMode::TargetOracle,
    };
    let report = evaluate_pair(&m, source, target, &acfg, mode, CepstralSpec::default())?;
    let files = lpvc::report::write_eval_report(&report, out, &format!("{source}_{target}"))?;
    let a = &report.aggregate;
    say!(
        "{source} -> {target}: MCD source/target {:.3} dB, converted/target {:.3} dB, success {:.2}%, {:.0}% of words improved",
        a.mcd_source_target,
        a.mcd_converted_target,
        a.success_pct,
        100.0 * report.improved_fraction()
    );
    for g in &report.per_class {
        say!("  {:8} success {:.2}% over {} frames", g.name, g.success_pct, g.n_frames);
    }
    for f in files {
        say!("wrote {}", f.display());
    }
    Ok(())
}

fn experiment(s: &Settings) -> Result<(), CliError> {
    let m = load_manifest(s)?;
    let scenario: Scenario = Settings::require(&s.flags.scenario, "scenario")?.parse()?;
    let out = Settings::require(&s.flags.out, "out")?;
    let cfg = s.experiment()?;
    for f in run_scenario(&m, scenario, &cfg, out)? {
        say!("wrote {}", f.display());
    }
    Ok(())
}

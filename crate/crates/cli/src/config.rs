//! The optional TOML configuration file and its merge with command-line flags.
//!
//! Every top-level key mirrors a flag; a flag given on the command line wins.
//! Relative paths inside the file are taken relative to the file's directory.

use std::path::{Path, PathBuf};

use lpvc::experiment::{ExperimentConfig, NOISE_LEVELS_DB};
use lpvc::mapping::TrainConfig;
use lpvc::pipeline::AnalysisConfig;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub frame_ms: Option<f64>,
    pub overlap_ms: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub max_epochs: Option<usize>,
    pub mse_goal: Option<f64>,
    pub lm_lambda_init: Option<f64>,
    pub lm_lambda_factor: Option<f64>,
    pub lambda_max: Option<f64>,
    pub validation_fraction: Option<f64>,
    pub max_pairs: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub words: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub noise_levels: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub manifest: Option<PathBuf>,
    pub source: Option<String>,
    pub target: Option<String>,
    pub model: Option<PathBuf>,
    pub order: Option<usize>,
    pub seed: Option<u64>,
    pub noise_db: Option<f64>,
    pub prosody: Option<Switch>,
    pub scenario: Option<String>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: FileConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.manifest, &mut cfg.model, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Flag values shared by all subcommands.
#[derive(Debug, Default, Clone, clap::Args)]
pub struct Flags {
    /// Corpus manifest (TOML).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Source speaker id.
    #[arg(long, global = true)]
    pub source: Option<String>,
    /// Target speaker id.
    #[arg(long, global = true)]
    pub target: Option<String>,
    /// Model file (lpvc-map-v1 JSON).
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// LPC order.
    #[arg(long, global = true)]
    pub order: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Training-noise level above the floor, dB.
    #[arg(long = "noise-db", global = true)]
    pub noise_db: Option<f64>,
    /// Pitch transfer during conversion.
    #[arg(long, global = true, value_enum)]
    pub prosody: Option<Switch>,
    /// noise_sweep, prosody_ablation or phoneme_contribution.
    #[arg(long, global = true)]
    pub scenario: Option<String>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

/// Flags merged over the config file.
#[derive(Debug)]
pub struct Settings {
    pub flags: Flags,
    pub file: FileConfig,
}

impl Settings {
    pub fn new(flags: Flags, file: FileConfig) -> Self {
        let f = &file;
        let flags = Flags {
            manifest: flags.manifest.or_else(|| f.manifest.clone()),
            source: flags.source.or_else(|| f.source.clone()),
            target: flags.target.or_else(|| f.target.clone()),
            model: flags.model.or_else(|| f.model.clone()),
            order: flags.order.or(f.order),
            seed: flags.seed.or(f.seed),
            noise_db: flags.noise_db.or(f.noise_db),
            prosody: flags.prosody.or(f.prosody),
            scenario: flags.scenario.or_else(|| f.scenario.clone()),
            out: flags.out.or_else(|| f.out.clone()),
        };
        Settings { flags, file }
    }

    pub fn require<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
        v.as_ref().ok_or_else(|| CliError::Usage(format!("missing --{flag}")))
    }

    pub fn analysis(&self) -> AnalysisConfig {
        let d = AnalysisConfig::default();
        let a = &self.file.analysis;
        AnalysisConfig {
            order: self.flags.order.unwrap_or(d.order),
            frame_ms: a.frame_ms.unwrap_or(d.frame_ms),
            overlap_ms: a.overlap_ms.unwrap_or(d.overlap_ms),
            sigma: a.sigma.unwrap_or(d.sigma),
        }
    }

    pub fn train(&self) -> Result<TrainConfig, CliError> {
        let d = TrainConfig::default();
        let t = &self.file.train;
        let cfg = TrainConfig {
            max_epochs: t.max_epochs.unwrap_or(d.max_epochs),
            mse_goal: t.mse_goal.unwrap_or(d.mse_goal),
            lm_lambda_init: t.lm_lambda_init.unwrap_or(d.lm_lambda_init),
            lm_lambda_factor: t.lm_lambda_factor.unwrap_or(d.lm_lambda_factor),
            lambda_max: t.lambda_max.unwrap_or(d.lambda_max),
            validation_fraction: t.validation_fraction.unwrap_or(d.validation_fraction),
            max_pairs: t.max_pairs.unwrap_or(d.max_pairs),
            seed: self.flags.seed.unwrap_or(d.seed),
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        let train = self.train()?;
        let e = &self.file.experiment;
        let noise_levels = match (self.flags.noise_db, &e.noise_levels) {
            (Some(db), _) => vec![db],
            (None, Some(v)) => v.clone(),
            (None, None) => NOISE_LEVELS_DB.to_vec(),
        };
        let seeds = match (self.flags.seed, &e.seeds) {
            (Some(s), _) => vec![s],
            (None, Some(v)) if !v.is_empty() => v.clone(),
            _ => vec![train.seed],
        };
        let pairings = match (&self.flags.source, &self.flags.target) {
            (Some(s), Some(t)) => vec![(s.clone(), t.clone())],
            (None, None) => Vec::new(),
            _ => return Err(CliError::Usage("--source and --target go together".into())),
        };
        Ok(ExperimentConfig {
            analysis: self.analysis(),
            train,
            noise_levels,
            seeds,
            pairings,
            ..ExperimentConfig::default()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_paths_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(
            &p,
            "manifest = \"m.toml\"\nsource = \"A\"\ntarget = \"C\"\nseed = 3\nprosody = \"on\"\n[train]\nmax_epochs = 5\n[experiment]\nseeds = [1, 2]\n",
        )
        .unwrap();
        let file = FileConfig::load(&p).unwrap();
        let flags = Flags {
            source: Some("B".into()),
            ..Flags::default()
        };
        let s = Settings::new(flags, file);
        assert_eq!(s.flags.manifest.as_deref(), Some(dir.path().join("m.toml").as_path()));
        assert_eq!(s.flags.source.as_deref(), Some("B"));
        assert_eq!(s.flags.prosody, Some(Switch::On));
        let t = s.train().unwrap();
        assert_eq!((t.max_epochs, t.seed), (5, 3));
        // an explicit seed narrows the experiment to that seed
        let e = s.experiment().unwrap();
        assert_eq!(e.seeds, vec![3]);
        assert_eq!(e.pairings, vec![("B".to_string(), "C".to_string())]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "sauce = 1\n").unwrap();
        assert!(matches!(FileConfig::load(&p), Err(CliError::Usage(_))));
    }

    #[test]
    fn bad_train_values_are_usage_errors() {
        let file = FileConfig {
            train: TrainSection {
                validation_fraction: Some(0.9),
                ..TrainSection::default()
            },
            ..FileConfig::default()
        };
        let s = Settings::new(Flags::default(), file);
        let e = s.train().unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}

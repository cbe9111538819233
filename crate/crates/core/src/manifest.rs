//! Corpus manifests: speakers, their recordings, phoneme labels and the
//! source/target pairings to run.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::PhonemeLabel;

/// Share of sorted word ids held out for evaluation.
pub const EVAL_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub word_id: String,
    /// Relative to the manifest's directory unless absolute.
    pub wav_path: PathBuf,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phonemes: Vec<PhonemeLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Speaker {
    pub id: String,
    pub gender: Gender,
    pub utterances: Vec<Utterance>,
}

impl Speaker {
    pub fn word_ids(&self) -> BTreeSet<&str> {
        self.utterances.iter().map(|u| u.word_id.as_str()).collect()
    }

    pub fn utterance(&self, word_id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.word_id == word_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub sample_rate: u32,
    pub order: usize,
    #[serde(default)]
    pub pairing: Vec<(String, String)>,
    pub speakers: Vec<Speaker>,
    /// Directory relative paths resolve against; not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut m: Manifest = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        m.root = root.into();
        m.validate()?;
        Ok(m)
    }

    /// Reads and validates a manifest, checking every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::parse(&std::fs::read_to_string(path)?, root)?;
        for s in &m.speakers {
            for u in &s.utterances {
                let p = m.resolve(&u.wav_path);
                if !p.exists() {
                    return Err(Error::Manifest(format!(
                        "speaker {} word {}: missing {}",
                        s.id,
                        u.word_id,
                        p.display()
                    )));
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Manifest("sample_rate must be positive".into()));
        }
        let mut ids = BTreeSet::new();
        for s in &self.speakers {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate speaker {}", s.id)));
            }
            if s.word_ids().len() != s.utterances.len() {
                return Err(Error::Manifest(format!("speaker {} repeats a word_id", s.id)));
            }
        }
        for (a, b) in &self.pairing {
            let (sa, sb) = (self.speaker(a)?, self.speaker(b)?);
            if sa.word_ids() != sb.word_ids() {
                return Err(Error::Manifest(format!(
                    "pairing {a} -> {b} is not parallel: word sets differ"
                )));
            }
        }
        Ok(())
    }

    pub fn speaker(&self, id: &str) -> Result<&Speaker> {
        self.speakers
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Manifest(format!("unknown speaker '{id}'")))
    }

    /// Sorted word ids both speakers recorded.
    pub fn shared_words(&self, source: &str, target: &str) -> Result<Vec<String>> {
        let (a, b) = (self.speaker(source)?, self.speaker(target)?);
        Ok(a.word_ids()
            .intersection(&b.word_ids())
            .map(|s| s.to_string())
            .collect())
    }
}

/// Splits sorted word ids into training and evaluation sets (last 20% held out).
pub fn split_words(words: &[String]) -> (Vec<String>, Vec<String>) {
    let mut w: Vec<String> = words.to_vec();
    w.sort();
    w.dedup();
    let n_eval = ((w.len() as f64 * EVAL_FRACTION).round() as usize)
        .max(1)
        .min(w.len().saturating_sub(1));
    let eval = w.split_off(w.len() - n_eval);
    (w, eval)
}

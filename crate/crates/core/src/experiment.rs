//! Experiment scenarios run over a whole corpus: the effect of training
//! noise per sound class, the effect of pitch transfer, and the per-phoneme
//! breakdown of spectral distance. Each writes a CSV table and an SVG chart.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{CepstralSpec, FrameClass, PhonemeTable};
use crate::manifest::Manifest;
use crate::mapping::{FrameMapper, PassThrough, TrainConfig};
use crate::pipeline::{
    analyze_words, convert, evaluate_analyses, pair_split, train_from_analyses, AnalysisConfig,
    Analysis, ConvertOptions, EvalMode, NoiseSpec, ProsodyMode, TargetSide, excitation_pitch,
};
use crate::plot::{BarChart, LineChart, Series};
use crate::report::write_csv;

/// Training-noise levels swept by default, dB above the noise floor.
pub const NOISE_LEVELS_DB: [f64; 3] = [0.0, 20.0, 40.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    NoiseSweep,
    ProsodyAblation,
    PhonemeContribution,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::NoiseSweep => "noise_sweep",
            Scenario::ProsodyAblation => "prosody_ablation",
            Scenario::PhonemeContribution => "phoneme_contribution",
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "noise_sweep" => Ok(Scenario::NoiseSweep),
            "prosody_ablation" => Ok(Scenario::ProsodyAblation),
            "phoneme_contribution" => Ok(Scenario::PhonemeContribution),
            _ => Err(Error::ScenarioUnknown(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub analysis: AnalysisConfig,
    pub train: TrainConfig,
    pub cepstral: CepstralSpec,
    pub noise_levels: Vec<f64>,
    /// Each seed drives both the network initialization and the noise.
    pub seeds: Vec<u64>,
    /// Pairings to run; empty means the manifest's list.
    pub pairings: Vec<(String, String)>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        ExperimentConfig {
            analysis: AnalysisConfig::default(),
            cepstral: CepstralSpec::default(),
            noise_levels: NOISE_LEVELS_DB.to_vec(),
            seeds: vec![train.seed],
            train,
            pairings: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    fn pairings(&self, manifest: &Manifest) -> Result<Vec<(String, String)>> {
        let p = if self.pairings.is_empty() {
            manifest.pairing.clone()
        } else {
            self.pairings.clone()
        };
        if p.is_empty() {
            return Err(Error::Manifest("no pairings to run".into()));
        }
        Ok(p)
    }
}

/// Analyses of one pairing's train and evaluation words.
struct PairData {
    source: String,
    target: String,
    eval_src: BTreeMap<String, Analysis>,
    eval_tgt: BTreeMap<String, Analysis>,
    train_words: Vec<String>,
}

impl PairData {
    fn load(m: &Manifest, source: &str, target: &str, cfg: &AnalysisConfig) -> Result<Self> {
        let (train_words, eval_words) = pair_split(m, source, target)?;
        Ok(PairData {
            source: source.to_string(),
            target: target.to_string(),
            eval_src: analyze_words(m, source, &eval_words, cfg, None)?,
            eval_tgt: analyze_words(m, target, &eval_words, cfg, None)?,
            train_words,
        })
    }

    fn train(&self, m: &Manifest, cfg: &ExperimentConfig, seed: u64, noise: Option<f64>) -> Result<crate::mapping::SpeakerMap> {
        let noise = noise.map(|level_db| NoiseSpec { level_db, seed });
        let src = analyze_words(m, &self.source, &self.train_words, &cfg.analysis, noise)?;
        let tgt = analyze_words(m, &self.target, &self.train_words, &cfg.analysis, noise)?;
        let tcfg = TrainConfig { seed, ..cfg.train.clone() };
        train_from_analyses(&src, &tgt, &tcfg)
    }

    fn labels<'m>(&self, m: &'m Manifest) -> impl Fn(&str) -> Option<&'m [crate::eval::PhonemeLabel]> {
        let speaker = m.speaker(&self.source).ok();
        move |w| speaker.and_then(|s| s.utterance(w)).map(|u| u.phonemes.as_slice())
    }
}

/// Success per class of one trained model.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct NoiseRow {
    pub source: String,
    pub target: String,
    pub seed: u64,
    /// Empty for the clean baseline.
    pub noise_db: Option<f64>,
    pub class: String,
    pub success_pct: f64,
    /// Baseline success minus this row's success, percentage points.
    pub degradation: f64,
}

const CLASSES: [&str; 3] = ["all", "voiced", "unvoiced"];

/// Retrains each pairing on noisy training audio (both sides) and scores
/// the models on the clean held-out words against a clean-trained baseline.
pub fn noise_sweep(m: &Manifest, cfg: &ExperimentConfig) -> Result<Vec<NoiseRow>> {
    let mut rows = Vec::new();
    for (s, t) in cfg.pairings(m)? {
        let data = PairData::load(m, &s, &t, &cfg.analysis)?;
        for &seed in &cfg.seeds {
            let score = |noise: Option<f64>| -> Result<[f64; 3]> {
                let map = data.train(m, cfg, seed, noise)?;
                let rep = evaluate_analyses(
                    &data.eval_src,
                    &data.eval_tgt,
                    data.labels(m),
                    EvalMode::Model(&map),
                    cfg.cepstral,
                )?;
                let class = |c| rep.class(c).map_or(f64::NAN, |g| g.success_pct);
                Ok([
                    rep.aggregate.success_pct,
                    class(FrameClass::Voiced),
                    class(FrameClass::Unvoiced),
                ])
            };
            let base = score(None)?;
            let mut push = |noise_db: Option<f64>, vals: [f64; 3]| {
                for (k, name) in CLASSES.iter().enumerate() {
                    rows.push(NoiseRow {
                        source: s.clone(),
                        target: t.clone(),
                        seed,
                        noise_db,
                        class: name.to_string(),
                        success_pct: vals[k],
                        degradation: base[k] - vals[k],
                    });
                }
            };
            push(None, base);
            for &level in &cfg.noise_levels {
                log::info!("noise sweep {s}->{t} seed {seed} level {level} dB");
                push(Some(level), score(Some(level))?);
            }
        }
    }
    Ok(rows)
}

/// Pitch accuracy of converted speech with and without pitch transfer.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ProsodyRow {
    pub source: String,
    pub target: String,
    pub prosody: bool,
    /// RMS f0 difference over frames voiced in both converted and target.
    pub pitch_rms_hz: f64,
    /// Means over the same frames as the RMS.
    pub mean_f0_converted: f64,
    pub mean_f0_target: f64,
    /// Frames voiced in both tracks.
    pub n_frames: usize,
    pub success_pct: f64,
}


/// Converts every evaluation word of each pairing with prosody off and on.
pub fn prosody_ablation(m: &Manifest, cfg: &ExperimentConfig) -> Result<Vec<ProsodyRow>> {
    let seed = cfg.seeds.first().copied().unwrap_or(cfg.train.seed);
    let mut rows = Vec::new();
    for (s, t) in cfg.pairings(m)? {
        let data = PairData::load(m, &s, &t, &cfg.analysis)?;
        let map = data.train(m, cfg, seed, None)?;
        let rep = evaluate_analyses(
            &data.eval_src,
            &data.eval_tgt,
            data.labels(m),
            EvalMode::Model(&map),
            cfg.cepstral,
        )?;
        // both sides are measured with the same instrument
        let tgt_tracks = data
            .eval_tgt
            .iter()
            .map(|(w, a)| Ok((w.as_str(), excitation_pitch(&a.waveform, &cfg.analysis)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        for mode in [ProsodyMode::Off, ProsodyMode::Waveform] {
            let (mut sq, mut n_both) = (0.0, 0usize);
            let (mut conv_f0, mut tgt_f0) = (Vec::new(), Vec::new());
            for (w, src) in &data.eval_src {
                let tgt = &data.eval_tgt[w];
                let opts = ConvertOptions {
                    prosody: mode,
                    ..Default::default()
                };
                let target = TargetSide {
                    analysis: Some(tgt),
                    track: None,
                };
                let out = convert(&map, src, target, opts)?;
                let tr = excitation_pitch(&out.waveform, &cfg.analysis)?;
                let tt = &tgt_tracks[w.as_str()];
                for k in 0..tr.len().min(tt.len()) {
                    if tr.voiced[k] && tt.voiced[k] {
                        sq += (tr.f0[k] - tt.f0[k]).powi(2);
                        n_both += 1;
                        conv_f0.push(tr.f0[k]);
                        tgt_f0.push(tt.f0[k]);
                    }
                }
            }
            let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
            rows.push(ProsodyRow {
                source: s.clone(),
                target: t.clone(),
                prosody: mode != ProsodyMode::Off,
                pitch_rms_hz: if n_both > 0 { (sq / n_both as f64).sqrt() } else { f64::NAN },
                mean_f0_converted: mean(&conv_f0),
                mean_f0_target: mean(&tgt_f0),
                n_frames: n_both,
                success_pct: rep.aggregate.success_pct,
            });
        }
    }
    Ok(rows)
}

/// Mean distance per phoneme symbol before and after conversion.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PhonemeRow {
    pub source: String,
    pub target: String,
    pub symbol: String,
    pub mcd_source_target: f64,
    pub mcd_converted_target: f64,
    pub n_frames: usize,
}

/// Per-symbol distances on the evaluation words. A pairing of a speaker
/// with itself is scored without training: the conversion is the identity.
pub fn phoneme_contribution(m: &Manifest, cfg: &ExperimentConfig) -> Result<Vec<PhonemeRow>> {
    let seed = cfg.seeds.first().copied().unwrap_or(cfg.train.seed);
    let mut rows = Vec::new();
    for (s, t) in cfg.pairings(m)? {
        let data = PairData::load(m, &s, &t, &cfg.analysis)?;
        let trained;
        let identity = PassThrough(cfg.analysis.order);
        let mapper: &dyn FrameMapper = if s == t {
            &identity
        } else {
            trained = data.train(m, cfg, seed, None)?;
            &trained
        };
        let labels = data.labels(m);
        let (mut st, mut ct) = (PhonemeTable::default(), PhonemeTable::default());
        for (w, src) in &data.eval_src {
            let tgt = &data.eval_tgt[w];
            let Some(l) = labels(w).filter(|l| !l.is_empty()) else {
                continue;
            };
            let conv = mapper.convert(&src.frames)?;
            st.add(l, &src.frames, &tgt.frames, src.frame_len, src.hop, cfg.cepstral)?;
            ct.add(l, &conv, &tgt.frames, src.frame_len, src.hop, cfg.cepstral)?;
        }
        for (a, b) in st.stats().into_iter().zip(ct.stats()) {
            rows.push(PhonemeRow {
                source: s.clone(),
                target: t.clone(),
                symbol: a.symbol,
                mcd_source_target: a.mean_db,
                mcd_converted_target: b.mean_db,
                n_frames: a.n_frames,
            });
        }
    }
    Ok(rows)
}

fn pair_name(s: &str, t: &str) -> String {
    format!("{s}>{t}")
}

fn noise_chart(rows: &[NoiseRow], levels: &[f64]) -> LineChart {
    let mut series = Vec::new();
    let pairs: Vec<(String, String)> = unique(rows.iter().map(|r| (r.source.clone(), r.target.clone())));
    for (s, t) in &pairs {
        for class in ["voiced", "unvoiced"] {
            let values = levels
                .iter()
                .map(|&l| {
                    let v: Vec<f64> = rows
                        .iter()
                        .filter(|r| &r.source == s && &r.target == t && r.class == class && r.noise_db == Some(l))
                        .map(|r| r.success_pct)
                        .collect();
                    v.iter().sum::<f64>() / v.len().max(1) as f64
                })
                .collect();
            series.push(Series::new(format!("{} {class}", pair_name(s, t)), values));
        }
    }
    LineChart {
        title: "Success vs training noise".into(),
        x_label: "noise above floor (dB)".into(),
        y_label: "success (%)".into(),
        x: levels.to_vec(),
        series,
    }
}

fn unique<T: PartialEq>(it: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for x in it {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

fn prosody_chart(rows: &[ProsodyRow]) -> BarChart {
    let pairs: Vec<(String, String)> = unique(rows.iter().map(|r| (r.source.clone(), r.target.clone())));
    let pick = |on: bool| {
        pairs
            .iter()
            .map(|(s, t)| {
                rows.iter()
                    .find(|r| &r.source == s && &r.target == t && r.prosody == on)
                    .map_or(f64::NAN, |r| r.pitch_rms_hz)
            })
            .collect()
    };
    BarChart {
        title: "Pitch error vs target".into(),
        y_label: "RMS f0 error (Hz)".into(),
        categories: pairs.iter().map(|(s, t)| pair_name(s, t)).collect(),
        series: vec![Series::new("prosody off", pick(false)), Series::new("prosody on", pick(true))],
    }
}

fn phoneme_chart(rows: &[PhonemeRow]) -> BarChart {
    let symbols: Vec<String> = {
        let mut v = unique(rows.iter().map(|r| r.symbol.clone()));
        v.sort();
        v
    };
    let mean = |f: fn(&PhonemeRow) -> f64| -> Vec<f64> {
        symbols
            .iter()
            .map(|s| {
                let (sum, n) = rows
                    .iter()
                    .filter(|r| &r.symbol == s)
                    .fold((0.0, 0usize), |(a, n), r| (a + f(r) * r.n_frames as f64, n + r.n_frames));
                if n > 0 { sum / n as f64 } else { f64::NAN }
            })
            .collect()
    };
    BarChart {
        title: "Distance per phoneme".into(),
        y_label: "MCD (dB)".into(),
        categories: symbols.clone(),
        series: vec![
            Series::new("source-target", mean(|r| r.mcd_source_target)),
            Series::new("converted-target", mean(|r| r.mcd_converted_target)),
        ],
    }
}

/// Runs a scenario and writes `<scenario>.csv` and `<scenario>.svg` into
/// `out_dir`. Returns the written paths.
pub fn run_scenario(m: &Manifest, scenario: Scenario, cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let csv = out_dir.join(format!("{}.csv", scenario.name()));
    let svg_path = out_dir.join(format!("{}.svg", scenario.name()));
    let svg = match scenario {
        Scenario::NoiseSweep => {
            let rows = noise_sweep(m, cfg)?;
            write_csv(&csv, &rows)?;
            let mut levels = cfg.noise_levels.clone();
            levels.sort_by(f64::total_cmp);
            noise_chart(&rows, &levels).to_svg()
        }
        Scenario::ProsodyAblation => {
            let rows = prosody_ablation(m, cfg)?;
            write_csv(&csv, &rows)?;
            prosody_chart(&rows).to_svg()
        }
        Scenario::PhonemeContribution => {
            let rows = phoneme_contribution(m, cfg)?;
            write_csv(&csv, &rows)?;
            phoneme_chart(&rows).to_svg()
        }
    };
    std::fs::write(&svg_path, svg)?;
    Ok(vec![csv, svg_path])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_names_round_trip() {
        for s in [Scenario::NoiseSweep, Scenario::ProsodyAblation, Scenario::PhonemeContribution] {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        assert_eq!("noise-sweep".parse::<Scenario>().unwrap(), Scenario::NoiseSweep);
        assert!(matches!("fig7".parse::<Scenario>(), Err(Error::ScenarioUnknown(_))));
    }

    #[test]
    fn noise_rows_serialize_with_empty_baseline_level() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.csv");
        let row = |noise_db| NoiseRow {
            source: "A".into(),
            target: "B".into(),
            seed: 1,
            noise_db,
            class: "voiced".into(),
            success_pct: 10.0,
            degradation: 0.0,
        };
        write_csv(&p, &[row(None), row(Some(40.0))]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "source,target,seed,noise_db,class,success_pct,degradation\nA,B,1,,voiced,10.0,0.0\nA,B,1,40.0,voiced,10.0,0.0\n"
        );
    }

    #[test]
    fn phoneme_chart_weights_by_frames() {
        let r = |t: &str, d: f64, n| PhonemeRow {
            source: "A".into(),
            target: t.into(),
            symbol: "a".into(),
            mcd_source_target: d,
            mcd_converted_target: 0.0,
            n_frames: n,
        };
        let c = phoneme_chart(&[r("B", 1.0, 1), r("C", 4.0, 3)]);
        assert_eq!(c.series[0].values, vec![3.25]);
    }
}

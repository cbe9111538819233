//! End-to-end analysis, training, conversion and evaluation over a manifest.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::eval::{
    classify_vuv, frame_distances, inject_noise, utterance_mcd, CepstralSpec, FrameClass,
    PhonemeLabel, PhonemeTable, Success,
};
use crate::lpc::{analyze_frame, inverse_filter_utterance, synthesize_utterance, LpcFrame, DEFAULT_ORDER};
use crate::manifest::{split_words, Manifest};
use crate::mapping::{train, FrameMapper, SpeakerMap, TrainConfig};
use crate::prosody::{estimate_pitch, pitch_lowpass, transfer_prosody, PitchTrack};
use crate::signal::{
    apply_window, de_emphasize, frame_signal, gaussian_window, load_wav, pre_emphasize, Waveform,
    WindowSpec, DEFAULT_SIGMA, FRAME_MS, OVERLAP_MS,
};

/// Framing, windowing and model order used for analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisConfig {
    pub order: usize,
    pub frame_ms: f64,
    pub overlap_ms: f64,
    pub sigma: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            order: DEFAULT_ORDER,
            frame_ms: FRAME_MS,
            overlap_ms: OVERLAP_MS,
            sigma: DEFAULT_SIGMA,
        }
    }
}

/// Everything the pipeline needs to know about one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub waveform: Waveform,
    pub emphasized: Waveform,
    pub frame_len: usize,
    pub hop: usize,
    pub frames: Vec<LpcFrame>,
    pub track: PitchTrack,
    pub classes: Vec<FrameClass>,
}

/// Pre-emphasis, framing, Gaussian windowing and LPC per frame; pitch and
/// voicing come from the unemphasized waveform on the same grid.
pub fn analyze(w: &Waveform, cfg: &AnalysisConfig) -> Result<Analysis> {
    let emphasized = pre_emphasize(w)?;
    let mut grid = frame_signal(&emphasized, cfg.frame_ms, cfg.overlap_ms)?;
    let window = gaussian_window(WindowSpec::new(grid.frame_len, cfg.sigma))?;
    apply_window(&mut grid, &window)?;
    let frames = grid
        .frames
        .iter()
        .map(|f| analyze_frame(f, cfg.order))
        .collect::<Result<Vec<_>>>()?;
    let raw_grid = frame_signal(w, cfg.frame_ms, cfg.overlap_ms)?;
    let track = estimate_pitch(w, &raw_grid)?;
    let classes = classify_vuv(w, &raw_grid, &track)?;
    // below the energy floor a frame is treated as silence everywhere: it
    // keeps its coefficients but is neither trained on, scored nor mapped
    let frames = frames
        .into_iter()
        .zip(&classes)
        .map(|(mut f, c)| {
            f.silent |= *c == FrameClass::Silence;
            f
        })
        .collect();
    Ok(Analysis {
        waveform: w.clone(),
        emphasized,
        frame_len: grid.frame_len,
        hop: grid.hop,
        frames,
        track,
        classes,
    })
}

/// Pitch of a finished recording, read from its LPC residual rather than
/// the waveform. Converted frames can carry resonances sharp enough to
/// isolate a single harmonic, which waveform autocorrelation then reports
/// as the fundamental; whitening by a blind re-analysis removes them.
/// Voicing still requires the waveform frame to clear the energy floor.
pub fn excitation_pitch(w: &Waveform, cfg: &AnalysisConfig) -> Result<PitchTrack> {
    let a = analyze(w, cfg)?;
    let e = inverse_filter_utterance(&a.emphasized.samples, &a.frames, a.frame_len, a.hop)?;
    // a raw residual is too spiky to clear the voicing threshold reliably
    let residual = Waveform::new(pitch_lowpass(&e, w.sample_rate), w.sample_rate)?;
    let grid = frame_signal(&residual, cfg.frame_ms, cfg.overlap_ms)?;
    let mut track = estimate_pitch(&residual, &grid)?;
    for (k, c) in a.classes.iter().enumerate() {
        if *c == FrameClass::Silence && k < track.len() {
            track.voiced[k] = false;
            track.f0[k] = 0.0;
        }
    }
    Ok(track)
}

/// Index-aligned coefficient pairs, skipping frames silent on either side.
pub fn frame_pairs(src: &Analysis, tgt: &Analysis) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    if src.frames.len() != tgt.frames.len() {
        return Err(Error::LengthMismatch(src.frames.len(), tgt.frames.len()));
    }
    Ok(src
        .frames
        .iter()
        .zip(&tgt.frames)
        .filter(|(a, b)| !a.silent && !b.silent)
        .map(|(a, b)| (a.features().to_vec(), b.features().to_vec()))
        .collect())
}

/// Where pitch transfer is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProsodyMode {
    #[default]
    Off,
    /// PSOLA on the de-emphasized output.
    Waveform,
    /// PSOLA on the excitation before synthesis.
    Residual,
}

/// Whose excitation drives the converted filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidualSource {
    #[default]
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConvertOptions {
    pub prosody: ProsodyMode,
    pub residual: ResidualSource,
}

/// Target-side information available at conversion time.
#[derive(Debug, Clone, Copy, Default)]
pub struct TargetSide<'a> {
    pub analysis: Option<&'a Analysis>,
    /// Pitch contour to impose; defaults to the analysis track.
    pub track: Option<&'a PitchTrack>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversion {
    pub frames: Vec<LpcFrame>,
    pub waveform: Waveform,
}

/// Maps the source frames, drives them with an excitation, de-emphasizes
/// and optionally transfers the target pitch contour.
pub fn convert(
    mapper: &dyn FrameMapper,
    src: &Analysis,
    target: TargetSide<'_>,
    opts: ConvertOptions,
) -> Result<Conversion> {
    let order = src.frames.first().map_or(0, LpcFrame::order);
    if mapper.order() != order {
        return Err(Error::ModelMismatch(format!(
            "model order {} but analysis order {order}",
            mapper.order()
        )));
    }
    let frames = mapper.convert(&src.frames)?;
    let excitation_of = |a: &Analysis| {
        inverse_filter_utterance(&a.emphasized.samples, &a.frames, a.frame_len, a.hop)
    };
    let residual = match opts.residual {
        ResidualSource::Source => excitation_of(src)?,
        ResidualSource::Target => {
            let t = target
                .analysis
                .ok_or_else(|| Error::BadConfig("target residual needs a target utterance".into()))?;
            if t.waveform.len() != src.waveform.len() {
                return Err(Error::LengthMismatch(src.waveform.len(), t.waveform.len()));
            }
            excitation_of(t)?
        }
    };
    let tgt_track = match opts.prosody {
        ProsodyMode::Off => None,
        _ => Some(
            target
                .track
                .or(target.analysis.map(|a| &a.track))
                .ok_or_else(|| Error::BadConfig("prosody transfer needs a target pitch track".into()))?,
        ),
    };
    let fs = src.waveform.sample_rate;
    let residual = match (opts.prosody, tgt_track) {
        (ProsodyMode::Residual, Some(t)) => {
            transfer_prosody(&Waveform::new(residual, fs)?, &src.track, t)?.samples
        }
        _ => residual,
    };
    let synth = synthesize_utterance(&residual, &frames, src.frame_len, src.hop)?;
    let mut out = de_emphasize(&Waveform::new(synth, fs)?)?;
    if let (ProsodyMode::Waveform, Some(t)) = (opts.prosody, tgt_track) {
        out = transfer_prosody(&out, &src.track, t)?;
    }
    Ok(Conversion {
        frames,
        waveform: out,
    })
}

/// One evaluation word: analyses of both sides plus optional labels.
#[derive(Debug, Clone, Copy)]
pub struct EvalItem<'a> {
    pub word_id: &'a str,
    pub src: &'a Analysis,
    pub tgt: &'a Analysis,
    pub labels: &'a [PhonemeLabel],
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordScore {
    pub word_id: String,
    pub success: Success,
}

/// Pooled source/target and converted/target distances of a frame subset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupScore {
    pub name: String,
    pub mcd_source_target: f64,
    pub mcd_converted_target: f64,
    pub success_pct: f64,
    pub n_frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub words: Vec<WordScore>,
    /// From the mean per-word distances.
    pub aggregate: Success,
    pub per_class: Vec<GroupScore>,
    pub per_phoneme: Vec<GroupScore>,
    pub n_frames: usize,
}

impl EvalReport {
    pub fn class(&self, c: FrameClass) -> Option<&GroupScore> {
        self.per_class.iter().find(|g| g.name == c.name())
    }

    /// Share of words whose converted distance beats the source distance.
    pub fn improved_fraction(&self) -> f64 {
        let n = self
            .words
            .iter()
            .filter(|w| w.success.mcd_converted_target < w.success.mcd_source_target)
            .count();
        n as f64 / self.words.len().max(1) as f64
    }
}

fn group(name: &str, st: (f64, usize), ct: (f64, usize)) -> GroupScore {
    let mst = st.0 / st.1.max(1) as f64;
    let mct = ct.0 / ct.1.max(1) as f64;
    GroupScore {
        name: name.to_string(),
        mcd_source_target: mst,
        mcd_converted_target: mct,
        success_pct: if mst > 0.0 { 100.0 * (1.0 - mct / mst) } else { f64::NAN },
        n_frames: st.1,
    }
}

/// Scores converted frames against the target for each item. `converted`
/// produces the converted frame sequence of an item.
pub fn evaluate_items<F>(items: &[EvalItem<'_>], mut converted: F, spec: CepstralSpec) -> Result<EvalReport>
where
    F: FnMut(&EvalItem<'_>) -> Result<Vec<LpcFrame>>,
{
    if items.is_empty() {
        return Err(Error::Manifest("no evaluation words".into()));
    }
    let mut words = Vec::with_capacity(items.len());
    let mut classes: BTreeMap<FrameClass, ((f64, usize), (f64, usize))> = BTreeMap::new();
    let mut st_table = PhonemeTable::default();
    let mut ct_table = PhonemeTable::default();
    let (mut sum_st, mut sum_ct, mut n_frames) = (0.0, 0.0, 0usize);
    for item in items {
        let conv = converted(item)?;
        let st = frame_distances(&item.src.frames, &item.tgt.frames, spec)?;
        let ct = frame_distances(&conv, &item.tgt.frames, spec)?;
        let mst = utterance_mcd(&item.src.frames, &item.tgt.frames, spec)?;
        let mct = utterance_mcd(&conv, &item.tgt.frames, spec)?;
        sum_st += mst;
        sum_ct += mct;
        words.push(WordScore {
            word_id: item.word_id.to_string(),
            success: Success::from_mcds(mst, mct)?,
        });
        for ((d_st, d_ct), class) in st.iter().zip(&ct).zip(&item.src.classes) {
            if let (Some(a), Some(b)) = (d_st, d_ct) {
                n_frames += 1;
                if *class != FrameClass::Silence {
                    let e = classes.entry(*class).or_default();
                    e.0 .0 += a;
                    e.0 .1 += 1;
                    e.1 .0 += b;
                    e.1 .1 += 1;
                }
            }
        }
        if !item.labels.is_empty() {
            st_table.add(item.labels, &item.src.frames, &item.tgt.frames, item.src.frame_len, item.src.hop, spec)?;
            ct_table.add(item.labels, &conv, &item.tgt.frames, item.src.frame_len, item.src.hop, spec)?;
        }
    }
    let k = items.len() as f64;
    let aggregate = Success::from_mcds(sum_st / k, sum_ct / k)?;
    let per_class = classes
        .iter()
        .map(|(c, (st, ct))| group(c.name(), *st, *ct))
        .collect();
    let per_phoneme = st_table
        .stats()
        .into_iter()
        .zip(ct_table.stats())
        .map(|(a, b)| {
            group(
                &a.symbol,
                (a.mean_db * a.n_frames as f64, a.n_frames),
                (b.mean_db * b.n_frames as f64, b.n_frames),
            )
        })
        .collect();
    Ok(EvalReport {
        words,
        aggregate,
        per_class,
        per_phoneme,
        n_frames,
    })
}

/// Training-time noise: level above the floor and a base seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub level_db: f64,
    pub seed: u64,
}

/// Stable seed for one utterance's noise.
pub fn utterance_seed(seed: u64, speaker: &str, word: &str) -> u64 {
    // FNV-1a over the identifiers, mixed with the base seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    for b in speaker.bytes().chain([0u8]).chain(word.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Loads and analyses one speaker's recordings of `words`.
pub fn analyze_words(
    manifest: &Manifest,
    speaker: &str,
    words: &[String],
    cfg: &AnalysisConfig,
    noise: Option<NoiseSpec>,
) -> Result<BTreeMap<String, Analysis>> {
    let s = manifest.speaker(speaker)?;
    words
        .iter()
        .map(|w| {
            let u = s
                .utterance(w)
                .ok_or_else(|| Error::Manifest(format!("speaker {speaker} has no word {w}")))?;
            let mut wave = load_wav(manifest.resolve(&u.wav_path))?;
            if let Some(n) = noise {
                wave = inject_noise(&wave, n.level_db, utterance_seed(n.seed, speaker, w))?;
            }
            Ok((w.clone(), analyze(&wave, cfg)?))
        })
        .collect()
}

/// Train/evaluation word split of a speaker pair.
pub fn pair_split(manifest: &Manifest, source: &str, target: &str) -> Result<(Vec<String>, Vec<String>)> {
    let shared = manifest.shared_words(source, target)?;
    if shared.len() < 2 {
        return Err(Error::Manifest(format!(
            "{source} and {target} share {} word(s); at least 2 needed",
            shared.len()
        )));
    }
    Ok(split_words(&shared))
}

/// Trains a map from pre-computed analyses of the training words.
pub fn train_from_analyses(
    src: &BTreeMap<String, Analysis>,
    tgt: &BTreeMap<String, Analysis>,
    cfg: &TrainConfig,
) -> Result<SpeakerMap> {
    let mut pairs = Vec::new();
    for (w, a) in src {
        let b = tgt
            .get(w)
            .ok_or_else(|| Error::Manifest(format!("target lacks word {w}")))?;
        pairs.extend(frame_pairs(a, b)?);
    }
    train(&pairs, cfg)
}

/// Full training run for one pairing on its training split.
pub fn train_pair(
    manifest: &Manifest,
    source: &str,
    target: &str,
    acfg: &AnalysisConfig,
    tcfg: &TrainConfig,
    noise: Option<NoiseSpec>,
) -> Result<SpeakerMap> {
    let (train_words, _) = pair_split(manifest, source, target)?;
    let src = analyze_words(manifest, source, &train_words, acfg, noise)?;
    let tgt = analyze_words(manifest, target, &train_words, acfg, noise)?;
    train_from_analyses(&src, &tgt, tcfg)
}

/// What produces the converted frames during evaluation.
#[derive(Clone, Copy)]
pub enum EvalMode<'a> {
    Model(&'a dyn FrameMapper),
    /// Converted = source: the no-op baseline.
    PassThrough,
    /// Converted = target: the upper bound.
    TargetOracle,
}

/// Scores an evaluation mode on the held-out words of a pairing.
pub fn evaluate_pair(
    manifest: &Manifest,
    source: &str,
    target: &str,
    acfg: &AnalysisConfig,
    mode: EvalMode<'_>,
    spec: CepstralSpec,
) -> Result<EvalReport> {
    let (_, eval_words) = pair_split(manifest, source, target)?;
    let src = analyze_words(manifest, source, &eval_words, acfg, None)?;
    let tgt = analyze_words(manifest, target, &eval_words, acfg, None)?;
    let speaker = manifest.speaker(source)?;
    evaluate_analyses(&src, &tgt, |w| speaker.utterance(w).map(|u| u.phonemes.as_slice()), mode, spec)
}

/// Scores an evaluation mode on analysed word sets.
pub fn evaluate_analyses<'l, L>(
    src: &BTreeMap<String, Analysis>,
    tgt: &BTreeMap<String, Analysis>,
    labels: L,
    mode: EvalMode<'_>,
    spec: CepstralSpec,
) -> Result<EvalReport>
where
    L: Fn(&str) -> Option<&'l [PhonemeLabel]>,
{
    let items: Vec<EvalItem<'_>> = src
        .iter()
        .map(|(w, a)| {
            let b = tgt
                .get(w)
                .ok_or_else(|| Error::Manifest(format!("target lacks word {w}")))?;
            Ok(EvalItem {
                word_id: w,
                src: a,
                tgt: b,
                labels: labels(w).unwrap_or(&[]),
            })
        })
        .collect::<Result<_>>()?;
    evaluate_items(
        &items,
        |item| match mode {
            EvalMode::Model(m) => m.convert(&item.src.frames),
            EvalMode::PassThrough => Ok(item.src.frames.clone()),
            EvalMode::TargetOracle => Ok(item.tgt.frames.clone()),
        },
        spec,
    )
}

//! Seeded synthetic speakers and a parallel word corpus rendered from them.
//!
//! Voiced segments are jittered glottal pulse trains through a cascade of
//! formant resonators; unvoiced segments are white noise through fricative
//! resonances. Each word uses one script shared by every speaker, so frame
//! `i` of a word covers the same phoneme for all of them.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::eval::PhonemeLabel;
use crate::lpc::DEFAULT_ORDER;
use crate::manifest::{Gender, Manifest, Speaker, Utterance};
use crate::signal::{save_wav, Waveform};

pub const SAMPLE_RATE: u32 = 11025;
pub const WORD_SECONDS: f64 = 0.62;
pub const VOWELS: [&str; 5] = ["a", "i", "o", "e", "u"];
pub const CONSONANTS: [&str; 3] = ["s", "t", "f"];

/// Lead and trail silence of every word, seconds.
const EDGE_SILENCE: f64 = 0.02;
/// Samples over which parameters glide between adjacent segments.
const TRANSITION: usize = 80;
/// Closure share of a `t` segment before its burst.
const T_CLOSURE: f64 = 0.35;
/// Default recording noise. It keeps the quietest spectra from having
/// bottomless valleys, which real microphones never produce either.
pub const BACKGROUND_RMS: f64 = 8e-3;

/// Number of samples in one word.
pub fn word_len(fs: u32) -> usize {
    (WORD_SECONDS * fs as f64).round() as usize
}

pub fn is_voiced(symbol: &str) -> bool {
    VOWELS.contains(&symbol)
}

/// Resonances of a male reference voice, `(center Hz, bandwidth Hz)`.
fn reference_formants(symbol: &str) -> Vec<(f64, f64)> {
    match symbol {
        "a" => vec![(730.0, 90.0), (1090.0, 110.0), (2440.0, 170.0), (3400.0, 250.0)],
        "i" => vec![(270.0, 60.0), (2290.0, 100.0), (3010.0, 170.0), (3700.0, 250.0)],
        "o" => vec![(570.0, 80.0), (840.0, 100.0), (2410.0, 170.0), (3300.0, 250.0)],
        "e" => vec![(530.0, 70.0), (1840.0, 100.0), (2480.0, 160.0), (3500.0, 250.0)],
        "u" => vec![(300.0, 60.0), (870.0, 90.0), (2240.0, 170.0), (3300.0, 250.0)],
        "s" => vec![(2600.0, 300.0), (3900.0, 400.0), (4600.0, 500.0)],
        "t" => vec![(1800.0, 400.0), (3300.0, 500.0), (4200.0, 700.0)],
        "f" => vec![(1400.0, 1200.0), (3200.0, 1500.0), (4500.0, 1500.0)],
        _ => vec![],
    }
}

fn target_rms(symbol: &str) -> f64 {
    match symbol {
        "a" => 0.20,
        "o" => 0.18,
        "e" => 0.17,
        "i" => 0.15,
        "u" => 0.14,
        "s" => 0.06,
        "t" => 0.05,
        _ => 0.045,
    }
}

/// Parameters of one synthetic voice.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpeakerSpec {
    pub id: String,
    pub gender: Gender,
    /// Mean f0, Hz.
    pub base_f0: f64,
    /// Per-period random deviation of the pitch period, percent.
    pub f0_jitter: f64,
    /// Resonances per phoneme symbol, `(center Hz, bandwidth Hz)`.
    pub formants: BTreeMap<String, Vec<(f64, f64)>>,
    /// Pole of the one-pole glottal low-pass; larger is a darker voice.
    pub glottal_pole: f64,
    /// Breath noise in voiced excitation, as an RMS ratio to the pulse train.
    pub aspiration: f64,
    /// RMS of white background noise added to the finished word.
    pub background_rms: f64,
    /// Overall level multiplier.
    pub gain: f64,
    /// Relative level change from word start to word end.
    pub gain_slope: f64,
}

impl SyntheticSpeakerSpec {
    /// A voice whose vowel formants are the reference scaled by `scale`
    /// (fricative resonances by its square root).
    pub fn scaled(id: &str, gender: Gender, base_f0: f64, scale: f64) -> Self {
        let nyquist_guard = 0.45 * SAMPLE_RATE as f64;
        let formants = VOWELS
            .iter()
            .chain(CONSONANTS.iter())
            .map(|&s| {
                let k = if is_voiced(s) { scale } else { scale.sqrt() };
                let f = reference_formants(s)
                    .into_iter()
                    .map(|(c, b)| ((c * k).min(nyquist_guard), b * k))
                    .collect();
                (s.to_string(), f)
            })
            .collect();
        let female = gender == Gender::Female;
        SyntheticSpeakerSpec {
            id: id.to_string(),
            gender,
            base_f0,
            f0_jitter: 1.0,
            formants,
            glottal_pole: if female { 0.90 } else { 0.95 },
            aspiration: 0.0,
            background_rms: BACKGROUND_RMS,
            gain: if female { 0.9 } else { 1.0 },
            gain_slope: -0.2,
        }
    }

    /// Two male and two female voices at the reference average pitches.
    pub fn defaults() -> Vec<Self> {
        vec![
            Self::scaled("M1", Gender::Male, 120.86, 1.0),
            Self::scaled("M2", Gender::Male, 102.89, 0.86),
            Self::scaled("F1", Gender::Female, 245.68, 1.22),
            Self::scaled("F2", Gender::Female, 226.32, 1.08),
        ]
    }

    pub fn validate(&self, fs: u32) -> Result<()> {
        let bad = |m: String| Err(Error::BadSpec(format!("speaker {}: {m}", self.id)));
        if !(50.0..=500.0).contains(&self.base_f0) {
            return bad(format!("base_f0 {} outside [50, 500]", self.base_f0));
        }
        if !(0.0..=20.0).contains(&self.f0_jitter) {
            return bad(format!("f0_jitter {} outside [0, 20]", self.f0_jitter));
        }
        if !(0.0..1.0).contains(&self.glottal_pole) || !(self.gain > 0.0) {
            return bad("glottal_pole must be in [0, 1) and gain positive".into());
        }
        if !(0.0..=10.0).contains(&self.aspiration) {
            return bad(format!("aspiration {} outside [0, 10]", self.aspiration));
        }
        if !(0.0..=0.1).contains(&self.background_rms) {
            return bad(format!("background_rms {} outside [0, 0.1]", self.background_rms));
        }
        for s in VOWELS.iter().chain(CONSONANTS.iter()) {
            let Some(f) = self.formants.get(*s) else {
                return bad(format!("no resonances for '{s}'"));
            };
            for &(c, b) in f {
                if !(c > 0.0 && c < fs as f64 / 2.0 && b > 0.0) {
                    return bad(format!("'{s}' resonance ({c}, {b}) not below fs/2"));
                }
            }
        }
        Ok(())
    }
}

/// One segment of a word script.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub symbol: String,
    pub start: usize,
    pub end: usize,
}

/// Timing and phoneme sequence of one word, shared by every speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct WordScript {
    pub word_id: String,
    pub segments: Vec<Segment>,
    /// Phase of the slow f0 contour.
    pub contour_phase: f64,
    pub len: usize,
}

impl WordScript {
    pub fn random(word_id: String, fs: u32, rng: &mut impl Rng) -> Self {
        let len = word_len(fs);
        let edge = (EDGE_SILENCE * fs as f64).round() as usize;
        let n = rng.random_range(2..=4);
        let mut symbols: Vec<&str> = (0..n)
            .map(|_| {
                if rng.random_bool(0.6) {
                    VOWELS[rng.random_range(0..VOWELS.len())]
                } else {
                    CONSONANTS[rng.random_range(0..CONSONANTS.len())]
                }
            })
            .collect();
        if !symbols.iter().any(|s| is_voiced(s)) {
            let k = rng.random_range(0..n);
            symbols[k] = VOWELS[rng.random_range(0..VOWELS.len())];
        }
        let weights: Vec<f64> = symbols
            .iter()
            .map(|s| rng.random_range(0.6..1.4) * if is_voiced(s) { 1.0 } else { 0.7 })
            .collect();
        let total: f64 = weights.iter().sum();
        let span = (len - 2 * edge) as f64;
        let mut segments = Vec::with_capacity(n);
        let mut acc = 0.0;
        let mut start = edge;
        for (i, (s, w)) in symbols.iter().zip(&weights).enumerate() {
            acc += w;
            let end = if i + 1 == n {
                len - edge
            } else {
                edge + (span * acc / total).round() as usize
            };
            segments.push(Segment {
                symbol: s.to_string(),
                start,
                end,
            });
            start = end;
        }
        WordScript {
            word_id,
            segments,
            contour_phase: rng.random_range(0.0..2.0 * PI),
            len,
        }
    }

    pub fn labels(&self) -> Vec<PhonemeLabel> {
        self.segments
            .iter()
            .map(|s| PhonemeLabel {
                symbol: s.symbol.clone(),
                start: s.start,
                end: s.end,
                voiced: is_voiced(&s.symbol),
            })
            .collect()
    }
}

/// Second-order resonator with unit gain at DC, parameters settable per sample.
#[derive(Debug, Clone, Copy, Default)]
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, center: f64, bandwidth: f64, fs: f64) -> f64 {
        let r = (-PI * bandwidth / fs).exp();
        let c = 2.0 * r * (2.0 * PI * center / fs).cos();
        let g = 1.0 - c + r * r;
        let y = g * x + c * self.y1 - r * r * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Index of the segment at `n`, with the neighbour it is gliding toward and
/// the glide weight of that neighbour.
fn segment_blend(script: &WordScript, n: usize) -> Option<(usize, usize, f64)> {
    let segs = &script.segments;
    let i = segs.iter().position(|s| n >= s.start && n < s.end)?;
    let half = TRANSITION / 2;
    let s = &segs[i];
    if i + 1 < segs.len() && n + half >= s.end {
        let t = (n + half - s.end) as f64 / TRANSITION as f64;
        return Some((i, i + 1, t.min(0.5)));
    }
    if i > 0 && n < s.start + half {
        let t = (s.start + half - n) as f64 / TRANSITION as f64;
        return Some((i, i - 1, t.min(0.5)));
    }
    Some((i, i, 0.0))
}

/// Renders one word for one speaker.
pub fn render_word(spec: &SyntheticSpeakerSpec, script: &WordScript, fs: u32, seed: u64) -> Result<Waveform> {
    spec.validate(fs)?;
    let fsf = fs as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_res = spec.formants.values().map(Vec::len).max().unwrap_or(0);
    let resonances = |sym: &str, k: usize| -> (f64, f64) {
        let f = &spec.formants[sym];
        // missing upper resonances sit out of the way as a broad flat pole
        f.get(k).copied().unwrap_or((0.45 * fsf, 0.45 * fsf))
    };

    // glottal pulse times with a slow contour and per-period jitter
    let mut pulses = vec![false; script.len];
    let mut t = 0.0;
    while (t as usize) < script.len {
        pulses[t as usize] = true;
        let phase = 2.0 * PI * t / script.len as f64 + script.contour_phase;
        let f0 = spec.base_f0 * (1.0 + 0.04 * phase.sin());
        let jitter = 1.0 + spec.f0_jitter / 100.0 * rng.random_range(-1.0..1.0);
        t += fsf / f0 * jitter;
    }

    // RMS of the low-passed pulse train at the base pitch
    let pole = spec.glottal_pole;
    let pulse_rms = ((1.0 - pole) / ((1.0 + pole) * fsf / spec.base_f0)).sqrt();
    let breath = spec.aspiration * pulse_rms;
    let mut g1 = 0.0;
    let mut bank = vec![Resonator::default(); n_res];
    let mut raw = vec![0.0; script.len];
    for (n, out) in raw.iter_mut().enumerate() {
        let pulse = if pulses[n] { 1.0 } else { 0.0 };
        g1 = pulse + spec.glottal_pole * g1;
        let noise: f64 = StandardNormal.sample(&mut rng);
        let Some((i, j, w)) = segment_blend(script, n) else {
            continue;
        };
        let (si, sj) = (&script.segments[i], &script.segments[j]);
        let excite = |seg: &Segment| -> f64 {
            if is_voiced(&seg.symbol) {
                g1 * (1.0 - pole) + breath * noise
            } else if seg.symbol == "t" {
                let burst = seg.start + ((seg.end - seg.start) as f64 * T_CLOSURE) as usize;
                if n < burst {
                    0.0
                } else {
                    noise * (-((n - burst) as f64) / (0.02 * fsf)).exp()
                }
            } else {
                noise
            }
        };
        let mut x = (1.0 - w) * excite(si) + w * excite(sj);
        for (k, r) in bank.iter_mut().enumerate() {
            let (ci, bi) = resonances(&si.symbol, k);
            let (cj, bj) = resonances(&sj.symbol, k);
            x = r.step(x, (1.0 - w) * ci + w * cj, (1.0 - w) * bi + w * bj, fsf);
        }
        *out = x;
    }

    // per-segment level normalization, glided like the other parameters
    let seg_gain: Vec<f64> = script
        .segments
        .iter()
        .map(|s| {
            let core = &raw[s.start..s.end];
            let rms = (core.iter().map(|v| v * v).sum::<f64>() / core.len() as f64).sqrt();
            if rms > 0.0 {
                target_rms(&s.symbol) / rms
            } else {
                0.0
            }
        })
        .collect();
    let first = script.segments.first().map_or(0, |s| s.start);
    let last = script.segments.last().map_or(0, |s| s.end);
    let ramp = (0.01 * fsf) as usize;
    let samples = raw
        .iter()
        .enumerate()
        .map(|(n, &v)| {
            let hiss: f64 = StandardNormal.sample(&mut rng);
            let voice = segment_blend(script, n).map_or(0.0, |(i, j, w)| {
                let g = (1.0 - w) * seg_gain[i] + w * seg_gain[j];
                let edge = ((n - first).min(last - 1 - n) as f64 / ramp as f64).min(1.0);
                let fade = 0.5 - 0.5 * (PI * edge).cos();
                let slope = 1.0 + spec.gain_slope * (n as f64 / script.len as f64 - 0.5);
                v * g * fade * slope * spec.gain
            });
            (voice + spec.background_rms * hiss).clamp(-1.0, 1.0)
        })
        .collect();
    Waveform::new(samples, fs)
}

/// Scripts for `words` words, identical for every speaker.
pub fn word_scripts(words: usize, fs: u32, seed: u64) -> Result<Vec<WordScript>> {
    if words < 2 {
        return Err(Error::BadSpec(format!("need at least 2 words, got {words}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..words)
        .map(|i| WordScript::random(format!("w{i:03}"), fs, &mut rng))
        .collect())
}

/// Seed of the excitation noise for one speaker and word.
fn render_seed(seed: u64, speaker: usize, word: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ ((speaker as u64) << 32)
        ^ word as u64
}

/// Renders the corpus into `out_dir` and writes `manifest.toml` there.
///
/// Waveforms are stored as 16-bit PCM under `wav/<speaker>/<word>.wav`.
pub fn generate_synthetic_corpus(
    specs: &[SyntheticSpeakerSpec],
    words: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest> {
    if specs.is_empty() {
        return Err(Error::BadSpec("no speakers".into()));
    }
    for s in specs {
        s.validate(SAMPLE_RATE)?;
    }
    let scripts = word_scripts(words, SAMPLE_RATE, seed)?;
    let mut speakers = Vec::with_capacity(specs.len());
    for (si, spec) in specs.iter().enumerate() {
        let dir = out_dir.join("wav").join(&spec.id);
        std::fs::create_dir_all(&dir)?;
        let mut utterances = Vec::with_capacity(words);
        for (wi, script) in scripts.iter().enumerate() {
            let w = render_word(spec, script, SAMPLE_RATE, render_seed(seed, si, wi))?;
            let rel = Path::new("wav").join(&spec.id).join(format!("{}.wav", script.word_id));
            save_wav(&w, out_dir.join(&rel))?;
            utterances.push(Utterance {
                word_id: script.word_id.clone(),
                wav_path: rel,
                phonemes: script.labels(),
            });
        }
        speakers.push(Speaker {
            id: spec.id.clone(),
            gender: spec.gender,
            utterances,
        });
    }
    let manifest = Manifest {
        sample_rate: SAMPLE_RATE,
        order: DEFAULT_ORDER,
        pairing: default_pairing(specs),
        speakers,
        root: out_dir.to_path_buf(),
    };
    manifest.save(out_dir.join("manifest.toml"))?;
    Ok(manifest)
}

/// Same-gender and cross-gender pairs among the first two voices of each
/// gender: M1->M2, M1->F1, M2->F2, F1->M1, F1->F2 for the defaults.
pub fn default_pairing(specs: &[SyntheticSpeakerSpec]) -> Vec<(String, String)> {
    let of = |g: Gender| -> Vec<&str> {
        specs.iter().filter(|s| s.gender == g).map(|s| s.id.as_str()).take(2).collect()
    };
    let (m, f) = (of(Gender::Male), of(Gender::Female));
    let mut out = Vec::new();
    let mut push = |a: Option<&&str>, b: Option<&&str>| {
        if let (Some(a), Some(b)) = (a, b) {
            out.push((a.to_string(), b.to_string()));
        }
    };
    push(m.first(), m.get(1));
    push(m.first(), f.first());
    push(m.get(1), f.get(1));
    push(f.first(), m.first());
    push(f.first(), f.get(1));
    out
}

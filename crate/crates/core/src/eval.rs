//! Cepstral distortion, conversion success, voicing classes and the noise
//! model used by the degradation experiments.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::lpc::LpcFrame;
use crate::prosody::{PitchTrack, ENERGY_FLOOR};
use crate::signal::{FrameGrid, Waveform};

pub const N_CEPS: usize = 24;
/// `10 / ln 10`.
pub const DB_SCALE: f64 = 10.0 / std::f64::consts::LN_10;
/// RMS of the declared noise floor, as a fraction of full scale.
pub const NOISE_FLOOR_RMS: f64 = 1e-4;
/// All-pass coefficient of the optional frequency warp.
pub const DEFAULT_WARP: f64 = 0.35;

/// Cepstral coefficients `c_1..c_n` of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Cepstrum(pub Vec<f64>);

/// Checks minimum phase with the step-down recursion: `A(z)` has every root
/// inside the unit circle iff all reflection coefficients satisfy `|k| < 1`.
pub fn is_minimum_phase(coeffs: &[f64]) -> bool {
    let mut a: Vec<f64> = coeffs[1..].to_vec();
    while let Some(&k) = a.last() {
        if !(k.abs() < 1.0) {
            return false;
        }
        let m = a.len();
        let den = 1.0 - k * k;
        a = (0..m - 1).map(|i| (a[i] - k * a[m - 2 - i]) / den).collect();
    }
    true
}

/// Cepstrum of `1 / A(z)` by the LPC recursion.
pub fn lpc_to_cepstrum(frame: &LpcFrame, n_ceps: usize) -> Result<Cepstrum> {
    if frame.coeffs.iter().any(|c| !c.is_finite()) || !is_minimum_phase(&frame.coeffs) {
        return Err(Error::UnstableFrame);
    }
    let a = &frame.coeffs;
    let p = frame.order();
    // c[0] unused so indices match the recursion
    let mut c = vec![0.0; n_ceps + 1];
    for n in 1..=n_ceps {
        let lo = if n > p { n - p } else { 1 };
        let acc: f64 = (lo..n).map(|k| k as f64 * c[k] * a[n - k]).sum::<f64>() / n as f64;
        c[n] = if n <= p { -a[n] - acc } else { -acc };
    }
    c.remove(0);
    Ok(Cepstrum(c))
}

/// Re-expresses `c_1..c_m` on a frequency axis warped by a first-order
/// all-pass with coefficient `alpha`, keeping `n_out` coefficients.
pub fn warp_cepstrum(c: &Cepstrum, alpha: f64, n_out: usize) -> Cepstrum {
    let beta = 1.0 - alpha * alpha;
    let mut g = vec![0.0; n_out + 1];
    let mut d = vec![0.0; n_out + 1];
    // c_0 only feeds the warped c_0, so it is left at zero
    for i in (0..=c.0.len()).rev() {
        let ci = if i == 0 { 0.0 } else { c.0[i - 1] };
        d[0] = g[0];
        g[0] = ci + alpha * d[0];
        if n_out >= 1 {
            d[1] = g[1];
            g[1] = beta * d[0] + alpha * d[1];
        }
        for j in 2..=n_out {
            d[j] = g[j];
            g[j] = d[j - 1] + alpha * (d[j] - g[j - 1]);
        }
    }
    Cepstrum(g[1..].to_vec())
}

/// Cepstral distortion in dB between two cepstra.
pub fn mcd(t: &Cepstrum, p: &Cepstrum) -> Result<f64> {
    if t.0.len() != p.0.len() {
        return Err(Error::ShapeMismatch {
            expected: t.0.len(),
            got: p.0.len(),
        });
    }
    let sq: f64 = t.0.iter().zip(&p.0).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(DB_SCALE * (2.0 * sq).sqrt())
}

/// How frames are turned into cepstra before comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CepstralSpec {
    pub n_ceps: usize,
    /// All-pass warp coefficient; `None` for plain LPC cepstra.
    pub warp: Option<f64>,
}

impl Default for CepstralSpec {
    fn default() -> Self {
        CepstralSpec {
            n_ceps: N_CEPS,
            warp: None,
        }
    }
}

impl CepstralSpec {
    pub fn cepstrum(&self, frame: &LpcFrame) -> Result<Cepstrum> {
        match self.warp {
            None => lpc_to_cepstrum(frame, self.n_ceps),
            // a longer plain cepstrum keeps the warped low quefrencies accurate
            Some(alpha) => Ok(warp_cepstrum(
                &lpc_to_cepstrum(frame, 4 * self.n_ceps)?,
                alpha,
                self.n_ceps,
            )),
        }
    }
}

/// Per-frame distance, `None` where either side is silent.
pub fn frame_distances(a: &[LpcFrame], b: &[LpcFrame], spec: CepstralSpec) -> Result<Vec<Option<f64>>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x.silent || y.silent {
                Ok(None)
            } else {
                mcd(&spec.cepstrum(x)?, &spec.cepstrum(y)?).map(Some)
            }
        })
        .collect()
}

fn mean_of(d: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = d.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Mean distance over frames that are non-silent on both sides.
pub fn utterance_mcd(a: &[LpcFrame], b: &[LpcFrame], spec: CepstralSpec) -> Result<f64> {
    mean_of(frame_distances(a, b, spec)?.into_iter().flatten()).ok_or(Error::NoValidFrames)
}

/// Source/converted/target comparison of one utterance or an aggregate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Success {
    pub mcd_source_target: f64,
    pub mcd_converted_target: f64,
    pub success_pct: f64,
}

impl Success {
    pub fn from_mcds(mcd_source_target: f64, mcd_converted_target: f64) -> Result<Self> {
        if !(mcd_source_target > 0.0) {
            return Err(Error::DegenerateBaseline);
        }
        Ok(Success {
            mcd_source_target,
            mcd_converted_target,
            success_pct: 100.0 * (1.0 - mcd_converted_target / mcd_source_target),
        })
    }
}

pub fn success_rate(src: &[LpcFrame], conv: &[LpcFrame], tgt: &[LpcFrame], spec: CepstralSpec) -> Result<Success> {
    if conv.len() != tgt.len() {
        return Err(Error::LengthMismatch(conv.len(), tgt.len()));
    }
    Success::from_mcds(utterance_mcd(src, tgt, spec)?, utterance_mcd(conv, tgt, spec)?)
}

/// Voicing class of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrameClass {
    Silence,
    Voiced,
    Unvoiced,
}

impl FrameClass {
    pub fn name(self) -> &'static str {
        match self {
            FrameClass::Silence => "silence",
            FrameClass::Voiced => "voiced",
            FrameClass::Unvoiced => "unvoiced",
        }
    }
}

/// Silence below the relative energy floor, otherwise voiced or unvoiced by
/// the pitch track.
pub fn classify_vuv(w: &Waveform, grid: &FrameGrid, track: &PitchTrack) -> Result<Vec<FrameClass>> {
    if grid.sample_rate != w.sample_rate {
        return Err(Error::ShapeMismatch {
            expected: w.sample_rate as usize,
            got: grid.sample_rate as usize,
        });
    }
    if track.len() != grid.n_frames() {
        return Err(Error::TrackMismatch(track.len(), grid.n_frames()));
    }
    let energy: Vec<f64> = grid
        .frames
        .iter()
        .map(|f| f.iter().map(|s| s * s).sum::<f64>() / f.len() as f64)
        .collect();
    let max = energy.iter().cloned().fold(0.0, f64::max);
    Ok(energy
        .iter()
        .zip(&track.voiced)
        .map(|(&e, &v)| {
            if max == 0.0 || e < ENERGY_FLOOR * max {
                FrameClass::Silence
            } else if v {
                FrameClass::Voiced
            } else {
                FrameClass::Unvoiced
            }
        })
        .collect())
}

/// A labelled phoneme segment `[start, end)` in samples.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PhonemeLabel {
    pub symbol: String,
    pub start: usize,
    pub end: usize,
    pub voiced: bool,
}

/// Running per-symbol distance totals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhonemeTable {
    totals: BTreeMap<String, (f64, usize)>,
}

/// Mean distance of one symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeStat {
    pub symbol: String,
    pub mean_db: f64,
    pub n_frames: usize,
}

impl PhonemeTable {
    /// Adds the distances of frames whose centers fall inside each label.
    /// `frame_len` and `hop` describe the grid both frame sequences share.
    pub fn add(
        &mut self,
        labels: &[PhonemeLabel],
        a: &[LpcFrame],
        b: &[LpcFrame],
        frame_len: usize,
        hop: usize,
        spec: CepstralSpec,
    ) -> Result<()> {
        let d = frame_distances(a, b, spec)?;
        for l in labels {
            if l.end <= l.start || l.end - l.start < hop {
                return Err(Error::EmptySegment(format!(
                    "'{}' [{}, {}) is shorter than one hop",
                    l.symbol, l.start, l.end
                )));
            }
            let entry = self.totals.entry(l.symbol.clone()).or_insert((0.0, 0));
            for (i, di) in d.iter().enumerate() {
                let center = (i * hop) as f64 + (frame_len as f64 - 1.0) / 2.0;
                if center >= l.start as f64 && center < l.end as f64 {
                    if let Some(v) = di {
                        entry.0 += v;
                        entry.1 += 1;
                    }
                }
            }
        }
        Ok(())
    }

    /// Per-symbol means in symbol order; symbols with no usable frame are dropped.
    pub fn stats(&self) -> Vec<PhonemeStat> {
        self.totals
            .iter()
            .filter(|(_, (_, n))| *n > 0)
            .map(|(s, (sum, n))| PhonemeStat {
                symbol: s.clone(),
                mean_db: sum / *n as f64,
                n_frames: *n,
            })
            .collect()
    }
}

/// Per-symbol mean distances for a single utterance.
pub fn phoneme_distances(
    labels: &[PhonemeLabel],
    a: &[LpcFrame],
    b: &[LpcFrame],
    frame_len: usize,
    hop: usize,
    spec: CepstralSpec,
) -> Result<Vec<PhonemeStat>> {
    let mut t = PhonemeTable::default();
    t.add(labels, a, b, frame_len, hop, spec)?;
    Ok(t.stats())
}

/// Adds seeded white Gaussian noise `level_db` above the noise floor.
pub fn inject_noise(w: &Waveform, level_db: f64, seed: u64) -> Result<Waveform> {
    if !(level_db >= 0.0) || !level_db.is_finite() {
        return Err(Error::BadConfig(format!("noise level {level_db} dB must be >= 0")));
    }
    let rms = NOISE_FLOOR_RMS * 10f64.powf(level_db / 20.0);
    let normal = Normal::new(0.0, rms).map_err(|e| Error::BadConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = w.samples.iter().map(|s| s + normal.sample(&mut rng)).collect();
    Waveform::new(samples, w.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly;
    use num_complex::Complex64;

    fn frame(c: &[f64]) -> LpcFrame {
        LpcFrame::from_coeffs(c.to_vec())
    }

    #[test]
    fn flat_spectrum_has_zero_cepstrum() {
        let c = lpc_to_cepstrum(&LpcFrame::silent(24, 0.0), 24).unwrap();
        assert!(c.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pole_closed_form() {
        let c = lpc_to_cepstrum(&frame(&[1.0, -0.5]), 5).unwrap();
        for (n, v) in c.0.iter().enumerate() {
            let n = n as f64 + 1.0;
            assert!((v - 0.5f64.powf(n) / n).abs() < 1e-15);
        }
    }

    #[test]
    fn unstable_frame_rejected() {
        assert!(matches!(lpc_to_cepstrum(&frame(&[1.0, -2.0]), 24), Err(Error::UnstableFrame)));
        let roots = [Complex64::from_polar(1.01, 0.5), Complex64::from_polar(1.01, -0.5)];
        let f = frame(&poly::from_roots(&roots));
        assert!(!is_minimum_phase(&f.coeffs));
    }

    #[test]
    fn mcd_closed_form_and_identity() {
        let a = Cepstrum(vec![0.0; 24]);
        let mut b = a.clone();
        b.0[7] = 1.0;
        let closed = 10.0 / 10f64.ln() * 2f64.sqrt();
        assert!((mcd(&a, &b).unwrap() - closed).abs() < 1e-12);
        assert!((closed - 6.14185).abs() < 1e-5);
        assert_eq!(mcd(&b, &b).unwrap(), 0.0);
        assert!(matches!(mcd(&a, &Cepstrum(vec![0.0; 3])), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn success_cases() {
        let s = Success::from_mcds(6.0, 3.0).unwrap();
        assert_eq!(s.success_pct, 50.0);
        let src = vec![frame(&[1.0, -0.5]); 3];
        let tgt = vec![frame(&[1.0, 0.3]); 3];
        let spec = CepstralSpec::default();
        assert_eq!(success_rate(&src, &tgt, &tgt, spec).unwrap().success_pct, 100.0);
        assert_eq!(success_rate(&src, &src, &tgt, spec).unwrap().success_pct, 0.0);
        assert!(matches!(success_rate(&src, &src, &src, spec), Err(Error::DegenerateBaseline)));
    }

    #[test]
    fn utterance_mcd_skips_silence() {
        let spec = CepstralSpec::default();
        let a = vec![frame(&[1.0, -0.5]), LpcFrame::silent(1, 0.0)];
        let b = vec![frame(&[1.0, 0.5]), frame(&[1.0, 0.9])];
        let one = mcd(&spec.cepstrum(&a[0]).unwrap(), &spec.cepstrum(&b[0]).unwrap()).unwrap();
        assert_eq!(utterance_mcd(&a, &b, spec).unwrap(), one);
        let s = vec![LpcFrame::silent(1, 0.0); 2];
        assert!(matches!(utterance_mcd(&s, &b, spec), Err(Error::NoValidFrames)));
        assert!(matches!(utterance_mcd(&a, &b[..1], spec), Err(Error::LengthMismatch(2, 1))));
    }

    #[test]
    fn warp_with_zero_alpha_is_identity() {
        let c = lpc_to_cepstrum(&frame(&[1.0, -0.9, 0.4]), 24).unwrap();
        let w = warp_cepstrum(&c, 0.0, 24);
        for (a, b) in c.0.iter().zip(&w.0) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn phoneme_frames_by_center() {
        // frame_len 5, hop 2: centers 2, 4, 6, 8
        let spec = CepstralSpec::default();
        let a: Vec<LpcFrame> = [0.1, 0.2, 0.3, 0.4].iter().map(|&v| frame(&[1.0, v])).collect();
        let b = vec![frame(&[1.0, 0.0]); 4];
        let labels = vec![
            PhonemeLabel { symbol: "a".into(), start: 3, end: 5, voiced: true },
            PhonemeLabel { symbol: "s".into(), start: 5, end: 9, voiced: false },
        ];
        let stats = phoneme_distances(&labels, &a, &b, 5, 2, spec).unwrap();
        let d = frame_distances(&a, &b, spec).unwrap();
        assert_eq!(stats[0].symbol, "a");
        assert_eq!(stats[0].n_frames, 1);
        assert_eq!(stats[0].mean_db, d[1].unwrap());
        assert_eq!(stats[1].n_frames, 2);
        assert!((stats[1].mean_db - (d[2].unwrap() + d[3].unwrap()) / 2.0).abs() < 1e-15);
        let short = vec![PhonemeLabel { symbol: "t".into(), start: 3, end: 4, voiced: false }];
        assert!(matches!(
            phoneme_distances(&short, &a, &b, 5, 2, spec),
            Err(Error::EmptySegment(_))
        ));
    }

    #[test]
    fn noise_levels_and_determinism() {
        let w = Waveform::new(vec![0.0; 200_000], 11025).unwrap();
        for (db, want) in [(0.0, 1e-4), (40.0, 1e-2)] {
            let n = inject_noise(&w, db, 3).unwrap();
            let rms = (n.samples.iter().map(|v| v * v).sum::<f64>() / n.len() as f64).sqrt();
            assert!((rms / want - 1.0).abs() < 0.02, "{db} dB -> {rms}");
        }
        assert_eq!(inject_noise(&w, 20.0, 9).unwrap(), inject_noise(&w, 20.0, 9).unwrap());
        assert!(inject_noise(&w, -1.0, 9).is_err());
    }

    #[test]
    fn classes_from_energy_and_track() {
        let mut s = vec![0.0; 1000];
        for (i, v) in s.iter_mut().enumerate().skip(500) {
            *v = (i as f64 * 0.3).sin();
        }
        let w = Waveform::new(s, 11025).unwrap();
        let grid = crate::signal::frame_with(&w, 100, 50).unwrap();
        let n = grid.n_frames();
        let track = PitchTrack {
            f0: vec![0.0; n],
            voiced: (0..n).map(|i| i % 2 == 0).collect(),
            frame_len: 100,
            hop: 50,
            sample_rate: 11025,
        };
        let c = classify_vuv(&w, &grid, &track).unwrap();
        assert_eq!(c[0], FrameClass::Silence);
        assert_eq!(c[n - 1], if (n - 1) % 2 == 0 { FrameClass::Voiced } else { FrameClass::Unvoiced });
    }
}

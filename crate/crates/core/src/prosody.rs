//! Pitch tracking, pitch-mark placement and TD-PSOLA pitch modification.
//!
//! The detector is a normalized autocorrelation over the 50-500 Hz lag band.
//! For every frame the reference segment is the frame itself and the lagged
//! segment is read from the waveform, so all lags are scored over the same
//! number of products. Pitch marks follow waveform peaks one period apart in
//! voiced regions and fall back to a uniform 10 ms grid elsewhere; PSOLA
//! re-spaces Hann-weighted two-period segments around them.

use crate::error::{Error, Result};
use crate::lpc::governing_frame;
use crate::signal::{FrameGrid, Waveform};

pub const MIN_F0: f64 = 50.0;
pub const MAX_F0: f64 = 500.0;
/// Normalized autocorrelation peak needed to call a frame voiced.
pub const VOICING_THRESHOLD: f64 = 0.3;
/// Frames quieter than this fraction of the loudest frame are never voiced.
pub const ENERGY_FLOOR: f64 = 0.02;
pub const MIN_FACTOR: f64 = 0.25;
pub const MAX_FACTOR: f64 = 4.0;

/// Candidates within this fraction of the best correlation are preferred
/// when they sit at a shorter lag (guards against period doubling).
const OCTAVE_TOLERANCE: f64 = 0.9;
/// Lags either side of the chosen one searched for the voicing peak.
const LAG_SLACK: usize = 2;

/// Per-frame fundamental frequency and voicing.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchTrack {
    /// Hz, 0 for unvoiced frames.
    pub f0: Vec<f64>,
    pub voiced: Vec<bool>,
    pub frame_len: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl PitchTrack {
    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn voiced_f0(&self) -> impl Iterator<Item = f64> + '_ {
        self.f0
            .iter()
            .zip(&self.voiced)
            .filter(|(_, &v)| v)
            .map(|(&f, _)| f)
    }

    /// Mean f0 over voiced frames, `None` when nothing is voiced.
    pub fn mean_voiced_f0(&self) -> Option<f64> {
        let (sum, n) = self.voiced_f0().fold((0.0, 0usize), |(s, n), f| (s + f, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    pub fn median_voiced_f0(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.voiced_f0().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(|a, b| a.total_cmp(b));
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 {
            v[m]
        } else {
            0.5 * (v[m - 1] + v[m])
        })
    }

    /// A track on the same grid with every frame voiced at `f0`.
    pub fn constant(like: &PitchTrack, f0: f64) -> PitchTrack {
        PitchTrack {
            f0: vec![f0; like.len()],
            voiced: vec![true; like.len()],
            ..like.clone()
        }
    }

    fn frame_at(&self, sample: usize) -> usize {
        governing_frame(sample, self.frame_len, self.hop, self.len())
    }

    fn center(&self, i: usize) -> f64 {
        (i * self.hop) as f64 + (self.frame_len as f64 - 1.0) / 2.0
    }
}

/// Normalized cross-correlation of `x[start..start+len]` with the same
/// span shifted by `lag`, truncated at the end of the signal.
fn normalized_correlation(x: &[f64], start: usize, len: usize, lag: usize) -> Option<f64> {
    let avail = x.len().saturating_sub(start + lag).min(len);
    if avail < len / 2 || avail == 0 {
        return None;
    }
    let a = &x[start..start + avail];
    let b = &x[start + lag..start + lag + avail];
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (u, v) in a.iter().zip(b) {
        ab += u * v;
        aa += u * u;
        bb += v * v;
    }
    let den = (aa * bb).sqrt();
    (den > 0.0).then(|| ab / den)
}

/// Two passes of a moving average `fs / 1000` samples long: a triangular
/// low-pass with its first null near 1 kHz. Keeps the fundamental and the
/// low harmonics and spreads each glottal pulse over a few samples.
pub fn pitch_lowpass(x: &[f64], sample_rate: u32) -> Vec<f64> {
    let width = (sample_rate as usize / 1000).max(1);
    let pass = |x: &[f64]| -> Vec<f64> {
        let mut acc = 0.0;
        (0..x.len())
            .map(|n| {
                acc += x[n];
                if n >= width {
                    acc -= x[n - width];
                }
                acc / width as f64
            })
            .collect()
    };
    pass(&pass(x))
}

/// Per-frame f0 by normalized autocorrelation with a two-criterion voicing
/// decision (correlation peak and relative frame energy).
///
/// The lag is searched on a low-passed copy, where a pulse train whose
/// period is not a whole number of samples still correlates fully at its
/// period; the voicing peak is read from the signal itself so that filtered
/// noise cannot pass for periodicity.
pub fn estimate_pitch(w: &Waveform, grid: &FrameGrid) -> Result<PitchTrack> {
    if w.sample_rate < 8000 {
        return Err(Error::BadFrameSpec(format!(
            "pitch estimation needs fs >= 8000, got {}",
            w.sample_rate
        )));
    }
    let fs = w.sample_rate as f64;
    let min_lag = (fs / MAX_F0).floor().max(2.0) as usize;
    let max_lag = (fs / MIN_F0).ceil() as usize;
    let energies: Vec<f64> = grid
        .frames
        .iter()
        .map(|f| f.iter().map(|s| s * s).sum::<f64>() / f.len() as f64)
        .collect();
    let max_energy = energies.iter().cloned().fold(0.0, f64::max);
    let smooth = pitch_lowpass(&w.samples, w.sample_rate);

    let mut f0 = Vec::with_capacity(grid.n_frames());
    let mut voiced = Vec::with_capacity(grid.n_frames());
    for (i, &energy) in energies.iter().enumerate() {
        let start = i * grid.hop;
        let est = if max_energy > 0.0 && energy >= ENERGY_FLOOR * max_energy {
            best_lag(&smooth, start, grid.frame_len, min_lag, max_lag).map(|lag| {
                let near = lag.round() as usize;
                let peak = (near.saturating_sub(LAG_SLACK).max(1)..=near + LAG_SLACK)
                    .filter_map(|l| normalized_correlation(&w.samples, start, grid.frame_len, l))
                    .fold(f64::NEG_INFINITY, f64::max);
                (lag, peak)
            })
        } else {
            None
        };
        match est {
            Some((lag, peak)) if peak >= VOICING_THRESHOLD => {
                let hz = fs / lag;
                if (MIN_F0..=MAX_F0).contains(&hz) {
                    f0.push(hz);
                    voiced.push(true);
                    continue;
                }
                f0.push(0.0);
                voiced.push(false);
            }
            _ => {
                f0.push(0.0);
                voiced.push(false);
            }
        }
    }
    Ok(PitchTrack {
        f0,
        voiced,
        frame_len: grid.frame_len,
        hop: grid.hop,
        sample_rate: w.sample_rate,
    })
}

/// Best fractional lag for one frame.
fn best_lag(x: &[f64], start: usize, len: usize, min_lag: usize, max_lag: usize) -> Option<f64> {
    let scores: Vec<Option<f64>> = (min_lag - 1..=max_lag + 1)
        .map(|lag| normalized_correlation(x, start, len, lag))
        .collect();
    let score = |lag: usize| scores[lag + 1 - min_lag];
    let peaks: Vec<(usize, f64)> = (min_lag..=max_lag)
        .filter_map(|lag| {
            let c = score(lag)?;
            let l = score(lag - 1).unwrap_or(f64::NEG_INFINITY);
            let r = score(lag + 1).unwrap_or(f64::NEG_INFINITY);
            (c >= l && c >= r).then_some((lag, c))
        })
        .collect();
    let best = peaks.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return None;
    }
    let &(lag, c) = peaks.iter().find(|p| p.1 >= OCTAVE_TOLERANCE * best)?;
    // parabolic refinement around the integer peak
    let frac = match (score(lag - 1), score(lag + 1)) {
        (Some(l), Some(r)) => {
            let den = l - 2.0 * c + r;
            if den < 0.0 {
                (0.5 * (l - r) / den).clamp(-0.5, 0.5)
            } else {
                0.0
            }
        }
        _ => 0.0,
    };
    Some(lag as f64 + frac)
}

/// Analysis epochs for PSOLA.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PitchMarks {
    pub positions: Vec<usize>,
}

/// Places pitch marks: waveform peaks about one period apart in voiced
/// regions, seeded at the strongest peak of the highest-energy voiced frame
/// and propagated in both directions; uniform 10 ms marks elsewhere.
pub fn place_pitch_marks(w: &Waveform, track: &PitchTrack) -> PitchMarks {
    let x = &w.samples;
    let len = x.len();
    let uniform = ((w.sample_rate as f64) * 0.01).round().max(1.0) as usize;
    if len == 0 {
        return PitchMarks { positions: vec![] };
    }
    let period_at = |n: usize| -> Option<f64> {
        if track.is_empty() {
            return None;
        }
        let k = track.frame_at(n);
        track.voiced[k].then(|| track.sample_rate as f64 / track.f0[k])
    };

    let seed_frame = (0..track.len())
        .filter(|&i| track.voiced[i])
        .map(|i| {
            let s = (i * track.hop).min(len);
            let e = (s + track.frame_len).min(len);
            let energy: f64 = x[s..e].iter().map(|v| v * v).sum();
            (i, energy)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1));

    let Some((seed_frame, _)) = seed_frame else {
        return PitchMarks {
            positions: (0..len).step_by(uniform).collect(),
        };
    };
    let s = (seed_frame * track.hop).min(len - 1);
    let e = (s + track.frame_len).min(len);
    let seed = (s..e)
        .max_by(|&a, &b| x[a].abs().total_cmp(&x[b].abs()))
        .unwrap_or(s);
    let polarity = if x[seed] < 0.0 { -1.0 } else { 1.0 };
    let peak_in = |lo: usize, hi: usize| -> Option<usize> {
        (lo..=hi.min(len - 1)).max_by(|&a, &b| (polarity * x[a]).total_cmp(&(polarity * x[b])))
    };

    let mut right = Vec::new();
    let mut p = seed;
    loop {
        let next = match period_at(p) {
            Some(period) => {
                let lo = p + (0.8 * period).round() as usize;
                let hi = p + (1.2 * period).round() as usize;
                if lo >= len {
                    break;
                }
                match peak_in(lo, hi) {
                    Some(n) => n,
                    None => break,
                }
            }
            None => p + uniform,
        };
        if next >= len {
            break;
        }
        right.push(next);
        p = next;
    }

    let mut left = Vec::new();
    let mut p = seed;
    loop {
        let next = match period_at(p) {
            Some(period) => {
                let far = (1.2 * period).round() as usize;
                let near = (0.8 * period).round() as usize;
                if p < near {
                    break;
                }
                match peak_in(p.saturating_sub(far), p - near) {
                    Some(n) => n,
                    None => break,
                }
            }
            None => {
                if p < uniform {
                    break;
                }
                p - uniform
            }
        };
        left.push(next);
        p = next;
    }

    left.reverse();
    left.push(seed);
    left.extend(right);
    PitchMarks { positions: left }
}

fn hann_half(offset: f64, half_width: f64) -> f64 {
    0.5 * (1.0 + (std::f64::consts::PI * offset / half_width).cos())
}

/// TD-PSOLA: re-spaces two-period Hann-weighted segments around the analysis
/// marks by `period / factor`. `factors[k]` applies at mark `k`. The output
/// has exactly the input length; segments are duplicated or skipped by the
/// nearest-mark mapping to keep the time axis fixed.
pub fn psola_modify(w: &Waveform, marks: &PitchMarks, factors: &[f64]) -> Result<Waveform> {
    if factors.len() != marks.positions.len() {
        return Err(Error::ShapeMismatch {
            expected: marks.positions.len(),
            got: factors.len(),
        });
    }
    if let Some(&bad) = factors
        .iter()
        .find(|f| !(MIN_FACTOR..=MAX_FACTOR).contains(*f))
    {
        return Err(Error::BadFactor(bad));
    }
    let t = &marks.positions;
    if t.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::BadFrameSpec("pitch marks must be strictly increasing".into()));
    }
    let x = &w.samples;
    let len = x.len();
    if t.is_empty() || len == 0 {
        return Ok(w.clone());
    }
    let m = t.len();
    let fallback = (w.sample_rate as f64 * 0.01).round();
    // Interior half-widths are the neighbouring mark distances. The first
    // segment reaches flat to the start of the signal, the last flat to its end.
    let spacing = |k: usize| -> f64 {
        if m == 1 {
            fallback
        } else if k + 1 < m {
            (t[k + 1] - t[k]) as f64
        } else {
            (t[k] - t[k - 1]) as f64
        }
    };

    let mut acc = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut ts = t[0] as f64;
    let mut last_k = 0;
    while ts < len as f64 {
        let k = nearest_mark(t, ts, last_k);
        last_k = k;
        let center = ts.round() as isize;
        let tk = t[k] as isize;
        let left = if k == 0 { t[0] as isize } else { (t[k] - t[k - 1]) as isize };
        let right = if k + 1 == m { (len - 1 - t[k]) as isize } else { (t[k + 1] - t[k]) as isize };
        for off in -left..=right {
            let src = tk + off;
            let dst = center + off;
            if src < 0 || src >= len as isize || dst < 0 || dst >= len as isize {
                continue;
            }
            let weight = if off < 0 {
                if k == 0 { 1.0 } else { hann_half(off as f64, left as f64) }
            } else if k + 1 == m {
                1.0
            } else {
                hann_half(off as f64, right as f64)
            };
            acc[dst as usize] += weight * x[src as usize];
            norm[dst as usize] += weight;
        }
        // the last segment already extends flat to the end of the signal
        if ts >= t[m - 1] as f64 {
            break;
        }
        ts += spacing(k) / factors[k];
    }
    let samples = acc
        .iter()
        .zip(&norm)
        .map(|(a, n)| a / n.max(1.0))
        .collect();
    Waveform::new(samples, w.sample_rate)
}

fn nearest_mark(t: &[usize], ts: f64, from: usize) -> usize {
    let mut k = from;
    while k + 1 < t.len() && (t[k + 1] as f64 - ts).abs() <= (t[k] as f64 - ts).abs() {
        k += 1;
    }
    k
}

/// Per-frame PSOLA factors mapping the source contour onto the target one.
///
/// Voiced source frames take `tgt / src`; where the target frame is unvoiced
/// the target's median voiced f0 stands in. Unvoiced source frames keep 1.
pub fn prosody_factors(src: &PitchTrack, tgt: &PitchTrack) -> Result<Vec<f64>> {
    if src.len() != tgt.len() {
        return Err(Error::TrackMismatch(src.len(), tgt.len()));
    }
    let fallback = tgt.median_voiced_f0();
    Ok((0..src.len())
        .map(|i| {
            if !src.voiced[i] {
                return 1.0;
            }
            let target = if tgt.voiced[i] { Some(tgt.f0[i]) } else { fallback };
            match target {
                Some(f) => (f / src.f0[i]).clamp(MIN_FACTOR, MAX_FACTOR),
                None => 1.0,
            }
        })
        .collect())
}

/// Linear interpolation of per-frame values at each mark position.
fn factors_at_marks(track: &PitchTrack, frame_factors: &[f64], marks: &PitchMarks) -> Vec<f64> {
    let n = frame_factors.len();
    marks
        .positions
        .iter()
        .map(|&p| {
            if n == 1 {
                return frame_factors[0];
            }
            let pos = (p as f64 - track.center(0)) / track.hop as f64;
            if pos <= 0.0 {
                frame_factors[0]
            } else if pos >= (n - 1) as f64 {
                frame_factors[n - 1]
            } else {
                let i = pos.floor() as usize;
                let f = pos - i as f64;
                frame_factors[i] * (1.0 - f) + frame_factors[i + 1] * f
            }
        })
        .collect()
}

/// Replaces the source pitch contour with the target's by TD-PSOLA.
pub fn transfer_prosody(
    source: &Waveform,
    src_track: &PitchTrack,
    tgt_track: &PitchTrack,
) -> Result<Waveform> {
    let frame_factors = prosody_factors(src_track, tgt_track)?;
    if frame_factors.is_empty() {
        return Ok(source.clone());
    }
    let marks = place_pitch_marks(source, src_track);
    let factors = factors_at_marks(src_track, &frame_factors, &marks);
    psola_modify(source, &marks, &factors)
}

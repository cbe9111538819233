//! Waveform I/O and the time-domain plumbing around LPC analysis:
//! pre-/de-emphasis, framing, Gaussian windowing and overlap-add.
//!
//! Samples are kept as `f64` normalized to `[-1, 1]`; quantization to
//! 16-bit PCM happens only at the file boundary.

use std::path::Path;

use crate::error::{Error, Result};

/// First-order pre-emphasis coefficient, `H(z) = 1 - 0.95 z^-1`.
pub const PRE_EMPHASIS: f64 = 0.95;

/// Default Gaussian window shape parameter.
pub const DEFAULT_SIGMA: f64 = 0.2;

/// Default analysis frame length in milliseconds.
pub const FRAME_MS: f64 = 25.0;

/// Default overlap between consecutive frames in milliseconds.
pub const OVERLAP_MS: f64 = 20.0;

/// Floor applied to the overlap-add normalization denominator.
const OLA_EPS: f64 = 1e-12;

/// A mono sample sequence with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    /// Builds a waveform, rejecting a zero sample rate and non-finite samples.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::BadFrameSpec("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    fn non_empty(&self) -> Result<()> {
        if self.samples.is_empty() {
            Err(Error::EmptyInput)
        } else {
            Ok(())
        }
    }
}

/// Reads a RIFF/WAVE file holding 16-bit mono PCM.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat {
            field: "channels",
            value: spec.channels.to_string(),
            expected: "1 (mono)",
        });
    }
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::UnsupportedFormat {
            field: "format",
            value: "IEEE float".into(),
            expected: "integer PCM",
        });
    }
    if spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat {
            field: "bits_per_sample",
            value: spec.bits_per_sample.to_string(),
            expected: "16",
        });
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Waveform::new(samples, spec.sample_rate)
}

/// Writes `w` as 16-bit mono PCM, clamping samples to `[-1, 1]` first.
pub fn save_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    if w.samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec)?;
    for &s in &w.samples {
        writer.write_sample(quantize(s))?;
    }
    writer.finalize()?;
    Ok(())
}

fn quantize(s: f64) -> i16 {
    (s.clamp(-1.0, 1.0) * 32768.0)
        .round()
        .clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// `y[n] = x[n] - 0.95 x[n-1]`, with `y[0] = x[0]`.
pub fn pre_emphasize(w: &Waveform) -> Result<Waveform> {
    w.non_empty()?;
    let x = &w.samples;
    let mut y = Vec::with_capacity(x.len());
    y.push(x[0]);
    y.extend(x.windows(2).map(|p| p[1] - PRE_EMPHASIS * p[0]));
    Ok(Waveform {
        samples: y,
        sample_rate: w.sample_rate,
    })
}

/// Exact inverse of [`pre_emphasize`]: `y[n] = x[n] + 0.95 y[n-1]`.
pub fn de_emphasize(w: &Waveform) -> Result<Waveform> {
    w.non_empty()?;
    let mut prev = 0.0;
    let samples = w
        .samples
        .iter()
        .map(|&x| {
            prev = x + PRE_EMPHASIS * prev;
            prev
        })
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: w.sample_rate,
    })
}

/// Overlapping frames cut from a waveform.
///
/// Frame `i` covers samples `[i * hop, i * hop + frame_len)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGrid {
    pub frame_len: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub frames: Vec<Vec<f64>>,
}

impl FrameGrid {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Sample index of the center of frame `i`.
    pub fn center(&self, i: usize) -> f64 {
        (i * self.hop) as f64 + (self.frame_len as f64 - 1.0) / 2.0
    }

    /// Number of frames that fit in `len` samples, trailing partial frames dropped.
    pub fn count_for(len: usize, frame_len: usize, hop: usize) -> usize {
        if len < frame_len {
            0
        } else {
            (len - frame_len) / hop + 1
        }
    }

    /// Frame lengths and hop for a given rate, rounded to the nearest sample.
    pub fn geometry(sample_rate: u32, frame_ms: f64, overlap_ms: f64) -> Result<(usize, usize)> {
        if !(frame_ms > overlap_ms && overlap_ms > 0.0) {
            return Err(Error::BadFrameSpec(format!(
                "need frame_ms > overlap_ms > 0, got {frame_ms} / {overlap_ms}"
            )));
        }
        let fs = sample_rate as f64;
        let frame_len = (frame_ms * fs / 1000.0).round() as usize;
        let hop = ((frame_ms - overlap_ms) * fs / 1000.0).round() as usize;
        if hop == 0 || frame_len <= hop {
            return Err(Error::BadFrameSpec(format!(
                "frame_len {frame_len} / hop {hop} do not overlap"
            )));
        }
        Ok((frame_len, hop))
    }
}

/// Cuts `w` into overlapping frames of `frame_ms` with `overlap_ms` of overlap.
pub fn frame_signal(w: &Waveform, frame_ms: f64, overlap_ms: f64) -> Result<FrameGrid> {
    let (frame_len, hop) = FrameGrid::geometry(w.sample_rate, frame_ms, overlap_ms)?;
    frame_with(w, frame_len, hop)
}

/// Cuts `w` into frames with explicit sample geometry.
pub fn frame_with(w: &Waveform, frame_len: usize, hop: usize) -> Result<FrameGrid> {
    if hop == 0 || frame_len <= hop {
        return Err(Error::BadFrameSpec(format!(
            "frame_len {frame_len} / hop {hop} do not overlap"
        )));
    }
    if w.len() < frame_len {
        return Err(Error::TooShort {
            needed: frame_len,
            got: w.len(),
        });
    }
    let n = FrameGrid::count_for(w.len(), frame_len, hop);
    let frames = (0..n)
        .map(|i| w.samples[i * hop..i * hop + frame_len].to_vec())
        .collect();
    Ok(FrameGrid {
        frame_len,
        hop,
        sample_rate: w.sample_rate,
        frames,
    })
}

/// Parameters of the Gaussian analysis window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub length: usize,
    pub sigma: f64,
}

impl WindowSpec {
    pub fn new(length: usize, sigma: f64) -> Self {
        WindowSpec { length, sigma }
    }

    pub fn center(&self) -> f64 {
        (self.length as f64 - 1.0) / 2.0
    }
}

/// `W(n) = exp(-(n - m)^2 / (2 (sigma N)^2))`, `m = (N - 1) / 2`.
pub fn gaussian_window(spec: WindowSpec) -> Result<Vec<f64>> {
    if spec.length < 2 {
        return Err(Error::BadWindowSpec(format!(
            "length {} < 2",
            spec.length
        )));
    }
    if !(spec.sigma > 0.0 && spec.sigma.is_finite()) {
        return Err(Error::BadWindowSpec(format!("sigma {} <= 0", spec.sigma)));
    }
    let m = spec.center();
    let denom = 2.0 * (spec.sigma * spec.length as f64).powi(2);
    Ok((0..spec.length)
        .map(|n| {
            let d = n as f64 - m;
            (-d * d / denom).exp()
        })
        .collect())
}

/// Multiplies every frame by `window` in place.
pub fn apply_window(grid: &mut FrameGrid, window: &[f64]) -> Result<()> {
    if window.len() != grid.frame_len {
        return Err(Error::ShapeMismatch {
            expected: grid.frame_len,
            got: window.len(),
        });
    }
    for frame in &mut grid.frames {
        frame.iter_mut().zip(window).for_each(|(s, w)| *s *= w);
    }
    Ok(())
}

/// Weighted overlap-add resynthesis.
///
/// Each frame is multiplied by `window` and summed at its offset; the sum is
/// divided by the accumulated squared window (floored at 1e-12), so framing an
/// unmodified signal and feeding the frames back reproduces it.
pub fn overlap_add(grid: &FrameGrid, window: &[f64]) -> Result<Waveform> {
    if window.len() != grid.frame_len {
        return Err(Error::ShapeMismatch {
            expected: grid.frame_len,
            got: window.len(),
        });
    }
    if grid.frames.is_empty() {
        return Err(Error::EmptyInput);
    }
    let len = (grid.n_frames() - 1) * grid.hop + grid.frame_len;
    let mut acc = vec![0.0; len];
    let mut norm = vec![0.0; len];
    for (i, frame) in grid.frames.iter().enumerate() {
        if frame.len() != grid.frame_len {
            return Err(Error::ShapeMismatch {
                expected: grid.frame_len,
                got: frame.len(),
            });
        }
        let off = i * grid.hop;
        for (k, (&s, &w)) in frame.iter().zip(window).enumerate() {
            acc[off + k] += s * w;
            norm[off + k] += w * w;
        }
    }
    let samples = acc
        .iter()
        .zip(&norm)
        .map(|(a, n)| a / n.max(OLA_EPS))
        .collect();
    Waveform::new(samples, grid.sample_rate)
}

//! All-pole (LPC) modelling: autocorrelation, Levinson-Durbin, inverse
//! filtering to the excitation residual, and all-pole resynthesis.
//!
//! Sign convention: `A(z) = sum_{i=0..p} a_i z^-i` with `a_0 = 1` is the
//! denominator of the synthesis filter `H(z) = 1 / A(z)`, so the predictor is
//! `x_hat(n) = -sum_{i=1..p} a_i x(n - i)`.

use crate::error::{Error, Result};

/// Filter order used throughout the toolkit unless configured otherwise.
pub const DEFAULT_ORDER: usize = 24;

/// Prediction-error energy below which a frame is treated as degenerate.
const MIN_ERROR_ENERGY: f64 = 1e-12;

/// Synthesis output magnitude that indicates a diverging filter.
const DIVERGENCE_LIMIT: f64 = 1e6;

/// Per-frame all-pole model.
#[derive(Debug, Clone, PartialEq)]
pub struct LpcFrame {
    /// `a[0..=p]`, `a[0] == 1`.
    pub coeffs: Vec<f64>,
    /// Square root of the final prediction-error energy.
    pub gain: f64,
    /// Zero-lag autocorrelation `R(0)` of the analysed frame.
    pub frame_energy: f64,
    /// Set for frames whose autocorrelation was degenerate.
    pub silent: bool,
}

impl LpcFrame {
    /// The flat model `a = [1, 0, ..., 0]` with zero gain, flagged silent.
    pub fn silent(order: usize, frame_energy: f64) -> Self {
        let mut coeffs = vec![0.0; order + 1];
        coeffs[0] = 1.0;
        LpcFrame {
            coeffs,
            gain: 0.0,
            frame_energy,
            silent: true,
        }
    }

    /// Wraps a coefficient vector, normalizing nothing: `coeffs[0]` must be 1.
    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        debug_assert_eq!(coeffs.first(), Some(&1.0));
        LpcFrame {
            coeffs,
            gain: 1.0,
            frame_energy: 0.0,
            silent: false,
        }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// `a_1 ..= a_p`, the part a spectral mapping operates on.
    pub fn features(&self) -> &[f64] {
        &self.coeffs[1..]
    }
}

/// Excitation obtained by inverse filtering one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualFrame {
    pub samples: Vec<f64>,
}

/// Biased autocorrelation `R(tau) = (1/N) sum_t x(t) x(t + tau)` for `tau = 0..=max_lag`.
pub fn autocorrelation(frame: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = frame.len();
    if max_lag >= n {
        return Err(Error::LagTooLarge { lag: max_lag, len: n });
    }
    let inv = 1.0 / n as f64;
    Ok((0..=max_lag)
        .map(|lag| {
            frame[..n - lag]
                .iter()
                .zip(&frame[lag..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                * inv
        })
        .collect())
}

/// Smallest order satisfying `p >= 4 + fs / 1000`.
pub fn min_lpc_order(sample_rate: u32) -> usize {
    (4.0 + sample_rate as f64 / 1000.0).ceil() as usize
}

/// Resolves the analysis order: the configured one if given, else
/// [`DEFAULT_ORDER`] whatever the rate. The minimum only validates: a warning
/// is logged when the resolved order falls below it.
pub fn lpc_order(sample_rate: u32, configured: Option<usize>) -> usize {
    let min = min_lpc_order(sample_rate);
    let p = configured.unwrap_or(DEFAULT_ORDER);
    if p < min {
        log::warn!("LPC order {p} is below the recommended minimum {min} for {sample_rate} Hz");
    }
    p
}

/// Output of the Levinson-Durbin recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct Levinson {
    pub frame: LpcFrame,
    pub reflection: Vec<f64>,
    pub error_energy: f64,
}

/// Solves the Toeplitz normal equations for `a_1..a_p` given `R(0..=p)`.
pub fn levinson_durbin(r: &[f64]) -> Result<LpcFrame> {
    levinson_durbin_full(r).map(|l| l.frame)
}

/// Like [`levinson_durbin`], also returning reflection coefficients and the
/// final prediction-error energy.
pub fn levinson_durbin_full(r: &[f64]) -> Result<Levinson> {
    if r.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(r[0] > 0.0) || r.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularInput);
    }
    let p = r.len() - 1;
    let mut a = vec![0.0; p + 1];
    a[0] = 1.0;
    let mut tmp = vec![0.0; p + 1];
    let mut reflection = Vec::with_capacity(p);
    let mut err = r[0];
    for m in 1..=p {
        let acc: f64 = (0..m).map(|i| a[i] * r[m - i]).sum();
        let k = -acc / err;
        tmp[..=m].copy_from_slice(&a[..=m]);
        for i in 1..m {
            a[i] = tmp[i] + k * tmp[m - i];
        }
        a[m] = k;
        err *= 1.0 - k * k;
        reflection.push(k);
        if !(err >= MIN_ERROR_ENERGY) || k.abs() >= 1.0 {
            return Err(Error::SingularInput);
        }
    }
    Ok(Levinson {
        frame: LpcFrame {
            coeffs: a,
            gain: err.sqrt(),
            frame_energy: r[0],
            silent: false,
        },
        reflection,
        error_energy: err,
    })
}

/// Autocorrelation + Levinson-Durbin on an already windowed frame.
///
/// Degenerate frames become [`LpcFrame::silent`] instead of failing.
pub fn analyze_frame(frame: &[f64], order: usize) -> Result<LpcFrame> {
    let r = autocorrelation(frame, order)?;
    match levinson_durbin(&r) {
        Ok(f) => Ok(f),
        Err(Error::SingularInput) => Ok(LpcFrame::silent(order, r[0].max(0.0))),
        Err(e) => Err(e),
    }
}

/// FIR filtering by `A(z)`: `e[n] = sum_i a_i x[n - i]`, with `x[n < 0] = 0`.
pub fn inverse_filter(frame: &[f64], model: &LpcFrame) -> ResidualFrame {
    let a = &model.coeffs;
    let samples = (0..frame.len())
        .map(|n| {
            a.iter()
                .take(n + 1)
                .enumerate()
                .map(|(i, ai)| ai * frame[n - i])
                .sum()
        })
        .collect();
    ResidualFrame { samples }
}

/// All-pole filtering by `1 / A(z)`: `y[n] = e[n] - sum_{i>=1} a_i y[n - i]`.
///
/// `state[i]` holds `y[-1 - i]` (most recent output first) and the returned
/// state continues the recursion into the next block.
pub fn synthesis_filter(
    excitation: &ResidualFrame,
    model: &LpcFrame,
    state: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = model.order();
    if state.len() != p {
        return Err(Error::ShapeMismatch {
            expected: p,
            got: state.len(),
        });
    }
    let mut hist = state.to_vec();
    let out = run_all_pole(&excitation.samples, &model.coeffs, &mut hist)?;
    Ok((out, hist))
}

fn run_all_pole(input: &[f64], a: &[f64], hist: &mut [f64]) -> Result<Vec<f64>> {
    let p = hist.len();
    let mut out = Vec::with_capacity(input.len());
    for &e in input {
        let mut y = e;
        for i in 1..=p {
            y -= a[i] * hist[i - 1];
        }
        if !(y.abs() <= DIVERGENCE_LIMIT) {
            return Err(Error::UnstableModel);
        }
        if p > 0 {
            hist.copy_within(0..p - 1, 1);
            hist[0] = y;
        }
        out.push(y);
    }
    Ok(out)
}

/// Frame whose model governs sample `n` in block-wise (time-varying)
/// filtering: the frame whose center is nearest, clamped to the grid.
pub fn governing_frame(n: usize, frame_len: usize, hop: usize, n_frames: usize) -> usize {
    let first_center = (frame_len as f64 - 1.0) / 2.0;
    let idx = ((n as f64 - first_center) / hop as f64).round();
    (idx.max(0.0) as usize).min(n_frames.saturating_sub(1))
}

/// Residual of a whole signal under a per-frame model sequence, each sample
/// filtered by the model of its governing frame with true signal history.
pub fn inverse_filter_utterance(
    signal: &[f64],
    models: &[LpcFrame],
    frame_len: usize,
    hop: usize,
) -> Result<Vec<f64>> {
    if models.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok((0..signal.len())
        .map(|n| {
            let a = &models[governing_frame(n, frame_len, hop, models.len())].coeffs;
            a.iter()
                .take(n + 1)
                .enumerate()
                .map(|(i, ai)| ai * signal[n - i])
                .sum()
        })
        .collect())
}

/// Time-varying all-pole synthesis with filter state chained across frames.
pub fn synthesize_utterance(
    residual: &[f64],
    models: &[LpcFrame],
    frame_len: usize,
    hop: usize,
) -> Result<Vec<f64>> {
    let p = models.first().ok_or(Error::EmptyInput)?.order();
    if let Some(bad) = models.iter().find(|m| m.order() != p) {
        return Err(Error::ShapeMismatch {
            expected: p,
            got: bad.order(),
        });
    }
    let mut hist = vec![0.0; p];
    let mut out = Vec::with_capacity(residual.len());
    let mut n = 0;
    while n < residual.len() {
        let k = governing_frame(n, frame_len, hop, models.len());
        let mut end = n + 1;
        while end < residual.len() && governing_frame(end, frame_len, hop, models.len()) == k {
            end += 1;
        }
        out.extend(run_all_pole(&residual[n..end], &models[k].coeffs, &mut hist)?);
        n = end;
    }
    Ok(out)
}

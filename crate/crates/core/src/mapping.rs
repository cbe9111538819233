//! Spectral mapping network and its Levenberg-Marquardt trainer.
//!
//! The network is `y = W2 tanh(W1 x + b1) + b2` on z-scored LPC coefficient
//! vectors. Training minimizes the sum of squared residuals with damped
//! Gauss-Newton steps `(J^T J + lambda I) delta = -J^T r`.
//!
//! `J^T J` is never formed row by row. For a two-layer tanh/linear network
//! the Jacobian row of output `k` is `h~` on the output weights of `k` and
//! `W2[k, j] d_j g` on the hidden weights (`d = 1 - h^2`, `g = [x; 1]`,
//! `h~ = [h; 1]`), so with `z = d (x) g`:
//!
//! - output/output block: `I_O (x) sum h~ h~^T`
//! - hidden/hidden block: `(sum z z^T) o (W2^T W2 (x) 1 1^T)`
//! - output/hidden block: `W2[k, j] * (sum h~ z^T)[., (j, i)]`
//!
//! The output block is block-diagonal, so the damped system is solved through
//! its Schur complement on the hidden parameters, which reduces to the same
//! Hadamard form with `sum z z^T` replaced by `sum z z^T - B^T P B`.

use faer::linalg::matmul::matmul;
use faer::linalg::matmul::triangular::{self, BlockStructure};
use faer::linalg::triangular_solve::{
    solve_lower_triangular_in_place, solve_upper_triangular_in_place,
};
use faer::{Accum, Mat, MatRef, Par, Side};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::lpc::LpcFrame;
use crate::poly;

pub const DEFAULT_HIDDEN: usize = 50;
pub const FORMAT_TAG: &str = "lpvc-map-v1";
pub const MIN_PAIRS: usize = 50;
const STD_FLOOR: f64 = 1e-8;
/// Consecutive epochs without a new validation minimum before stopping.
const MAX_VALIDATION_FAILS: usize = 6;
/// Roots at or beyond this radius are pulled in by [`stabilize`].
pub const STABILITY_LIMIT: f64 = 0.998;
/// Radius assigned to pulled-in roots.
pub const STABILIZED_RADIUS: f64 = 0.995;

/// A two-layer `tanh`/linear network in normalized coordinates.
///
/// `w1` is `n_hidden x n_in`, `w2` is `n_out x n_hidden`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Mlp {
    pub fn zeros(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        Mlp {
            n_in,
            n_hidden,
            n_out,
            w1: vec![0.0; n_hidden * n_in],
            b1: vec![0.0; n_hidden],
            w2: vec![0.0; n_out * n_hidden],
            b2: vec![0.0; n_out],
        }
    }

    /// Uniform `[-0.5, 0.5] / sqrt(fan_in)` initialization.
    pub fn random(n_in: usize, n_hidden: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        let mut m = Mlp::zeros(n_in, n_hidden, n_out);
        let s1 = 1.0 / (n_in as f64).sqrt();
        let s2 = 1.0 / (n_hidden as f64).sqrt();
        for v in m.w1.iter_mut().chain(m.b1.iter_mut()) {
            *v = rng.random_range(-0.5..0.5) * s1;
        }
        for v in m.w2.iter_mut().chain(m.b2.iter_mut()) {
            *v = rng.random_range(-0.5..0.5) * s2;
        }
        m
    }

    pub fn n_params(&self) -> usize {
        self.n_hidden * (self.n_in + 1) + self.n_out * (self.n_hidden + 1)
    }

    /// Hidden activations for one input.
    pub fn hidden(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_hidden)
            .map(|j| {
                let row = &self.w1[j * self.n_in..(j + 1) * self.n_in];
                let u: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[j];
                u.tanh()
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let h = self.hidden(x);
        self.output(&h)
    }

    fn output(&self, h: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|k| {
                let row = &self.w2[k * self.n_hidden..(k + 1) * self.n_hidden];
                row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>() + self.b2[k]
            })
            .collect()
    }

    /// Parameters in solver order: for each hidden unit `j` its input weights
    /// then bias, followed by, for each output `k`, its hidden weights then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for j in 0..self.n_hidden {
            p.extend_from_slice(&self.w1[j * self.n_in..(j + 1) * self.n_in]);
            p.push(self.b1[j]);
        }
        for k in 0..self.n_out {
            p.extend_from_slice(&self.w2[k * self.n_hidden..(k + 1) * self.n_hidden]);
            p.push(self.b2[k]);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let (ni, nh) = (self.n_in, self.n_hidden);
        for j in 0..nh {
            let base = j * (ni + 1);
            self.w1[j * ni..(j + 1) * ni].copy_from_slice(&p[base..base + ni]);
            self.b1[j] = p[base + ni];
        }
        let off = nh * (ni + 1);
        for k in 0..self.n_out {
            let base = off + k * (nh + 1);
            self.w2[k * nh..(k + 1) * nh].copy_from_slice(&p[base..base + nh]);
            self.b2[k] = p[base + nh];
        }
    }

    /// Explicit Jacobian of the outputs w.r.t. [`Mlp::params`] at `x`,
    /// `n_out x n_params`, by backpropagation.
    pub fn jacobian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let (ni, nh) = (self.n_in, self.n_hidden);
        let h = self.hidden(x);
        let off = nh * (ni + 1);
        (0..self.n_out)
            .map(|k| {
                let mut row = vec![0.0; self.n_params()];
                for j in 0..nh {
                    let delta = self.w2[k * nh + j] * (1.0 - h[j] * h[j]);
                    for i in 0..ni {
                        row[j * (ni + 1) + i] = delta * x[i];
                    }
                    row[j * (ni + 1) + ni] = delta;
                    row[off + k * (nh + 1) + j] = h[j];
                }
                row[off + k * (nh + 1) + nh] = 1.0;
                row
            })
            .collect()
    }
}

/// Levenberg-Marquardt settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub mse_goal: f64,
    pub lm_lambda_init: f64,
    pub lm_lambda_factor: f64,
    pub lambda_max: f64,
    pub validation_fraction: f64,
    pub hidden: usize,
    /// Pairs beyond this count are thinned by a fixed stride before training.
    pub max_pairs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 200,
            mse_goal: 1e-4,
            lm_lambda_init: 1e-3,
            lm_lambda_factor: 10.0,
            lambda_max: 1e10,
            validation_fraction: 0.2,
            hidden: DEFAULT_HIDDEN,
            max_pairs: 4000,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.max_epochs > 0
            && self.mse_goal > 0.0
            && self.lm_lambda_init > 0.0
            && self.lm_lambda_factor > 1.0
            && self.lambda_max > self.lm_lambda_init
            && self.hidden > 0
            && self.max_pairs >= MIN_PAIRS;
        if !positive {
            return Err(Error::BadConfig(format!("{self:?}")));
        }
        if !(0.0..=0.5).contains(&self.validation_fraction) {
            return Err(Error::BadConfig(format!(
                "validation_fraction {} outside [0, 0.5]",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Why training stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Goal,
    MaxEpochs,
    LambdaMax,
    EarlyStop,
}

/// Trained mapping plus the feature normalization it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerMap {
    pub net: Mlp,
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
    pub rng_seed: u64,
    /// Training MSE (normalized space) after each accepted epoch.
    pub train_log: Vec<f64>,
    /// Validation MSE after each accepted epoch; empty without a validation split.
    pub val_log: Vec<f64>,
    pub stop: Option<StopReason>,
}

impl SpeakerMap {
    pub fn order(&self) -> usize {
        self.net.n_in
    }

    /// Network with identity normalization (zero mean, unit std).
    pub fn with_identity_normalization(net: Mlp) -> Self {
        SpeakerMap {
            in_mean: vec![0.0; net.n_in],
            in_std: vec![1.0; net.n_in],
            out_mean: vec![0.0; net.n_out],
            out_std: vec![1.0; net.n_out],
            net,
            rng_seed: 0,
            train_log: vec![],
            val_log: vec![],
            stop: None,
        }
    }

    pub fn normalize_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.in_mean.iter().zip(&self.in_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn normalize_output(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.out_mean.iter().zip(&self.out_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize_output(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.out_mean.iter().zip(&self.out_std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    /// Maps one coefficient vector `a_1..a_p`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.net.n_in {
            return Err(Error::ShapeMismatch {
                expected: self.net.n_in,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(self.denormalize_output(&self.net.forward(&self.normalize_input(x))))
    }

    /// Converted frame before stabilization; silent frames pass through.
    pub fn map_frame(&self, frame: &LpcFrame) -> Result<LpcFrame> {
        if frame.silent {
            return Ok(frame.clone());
        }
        let y = self.forward(frame.features())?;
        let mut coeffs = Vec::with_capacity(y.len() + 1);
        coeffs.push(1.0);
        coeffs.extend(y);
        Ok(LpcFrame {
            coeffs,
            ..frame.clone()
        })
    }
}

/// Anything that turns a source frame sequence into a converted one.
pub trait FrameMapper {
    fn order(&self) -> usize;
    fn convert(&self, frames: &[LpcFrame]) -> Result<Vec<LpcFrame>>;
}

impl FrameMapper for SpeakerMap {
    fn order(&self) -> usize {
        self.net.n_in
    }

    fn convert(&self, frames: &[LpcFrame]) -> Result<Vec<LpcFrame>> {
        convert_utterance(self, frames)
    }
}

/// Identity conversion, the no-op baseline.
#[derive(Debug, Clone, Copy)]
pub struct PassThrough(pub usize);

impl FrameMapper for PassThrough {
    fn order(&self) -> usize {
        self.0
    }

    fn convert(&self, frames: &[LpcFrame]) -> Result<Vec<LpcFrame>> {
        Ok(frames.to_vec())
    }
}

/// Maps every frame through `map`, stabilizes it, and passes silent frames
/// unchanged. A frame whose roots cannot be found is replaced by the previous
/// converted frame.
pub fn convert_utterance(map: &SpeakerMap, frames: &[LpcFrame]) -> Result<Vec<LpcFrame>> {
    let mut out: Vec<LpcFrame> = Vec::with_capacity(frames.len());
    let mut replaced = 0usize;
    for f in frames {
        if f.order() != map.order() {
            return Err(Error::ShapeMismatch {
                expected: map.order(),
                got: f.order(),
            });
        }
        if f.silent {
            out.push(f.clone());
            continue;
        }
        match stabilize(&map.map_frame(f)?) {
            Ok(s) => out.push(s),
            Err(Error::RootFindingFailure) => {
                replaced += 1;
                let prev = out
                    .iter()
                    .rev()
                    .find(|p| !p.silent)
                    .cloned()
                    .unwrap_or_else(|| LpcFrame::silent(f.order(), f.frame_energy));
                out.push(LpcFrame {
                    coeffs: prev.coeffs,
                    ..f.clone()
                });
            }
            Err(e) => return Err(e),
        }
    }
    if replaced > 0 {
        log::warn!("{replaced} converted frame(s) replaced after root-finding failure");
    }
    Ok(out)
}

/// Pulls every root of `A(z)` with magnitude >= 0.998 in to radius 0.995,
/// keeping its angle. Frames that are already stable come back untouched.
pub fn stabilize(frame: &LpcFrame) -> Result<LpcFrame> {
    if frame.coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    if frame.order() == 0 {
        return Ok(frame.clone());
    }
    let roots = poly::roots(&frame.coeffs)?;
    if roots.iter().all(|r| r.norm() < STABILITY_LIMIT) {
        return Ok(frame.clone());
    }
    let moved: Vec<Complex64> = roots
        .iter()
        .map(|&r| {
            if r.norm() >= STABILITY_LIMIT {
                Complex64::from_polar(STABILIZED_RADIUS, r.arg())
            } else {
                r
            }
        })
        .collect();
    let mut coeffs = poly::from_roots(&moved);
    coeffs[0] = 1.0;
    Ok(LpcFrame {
        coeffs,
        ..frame.clone()
    })
}

/// Pole radius of the least stable root.
pub fn max_pole_radius(frame: &LpcFrame) -> Result<f64> {
    Ok(poly::roots(&frame.coeffs)?
        .iter()
        .map(|r| r.norm())
        .fold(0.0, f64::max))
}

fn column_stats(rows: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let dim = rows[0].len();
    let mut mean = vec![0.0; dim];
    for r in rows {
        mean.iter_mut().zip(r.iter()).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in rows {
        var.iter_mut()
            .zip(r.iter().zip(&mean))
            .for_each(|(s, (v, m))| *s += (v - m) * (v - m));
    }
    let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
    (mean, std)
}

/// Normalized training data as row-major matrices.
struct Dataset {
    x: Vec<f64>,
    t: Vec<f64>,
    n: usize,
    n_in: usize,
    n_out: usize,
}

impl Dataset {
    fn row_x(&self, s: usize) -> &[f64] {
        &self.x[s * self.n_in..(s + 1) * self.n_in]
    }

    fn row_t(&self, s: usize) -> &[f64] {
        &self.t[s * self.n_out..(s + 1) * self.n_out]
    }

    fn mse(&self, net: &Mlp) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let mut sum = 0.0;
        for s in 0..self.n {
            let y = net.forward(self.row_x(s));
            sum += y
                .iter()
                .zip(self.row_t(s))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        sum / (self.n * self.n_out) as f64
    }
}

/// Trains a mapping on `(source, target)` coefficient vector pairs.
pub fn train(pairs: &[(Vec<f64>, Vec<f64>)], cfg: &TrainConfig) -> Result<SpeakerMap> {
    cfg.validate()?;
    if pairs.len() < MIN_PAIRS {
        return Err(Error::TooFewPairs {
            got: pairs.len(),
            min: MIN_PAIRS,
        });
    }
    let n_in = pairs[0].0.len();
    let n_out = pairs[0].1.len();
    if n_in == 0 || n_out == 0 {
        return Err(Error::EmptyInput);
    }
    for (x, y) in pairs {
        if x.len() != n_in || y.len() != n_out {
            return Err(Error::ShapeMismatch {
                expected: n_in,
                got: x.len(),
            });
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
    }

    let stride = pairs.len().div_ceil(cfg.max_pairs);
    let used: Vec<&(Vec<f64>, Vec<f64>)> = pairs.iter().step_by(stride).collect();
    let xs: Vec<&[f64]> = used.iter().map(|p| p.0.as_slice()).collect();
    let ys: Vec<&[f64]> = used.iter().map(|p| p.1.as_slice()).collect();
    let (in_mean, in_std) = column_stats(&xs);
    let (out_mean, out_std) = column_stats(&ys);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..used.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_val = (cfg.validation_fraction * used.len() as f64).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);

    let build = |idx: &[usize]| {
        let mut sorted = idx.to_vec();
        sorted.sort_unstable();
        let mut x = Vec::with_capacity(sorted.len() * n_in);
        let mut t = Vec::with_capacity(sorted.len() * n_out);
        for &i in &sorted {
            x.extend(xs[i].iter().zip(in_mean.iter().zip(&in_std)).map(|(v, (m, s))| (v - m) / s));
            t.extend(ys[i].iter().zip(out_mean.iter().zip(&out_std)).map(|(v, (m, s))| (v - m) / s));
        }
        Dataset {
            x,
            t,
            n: sorted.len(),
            n_in,
            n_out,
        }
    };
    let train_set = build(train_idx);
    let val_set = build(val_idx);

    let net = Mlp::random(n_in, cfg.hidden, n_out, &mut rng);
    let fit = levenberg_marquardt(net, &train_set, (n_val > 0).then_some(&val_set), cfg);
    Ok(SpeakerMap {
        net: fit.net,
        in_mean,
        in_std,
        out_mean,
        out_std,
        rng_seed: cfg.seed,
        train_log: fit.train_log,
        val_log: fit.val_log,
        stop: Some(fit.stop),
    })
}

struct Fit {
    net: Mlp,
    train_log: Vec<f64>,
    val_log: Vec<f64>,
    stop: StopReason,
}

/// Gauss-Newton statistics gathered once per epoch.
struct Normal {
    /// `sum z z^T`, hidden x hidden parameter block before the W2 weighting.
    zz: Mat<f64>,
    /// `sum h~ z^T`, `(H + 1) x n_hidden_params`.
    hz: Mat<f64>,
    /// `sum h~ h~^T`.
    hh: Mat<f64>,
    /// `W2^T W2`.
    w2tw2: Mat<f64>,
    /// Gradient of `0.5 * sum r^2` w.r.t. hidden parameters.
    g_hidden: Vec<f64>,
    /// Gradient w.r.t. output parameters, `n_out x (H + 1)` row-major.
    g_out: Vec<f64>,
}

fn gather(net: &Mlp, data: &Dataset) -> Normal {
    let (ni, nh, no) = (net.n_in, net.n_hidden, net.n_out);
    let gi = ni + 1;
    let n_hp = nh * gi;
    let mut z = Mat::<f64>::zeros(data.n, n_hp);
    let mut ht = Mat::<f64>::zeros(data.n, nh + 1);
    let mut g_hidden = vec![0.0; n_hp];
    let mut g_out = vec![0.0; no * (nh + 1)];
    for s in 0..data.n {
        let x = data.row_x(s);
        let h = net.hidden(x);
        let y = net.output(&h);
        let r: Vec<f64> = y.iter().zip(data.row_t(s)).map(|(a, b)| a - b).collect();
        for j in 0..nh {
            let d = 1.0 - h[j] * h[j];
            for i in 0..ni {
                z[(s, j * gi + i)] = d * x[i];
            }
            z[(s, j * gi + ni)] = d;
            ht[(s, j)] = h[j];
            // backpropagated residual onto hidden unit j
            let q: f64 = (0..no).map(|k| r[k] * net.w2[k * nh + j]).sum::<f64>() * d;
            for i in 0..ni {
                g_hidden[j * gi + i] += q * x[i];
            }
            g_hidden[j * gi + ni] += q;
        }
        ht[(s, nh)] = 1.0;
        for k in 0..no {
            for j in 0..nh {
                g_out[k * (nh + 1) + j] += r[k] * h[j];
            }
            g_out[k * (nh + 1) + nh] += r[k];
        }
    }
    let mut zz = Mat::<f64>::zeros(n_hp, n_hp);
    lower_gram(&mut zz, z.as_ref());
    let mut hz = Mat::<f64>::zeros(nh + 1, n_hp);
    matmul(hz.as_mut(), Accum::Replace, ht.transpose(), z.as_ref(), 1.0, Par::Seq);
    let mut hh = Mat::<f64>::zeros(nh + 1, nh + 1);
    matmul(hh.as_mut(), Accum::Replace, ht.transpose(), ht.as_ref(), 1.0, Par::Seq);
    let w2 = Mat::<f64>::from_fn(no, nh, |k, j| net.w2[k * nh + j]);
    let mut w2tw2 = Mat::<f64>::zeros(nh, nh);
    matmul(w2tw2.as_mut(), Accum::Replace, w2.transpose(), w2.as_ref(), 1.0, Par::Seq);
    Normal {
        zz,
        hz,
        hh,
        w2tw2,
        g_hidden,
        g_out,
    }
}

/// Lower triangle of `a^T a`.
fn lower_gram(dst: &mut Mat<f64>, a: MatRef<'_, f64>) {
    triangular::matmul(
        dst.as_mut(),
        BlockStructure::TriangularLower,
        Accum::Replace,
        a.transpose(),
        BlockStructure::Rectangular,
        a,
        BlockStructure::Rectangular,
        1.0,
        Par::Seq,
    );
}

/// Cholesky factor of a symmetric positive definite matrix, or `None`.
fn cholesky(a: &Mat<f64>) -> Option<Mat<f64>> {
    a.llt(Side::Lower).ok().map(|f| f.L().to_owned())
}

fn spd_solve_in_place(l: MatRef<'_, f64>, rhs: &mut Mat<f64>) {
    solve_lower_triangular_in_place(l, rhs.as_mut(), Par::Seq);
    solve_upper_triangular_in_place(l.transpose(), rhs.as_mut(), Par::Seq);
}

/// Solves the damped normal equations for the step `delta` (solver order).
/// Returns `None` when a factorization fails at this damping.
fn damped_step(net: &Mlp, ne: &Normal, lambda: f64) -> Option<Vec<f64>> {
    let (ni, nh, no) = (net.n_in, net.n_hidden, net.n_out);
    let gi = ni + 1;
    let n_hp = nh * gi;
    let nt = nh + 1;

    let mut d_out = ne.hh.clone();
    for j in 0..nt {
        d_out[(j, j)] += lambda;
    }
    let l_out = cholesky(&d_out)?;

    // Y = L^-1 B, so B^T P B = Y^T Y
    let mut y = ne.hz.clone();
    solve_lower_triangular_in_place(l_out.as_ref(), y.as_mut(), Par::Seq);
    let mut schur = Mat::<f64>::zeros(n_hp, n_hp);
    lower_gram(&mut schur, y.as_ref());

    // only the lower triangle is formed; the factorization never reads the rest
    for c in 0..n_hp {
        let w = ne.w2tw2.col_as_slice(c / gi);
        let zz = &ne.zz.col_as_slice(c)[c..];
        let col = &mut schur.col_as_slice_mut(c)[c..];
        for (off, (s, z)) in col.iter_mut().zip(zz).enumerate() {
            *s = (z - *s) * w[(c + off) / gi];
        }
        col[0] += lambda;
    }

    // P g_out^T, one column per output
    let mut pg = Mat::<f64>::from_fn(nt, no, |j, k| ne.g_out[k * nt + j]);
    spd_solve_in_place(l_out.as_ref(), &mut pg);
    let mut u = Mat::<f64>::zeros(n_hp, no);
    matmul(u.as_mut(), Accum::Replace, ne.hz.transpose(), pg.as_ref(), 1.0, Par::Seq);
    let mut rhs = Mat::<f64>::from_fn(n_hp, 1, |r, _| {
        let j = r / gi;
        let cross: f64 = (0..no).map(|k| net.w2[k * nh + j] * u[(r, k)]).sum();
        -ne.g_hidden[r] + cross
    });
    let l_schur = cholesky(&schur)?;
    spd_solve_in_place(l_schur.as_ref(), &mut rhs);
    let delta_h: Vec<f64> = (0..n_hp).map(|r| rhs[(r, 0)]).collect();

    // delta_out_k = P (-g_out_k - B (w2_k o delta_h))
    let mut scaled = Mat::<f64>::zeros(n_hp, no);
    for k in 0..no {
        for r in 0..n_hp {
            scaled[(r, k)] = net.w2[k * nh + r / gi] * delta_h[r];
        }
    }
    let mut rhs_out = Mat::<f64>::zeros(nt, no);
    matmul(rhs_out.as_mut(), Accum::Replace, ne.hz.as_ref(), scaled.as_ref(), 1.0, Par::Seq);
    for k in 0..no {
        for j in 0..nt {
            rhs_out[(j, k)] = -ne.g_out[k * nt + j] - rhs_out[(j, k)];
        }
    }
    spd_solve_in_place(l_out.as_ref(), &mut rhs_out);

    let mut delta = delta_h;
    for k in 0..no {
        delta.extend((0..nt).map(|j| rhs_out[(j, k)]));
    }
    delta.iter().all(|v| v.is_finite()).then_some(delta)
}

fn levenberg_marquardt(mut net: Mlp, train: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Fit {
    let mut lambda = cfg.lm_lambda_init;
    let mut mse = train.mse(&net);
    let mut train_log = Vec::new();
    let mut val_log = Vec::new();
    let mut best_val = val.map(|v| v.mse(&net)).unwrap_or(f64::INFINITY);
    let mut best_net = net.clone();
    let mut fails = 0;
    let mut stop = StopReason::MaxEpochs;

    'epochs: for _ in 0..cfg.max_epochs {
        if mse <= cfg.mse_goal {
            stop = StopReason::Goal;
            break;
        }
        let ne = gather(&net, train);
        let params = net.params();
        loop {
            if let Some(delta) = damped_step(&net, &ne, lambda) {
                let mut trial = net.clone();
                let p: Vec<f64> = params.iter().zip(&delta).map(|(a, d)| a + d).collect();
                trial.set_params(&p);
                let trial_mse = train.mse(&trial);
                if trial_mse < mse {
                    net = trial;
                    mse = trial_mse;
                    lambda = (lambda / cfg.lm_lambda_factor).max(1e-20);
                    break;
                }
            }
            lambda *= cfg.lm_lambda_factor;
            if lambda > cfg.lambda_max {
                stop = StopReason::LambdaMax;
                break 'epochs;
            }
        }
        train_log.push(mse);
        if let Some(v) = val {
            let vm = v.mse(&net);
            val_log.push(vm);
            if vm < best_val {
                best_val = vm;
                best_net = net.clone();
                fails = 0;
            } else {
                fails += 1;
                if fails >= MAX_VALIDATION_FAILS {
                    stop = StopReason::EarlyStop;
                    break;
                }
            }
        }
    }
    if mse <= cfg.mse_goal && stop == StopReason::MaxEpochs {
        stop = StopReason::Goal;
    }
    let net = if val.is_some() && best_val.is_finite() {
        best_net
    } else {
        net
    };
    Fit {
        net,
        train_log,
        val_log,
        stop,
    }
}

// --- serialization -------------------------------------------------------

fn write_reals(out: &mut String, key: &str, v: &[f64]) {
    out.push_str(&format!("  \"{key}\": ["));
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&format!("{x:.16e}"));
    }
    out.push_str("]");
}

#[derive(Deserialize)]
struct MapDocument {
    format: String,
    order: usize,
    hidden: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    in_mean: Vec<f64>,
    in_std: Vec<f64>,
    out_mean: Vec<f64>,
    out_std: Vec<f64>,
    seed: u64,
    train_log: Vec<f64>,
    #[serde(default)]
    val_log: Vec<f64>,
}

impl SpeakerMap {
    /// Versioned JSON document; every real carries 17 significant digits.
    pub fn to_json(&self) -> String {
        let mut s = String::from("{\n");
        s.push_str(&format!("  \"format\": \"{FORMAT_TAG}\",\n"));
        s.push_str(&format!("  \"order\": {},\n", self.net.n_in));
        s.push_str(&format!("  \"hidden\": {},\n", self.net.n_hidden));
        let arrays: [(&str, &[f64]); 10] = [
            ("w1", &self.net.w1),
            ("b1", &self.net.b1),
            ("w2", &self.net.w2),
            ("b2", &self.net.b2),
            ("in_mean", &self.in_mean),
            ("in_std", &self.in_std),
            ("out_mean", &self.out_mean),
            ("out_std", &self.out_std),
            ("train_log", &self.train_log),
            ("val_log", &self.val_log),
        ];
        for (key, v) in arrays {
            write_reals(&mut s, key, v);
            s.push_str(",\n");
        }
        s.push_str(&format!("  \"seed\": {}\n}}\n", self.rng_seed));
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MapDocument =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if doc.format != FORMAT_TAG {
            return Err(Error::ModelMismatch(format!(
                "format '{}' is not {FORMAT_TAG}",
                doc.format
            )));
        }
        let (p, h) = (doc.order, doc.hidden);
        let checks = [
            (doc.w1.len(), h * p),
            (doc.b1.len(), h),
            (doc.w2.len(), p * h),
            (doc.b2.len(), p),
            (doc.in_mean.len(), p),
            (doc.in_std.len(), p),
            (doc.out_mean.len(), p),
            (doc.out_std.len(), p),
        ];
        for (got, expected) in checks {
            if got != expected {
                return Err(Error::ShapeMismatch { expected, got });
            }
        }
        if doc.in_std.iter().chain(&doc.out_std).any(|s| !(*s > 0.0)) {
            return Err(Error::ModelMismatch("non-positive normalization std".into()));
        }
        Ok(SpeakerMap {
            net: Mlp {
                n_in: p,
                n_hidden: h,
                n_out: p,
                w1: doc.w1,
                b1: doc.b1,
                w2: doc.w2,
                b2: doc.b2,
            },
            in_mean: doc.in_mean,
            in_std: doc.in_std,
            out_mean: doc.out_mean,
            out_std: doc.out_std,
            rng_seed: doc.seed,
            train_log: doc.train_log,
            val_log: doc.val_log,
            stop: None,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-scale..scale)).collect()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = SpeakerMap::with_identity_normalization(Mlp::zeros(24, 50, 24));
        assert_eq!(m.forward(&[0.3; 24]).unwrap(), vec![0.0; 24]);
    }

    #[test]
    fn bias_passes_through_denormalization() {
        let mut net = Mlp::zeros(24, 50, 24);
        net.b2 = (0..24).map(|k| k as f64 * 0.1).collect();
        let mut m = SpeakerMap::with_identity_normalization(net);
        m.out_mean = vec![1.0; 24];
        m.out_std = vec![2.0; 24];
        let y = m.forward(&[5.0; 24]).unwrap();
        for (k, v) in y.iter().enumerate() {
            assert_eq!(*v, k as f64 * 0.1 * 2.0 + 1.0);
        }
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let m = SpeakerMap::with_identity_normalization(Mlp::zeros(24, 50, 24));
        assert!(matches!(
            m.forward(&[0.0; 23]),
            Err(Error::ShapeMismatch { expected: 24, got: 23 })
        ));
        let mut x = vec![0.0; 24];
        x[3] = f64::NAN;
        assert!(matches!(m.forward(&x), Err(Error::NonFiniteInput)));
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::random(4, 3, 5, &mut rng);
        let mut other = Mlp::zeros(4, 3, 5);
        other.set_params(&net.params());
        assert_eq!(net, other);
    }

    #[test]
    fn structured_normal_equations_match_dense() {
        // oracle: dense J^T J from explicit Jacobian rows, dense solve
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::random(3, 4, 2, &mut rng);
        let n = 30;
        let x: Vec<f64> = rand_vec(&mut rng, n * 3, 1.0);
        let t: Vec<f64> = rand_vec(&mut rng, n * 2, 1.0);
        let data = Dataset { x, t, n, n_in: 3, n_out: 2 };
        let np = net.n_params();
        let mut jtj = Mat::<f64>::zeros(np, np);
        let mut jtr = vec![0.0; np];
        for s in 0..n {
            let jac = net.jacobian(data.row_x(s));
            let y = net.forward(data.row_x(s));
            for k in 0..2 {
                let r = y[k] - data.row_t(s)[k];
                for a in 0..np {
                    jtr[a] += jac[k][a] * r;
                    for b in 0..np {
                        jtj[(a, b)] += jac[k][a] * jac[k][b];
                    }
                }
            }
        }
        let lambda = 0.01;
        for a in 0..np {
            jtj[(a, a)] += lambda;
        }
        let l = cholesky(&jtj).unwrap();
        let mut rhs = Mat::<f64>::from_fn(np, 1, |a, _| -jtr[a]);
        spd_solve_in_place(l.as_ref(), &mut rhs);

        let ne = gather(&net, &data);
        let delta = damped_step(&net, &ne, lambda).unwrap();
        for a in 0..np {
            assert!((delta[a] - rhs[(a, 0)]).abs() < 1e-9, "{a}: {} vs {}", delta[a], rhs[(a, 0)]);
        }
    }

    #[test]
    fn stabilize_cases() {
        let f = LpcFrame::from_coeffs(vec![1.0, -0.5]);
        assert_eq!(stabilize(&f).unwrap(), f);
        let g = stabilize(&LpcFrame::from_coeffs(vec![1.0, -2.0])).unwrap();
        assert!((g.coeffs[1] + 0.995).abs() < 1e-12);
        let g = stabilize(&LpcFrame::from_coeffs(vec![1.0, 2.0])).unwrap();
        assert!((g.coeffs[1] - 0.995).abs() < 1e-12);
    }

    #[test]
    fn stabilize_is_idempotent() {
        let roots = [
            Complex64::from_polar(1.3, 0.4),
            Complex64::from_polar(1.3, -0.4),
            Complex64::from_polar(0.7, 2.0),
            Complex64::from_polar(0.7, -2.0),
            Complex64::new(-1.1, 0.0),
        ];
        let f = LpcFrame::from_coeffs(poly::from_roots(&roots));
        let once = stabilize(&f).unwrap();
        let twice = stabilize(&once).unwrap();
        assert!(max_pole_radius(&once).unwrap() < STABILITY_LIMIT);
        for (a, b) in once.coeffs.iter().zip(&twice.coeffs) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut m = SpeakerMap::with_identity_normalization(Mlp::random(24, 50, 24, &mut rng));
        m.in_mean = rand_vec(&mut rng, 24, 3.0);
        m.in_std = rand_vec(&mut rng, 24, 1.0).iter().map(|v| v.abs() + 0.1).collect();
        m.train_log = vec![0.5, 0.25, 1.0 / 3.0];
        let text = m.to_json();
        let back = SpeakerMap::from_json(&text).unwrap();
        assert_eq!(back.net, m.net);
        assert_eq!(back.in_mean, m.in_mean);
        assert_eq!(back.in_std, m.in_std);
        assert_eq!(back.train_log, m.train_log);
        let x = rand_vec(&mut rng, 24, 1.0);
        assert_eq!(back.forward(&x).unwrap(), m.forward(&x).unwrap());
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn json_rejects_wrong_format() {
        let m = SpeakerMap::with_identity_normalization(Mlp::zeros(2, 3, 2));
        let text = m.to_json().replace(FORMAT_TAG, "other-v9");
        assert!(matches!(SpeakerMap::from_json(&text), Err(Error::ModelMismatch(_))));
        assert!(matches!(SpeakerMap::from_json("{"), Err(Error::Parse(_))));
    }

    #[test]
    fn train_rejects_small_or_bad_input() {
        let pairs = vec![(vec![0.0; 3], vec![0.0; 3]); 10];
        assert!(matches!(
            train(&pairs, &TrainConfig::default()),
            Err(Error::TooFewPairs { got: 10, min: 50 })
        ));
        let mut pairs = vec![(vec![0.1; 3], vec![0.2; 3]); 60];
        pairs[5].1[1] = f64::INFINITY;
        assert!(matches!(
            train(&pairs, &TrainConfig::default()),
            Err(Error::NonFiniteInput)
        ));
        let cfg = TrainConfig {
            validation_fraction: 0.7,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&pairs, &cfg), Err(Error::BadConfig(_))));
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let net = Mlp::random(4, 2, 4, &mut rng);
            let net = {
                let mut n = net;
                let p: Vec<f64> = n.params().iter().map(|v| v * 4.0).collect();
                n.set_params(&p);
                n
            };
            let x = rand_vec(&mut rng, 4, 1.5);
            let jac = net.jacobian(&x);
            let p0 = net.params();
            for a in 0..p0.len() {
                let mut plus = net.clone();
                let mut minus = net.clone();
                let mut p = p0.clone();
                p[a] += h;
                plus.set_params(&p);
                p[a] -= 2.0 * h;
                minus.set_params(&p);
                let (yp, ym) = (plus.forward(&x), minus.forward(&x));
                for k in 0..4 {
                    let fd = (yp[k] - ym[k]) / (2.0 * h);
                    let err = (fd - jac[k][a]).abs() / jac[k][a].abs().max(1e-3);
                    worst = worst.max(err);
                }
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    fn linear_pairs(rng: &mut ChaCha8Rng, n: usize, a: Option<&[f64]>) -> Vec<(Vec<f64>, Vec<f64>)> {
        (0..n)
            .map(|_| {
                let x = rand_vec(rng, 24, 1.0);
                let y = match a {
                    Some(a) => (0..24)
                        .map(|r| (0..24).map(|c| a[r * 24 + c] * x[c]).sum())
                        .collect(),
                    None => x.clone(),
                };
                (x, y)
            })
            .collect()
    }

    fn tight() -> TrainConfig {
        TrainConfig {
            mse_goal: 1e-7,
            validation_fraction: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn learns_exact_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = rand_vec(&mut rng, 24 * 24, 0.3);
        let pairs = linear_pairs(&mut rng, 500, Some(&a));
        let map = train(&pairs, &tight()).unwrap();
        let last = *map.train_log.last().unwrap();
        assert!(last < 1e-6, "final mse {last} after {} epochs", map.train_log.len());
        assert!(map.train_log.len() <= 200);
        assert!(map.train_log.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn learns_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let pairs = linear_pairs(&mut rng, 300, None);
        let map = train(&pairs, &tight()).unwrap();
        assert!(*map.train_log.last().unwrap() < 1e-6);
        for (x, _) in pairs.iter().take(20) {
            let y = map.forward(x).unwrap();
            for (u, v) in x.iter().zip(&y) {
                assert!((u - v).abs() < 1e-2);
            }
        }
    }
}

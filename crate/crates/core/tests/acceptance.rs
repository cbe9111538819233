//! Acceptance suite: one line per criterion, `PASS` or `FAIL`, with the
//! measured values next to the pinned tolerances.
//!
//! Every criterion runs even when an earlier one fails. The process exits 0
//! so that a known, documented failure does not hide the rest of the test
//! run; set `ACCEPTANCE_STRICT=1` to turn any failure into a non-zero exit.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use lpvc::corpus::{generate_synthetic_corpus, SyntheticSpeakerSpec, SAMPLE_RATE};
use lpvc::eval::{lpc_to_cepstrum, mcd, Cepstrum, CepstralSpec, DB_SCALE};
use lpvc::experiment::{noise_sweep, prosody_ablation, run_scenario, ExperimentConfig, Scenario};
use lpvc::lpc::{
    autocorrelation, inverse_filter, inverse_filter_utterance, levinson_durbin,
    lpc_order, min_lpc_order, synthesis_filter, synthesize_utterance, LpcFrame, DEFAULT_ORDER,
};
use lpvc::manifest::Manifest;
use lpvc::mapping::{train, Mlp, TrainConfig};
use lpvc::pipeline::{analyze, evaluate_pair, train_pair, AnalysisConfig, EvalMode};
use lpvc::poly::from_roots;
use lpvc::prosody::{estimate_pitch, place_pitch_marks, psola_modify};
use lpvc::signal::{de_emphasize, frame_signal, load_wav, pre_emphasize, Waveform, FRAME_MS, OVERLAP_MS};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn random_signal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
}

/// A stable frame with random roots inside radius `max_r`.
fn random_stable_frame(rng: &mut ChaCha8Rng, order: usize, max_r: f64) -> LpcFrame {
    let mut roots = Vec::with_capacity(order);
    while roots.len() + 1 < order {
        let r = rng.random_range(0.1..max_r);
        let th = rng.random_range(0.05..3.1);
        roots.push(Complex64::from_polar(r, th));
        roots.push(Complex64::from_polar(r, -th));
    }
    if roots.len() < order {
        roots.push(Complex64::new(rng.random_range(-max_r..max_r), 0.0));
    }
    LpcFrame::from_coeffs(from_roots(&roots))
}

fn c1_filter_identities() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Waveform::new(random_signal(&mut rng, 6836), SAMPLE_RATE).unwrap();
    let emph = de_emphasize(&pre_emphasize(&x).unwrap()).unwrap();
    let e1 = max_abs_diff(&emph.samples, &x.samples);

    let mut e2: f64 = 0.0;
    for _ in 0..50 {
        let m = random_stable_frame(&mut rng, DEFAULT_ORDER, 0.97);
        let frame = random_signal(&mut rng, 276);
        let e = inverse_filter(&frame, &m);
        let (y, _) = synthesis_filter(&e, &m, &vec![0.0; DEFAULT_ORDER]).unwrap();
        e2 = e2.max(max_abs_diff(&y, &frame));
    }

    // a whole rendered word: 120 frames of time-varying filters
    let spec = &SyntheticSpeakerSpec::defaults()[0];
    let script = &lpvc::corpus::word_scripts(2, SAMPLE_RATE, 3).unwrap()[0];
    let w = lpvc::corpus::render_word(spec, script, SAMPLE_RATE, 5).unwrap();
    let a = analyze(&w, &AnalysisConfig::default()).unwrap();
    let e = inverse_filter_utterance(&a.emphasized.samples, &a.frames, a.frame_len, a.hop).unwrap();
    let y = synthesize_utterance(&e, &a.frames, a.frame_len, a.hop).unwrap();
    let back = de_emphasize(&Waveform::new(y, SAMPLE_RATE).unwrap()).unwrap();
    let e3 = max_abs_diff(&back.samples, &w.samples);
    let n_frames = a.frames.len();
    let t = secs(t0.elapsed());
    outcome(
        e1 < 1e-9 && e2 < 1e-9 && e3 < 1e-6 && n_frames == 120 && t < 1.0,
        format!(
            "emphasis round trip {e1:.1e} (<1e-9), frame synthesis∘inverse {e2:.1e} (<1e-9), \
             {n_frames}-frame utterance {e3:.1e} (<1e-6), {t:.2} s (<1 s)"
        ),
    )
}

fn c2_levinson_vs_dense() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = 24;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        // autocorrelation of a random signal is positive definite
        let x = random_signal(&mut rng, 400);
        let r = autocorrelation(&x, p).unwrap();
        let lev = levinson_durbin(&r).unwrap();
        let toeplitz = Mat::from_fn(p, p, |i, j| r[i.abs_diff(j)]);
        let rhs = Mat::from_fn(p, 1, |i, _| -r[i + 1]);
        let dense = toeplitz.partial_piv_lu().solve(&rhs);
        for i in 0..p {
            worst = worst.max((lev.coeffs[i + 1] - dense[(i, 0)]).abs());
        }
    }
    let t = secs(t0.elapsed());
    outcome(
        worst < 1e-8 && t < 1.0,
        format!("100 order-24 systems, max coefficient error {worst:.1e} (<1e-8), {t:.2} s (<1 s)"),
    )
}

fn c3_order_rule() -> Outcome {
    let min = min_lpc_order(11025);
    let default = lpc_order(11025, None);
    outcome(
        min == 16 && default == 24 && AnalysisConfig::default().order == 24,
        format!("fs 11025: minimum order {min} (16), default {default} (24)"),
    )
}

fn c4_mcd_closed_form() -> Outcome {
    let zero = Cepstrum(vec![0.0; 24]);
    let mut unit = zero.clone();
    unit.0[0] = 1.0;
    let d = mcd(&zero, &unit).unwrap();
    let closed = 10.0 / 10f64.ln() * 2f64.sqrt();
    let identity = mcd(&unit, &unit).unwrap();
    let literal = 6.1421;
    outcome(
        (d - closed).abs() < 1e-4 && identity == 0.0 && DB_SCALE == 10.0 / 10f64.ln(),
        format!(
            "unit difference {d:.6} dB = (10/ln10)·sqrt2 {closed:.6} (±1e-4); identity {identity}; \
             the rounded literal {literal} sits {:.1e} away",
            (d - literal).abs()
        ),
    )
}

/// Real cepstrum of `1 / A` from a dense FFT of the log magnitude.
fn fft_cepstrum(a: &[f64], n_ceps: usize) -> Vec<f64> {
    let n = 8192;
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = (0..n).map(|i| Complex64::new(a.get(i).copied().unwrap_or(0.0), 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let mut logmag: Vec<Complex64> = buf.iter().map(|z| Complex64::new(-z.norm().ln(), 0.0)).collect();
    planner.plan_fft_inverse(n).process(&mut logmag);
    // minimum phase: complex cepstrum is twice the real one for n > 0
    (1..=n_ceps).map(|k| 2.0 * logmag[k].re / n as f64).collect()
}

fn c5_cepstrum_vs_fft() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for order in 1..=24 {
        for _ in 0..10 {
            let f = random_stable_frame(&mut rng, order, 0.95);
            let c = lpc_to_cepstrum(&f, 24).unwrap();
            let oracle = fft_cepstrum(&f.coeffs, 24);
            worst = worst.max(max_abs_diff(&c.0, &oracle));
        }
    }
    outcome(
        worst < 1e-6,
        format!("240 stable frames of order 1..24, max cepstral error {worst:.1e} (<1e-6)"),
    )
}

fn c6_lm_training() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 1e-6;
    let mut worst_jac: f64 = 0.0;
    for _ in 0..50 {
        let mut net = Mlp::random(4, 2, 4, &mut rng);
        let p: Vec<f64> = net.params().iter().map(|v| v * 4.0).collect();
        net.set_params(&p);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
        let jac = net.jacobian(&x);
        for a in 0..p.len() {
            let (mut plus, mut minus) = (net.clone(), net.clone());
            let mut q = p.clone();
            q[a] += h;
            plus.set_params(&q);
            q[a] -= 2.0 * h;
            minus.set_params(&q);
            let (yp, ym) = (plus.forward(&x), minus.forward(&x));
            for k in 0..4 {
                let fd = (yp[k] - ym[k]) / (2.0 * h);
                worst_jac = worst_jac.max((fd - jac[k][a]).abs() / jac[k][a].abs().max(1e-3));
            }
        }
    }

    let a: Vec<f64> = (0..24 * 24).map(|_| rng.random_range(-0.3..0.3)).collect();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..500)
        .map(|_| {
            let x: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = (0..24).map(|r| (0..24).map(|c| a[r * 24 + c] * x[c]).sum()).collect();
            (x, y)
        })
        .collect();
    let cfg = TrainConfig {
        mse_goal: 1e-7,
        validation_fraction: 0.0,
        max_epochs: 200,
        ..TrainConfig::default()
    };
    let map = train(&pairs, &cfg).unwrap();
    let last = *map.train_log.last().unwrap();
    let epochs = map.train_log.len();
    let monotone = map.train_log.windows(2).all(|w| w[1] <= w[0]);
    let t = secs(t0.elapsed());
    outcome(
        worst_jac < 1e-4 && last < 1e-6 && epochs <= 200 && monotone && t < 60.0,
        format!(
            "4-2-4 Jacobian rel. error {worst_jac:.1e} (<1e-4); linear 24->24 MSE {last:.1e} (<1e-6) \
             after {epochs} epochs (<=200); accepted MSE monotone: {monotone}; {t:.1} s (<60 s)"
        ),
    )
}

fn pulse_train(f0: f64, len: usize) -> Vec<f64> {
    let period = SAMPLE_RATE as f64 / f0;
    let mut x = vec![0.0; len];
    let mut t: f64 = 0.0;
    while (t.round() as usize) < len {
        x[t.round() as usize] = 1.0;
        t += period;
    }
    x
}

fn sawtooth(f0: f64, len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| {
            let ph = n as f64 * f0 / SAMPLE_RATE as f64;
            2.0 * (ph - ph.floor()) - 1.0
        })
        .collect()
}

fn mean_f0(x: Vec<f64>) -> f64 {
    let w = Waveform::new(x, SAMPLE_RATE).unwrap();
    let g = frame_signal(&w, FRAME_MS, OVERLAP_MS).unwrap();
    estimate_pitch(&w, &g).unwrap().mean_voiced_f0().unwrap_or(0.0)
}

fn c7_pitch_and_psola() -> Outcome {
    let len = 6836;
    let mut worst: f64 = 0.0;
    for f0 in [120.86, 102.89, 245.68, 226.32] {
        worst = worst.max((mean_f0(pulse_train(f0, len)) - f0).abs());
        worst = worst.max((mean_f0(sawtooth(f0, len)) - f0).abs());
    }

    // a 120 Hz vowel: pulses through two resonances
    let pulses = pulse_train(120.0, len);
    let vowel = {
        let m = LpcFrame::from_coeffs(from_roots(&[
            Complex64::from_polar(0.97, 0.42),
            Complex64::from_polar(0.97, -0.42),
            Complex64::from_polar(0.95, 1.2),
            Complex64::from_polar(0.95, -1.2),
        ]));
        let (y, _) = synthesis_filter(&lpvc::lpc::ResidualFrame { samples: pulses }, &m, &[0.0; 4]).unwrap();
        let peak = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        Waveform::new(y.iter().map(|v| 0.5 * v / peak).collect(), SAMPLE_RATE).unwrap()
    };
    let g = frame_signal(&vowel, FRAME_MS, OVERLAP_MS).unwrap();
    let track = estimate_pitch(&vowel, &g).unwrap();
    let marks = place_pitch_marks(&vowel, &track);
    let out = psola_modify(&vowel, &marks, &vec![2.0; marks.positions.len()]).unwrap();
    let before = track.mean_voiced_f0().unwrap();
    let after = mean_f0(out.samples.clone());
    let ratio = after / before;
    let dur = out.duration() / vowel.duration();
    outcome(
        worst < 2.0 && (ratio - 2.0).abs() <= 0.1 && (dur - 1.0).abs() <= 0.02,
        format!(
            "tones at 120.86/102.89/245.68/226.32 Hz: worst error {worst:.2} Hz (±2); \
             PSOLA x2: {before:.1} -> {after:.1} Hz, ratio {ratio:.3} (2 ±5%), duration ratio {dur:.3} (1 ±2%)"
        ),
    )
}

fn c8_end_to_end(m: &Manifest) -> Outcome {
    let t0 = Instant::now();
    let acfg = AnalysisConfig::default();
    let tcfg = TrainConfig::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for (s, t) in &m.pairing {
        let map = train_pair(m, s, t, &acfg, &tcfg, None).unwrap();
        let rep = evaluate_pair(m, s, t, &acfg, EvalMode::Model(&map), CepstralSpec::default()).unwrap();
        let succ = rep.aggregate.success_pct;
        let improved = rep.improved_fraction();
        pass &= succ > 20.0 && improved >= 0.8;
        parts.push(format!("{s}->{t} {succ:.1}% / {:.0}%", 100.0 * improved));
    }
    let t = secs(t0.elapsed());
    pass &= t < 600.0;
    outcome(
        pass,
        format!(
            "success (>20%) / words improved (>=80%): {}; {t:.0} s (<600 s, corpus generation excluded)",
            parts.join(", ")
        ),
    )
}

fn c9_noise_direction(m: &Manifest) -> Outcome {
    let cfg = ExperimentConfig {
        pairings: vec![("M1".into(), "F1".into())],
        noise_levels: vec![40.0],
        seeds: vec![1, 2, 3],
        ..ExperimentConfig::default()
    };
    let rows = noise_sweep(m, &cfg).unwrap();
    let mut by_seed: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.noise_db == Some(40.0)) {
        let e = by_seed.entry(r.seed).or_insert((f64::NAN, f64::NAN));
        match r.class.as_str() {
            "voiced" => e.0 = r.degradation,
            "unvoiced" => e.1 = r.degradation,
            _ => {}
        }
    }
    let pass = by_seed.len() == 3 && by_seed.values().all(|(v, u)| u > v);
    let parts: Vec<String> = by_seed
        .iter()
        .map(|(s, (v, u))| format!("seed {s}: unvoiced {u:.1} vs voiced {v:.1}"))
        .collect();
    outcome(
        pass,
        format!("M1->F1 degradation at 40 dB, points (unvoiced must exceed voiced): {}", parts.join("; ")),
    )
}

fn c10_prosody(m: &Manifest) -> Outcome {
    let cfg = ExperimentConfig {
        pairings: vec![("M1".into(), "F1".into()), ("M2".into(), "F2".into())],
        ..ExperimentConfig::default()
    };
    let rows = prosody_ablation(m, &cfg).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for pair in rows.chunks(2) {
        let (off, on) = (&pair[0], &pair[1]);
        assert!(!off.prosody && on.prosody);
        let rel = (on.mean_f0_converted / on.mean_f0_target - 1.0).abs();
        pass &= on.pitch_rms_hz < off.pitch_rms_hz && rel <= 0.10;
        parts.push(format!(
            "{}->{}: RMS {:.1} -> {:.1} Hz, mean f0 {:.1} vs target {:.1} ({:.1}%)",
            on.source,
            on.target,
            off.pitch_rms_hz,
            on.pitch_rms_hz,
            on.mean_f0_converted,
            on.mean_f0_target,
            100.0 * rel
        ));
    }
    outcome(pass, format!("{} (RMS must drop; mean within 10%)", parts.join("; ")))
}

fn read_all(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect()
}

fn c11_determinism(m: &Manifest, scratch: &Path) -> Outcome {
    let acfg = AnalysisConfig::default();
    let tcfg = TrainConfig {
        max_epochs: 5,
        max_pairs: 1000,
        ..TrainConfig::default()
    };
    let models: Vec<String> = (0..2)
        .map(|_| train_pair(m, "M1", "F1", &acfg, &tcfg, None).unwrap().to_json())
        .collect();
    let cfg = ExperimentConfig {
        train: tcfg,
        pairings: vec![("M1".into(), "F1".into())],
        noise_levels: vec![40.0],
        seeds: vec![1],
        ..ExperimentConfig::default()
    };
    let mut outputs = Vec::new();
    for run in 0..2 {
        let dir = scratch.join(format!("run{run}"));
        for sc in [Scenario::NoiseSweep, Scenario::ProsodyAblation, Scenario::PhonemeContribution] {
            run_scenario(m, sc, &cfg, &dir).unwrap();
        }
        outputs.push(read_all(&dir));
    }
    let n_files = outputs[0].len();
    let same_files = outputs[0] == outputs[1];
    let same_model = models[0] == models[1];
    outcome(
        same_model && same_files && n_files == 6,
        format!("model JSON identical: {same_model}; {n_files} CSV/SVG files identical: {same_files}"),
    )
}

fn main() {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let scratch = tempfile::tempdir().unwrap();
    let corpus_dir = scratch.path().join("corpus");

    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut report = |n: u32, o: Outcome| {
        println!("criterion {n:2}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    report(1, c1_filter_identities());
    report(2, c2_levinson_vs_dense());
    report(3, c3_order_rule());
    report(4, c4_mcd_closed_form());
    report(5, c5_cepstrum_vs_fft());
    report(6, c6_lm_training());
    report(7, c7_pitch_and_psola());

    let m = generate_synthetic_corpus(&SyntheticSpeakerSpec::defaults(), 100, 42, &corpus_dir).unwrap();
    // the rendered files must load back as the manifest describes
    assert!(load_wav(m.resolve(&m.speakers[0].utterances[0].wav_path)).is_ok());
    report(8, c8_end_to_end(&m));
    report(9, c9_noise_direction(&m));
    report(10, c10_prosody(&m));
    report(11, c11_determinism(&m, &scratch.path().join("det")));

    let failed: Vec<u32> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!(
        "acceptance: {}/{} criteria pass{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failing: {failed:?}") }
    );
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}

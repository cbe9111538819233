//! Real-coefficient polynomial roots (Aberth-Ehrlich) and reconstruction
//! from roots, used to check and enforce minimum phase of LPC polynomials.

use num_complex::Complex64;

use crate::error::{Error, Result};

const MAX_ITER: usize = 500;

/// Horner evaluation of `p(z)` and `p'(z)`; `desc` is highest degree first.
fn eval_with_derivative(desc: &[f64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(desc[0], 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in &desc[1..] {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// All complex roots of the monic-up-to-scale polynomial `desc[0] z^n + ... + desc[n]`.
pub fn roots(desc: &[f64]) -> Result<Vec<Complex64>> {
    let lead = *desc.first().ok_or(Error::EmptyInput)?;
    if lead == 0.0 || desc.iter().any(|c| !c.is_finite()) {
        return Err(Error::RootFindingFailure);
    }
    let n = desc.len() - 1;
    if n == 0 {
        return Ok(Vec::new());
    }
    let monic: Vec<f64> = desc.iter().map(|c| c / lead).collect();
    // roots at the origin are exact; peel them off
    let zeros = monic.iter().rev().take_while(|&&c| c == 0.0).count();
    let core = &monic[..monic.len() - zeros];
    let m = core.len() - 1;
    let mut found = vec![Complex64::new(0.0, 0.0); zeros];
    if m == 0 {
        return Ok(found);
    }

    // Initial guesses on a circle sized by the geometric mean of |roots|.
    let radius = core[m].abs().powf(1.0 / m as f64).max(1e-3);
    let mut z: Vec<Complex64> = (0..m)
        .map(|k| {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / m as f64 + 0.4;
            Complex64::from_polar(radius, theta)
        })
        .collect();

    let mut converged = false;
    let mut polish = 0;
    for _ in 0..MAX_ITER {
        let (max_step, at_noise_floor) = aberth_sweep(core, &mut z)?;
        if converged {
            polish += 1;
            if polish == 3 {
                break;
            }
        } else if max_step < 1e-12 || at_noise_floor {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::RootFindingFailure);
    }
    found.extend(z);
    Ok(found)
}

/// Rounding-error bound of Horner evaluation at `|z|`.
fn eval_error_bound(desc: &[f64], z: Complex64) -> f64 {
    let r = z.norm();
    let scale = desc.iter().fold(0.0, |acc, c| acc * r + c.abs());
    4.0 * desc.len() as f64 * f64::EPSILON * scale
}

/// One Gauss-Seidel style Aberth update of every estimate. Returns the
/// largest relative step taken and whether every residual was already at
/// the rounding-error level; clustered roots can stall above any fixed step
/// threshold while being as accurate as double precision allows.
fn aberth_sweep(core: &[f64], z: &mut [Complex64]) -> Result<(f64, bool)> {
    let m = z.len();
    let mut max_step: f64 = 0.0;
    let mut at_noise_floor = true;
    for k in 0..m {
        let (p, dp) = eval_with_derivative(core, z[k]);
        if p.norm() == 0.0 {
            continue;
        }
        at_noise_floor &= p.norm() <= eval_error_bound(core, z[k]);
        let ratio = p / dp;
        let repulsion: Complex64 = (0..m)
            .filter(|&j| j != k)
            .map(|j| (z[k] - z[j]).inv())
            .sum();
        let step = ratio / (Complex64::new(1.0, 0.0) - ratio * repulsion);
        if !step.re.is_finite() || !step.im.is_finite() {
            return Err(Error::RootFindingFailure);
        }
        z[k] -= step;
        max_step = max_step.max(step.norm() / z[k].norm().max(1.0));
    }
    Ok((max_step, at_noise_floor))
}

/// Monic real polynomial (highest degree first) with the given roots.
///
/// Roots are expected in conjugate pairs; residual imaginary parts of the
/// expanded coefficients are discarded.
pub fn from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, &ci) in c.iter().enumerate() {
            next[i] += ci;
            next[i + 1] -= ci * r;
        }
        c = next;
    }
    c.into_iter().map(|v| v.re).collect()
}

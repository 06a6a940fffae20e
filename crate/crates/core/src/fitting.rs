//! Three-parameter fits of afterpulse probability against dead time.
//!
//! Two laws are supported, with `τ` in microseconds:
//!
//! - power law `A·τ^B + C`
//! - exponential `A·e^{−B·τ} + C`
//!
//! Inputs are given in seconds and converted internally, so `B` of the
//! exponential law is reported per microsecond and `A` of the power law is
//! the value at `τ = 1 µs`. Use [`FitResult::eval`] to evaluate at a time in
//! seconds.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

const SECONDS_TO_US: f64 = 1e6;
const MAX_ITERATIONS: usize = 500;
const RSS_TOL: f64 = 1e-10;
const STEP_TOL: f64 = 1e-12;
const LAMBDA_MAX: f64 = 1e16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Law {
    PowerLaw,
    Exponential,
}

impl Law {
    fn value(self, x: f64, [a, b, c]: [f64; 3]) -> f64 {
        match self {
            Law::PowerLaw => a * x.powf(b) + c,
            Law::Exponential => a * (-b * x).exp() + c,
        }
    }

    fn gradient(self, x: f64, [a, b, _]: [f64; 3]) -> [f64; 3] {
        match self {
            Law::PowerLaw => {
                let xb = x.powf(b);
                [xb, a * xb * x.ln(), 1.0]
            }
            Law::Exponential => {
                let e = (-b * x).exp();
                [e, -a * x * e, 1.0]
            }
        }
    }
}

impl FromStr for Law {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "power" | "power_law" | "power-law" | "powerlaw" => Ok(Law::PowerLaw),
            "exp" | "exponential" => Ok(Law::Exponential),
            _ => Err(Error::Config(format!("unknown fit law '{s}'"))),
        }
    }
}

impl fmt::Display for Law {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Law::PowerLaw => "power_law",
            Law::Exponential => "exponential",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub law: Law,
    pub rss: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn params(&self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    /// Fitted curve at `tau` seconds.
    pub fn eval(&self, tau: f64) -> f64 {
        self.law.value(tau * SECONDS_TO_US, self.params())
    }
}

fn check_inputs(xs: &[f64], ys: &[f64], law: Law) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::Domain(format!(
            "{} abscissae but {} ordinates",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 4 {
        return Err(Error::Domain(format!(
            "need at least 4 points, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite input".into()));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("abscissae must be strictly increasing".into()));
    }
    if law == Law::PowerLaw && xs[0] <= 0.0 {
        return Err(Error::Domain("power law needs strictly positive abscissae".into()));
    }
    Ok(())
}

/// Least-squares slope and intercept.
fn line_fit(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if pts.len() < 2 || sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

fn guess_us(xs: &[f64], ys: &[f64], law: Law) -> [f64; 3] {
    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let fallback = [hi - lo, 1.0, lo];
    let range = hi - lo;
    if !(range > 0.0) {
        return fallback;
    }
    // Log-slope over points clearly above the tail offset.
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(_, &y)| y - lo > 0.05 * range)
        .map(|(&x, &y)| {
            let lx = if law == Law::PowerLaw { x.ln() } else { x };
            (lx, (y - lo).ln())
        })
        .collect();
    let Some((slope, _)) = line_fit(&pts) else {
        return fallback;
    };
    let b = match law {
        Law::PowerLaw => slope,
        Law::Exponential => -slope,
    };
    let [grad_a, _, _] = law.gradient(xs[0], [1.0, b, 0.0]);
    let a = (ys[0] - lo) / grad_a;
    if !(a.is_finite() && b.is_finite()) || grad_a == 0.0 {
        return fallback;
    }
    [a, b, lo]
}

/// Starting point for [`fit_curve`], in the same units as [`FitResult`].
pub fn initial_guess(xs: &[f64], ys: &[f64], law: Law) -> Result<[f64; 3]> {
    check_inputs(xs, ys, law)?;
    let xs_us: Vec<f64> = xs.iter().map(|x| x * SECONDS_TO_US).collect();
    Ok(guess_us(&xs_us, ys, law))
}

fn weighted_rss(law: Law, xs: &[f64], ys: &[f64], w: &[f64], p: [f64; 3]) -> f64 {
    xs.iter()
        .zip(ys)
        .zip(w)
        .map(|((&x, &y), &wi)| wi * (y - law.value(x, p)).powi(2))
        .sum()
}

fn solve3(mut m: [[f64; 3]; 3], mut v: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        v.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            v[row] -= f * v[col];
        }
    }
    let mut out = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = v[row];
        for k in row + 1..3 {
            s -= m[row][k] * out[k];
        }
        out[row] = s / m[row][row];
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

fn levenberg_marquardt(law: Law, xs: &[f64], ys: &[f64], w: &[f64]) -> FitResult {
    let mut p = guess_us(xs, ys, law);
    let mut rss = weighted_rss(law, xs, ys, w, p);
    let scale: f64 = ys.iter().zip(w).map(|(y, wi)| wi * y * y).sum();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        if rss <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        iterations += 1;
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for ((&x, &y), &wi) in xs.iter().zip(ys).zip(w) {
            let g = law.gradient(x, p);
            let r = y - law.value(x, p);
            for i in 0..3 {
                jtr[i] += wi * g[i] * r;
                for j in 0..3 {
                    jtj[i][j] += wi * g[i] * g[j];
                }
            }
        }
        let diag_floor = 1e-12 * (0..3).map(|i| jtj[i][i]).fold(0.0, f64::max);

        let mut accepted = false;
        while lambda <= LAMBDA_MAX {
            let mut damped = jtj;
            for (i, row) in damped.iter_mut().enumerate() {
                row[i] += lambda * jtj[i][i].max(diag_floor);
            }
            let step = solve3(damped, jtr);
            if let Some(step) = step {
                let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
                let trial_rss = weighted_rss(law, xs, ys, w, trial);
                if trial_rss.is_finite() && trial_rss <= rss {
                    let step_norm = step.iter().map(|s| s * s).sum::<f64>().sqrt();
                    let p_norm = p.iter().map(|s| s * s).sum::<f64>().sqrt();
                    let improvement = (rss - trial_rss) / rss;
                    p = trial;
                    rss = trial_rss;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if improvement < RSS_TOL || step_norm < STEP_TOL * (1.0 + p_norm) {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No downhill step at any damping: a stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }
    FitResult {
        a: p[0],
        b: p[1],
        c: p[2],
        law,
        rss,
        iterations,
        converged,
    }
}

/// Unweighted least-squares fit of `ys` against `xs` (seconds).
pub fn fit_curve(xs: &[f64], ys: &[f64], law: Law) -> Result<FitResult> {
    check_inputs(xs, ys, law)?;
    let xs_us: Vec<f64> = xs.iter().map(|x| x * SECONDS_TO_US).collect();
    Ok(levenberg_marquardt(law, &xs_us, ys, &vec![1.0; xs.len()]))
}

/// Fit weighted by `1/σ²`. The reported `rss` is the weighted sum.
pub fn fit_curve_weighted(
    xs: &[f64],
    ys: &[f64],
    sigmas: &[f64],
    law: Law,
) -> Result<FitResult> {
    check_inputs(xs, ys, law)?;
    if sigmas.len() != ys.len() || sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::Domain("sigmas must be positive, one per point".into()));
    }
    let xs_us: Vec<f64> = xs.iter().map(|x| x * SECONDS_TO_US).collect();
    let w: Vec<f64> = sigmas.iter().map(|s| 1.0 / (s * s)).collect();
    Ok(levenberg_marquardt(law, &xs_us, ys, &w))
}

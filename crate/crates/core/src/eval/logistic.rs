//! Five-parameter logistic mapping from objective scores to DMOS.

use serde::{Deserialize, Serialize};

use super::stats::{mean, variance};
use crate::error::{Error, Result};

const MAX_ITERS: usize = 500;
const TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub b: [f64; 5],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogisticFit {
    pub params: LogisticParams,
    pub sse: f64,
    pub iterations: usize,
    pub converged: bool,
}

// 1 / (1 + e^t) without overflow
fn sigmoid_neg(t: f64) -> f64 {
    if t >= 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

impl LogisticParams {
    pub fn eval(&self, s: f64) -> f64 {
        let [b1, b2, b3, b4, b5] = self.b;
        b1 * (0.5 - sigmoid_neg(b2 * (s - b3))) + b4 * s + b5
    }

    pub fn map(&self, s: &[f64]) -> Vec<f64> {
        s.iter().map(|&x| self.eval(x)).collect()
    }

    fn gradient(&self, s: f64) -> [f64; 5] {
        let [b1, b2, b3, _, _] = self.b;
        let t = b2 * (s - b3);
        let g = sigmoid_neg(t);
        // d/dt (1/2 - 1/(1+e^t)) = g (1 - g)
        let dg = g * (1.0 - g);
        [0.5 - g, b1 * dg * (s - b3), -b1 * dg * b2, s, 1.0]
    }

    /// Whether the mapping is monotone on `[lo, hi]`, checked on a dense grid.
    pub fn is_monotone_on(&self, lo: f64, hi: f64) -> bool {
        let n = 256;
        let vals: Vec<f64> = (0..=n).map(|i| self.eval(lo + (hi - lo) * i as f64 / n as f64)).collect();
        let tol = 1e-12 * vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        vals.windows(2).all(|w| w[1] >= w[0] - tol) || vals.windows(2).all(|w| w[1] <= w[0] + tol)
    }
}

fn sse(p: &LogisticParams, s: &[f64], y: &[f64]) -> f64 {
    s.iter().zip(y).map(|(&x, &t)| (p.eval(x) - t).powi(2)).sum()
}

fn solve5(mut a: [[f64; 5]; 5], mut b: [f64; 5]) -> Option<[f64; 5]> {
    for c in 0..5 {
        let piv = (c..5).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..5 {
            let f = a[r][c] / a[c][c];
            for k in c..5 {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; 5];
    for r in (0..5).rev() {
        let mut acc = b[r];
        for k in r + 1..5 {
            acc -= a[r][k] * x[k];
        }
        x[r] = acc / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Levenberg-Marquardt least-squares fit of the logistic mapping.
pub fn logistic_fit(objective: &[f64], dmos: &[f64]) -> Result<LogisticFit> {
    if objective.len() != dmos.len() {
        return Err(Error::arg("objective and DMOS lengths differ"));
    }
    if objective.len() < 6 {
        return Err(Error::arg(format!("logistic fit needs at least 6 pairs, got {}", objective.len())));
    }
    if objective.iter().chain(dmos).any(|v| !v.is_finite()) {
        return Err(Error::arg("non-finite score in logistic fit"));
    }
    let (lo, hi) = dmos.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let sd = variance(objective).sqrt();
    let mut p = LogisticParams {
        b: [hi - lo, if sd > 0.0 { 1.0 / sd } else { 1.0 }, mean(objective), 0.0, mean(dmos)],
    };
    let mut cur = sse(&p, objective, dmos);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERS && !converged {
        iterations += 1;
        if cur == 0.0 {
            converged = true;
            break;
        }
        let mut jtj = [[0.0; 5]; 5];
        let mut jtr = [0.0; 5];
        for (&x, &t) in objective.iter().zip(dmos) {
            let g = p.gradient(x);
            let r = p.eval(x) - t;
            for i in 0..5 {
                jtr[i] -= g[i] * r;
                for j in 0..5 {
                    jtj[i][j] += g[i] * g[j];
                }
            }
        }
        let dmax = (0..5).fold(0.0f64, |m, i| m.max(jtj[i][i]));
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += lambda * (jtj[i][i] + 1e-9 * dmax.max(1e-300));
            }
            if let Some(step) = solve5(a, jtr) {
                let mut cand = p;
                for (b, d) in cand.b.iter_mut().zip(step) {
                    *b += d;
                }
                let next = sse(&cand, objective, dmos);
                if next.is_finite() && next <= cur {
                    let rel = (cur - next) / cur.max(1e-300);
                    p = cand;
                    cur = next;
                    lambda = (lambda * 0.3).max(1e-12);
                    accepted = true;
                    converged = rel < TOL;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            converged = true;
        }
    }
    if !converged {
        log::warn!("logistic fit stopped after {iterations} iterations; using best iterate");
    }
    let (slo, shi) = objective.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !p.is_monotone_on(slo, shi) {
        log::warn!("fitted logistic mapping is not monotone over the observed scores");
    }
    Ok(LogisticFit { params: p, sse: cur, iterations, converged })
}

#[cfg(test)]
mod tests {
    use super::super::stats::{pcc, rmse};
    use super::*;

    #[test]
    fn recovers_generated_curve() {
        let truth = LogisticParams { b: [4.0, 6.0, 0.5, 0.3, 2.0] };
        let s: Vec<f64> = (0..60).map(|i| i as f64 / 59.0).collect();
        let y = truth.map(&s);
        let fit = logistic_fit(&s, &y).unwrap();
        let err = rmse(&fit.params.map(&s), &y).unwrap();
        let range = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - y.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(err < 1e-3 * range, "rmse {err}");
    }

    #[test]
    fn linear_data_not_degraded() {
        let s: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin() + i as f64 * 0.1).collect();
        let y: Vec<f64> = s.iter().enumerate().map(|(i, x)| 3.0 * x - 1.0 + 0.05 * ((i * 7) % 5) as f64).collect();
        let before = pcc(&s, &y).unwrap();
        let fit = logistic_fit(&s, &y).unwrap();
        let after = pcc(&fit.params.map(&s), &y).unwrap();
        assert!(after >= before - 1e-9, "{after} < {before}");
    }

    #[test]
    fn constant_dmos() {
        let s = [0.1, 0.4, 0.2, 0.9, 0.5, 0.7];
        let y = [3.0; 6];
        let fit = logistic_fit(&s, &y).unwrap();
        for v in fit.params.map(&s) {
            assert!((v - 3.0).abs() < 1e-12);
        }
        assert_eq!(fit.sse, 0.0);
    }

    #[test]
    fn preconditions() {
        assert!(logistic_fit(&[1.0; 5], &[1.0; 5]).is_err());
        assert!(logistic_fit(&[1.0; 6], &[1.0; 7]).is_err());
    }
}

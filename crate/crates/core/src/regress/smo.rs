//! Sequential minimal optimization for the epsilon-insensitive SVR dual.
//!
//! The 2l-variable formulation: alpha_t for t < l carries label +1 and
//! linear term eps - z_t, alpha_{t+l} carries label -1 and eps + z_t.
//! Working pairs are chosen with second-order gain.

const TAU: f64 = 1e-12;

pub(crate) struct SmoOutput {
    /// `alpha_t - alpha_{t+l}` per training sample.
    pub beta: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    /// Maximal KKT violation at exit.
    pub gap: f64,
}

pub(crate) fn solve(kernel: &[f64], targets: &[f64], c: f64, eps: f64, tol: f64, max_iters: usize) -> SmoOutput {
    let l = targets.len();
    let n = 2 * l;
    let y = |t: usize| if t < l { 1.0 } else { -1.0 };
    let k = |t: usize, s: usize| kernel[(t % l) * l + s % l];
    let q = |t: usize, s: usize| y(t) * y(s) * k(t, s);
    let qd: Vec<f64> = (0..n).map(|t| k(t, t)).collect();
    let mut alpha = vec![0.0; n];
    let mut grad: Vec<f64> = (0..n)
        .map(|t| if t < l { eps - targets[t] } else { eps + targets[t - l] })
        .collect();

    let is_upper = |a: f64| a >= c;
    let is_lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    let mut gap;
    loop {
        // first index: maximal violation in I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            let v = if y(t) > 0.0 {
                (!is_upper(alpha[t])).then(|| -grad[t])
            } else {
                (!is_lower(alpha[t])).then(|| grad[t])
            };
            if let Some(v) = v {
                if v >= gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            let (allowed, g, sign) = if y(t) > 0.0 {
                (!is_lower(alpha[t]), grad[t], 1.0)
            } else {
                (!is_upper(alpha[t]), -grad[t], -1.0)
            };
            if !allowed {
                continue;
            }
            if g >= gmax2 {
                gmax2 = g;
            }
            if i == usize::MAX {
                continue;
            }
            let diff = gmax + g;
            if diff > 0.0 {
                let quad = qd[i] + qd[t] - 2.0 * sign * y(i) * q(i, t);
                let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                if obj <= best {
                    best = obj;
                    j = t;
                }
            }
        }
        gap = gmax + gmax2;
        if gap < tol || i == usize::MAX || j == usize::MAX || iterations >= max_iters {
            break;
        }
        iterations += 1;

        let (ai, aj) = (alpha[i], alpha[j]);
        let qij = q(i, j);
        if y(i) != y(j) {
            let quad = (qd[i] + qd[j] + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qd[i] + qd[j] - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(t, i) * di + q(t, j) * dj;
        }
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y(t) * grad[t];
        if is_upper(alpha[t]) {
            if y(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if is_lower(alpha[t]) {
            if y(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 { sum_free / free as f64 } else { (ub + lb) / 2.0 };
    let beta = (0..l).map(|t| alpha[t] - alpha[t + l]).collect();
    SmoOutput { beta, rho, iterations, gap: gap.max(0.0) }
}

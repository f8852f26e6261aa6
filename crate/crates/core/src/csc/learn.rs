//! Alternating minimization for convolutional dictionary learning:
//! sparse coding with the current kernels, then projected gradient steps on
//! the kernels under the unit-norm constraint.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{dot, fista, l1, lipschitz_estimate, sq_norm, ConvDictionary, ConvOp, CODE_REL_TOL};
use crate::error::{Error, Result};
use crate::imgio::Patch;

/// Relative objective increase tolerated between outer iterations.
pub const MONOTONE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct LearnOptions {
    /// FISTA iterations per patch per outer iteration (warm-started).
    pub code_iters: usize,
    /// Projected gradient steps on the kernels per outer iteration.
    pub kernel_steps: usize,
}

impl Default for LearnOptions {
    fn default() -> Self {
        Self {
            code_iters: 15,
            kernel_steps: 3,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LearnTrace {
    /// Objective after each outer iteration.
    pub objective: Vec<f64>,
    /// Largest squared kernel norm after each outer iteration.
    pub max_sq_norm: Vec<f64>,
}

struct Sample {
    y: Vec<f64>,
    z: Vec<f64>,
}

fn project_unit(kernels: &mut [Vec<f64>]) {
    for k in kernels {
        let n = sq_norm(k).sqrt();
        if n > 1.0 {
            k.iter_mut().for_each(|v| *v /= n);
        }
    }
}

fn total_objective(kernels: &[Vec<f64>], s: usize, side: usize, samples: &[Sample], lambda: f64) -> f64 {
    let op = ConvOp::new(kernels, s, side, side);
    samples
        .par_iter()
        .map(|smp| {
            let mut az = vec![0.0; op.image_len()];
            op.forward(&smp.z, &mut az);
            let rec: f64 = az.iter().zip(&smp.y).map(|(a, b)| (a - b) * (a - b)).sum();
            0.5 * rec + lambda * l1(&smp.z)
        })
        .collect::<Vec<_>>()
        .iter()
        .sum()
}

/// Smooth part and its kernel gradient, summed over samples in fixed order.
fn smooth_and_grad(kernels: &[Vec<f64>], s: usize, side: usize, samples: &[Sample]) -> (f64, Vec<f64>) {
    let op = ConvOp::new(kernels, s, side, side);
    let parts: Vec<(f64, Vec<f64>)> = samples
        .par_iter()
        .map(|smp| {
            let mut az = vec![0.0; op.image_len()];
            op.forward(&smp.z, &mut az);
            let r: Vec<f64> = smp.y.iter().zip(&az).map(|(y, a)| y - a).collect();
            let mut g = vec![0.0; kernels.len() * s * s];
            op.kernel_grad_acc(&smp.z, &r, &mut g);
            (0.5 * sq_norm(&r), g)
        })
        .collect();
    let mut grad = vec![0.0; kernels.len() * s * s];
    let mut f = 0.0;
    for (fi, g) in parts {
        f += fi;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    (f, grad)
}

fn smooth_only(kernels: &[Vec<f64>], s: usize, side: usize, samples: &[Sample]) -> f64 {
    let op = ConvOp::new(kernels, s, side, side);
    samples
        .par_iter()
        .map(|smp| {
            let mut az = vec![0.0; op.image_len()];
            op.forward(&smp.z, &mut az);
            0.5 * az.iter().zip(&smp.y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum()
}

/// Power-iteration estimate of the kernel-space Hessian norm.
fn kernel_lipschitz(k: usize, s: usize, side: usize, samples: &[Sample]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0xd1c7);
    let mut v: Vec<f64> = (0..k * s * s).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut lambda = 0.0;
    for _ in 0..10 {
        let nv = sq_norm(&v).sqrt();
        if nv == 0.0 {
            break;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let kernels: Vec<Vec<f64>> = v.chunks(s * s).map(|c| c.to_vec()).collect();
        let op = ConvOp::new(&kernels, s, side, side);
        let parts: Vec<Vec<f64>> = samples
            .par_iter()
            .map(|smp| {
                let mut bv = vec![0.0; op.image_len()];
                op.forward(&smp.z, &mut bv);
                let mut g = vec![0.0; k * s * s];
                op.kernel_grad_acc(&smp.z, &bv, &mut g);
                g
            })
            .collect();
        let mut hv = vec![0.0; k * s * s];
        for g in parts {
            hv.iter_mut().zip(&g).for_each(|(a, b)| *a -= b);
        }
        lambda = sq_norm(&hv).sqrt();
        v = hv;
    }
    (lambda * 1.05).max(1e-9)
}

fn init_kernels(samples: &[Sample], k: usize, s: usize, side: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| {
            let smp = &samples[rng.gen_range(0..samples.len())];
            let (ox, oy) = (rng.gen_range(0..=side - s), rng.gen_range(0..=side - s));
            let mut kern: Vec<f64> = (0..s * s)
                .map(|i| smp.y[(oy + i / s) * side + ox + i % s] + 1e-3 * rng.gen_range(-1.0..1.0))
                .collect();
            let mean = kern.iter().sum::<f64>() / kern.len() as f64;
            kern.iter_mut().for_each(|v| *v -= mean);
            let mut n = sq_norm(&kern).sqrt();
            if n < 1e-8 {
                kern = (0..s * s).map(|_| rng.gen_range(-1.0..1.0)).collect();
                n = sq_norm(&kern).sqrt();
            }
            kern.iter_mut().for_each(|v| *v /= n);
            kern
        })
        .collect()
}

/// Learns `k` kernels of side `s` from square training patches.
pub fn learn_dictionary(
    patches: &[Patch],
    k: usize,
    s: usize,
    lambda: f64,
    outer_iters: usize,
    seed: u64,
) -> Result<(ConvDictionary, LearnTrace)> {
    learn_dictionary_with(patches, k, s, lambda, outer_iters, seed, LearnOptions::default())
}

pub fn learn_dictionary_with(
    patches: &[Patch],
    k: usize,
    s: usize,
    lambda: f64,
    outer_iters: usize,
    seed: u64,
    opts: LearnOptions,
) -> Result<(ConvDictionary, LearnTrace)> {
    if k == 0 || patches.len() < k {
        return Err(Error::Training(format!(
            "need at least K = {k} patches, got {}",
            patches.len()
        )));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Training(format!("lambda must be positive, got {lambda}")));
    }
    let side = patches[0].side;
    if patches.iter().any(|p| p.side != side) {
        return Err(Error::Training("training patches must share one side".into()));
    }
    if s == 0 || s > side {
        return Err(Error::Training(format!("kernel side {s} incompatible with patch side {side}")));
    }

    let mut samples: Vec<Sample> = patches
        .iter()
        .map(|p| {
            let mean = p.data.iter().sum::<f64>() / p.data.len() as f64;
            Sample {
                y: p.data.iter().map(|v| v - mean).collect(),
                z: vec![0.0; k * side * side],
            }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kernels = init_kernels(&samples, k, s, side, &mut rng);
    let mut trace = LearnTrace::default();
    let mut prev = f64::INFINITY;

    for outer in 0..outer_iters {
        // (a) sparse coding, warm-started and monotone per sample
        let dict = ConvDictionary {
            side: s,
            kernels: kernels.clone(),
            lambda_train: lambda,
            seed,
        };
        let lip = lipschitz_estimate(&dict, side, side);
        let op = ConvOp::new(&kernels, s, side, side);
        samples.par_iter_mut().for_each(|smp| {
            let start = std::mem::take(&mut smp.z);
            let (z, _) = fista(&op, &smp.y, lambda, start, opts.code_iters, lip, CODE_REL_TOL);
            smp.z = z;
        });

        // (b) projected gradient on the kernels with backtracking
        let mut lk = kernel_lipschitz(k, s, side, &samples);
        for _ in 0..opts.kernel_steps {
            let (f0, grad) = smooth_and_grad(&kernels, s, side, &samples);
            let flat: Vec<f64> = kernels.concat();
            let mut accepted = false;
            for _ in 0..40 {
                let mut cand: Vec<Vec<f64>> = flat
                    .iter()
                    .zip(&grad)
                    .map(|(d, g)| d - g / lk)
                    .collect::<Vec<_>>()
                    .chunks(s * s)
                    .map(|c| c.to_vec())
                    .collect();
                project_unit(&mut cand);
                let cflat: Vec<f64> = cand.concat();
                let delta: Vec<f64> = cflat.iter().zip(&flat).map(|(a, b)| a - b).collect();
                let f1 = smooth_only(&cand, s, side, &samples);
                if f1 <= f0 + dot(&grad, &delta) + 0.5 * lk * sq_norm(&delta) + 1e-12 * (1.0 + f0) {
                    kernels = cand;
                    accepted = true;
                    break;
                }
                lk *= 2.0;
            }
            if !accepted {
                return Err(Error::Solver(format!(
                    "kernel step failed to satisfy the descent condition at outer iteration {outer} (L = {lk:.3e})"
                )));
            }
        }

        let obj = total_objective(&kernels, s, side, &samples, lambda);
        if obj > prev * (1.0 + MONOTONE_TOL) {
            return Err(Error::Solver(format!(
                "objective increased from {prev:.9e} to {obj:.9e} at outer iteration {outer}"
            )));
        }
        prev = obj;
        trace.objective.push(obj);
        trace.max_sq_norm.push(kernels.iter().map(|k| sq_norm(k)).fold(0.0, f64::max));
        log::debug!("dictionary outer {outer}: objective {obj:.6e}");
    }

    Ok((
        ConvDictionary {
            side: s,
            kernels,
            lambda_train: lambda,
            seed,
        },
        trace,
    ))
}

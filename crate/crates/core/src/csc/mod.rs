//! High-level structure features: convolutional sparse coding of an image
//! over a learned dictionary of non-natural-structure kernels, summarized by
//! the fraction of activated coefficients per kernel.

mod conv;
mod learn;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::GrayImage;

pub use conv::ConvOp;
pub use learn::{learn_dictionary, learn_dictionary_with, LearnOptions, LearnTrace};

/// Relative objective change below which the coder stops.
pub const CODE_REL_TOL: f64 = 1e-8;
const POWER_ITERS: usize = 30;
const POWER_SIDE_CAP: usize = 32;
const LIPSCHITZ_MARGIN: f64 = 1.05;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvDictionary {
    /// Kernel side in pixels.
    pub side: usize,
    /// Row-major `side*side` kernels.
    pub kernels: Vec<Vec<f64>>,
    pub lambda_train: f64,
    pub seed: u64,
}

impl ConvDictionary {
    pub fn new(side: usize, kernels: Vec<Vec<f64>>) -> Result<Self> {
        let d = Self {
            side,
            kernels,
            lambda_train: 0.0,
            seed: 0,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.side == 0 || self.kernels.is_empty() {
            return Err(Error::Model("dictionary needs at least one non-empty kernel".into()));
        }
        for (k, kern) in self.kernels.iter().enumerate() {
            if kern.len() != self.side * self.side || kern.iter().any(|v| !v.is_finite()) {
                return Err(Error::Model(format!("kernel {k} malformed")));
            }
            if sq_norm(kern) > 1.0 + 1e-9 {
                return Err(Error::Model(format!("kernel {k} violates the unit-norm constraint")));
            }
        }
        Ok(())
    }

    /// Largest squared Frobenius norm over the kernels.
    pub fn max_sq_norm(&self) -> f64 {
        self.kernels.iter().map(|k| sq_norm(k)).fold(0.0, f64::max)
    }

    pub fn operator(&self, m: usize, n: usize) -> ConvOp {
        ConvOp::new(&self.kernels, self.side, m, n)
    }
}

/// `K` coefficient maps of an `M`×`N` image (`M` rows).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    /// `k` blocks of `m*n` values.
    pub maps: Vec<f64>,
}

impl FeatureMaps {
    pub fn zeros(m: usize, n: usize, k: usize) -> Self {
        Self {
            m,
            n,
            k,
            maps: vec![0.0; m * n * k],
        }
    }

    pub fn map(&self, k: usize) -> &[f64] {
        &self.maps[k * self.m * self.n..(k + 1) * self.m * self.n]
    }

    pub fn l0(&self) -> usize {
        self.maps.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn l1(&self) -> f64 {
        self.maps.iter().map(|v| v.abs()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CscFeature {
    pub values: Vec<f64>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationMode {
    /// Counts `Z > ε`.
    #[default]
    Signed,
    /// Counts `|Z| > ε`.
    Absolute,
}

/// Per-solve diagnostics.
#[derive(Debug, Clone, Default)]
pub struct CodeTrace {
    /// Objective after every accepted iterate (the first entry is the start).
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub restarts: usize,
    pub lipschitz: f64,
}

#[inline]
pub(crate) fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn residual_energy(ax: &[f64], y: &[f64]) -> f64 {
    0.5 * ax.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Power-iteration estimate of ‖AᵀA‖ with a safety margin; the solver
/// backtracks if the majorization is ever violated.
pub(crate) fn lipschitz_estimate(dict: &ConvDictionary, m: usize, n: usize) -> f64 {
    let op = dict.operator(m.min(POWER_SIDE_CAP), n.min(POWER_SIDE_CAP));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..op.coef_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut av = vec![0.0; op.image_len()];
    let mut w = vec![0.0; op.coef_len()];
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERS {
        let nv = sq_norm(&v).sqrt();
        if nv == 0.0 {
            break;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        op.forward(&v, &mut av);
        op.adjoint(&av, &mut w);
        lambda = sq_norm(&w).sqrt();
        std::mem::swap(&mut v, &mut w);
    }
    (lambda * LIPSCHITZ_MARGIN).max(1e-12)
}

#[inline]
fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Monotone accelerated proximal gradient (FISTA with function-value
/// restart) for `½‖y − A z‖² + α‖z‖₁`.
pub(crate) fn fista(
    op: &ConvOp,
    y: &[f64],
    alpha: f64,
    start: Vec<f64>,
    max_iters: usize,
    mut lipschitz: f64,
    rel_tol: f64,
) -> (Vec<f64>, CodeTrace) {
    let mut x = start;
    let mut ax = vec![0.0; op.image_len()];
    op.forward(&x, &mut ax);
    let mut fx = residual_energy(&ax, y) + alpha * l1(&x);
    let mut yv = x.clone();
    let mut ay = ax.clone();
    let mut t = 1.0f64;
    let mut trace = CodeTrace {
        objective: vec![fx],
        ..Default::default()
    };
    let mut r = vec![0.0; op.image_len()];
    let mut g = vec![0.0; op.coef_len()];
    let mut u = vec![0.0; op.coef_len()];
    let mut au = vec![0.0; op.image_len()];
    let mut just_restarted = false;

    for it in 0..max_iters {
        trace.iterations = it + 1;
        for ((ri, a), b) in r.iter_mut().zip(&ay).zip(y) {
            *ri = a - b;
        }
        let fy = 0.5 * sq_norm(&r);
        op.adjoint(&r, &mut g);
        let fu = loop {
            let step = 1.0 / lipschitz;
            for ((ui, yi), gi) in u.iter_mut().zip(&yv).zip(&g) {
                *ui = soft(yi - step * gi, alpha * step);
            }
            op.forward(&u, &mut au);
            let fu = residual_energy(&au, y);
            let (mut lin, mut quad) = (0.0, 0.0);
            for ((ui, yi), gi) in u.iter().zip(&yv).zip(&g) {
                let d = ui - yi;
                lin += gi * d;
                quad += d * d;
            }
            if fu <= fy + lin + 0.5 * lipschitz * quad + 1e-12 * (1.0 + fy) {
                break fu;
            }
            lipschitz *= 1.5;
        };
        let f_u = fu + alpha * l1(&u);
        if f_u <= fx {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let mom = (t - 1.0) / t_next;
            for i in 0..u.len() {
                yv[i] = u[i] + mom * (u[i] - x[i]);
            }
            for i in 0..au.len() {
                ay[i] = au[i] + mom * (au[i] - ax[i]);
            }
            let rel = (fx - f_u) / fx.abs().max(1e-300);
            std::mem::swap(&mut x, &mut u);
            std::mem::swap(&mut ax, &mut au);
            fx = f_u;
            t = t_next;
            trace.objective.push(fx);
            just_restarted = false;
            if rel < rel_tol {
                break;
            }
        } else {
            trace.restarts += 1;
            if just_restarted {
                // a plain proximal step from x failed to descend: converged
                break;
            }
            just_restarted = true;
            t = 1.0;
            yv.copy_from_slice(&x);
            ay.copy_from_slice(&ax);
        }
    }
    trace.lipschitz = lipschitz;
    (x, trace)
}

fn centred(img: &GrayImage) -> Result<Vec<f64>> {
    if img.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("image contains non-finite values"));
    }
    let mean = img.mean();
    Ok(img.data().iter().map(|v| v - mean).collect())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::arg(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    Ok(())
}

/// Sparse coefficient maps of the mean-subtracted image.
pub fn sparse_code(img: &GrayImage, dict: &ConvDictionary, alpha: f64, max_iters: usize) -> Result<FeatureMaps> {
    sparse_code_traced(img, dict, alpha, max_iters).map(|(z, _)| z)
}

pub fn sparse_code_traced(
    img: &GrayImage,
    dict: &ConvDictionary,
    alpha: f64,
    max_iters: usize,
) -> Result<(FeatureMaps, CodeTrace)> {
    check_alpha(alpha)?;
    dict.validate()?;
    let y = centred(img)?;
    let (m, n) = (img.height(), img.width());
    let op = dict.operator(m, n);
    let lip = lipschitz_estimate(dict, m, n);
    let (z, trace) = fista(&op, &y, alpha, vec![0.0; op.coef_len()], max_iters, lip, CODE_REL_TOL);
    Ok((
        FeatureMaps {
            m,
            n,
            k: dict.len(),
            maps: z,
        },
        trace,
    ))
}

/// Objective `½‖I − Σ D_k ⊛ Z_k‖² + α‖Z‖₁` on the mean-subtracted image.
pub fn coding_objective(img: &GrayImage, dict: &ConvDictionary, alpha: f64, z: &FeatureMaps) -> Result<f64> {
    let y = centred(img)?;
    let op = dict.operator(img.height(), img.width());
    if z.maps.len() != op.coef_len() {
        return Err(Error::arg("feature maps do not match image and dictionary"));
    }
    let mut az = vec![0.0; op.image_len()];
    op.forward(&z.maps, &mut az);
    Ok(residual_energy(&az, &y) + alpha * z.l1())
}

/// ‖Aᵀ I‖∞ on the mean-subtracted image: the smallest α giving Z ≡ 0.
pub fn max_correlation(img: &GrayImage, dict: &ConvDictionary) -> Result<f64> {
    let y = centred(img)?;
    let op = dict.operator(img.height(), img.width());
    let mut g = vec![0.0; op.coef_len()];
    op.adjoint(&y, &mut g);
    Ok(g.iter().map(|v| v.abs()).fold(0.0, f64::max))
}

/// Fraction of coefficients above `epsilon` in each map.
pub fn activation_features(z: &FeatureMaps, epsilon: f64) -> CscFeature {
    activation_features_with(z, epsilon, ActivationMode::Signed)
}

pub fn activation_features_with(z: &FeatureMaps, epsilon: f64, mode: ActivationMode) -> CscFeature {
    let area = (z.m * z.n) as f64;
    let values = (0..z.k)
        .map(|k| {
            let count = z
                .map(k)
                .iter()
                .filter(|&&v| match mode {
                    ActivationMode::Signed => v > epsilon,
                    ActivationMode::Absolute => v.abs() > epsilon,
                })
                .count();
            count as f64 / area
        })
        .collect();
    CscFeature { values, epsilon }
}

/// Kernels tiled into one image, each stretched to `[0, 1]`, separated by
/// one-pixel borders of value 1.
pub fn kernel_mosaic(dict: &ConvDictionary) -> GrayImage {
    let s = dict.side;
    let cols = (dict.len() as f64).sqrt().ceil().max(1.0) as usize;
    let rows = dict.len().div_ceil(cols).max(1);
    let (w, h) = (cols * (s + 1) + 1, rows * (s + 1) + 1);
    let mut data = vec![1.0; w * h];
    for (k, kern) in dict.kernels.iter().enumerate() {
        let lo = kern.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = kern.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let (ox, oy) = ((k % cols) * (s + 1) + 1, (k / cols) * (s + 1) + 1);
        for y in 0..s {
            for x in 0..s {
                data[(oy + y) * w + ox + x] = (kern[y * s + x] - lo) / span;
            }
        }
    }
    GrayImage::from_clamped(w, h, data).expect("mosaic dimensions are positive")
}

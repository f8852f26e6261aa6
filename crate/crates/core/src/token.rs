//! Mid-level estimator: per-pixel contour-category distributions from a
//! k-means codebook over contour patches, compared with the Jensen–Shannon
//! divergence and pooled with a Minkowski sum over all pixels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contour::ContourMap;
use crate::error::{Error, Result};
use crate::imgio::{GrayImage, Patch};
use crate::register::DisplacementField;

/// Number of orientation channels appended to the raw patch.
pub const ORIENTATION_CHANNELS: usize = 4;
/// Relative weight of the orientation histogram in the descriptor.
const ORIENTATION_WEIGHT: f64 = 2.0;
const KMEANS_MAX_ITERS: usize = 200;
const KMEANS_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MidNorm {
    /// `(Σ jsd^β)^(1/β) / N_p`
    Literal,
    /// `(Σ jsd^β / N_p)^(1/β)`
    MeanPower,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenCodebook {
    pub patch_side: usize,
    pub descriptor_dim: usize,
    pub temperature: f64,
    /// `categories()` rows of `descriptor_dim` values.
    pub centroids: Vec<Vec<f64>>,
}

impl TokenCodebook {
    pub fn categories(&self) -> usize {
        self.centroids.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.centroids.len() < 2 {
            return Err(Error::Model("codebook needs at least 2 categories".into()));
        }
        if self.patch_side < 3 || self.patch_side % 2 == 0 {
            return Err(Error::Model("codebook patch side must be odd and >= 3".into()));
        }
        if self.descriptor_dim != descriptor_dim(self.patch_side)
            || self.centroids.iter().any(|c| c.len() != self.descriptor_dim)
        {
            return Err(Error::Model("codebook centroid dimension mismatch".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Model("codebook temperature must be positive".into()));
        }
        Ok(())
    }

    /// Soft assignment of a descriptor over the categories.
    pub fn soft_assign(&self, desc: &[f64], out: &mut [f64]) {
        let t = self.temperature;
        for (o, c) in out.iter_mut().zip(&self.centroids) {
            *o = -sq_dist(desc, c).sqrt() / t;
        }
        let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            sum += *o;
        }
        out.iter_mut().for_each(|o| *o /= sum);
    }

    pub fn nearest(&self, desc: &[f64]) -> usize {
        nearest(desc, &self.centroids).0
    }
}

/// Per-pixel distributions over `categories` contour classes plus a final
/// background class.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenField {
    width: usize,
    height: usize,
    classes: usize,
    probs: Vec<f64>,
}

impl TokenField {
    /// `classes` counts the background entry.
    pub fn new(width: usize, height: usize, classes: usize, probs: Vec<f64>) -> Result<Self> {
        if classes < 2 || probs.len() != width * height * classes {
            return Err(Error::arg("token field size mismatch"));
        }
        for p in probs.chunks(classes) {
            let s: f64 = p.iter().sum();
            if p.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::arg("token field entries must be distributions"));
            }
        }
        Ok(Self {
            width,
            height,
            classes,
            probs,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of entries per pixel, background included.
    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.classes;
        &self.probs[i..i + self.classes]
    }

    pub fn background(&self, x: usize, y: usize) -> f64 {
        self.at(x, y)[self.classes - 1]
    }
}

pub fn descriptor_dim(patch_side: usize) -> usize {
    patch_side * patch_side + ORIENTATION_CHANNELS
}

/// Contrast-normalized raw patch followed by a weighted 4-bin histogram of
/// unsigned gradient orientation.
pub fn describe(window: &[f64], side: usize) -> Vec<f64> {
    debug_assert_eq!(window.len(), side * side);
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let mut desc: Vec<f64> = window.iter().map(|v| v - mean).collect();
    let norm = desc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1e-9 {
        desc.iter_mut().for_each(|v| *v /= norm);
    } else {
        desc.iter_mut().for_each(|v| *v = 0.0);
    }

    let at = |x: isize, y: isize| {
        let cx = x.clamp(0, side as isize - 1) as usize;
        let cy = y.clamp(0, side as isize - 1) as usize;
        window[cy * side + cx]
    };
    let mut hist = [0.0; ORIENTATION_CHANNELS];
    for y in 0..side as isize {
        for x in 0..side as isize {
            let gx = at(x + 1, y) - at(x - 1, y);
            let gy = at(x, y + 1) - at(x, y - 1);
            let mag = gx.hypot(gy);
            if mag <= 0.0 {
                continue;
            }
            let mut theta = gy.atan2(gx);
            if theta < 0.0 {
                theta += std::f64::consts::PI;
            }
            // bins centred at 0, 45, 90, 135 degrees with linear split
            let pos = theta / std::f64::consts::FRAC_PI_4;
            let lo = pos.floor();
            let frac = pos - lo;
            let b0 = (lo as usize) % ORIENTATION_CHANNELS;
            let b1 = (b0 + 1) % ORIENTATION_CHANNELS;
            hist[b0] += mag * (1.0 - frac);
            hist[b1] += mag * frac;
        }
    }
    let total: f64 = hist.iter().sum();
    for h in hist {
        desc.push(if total > 0.0 { ORIENTATION_WEIGHT * h / total } else { 0.0 });
    }
    desc
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Result of [`kmeans`].
#[derive(Debug, Clone)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

/// Lloyd's algorithm with k-means++ seeding; deterministic for a seed.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || points.len() < k {
        return Err(Error::Training(format!(
            "k-means needs at least k = {k} points, got {}",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.gen_range(0..points.len())];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if u < d {
                        break;
                    }
                    u -= d;
                }
            }
            pick.expect("positive total mass")
        } else {
            (0..points.len()).find(|i| !chosen.contains(i)).expect("n >= k")
        };
        chosen.push(next);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }
    let mut centroids: Vec<Vec<f64>> = chosen.iter().map(|&i| points[i].clone()).collect();
    let dim = points[0].len();
    let mut assignment = vec![0usize; points.len()];
    let mut prev = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..KMEANS_MAX_ITERS {
        iterations = it + 1;
        let nearest_all: Vec<(usize, f64)> =
            points.par_iter().map(|p| nearest(p, &centroids)).collect();
        let mut inertia = 0.0;
        for (a, (j, d)) in assignment.iter_mut().zip(&nearest_all) {
            *a = *j;
            inertia += d;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // reseed an empty cluster at the worst-fitted point
                let far = nearest_all
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .unwrap();
                centroids[j] = points[far].clone();
            } else {
                let c = counts[j] as f64;
                centroids[j] = sums[j].iter().map(|s| s / c).collect();
            }
        }
        if inertia == 0.0 || (prev - inertia).abs() <= KMEANS_REL_TOL * prev {
            break;
        }
        prev = inertia;
    }
    // final assignment against the final centroids
    let mut inertia = 0.0;
    for (a, p) in assignment.iter_mut().zip(points) {
        let (j, d) = nearest(p, &centroids);
        *a = j;
        inertia += d;
    }
    Ok(KMeans {
        centroids,
        assignment,
        inertia,
        iterations,
    })
}

/// Clusters contour patches into `categories` contour classes.
pub fn train_codebook(contour_patches: &[Patch], categories: usize, seed: u64) -> Result<TokenCodebook> {
    if categories < 2 {
        return Err(Error::Training("need at least 2 categories".into()));
    }
    if contour_patches.len() < 10 * categories {
        return Err(Error::Training(format!(
            "{} contour patches is fewer than 10 per category ({categories} categories)",
            contour_patches.len()
        )));
    }
    let side = contour_patches[0].side;
    if side % 2 == 0 || contour_patches.iter().any(|p| p.side != side) {
        return Err(Error::Training("contour patches must share one odd side".into()));
    }
    let descs: Vec<Vec<f64>> = contour_patches
        .par_iter()
        .map(|p| describe(&p.data, side))
        .collect();
    let km = kmeans(&descs, categories, seed)?;
    let mean_dist = descs
        .iter()
        .zip(&km.assignment)
        .map(|(d, &a)| sq_dist(d, &km.centroids[a]).sqrt())
        .sum::<f64>()
        / descs.len() as f64;
    Ok(TokenCodebook {
        patch_side: side,
        descriptor_dim: descriptor_dim(side),
        temperature: mean_dist.max(1e-9),
        centroids: km.centroids,
    })
}

/// Patches centred on contour pixels, taking every `step`-th pixel in scan
/// order so that at most `max_patches` are returned.
pub fn contour_patches(
    img: &GrayImage,
    contours: &ContourMap,
    side: usize,
    max_patches: usize,
    image_id: usize,
) -> Result<Vec<Patch>> {
    if !(img.width() == contours.width() && img.height() == contours.height()) {
        return Err(Error::arg("image and contour map differ in size"));
    }
    let pts: Vec<(usize, usize)> = contours.iter_set().collect();
    if pts.is_empty() || max_patches == 0 {
        return Ok(Vec::new());
    }
    let step = pts.len().div_ceil(max_patches);
    let half = (side / 2) as isize;
    pts.iter()
        .step_by(step)
        .map(|&(x, y)| {
            let data = img.window(x as isize - half, y as isize - half, side);
            Patch::new(side, data, (image_id, x, y))
        })
        .collect()
}

/// Chebyshev-radius neighbourhood test via an integral image.
fn near_contour(contours: &ContourMap, radius: usize) -> Vec<bool> {
    let (w, h) = (contours.width(), contours.height());
    let mut integral = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0u32;
        for x in 0..w {
            row += contours.get(x, y) as u32;
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let x0 = x.saturating_sub(radius);
            let y0 = y.saturating_sub(radius);
            let x1 = (x + radius + 1).min(w);
            let y1 = (y + radius + 1).min(h);
            let s = integral[y1 * (w + 1) + x1] + integral[y0 * (w + 1) + x0]
                - integral[y0 * (w + 1) + x1]
                - integral[y1 * (w + 1) + x0];
            out[y * w + x] = s > 0;
        }
    }
    out
}

/// Encodes every pixel within `patch_side / 2` of a contour as a soft
/// category distribution; all other pixels are pure background.
pub fn token_field(img: &GrayImage, contours: &ContourMap, codebook: &TokenCodebook) -> Result<TokenField> {
    if !(img.width() == contours.width() && img.height() == contours.height()) {
        return Err(Error::arg(format!(
            "image {}x{} and contour map {}x{} differ in size",
            img.width(),
            img.height(),
            contours.width(),
            contours.height()
        )));
    }
    codebook.validate()?;
    let (w, h) = (img.width(), img.height());
    let t = codebook.categories();
    let classes = t + 1;
    let side = codebook.patch_side;
    let half = (side / 2) as isize;
    let near = near_contour(contours, side / 2);
    let mut probs = vec![0.0; w * h * classes];
    probs.par_chunks_mut(classes).enumerate().for_each(|(i, out)| {
        if near[i] {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            let desc = describe(&img.window(x - half, y - half, side), side);
            codebook.soft_assign(&desc, &mut out[..t]);
        } else {
            out[t] = 1.0;
        }
    });
    Ok(TokenField {
        width: w,
        height: h,
        classes,
        probs,
    })
}

/// Jensen–Shannon divergence in nats, in `[0, ln 2]`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::arg("distributions must have equal non-zero length"));
    }
    for d in [p, q] {
        if d.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::arg("distribution entries must be finite and non-negative"));
        }
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::arg(format!("distribution sums to {s}, not 1")));
        }
    }
    Ok(jsd_unchecked(p, q))
}

#[inline]
pub(crate) fn jsd_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            acc += a * (a / m).ln();
        }
        if b > 0.0 {
            acc += b * (b / m).ln();
        }
    }
    (0.5 * acc).clamp(0.0, std::f64::consts::LN_2)
}

/// Minkowski pooling of per-pixel JSDs between registered pixel pairs.
pub fn d_mid(
    field_ref: &TokenField,
    field_deg: &TokenField,
    disp: &DisplacementField,
    beta: f64,
    norm: MidNorm,
) -> Result<f64> {
    let (w, h) = (field_ref.width, field_ref.height);
    if field_deg.width != w
        || field_deg.height != h
        || disp.width != w
        || disp.height != h
        || field_ref.classes != field_deg.classes
    {
        return Err(Error::arg("token fields and displacement must share dimensions"));
    }
    if !(beta >= 1.0) {
        return Err(Error::arg(format!("beta must be >= 1, got {beta}")));
    }
    let per_pixel: Vec<f64> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let (dx, dy) = disp.at(x, y);
            let tx = (x as isize + dx as isize).clamp(0, w as isize - 1) as usize;
            let ty = (y as isize + dy as isize).clamp(0, h as isize - 1) as usize;
            jsd_unchecked(field_ref.at(x, y), field_deg.at(tx, ty))
        })
        .collect();
    Ok(minkowski_pool(&per_pixel, beta, norm))
}

/// Pools per-pixel errors; exposed for closed-form checks.
pub fn minkowski_pool(values: &[f64], beta: f64, norm: MidNorm) -> f64 {
    let n = values.len() as f64;
    let sum: f64 = values.iter().map(|v| v.powf(beta)).sum();
    match norm {
        MidNorm::Literal => sum.powf(1.0 / beta) / n,
        MidNorm::MeanPower => (sum / n).powf(1.0 / beta),
    }
}

//! Dense integer registration by exhaustive normalized cross-correlation
//! block matching, so global shifts are not penalized as structural change.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::GrayImage;

/// Blocks whose per-pixel variance falls below this are treated as flat.
pub const FLAT_VARIANCE: f64 = 1e-8;
/// NCC gains smaller than this do not displace an earlier candidate.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationParams {
    pub block: usize,
    pub search_radius: usize,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            block: 9,
            search_radius: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisplacementField {
    pub width: usize,
    pub height: usize,
    pub dx: Vec<i32>,
    pub dy: Vec<i32>,
    pub search_radius: usize,
}

impl DisplacementField {
    pub fn zero(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            dx: vec![0; width * height],
            dy: vec![0; width * height],
            search_radius: 0,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (i32, i32) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    pub fn is_zero(&self) -> bool {
        self.dx.iter().chain(&self.dy).all(|&d| d == 0)
    }
}

/// Candidate offsets in tie-break order: |dx|+|dy|, then dy, then dx.
fn candidate_order(r: i32) -> Vec<(i32, i32)> {
    let mut c: Vec<(i32, i32)> = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).collect();
    c.sort_by_key(|&(dx, dy)| (dx.abs() + dy.abs(), dy, dx));
    c
}

/// Edge-replicated copy of `img` with `pad` extra pixels on every side.
struct Padded {
    w: usize,
    pad: usize,
    data: Vec<f64>,
}

impl Padded {
    fn new(img: &GrayImage, pad: usize) -> Self {
        let w = img.width() + 2 * pad;
        let h = img.height() + 2 * pad;
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(img.get_clamped(x as isize - pad as isize, y as isize - pad as isize));
            }
        }
        Self { w, pad, data }
    }

    /// Row slice of length `len` starting at image coordinates (x, y).
    #[inline]
    fn row(&self, x: isize, y: isize, len: usize) -> &[f64] {
        let px = (x + self.pad as isize) as usize;
        let py = (y + self.pad as isize) as usize;
        let s = py * self.w + px;
        &self.data[s..s + len]
    }
}

/// For every reference pixel, the integer offset into `deg` maximizing the
/// NCC of `block`×`block` neighbourhoods within `search_radius`.
pub fn match_pixels(
    reference: &GrayImage,
    degraded: &GrayImage,
    block: usize,
    search_radius: usize,
) -> Result<DisplacementField> {
    if !reference.same_dims(degraded) {
        return Err(Error::arg(format!(
            "registration needs equal sizes: {}x{} vs {}x{}",
            reference.width(),
            reference.height(),
            degraded.width(),
            degraded.height()
        )));
    }
    if block < 3 || block % 2 == 0 {
        return Err(Error::arg(format!("block must be odd and at least 3, got {block}")));
    }
    let (w, h) = (reference.width(), reference.height());
    let half = (block / 2) as isize;
    let r = search_radius as i32;
    let pref = Padded::new(reference, block / 2);
    let pdeg = Padded::new(degraded, block / 2 + search_radius);
    let order = candidate_order(r);
    let n = (block * block) as f64;

    let results: Vec<(i32, i32)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            let mut a = Vec::with_capacity(block * block);
            for by in -half..=half {
                a.extend_from_slice(pref.row(x - half, y + by, block));
            }
            let mean_a = a.iter().sum::<f64>() / n;
            a.iter_mut().for_each(|v| *v -= mean_a);
            let ss_a: f64 = a.iter().map(|v| v * v).sum();
            if ss_a / n < FLAT_VARIANCE {
                return (0, 0);
            }
            let mut best = (0, 0);
            let mut best_ncc = f64::NEG_INFINITY;
            for &(dx, dy) in &order {
                let ncc = ncc_at(&a, ss_a, &pdeg, x + dx as isize, y + dy as isize, half, block);
                if ncc > best_ncc + TIE_EPS {
                    best_ncc = ncc;
                    best = (dx, dy);
                }
            }
            best
        })
        .collect();

    let (dx, dy) = results.into_iter().unzip();
    Ok(DisplacementField {
        width: w,
        height: h,
        dx,
        dy,
        search_radius,
    })
}

/// NCC between the centred reference block `a` and the block at (cx, cy).
#[inline]
fn ncc_at(a: &[f64], ss_a: f64, deg: &Padded, cx: isize, cy: isize, half: isize, block: usize) -> f64 {
    let n = (block * block) as f64;
    let (mut sum_b, mut sum_bb, mut sum_ab) = (0.0, 0.0, 0.0);
    for (k, by) in (-half..=half).enumerate() {
        let row = deg.row(cx - half, cy + by, block);
        let arow = &a[k * block..(k + 1) * block];
        for (av, bv) in arow.iter().zip(row) {
            sum_b += bv;
            sum_bb += bv * bv;
            sum_ab += av * bv;
        }
    }
    // a is centred, so sum(a * (b - mean_b)) = sum(a * b).
    let ss_b = sum_bb - sum_b * sum_b / n;
    if ss_b / n < FLAT_VARIANCE {
        return 0.0;
    }
    sum_ab / (ss_a * ss_b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn texture(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..w * h).map(|_| rng.gen::<f64>()).collect();
        let smooth = crate::preproc::gaussian_blur_grid(&raw, w, h, 0.8);
        GrayImage::from_clamped(w, h, smooth).unwrap()
    }

    fn shift_right(img: &GrayImage, k: isize) -> GrayImage {
        GrayImage::from_fn(img.width(), img.height(), |x, y| {
            img.get_clamped(x as isize - k, y as isize)
        })
        .unwrap()
    }

    #[test]
    fn identity_and_constant_give_zero() {
        let img = texture(24, 20, 1);
        assert!(match_pixels(&img, &img, 9, 4).unwrap().is_zero());
        let c = GrayImage::constant(10, 10, 0.4).unwrap();
        assert!(match_pixels(&c, &c, 9, 4).unwrap().is_zero());
    }

    #[test]
    fn recovers_global_shift() {
        let img = texture(40, 40, 3);
        let deg = shift_right(&img, 2);
        let disp = match_pixels(&img, &deg, 9, 4).unwrap();
        let (mut hits, mut total) = (0, 0);
        for y in 8..32 {
            for x in 8..32 {
                total += 1;
                hits += (disp.at(x, y) == (2, 0)) as usize;
            }
        }
        assert!(hits as f64 >= 0.95 * total as f64, "{hits}/{total}");
    }

    #[test]
    fn shift_equivariance() {
        let img = texture(40, 40, 5);
        let base = match_pixels(&img, &shift_right(&img, 1), 9, 4).unwrap();
        let more = match_pixels(&img, &shift_right(&img, 3), 9, 4).unwrap();
        let (mut ok, mut total) = (0, 0);
        for y in 8..32 {
            for x in 8..32 {
                total += 1;
                let (a, b) = (base.at(x, y), more.at(x, y));
                ok += (b.0 == a.0 + 2 && b.1 == a.1) as usize;
            }
        }
        assert!(ok as f64 >= 0.9 * total as f64);
    }

    #[test]
    fn argument_checks() {
        let a = GrayImage::constant(8, 8, 0.1).unwrap();
        let b = GrayImage::constant(8, 9, 0.1).unwrap();
        assert!(match_pixels(&a, &b, 9, 4).is_err());
        assert!(match_pixels(&a, &a, 4, 4).is_err());
        assert!(match_pixels(&a, &a, 1, 4).is_err());
    }

    #[test]
    fn tie_break_order() {
        let c = candidate_order(1);
        assert_eq!(c[0], (0, 0));
        assert_eq!(&c[1..5], &[(0, -1), (-1, 0), (1, 0), (0, 1)]);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn displacement_bounded(seed in 0u64..1000, r in 0usize..4) {
            let a = texture(14, 12, seed);
            let b = texture(14, 12, seed + 1);
            let d = match_pixels(&a, &b, 3, r).unwrap();
            proptest::prop_assert!(d.dx.iter().chain(&d.dy).all(|v| v.unsigned_abs() as usize <= r));
        }
    }
}

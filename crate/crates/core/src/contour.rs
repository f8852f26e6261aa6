//! Low-level estimator: Canny contours, plus-shaped dilation and the
//! normalized XOR between dilated reference and degraded contour maps.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::GrayImage;
use crate::preproc::gaussian_blur_grid;

/// Binary contour mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContourMap {
    width: usize,
    height: usize,
    mask: Vec<bool>,
}

impl ContourMap {
    pub fn new(width: usize, height: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != width * height {
            return Err(Error::arg("mask length does not match dimensions"));
        }
        Ok(Self {
            width,
            height,
            mask,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            mask: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.mask[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn transpose(&self) -> ContourMap {
        let mut out = ContourMap::empty(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(y, x, self.get(x, y));
            }
        }
        out
    }

    /// Sub-map with top-left (x, y); pixels outside the source are unset.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> ContourMap {
        let mut out = ContourMap::empty(w, h);
        for yy in 0..h {
            for xx in 0..w {
                let (sx, sy) = (x + xx, y + yy);
                if sx < self.width && sy < self.height {
                    out.set(xx, yy, self.get(sx, sy));
                }
            }
        }
        out
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CannyParams {
    pub gaussian_sigma: f64,
    /// Fraction of the maximum gradient magnitude.
    pub low_threshold: f64,
    /// Fraction of the maximum gradient magnitude.
    pub high_threshold: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            gaussian_sigma: 1.4,
            low_threshold: 0.08,
            high_threshold: 0.2,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma > 0.0) {
            return Err(Error::arg("gaussian_sigma must be positive"));
        }
        let ok = 0.0 < self.low_threshold
            && self.low_threshold < self.high_threshold
            && self.high_threshold < 1.0;
        if !ok {
            return Err(Error::arg(format!(
                "Canny thresholds must satisfy 0 < low ({}) < high ({}) < 1",
                self.low_threshold, self.high_threshold
            )));
        }
        Ok(())
    }
}

const MAG_SCALE: f64 = (1u64 << 32) as f64;

/// Sobel gradients of a row-major grid with clamp-to-edge borders.
pub(crate) fn sobel(data: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |x: isize, y: isize| {
        let cx = x.clamp(0, w as isize - 1) as usize;
        let cy = y.clamp(0, h as isize - 1) as usize;
        data[cy * w + cx]
    };
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            gy[i] = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
        }
    }
    (gx, gy)
}

/// Unit step along the gradient, quantized to one of the 8 neighbours.
/// Symmetric under swapping the two axes.
#[inline]
fn gradient_step(gx: f64, gy: f64) -> (isize, isize) {
    const TAN_67_5: f64 = 2.414_213_562_373_095;
    let (ax, ay) = (gx.abs(), gy.abs());
    let sx = if gx > 0.0 { 1 } else if gx < 0.0 { -1 } else { 0 };
    let sy = if gy > 0.0 { 1 } else if gy < 0.0 { -1 } else { 0 };
    if ax > TAN_67_5 * ay {
        (sx, 0)
    } else if ay > TAN_67_5 * ax {
        (0, sy)
    } else {
        (sx, sy)
    }
}

/// Canny edge detector: Gaussian smoothing, Sobel gradients, non-maximum
/// suppression along the quantized gradient and 8-connected hysteresis.
pub fn canny(img: &GrayImage, params: &CannyParams) -> Result<ContourMap> {
    params.validate()?;
    let (w, h) = (img.width(), img.height());
    let blurred = gaussian_blur_grid(img.data(), w, h, params.gaussian_sigma);
    let (gx, gy) = sobel(&blurred, w, h);
    // Quantized so that mathematically equal maxima compare equal regardless
    // of summation order (keeps the detector transpose-symmetric).
    let mag: Vec<f64> = gx
        .iter()
        .zip(&gy)
        .map(|(a, b)| (a.hypot(*b) * MAG_SCALE).round() / MAG_SCALE)
        .collect();
    let max = mag.iter().cloned().fold(0.0, f64::max);
    if max <= 1e-12 {
        return Ok(ContourMap::empty(w, h));
    }

    let mag_at = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    // Strict against the pixel behind the gradient, non-strict ahead of it,
    // so plateaus of two equal maxima keep exactly one pixel.
    let mut thin = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = mag[i];
            if m <= 0.0 {
                continue;
            }
            let (dx, dy) = gradient_step(gx[i], gy[i]);
            let (xi, yi) = (x as isize, y as isize);
            let behind = mag_at(xi - dx, yi - dy);
            let ahead = mag_at(xi + dx, yi + dy);
            if m > behind && m >= ahead {
                thin[i] = m;
            }
        }
    }

    let high = params.high_threshold * max;
    let low = params.low_threshold * max;
    let mut out = vec![false; w * h];
    let mut queue = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m >= high {
            out[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !out[j] && thin[j] >= low {
                    out[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    ContourMap::new(w, h, out)
}

/// Dilation with the 3×3 plus-shaped structuring element.
pub fn dilate_plus(map: &ContourMap) -> ContourMap {
    let (w, h) = (map.width, map.height);
    let mut out = ContourMap::empty(w, h);
    for (x, y) in map.iter_set() {
        out.set(x, y, true);
        if x > 0 {
            out.set(x - 1, y, true);
        }
        if x + 1 < w {
            out.set(x + 1, y, true);
        }
        if y > 0 {
            out.set(x, y - 1, true);
        }
        if y + 1 < h {
            out.set(x, y + 1, true);
        }
    }
    out
}

/// XOR of the dilated maps normalized by the size of their union.
///
/// Both inputs are raw detector outputs; dilation happens here. Two empty
/// maps give 0.
pub fn d_low(reference: &ContourMap, degraded: &ContourMap) -> Result<f64> {
    if reference.width != degraded.width || reference.height != degraded.height {
        return Err(Error::arg(format!(
            "contour maps differ in size: {}x{} vs {}x{}",
            reference.width, reference.height, degraded.width, degraded.height
        )));
    }
    let a = dilate_plus(reference);
    let b = dilate_plus(degraded);
    let (mut xor, mut union) = (0usize, 0usize);
    for (&p, &q) in a.mask.iter().zip(&b.mask) {
        xor += (p ^ q) as usize;
        union += (p | q) as usize;
    }
    if union == 0 {
        return Ok(0.0);
    }
    Ok(xor as f64 / union as f64)
}

//! Structure/texture separation with a bilateral-grid approximation of the
//! bilateral filter, plus the separable Gaussian used across the crate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BilateralParams {
    pub sigma_spatial: f64,
    pub sigma_range: f64,
    /// Spatial cell size of the grid in pixels; the range axis is always
    /// sampled at `sigma_range`. Cells above one pixel trade accuracy for speed.
    #[serde(default = "default_cell")]
    pub grid_downsample: usize,
}

fn default_cell() -> usize {
    1
}

impl Default for BilateralParams {
    fn default() -> Self {
        Self {
            sigma_spatial: 3.0,
            sigma_range: 0.1,
            grid_downsample: 1,
        }
    }
}

impl BilateralParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_spatial > 0.0 && self.sigma_spatial.is_finite()) {
            return Err(Error::arg("sigma_spatial must be positive"));
        }
        if !(self.sigma_range > 0.0 && self.sigma_range.is_finite()) {
            return Err(Error::arg("sigma_range must be positive"));
        }
        if self.grid_downsample == 0 {
            return Err(Error::arg("grid_downsample must be at least 1"));
        }
        Ok(())
    }

    pub fn cell(&self) -> usize {
        self.grid_downsample
    }
}

/// Normalized sampled Gaussian with radius `ceil(4 sigma)` (at least 1).
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur of a row-major grid with clamp-to-edge borders.
pub fn gaussian_blur_grid(data: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let sx = (x as isize + i as isize - r).clamp(0, width as isize - 1) as usize;
                acc += kv * row[sx];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for (i, &kv) in k.iter().enumerate() {
            let sy = (y as isize + i as isize - r).clamp(0, height as isize - 1) as usize;
            let src = &tmp[sy * width..(sy + 1) * width];
            let dst = &mut out[y * width..(y + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    out
}

pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    let out = gaussian_blur_grid(img.data(), img.width(), img.height(), sigma);
    GrayImage::from_clamped(img.width(), img.height(), out).expect("same dimensions")
}

/// 3-D space × range grid holding homogeneous (value·weight, weight) pairs.
struct Grid {
    gw: usize,
    gh: usize,
    gd: usize,
    vals: Vec<[f64; 2]>,
}

impl Grid {
    #[inline]
    fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.gh + y) * self.gw + x
    }

    fn blur_axis(&mut self, axis: usize, kernel: &[f64], clamp: bool) {
        let (gw, gh, gd) = (self.gw, self.gh, self.gd);
        let (len, stride) = match axis {
            0 => (gw, 1),
            1 => (gh, gw),
            _ => (gd, gw * gh),
        };
        let r = (kernel.len() / 2) as isize;
        let mut line = vec![[0.0; 2]; len];
        let lines: Vec<usize> = (0..gd)
            .flat_map(|z| (0..gh).flat_map(move |y| (0..gw).map(move |x| (x, y, z))))
            .filter(|&(x, y, z)| match axis {
                0 => x == 0,
                1 => y == 0,
                _ => z == 0,
            })
            .map(|(x, y, z)| self.idx(x, y, z))
            .collect();
        for start in lines {
            for (i, l) in line.iter_mut().enumerate() {
                *l = self.vals[start + i * stride];
            }
            for i in 0..len {
                let mut acc = [0.0; 2];
                for (t, &kv) in kernel.iter().enumerate() {
                    let j = i as isize + t as isize - r;
                    let src = if clamp {
                        j.clamp(0, len as isize - 1) as usize
                    } else if j < 0 || j >= len as isize {
                        continue;
                    } else {
                        j as usize
                    };
                    acc[0] += kv * line[src][0];
                    acc[1] += kv * line[src][1];
                }
                self.vals[start + i * stride] = acc;
            }
        }
    }

    #[inline]
    fn trilinear(&self, gx: f64, gy: f64, gz: f64) -> [f64; 2] {
        let (x0, fx) = split(gx, self.gw);
        let (y0, fy) = split(gy, self.gh);
        let (z0, fz) = split(gz, self.gd);
        let mut acc = [0.0; 2];
        for (dz, wz) in [(0, 1.0 - fz), (1, fz)] {
            for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                    let w = wx * wy * wz;
                    if w == 0.0 {
                        continue;
                    }
                    let v = self.vals[self.idx(x0 + dx, y0 + dy, z0 + dz)];
                    acc[0] += w * v[0];
                    acc[1] += w * v[1];
                }
            }
        }
        acc
    }
}

/// Integer cell and fractional offset, keeping `cell + 1` inside the grid.
#[inline]
fn split(g: f64, len: usize) -> (usize, f64) {
    if len < 2 {
        return (0, 0.0);
    }
    let c = (g.floor() as usize).min(len - 2);
    (c, (g - c as f64).clamp(0.0, 1.0))
}

/// Edge-preserving smoothing by splatting into a bilateral grid, blurring the
/// grid with a Gaussian and slicing back with trilinear interpolation.
///
/// The in-grid spatial blur is narrowed so that splat + blur + slice has the
/// same mean spatial variance as a Gaussian of `sigma_spatial`; with a cell of
/// one pixel and a very wide range kernel it reduces to [`gaussian_blur`].
pub fn bilateral_filter(img: &GrayImage, params: &BilateralParams) -> Result<GrayImage> {
    params.validate()?;
    let (w, h) = (img.width(), img.height());
    let cell = params.cell();
    let s = cell as f64;
    let sr = params.sigma_range;

    let (lo, hi) = img
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));

    let gw = (w - 1).div_ceil(cell) + 1;
    let gh = (h - 1).div_ceil(cell) + 1;
    // Range coordinate is relative to the image minimum.
    let gd = ((hi - lo) / sr).ceil() as usize + 2;
    let mut grid = Grid {
        gw,
        gh,
        gd,
        vals: vec![[0.0; 2]; gw * gh * gd],
    };

    for y in 0..h {
        for x in 0..w {
            let v = img.get(x, y);
            let (x0, fx) = split(x as f64 / s, gw);
            let (y0, fy) = split(y as f64 / s, gh);
            let (z0, fz) = split((v - lo) / sr, gd);
            for (dz, wz) in [(0, 1.0 - fz), (1, fz)] {
                for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                    for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                        let wt = wx * wy * wz;
                        if wt == 0.0 {
                            continue;
                        }
                        let i = grid.idx(x0 + dx, y0 + dy, z0 + dz);
                        grid.vals[i][0] += wt * v;
                        grid.vals[i][1] += wt;
                    }
                }
            }
        }
    }

    // Linear splat and slice each add (cell^2 - 1)/6 px^2 of variance per axis.
    let interp_var = (s * s - 1.0) / 3.0;
    let spatial_px = (params.sigma_spatial.powi(2) - interp_var).max(0.25).sqrt();
    let spatial_kernel = gaussian_kernel(spatial_px / s);
    let range_kernel = gaussian_kernel((2.0f64 / 3.0).sqrt());
    grid.blur_axis(0, &spatial_kernel, true);
    grid.blur_axis(1, &spatial_kernel, true);
    grid.blur_axis(2, &range_kernel, false);

    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let v = img.get(x, y);
            let [num, den] = grid.trilinear(x as f64 / s, y as f64 / s, (v - lo) / sr);
            let r = if den > 1e-300 { num / den } else { v };
            *o = r.clamp(lo, hi);
        }
    });
    GrayImage::new(w, h, out)
}

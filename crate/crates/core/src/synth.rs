//! Synthetic corpora for smoke tests and the end-to-end check: piecewise
//! smooth reference scenes and view-synthesis-like degradations (local
//! geometric warps plus stretched-background hole filling).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imgio::{save_pgm, GrayImage};

pub const DEFAULT_AMPLITUDES: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Bar { cx: f64, cy: f64, nx: f64, ny: f64, half: f64, len: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
            Shape::Ellipse { cx, cy, rx, ry } => ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0,
            Shape::Bar { cx, cy, nx, ny, half, len } => {
                let (dx, dy) = (x - cx, y - cy);
                (dx * nx + dy * ny).abs() <= half && (dx * -ny + dy * nx).abs() <= len
            }
        }
    }
}

/// A `size × size` scene: shaded, textured background and a handful of
/// textured objects.
pub fn reference_image(size: usize, seed: u64) -> Result<GrayImage> {
    if size < 16 {
        return Err(Error::arg("synthetic images need size >= 16"));
    }
    let mut rng = rng_for(seed, 0);
    let s = size as f64;
    let (gx, gy, base) = (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(0.35..0.65));
    let texture = |rng: &mut ChaCha8Rng, amp: f64| -> Vec<(f64, f64, f64, f64)> {
        (0..6)
            .map(|_| {
                let (theta, f): (f64, f64) = (rng.gen_range(0.0..std::f64::consts::PI), rng.gen_range(0.15..0.9));
                (f * theta.cos(), f * theta.sin(), rng.gen_range(0.0..std::f64::consts::TAU), amp * rng.gen_range(0.3..1.0))
            })
            .collect()
    };
    let back = texture(&mut rng, 0.05);
    let count = rng.gen_range(4..8);
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let value = rng.gen_range(0.1..0.9);
        let tex = texture(&mut rng, 0.04);
        let shape = match rng.gen_range(0..3) {
            0 => {
                let (x0, y0) = (rng.gen_range(0.0..0.8 * s), rng.gen_range(0.0..0.8 * s));
                let (w, h) = (rng.gen_range(0.12 * s..0.4 * s), rng.gen_range(0.12 * s..0.4 * s));
                Shape::Rect { x0, y0, x1: x0 + w, y1: y0 + h }
            }
            1 => Shape::Ellipse {
                cx: rng.gen_range(0.15 * s..0.85 * s),
                cy: rng.gen_range(0.15 * s..0.85 * s),
                rx: rng.gen_range(0.07 * s..0.22 * s),
                ry: rng.gen_range(0.07 * s..0.22 * s),
            },
            _ => {
                let a: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                Shape::Bar {
                    cx: rng.gen_range(0.2 * s..0.8 * s),
                    cy: rng.gen_range(0.2 * s..0.8 * s),
                    nx: a.cos(),
                    ny: a.sin(),
                    half: rng.gen_range(1.0..3.0),
                    len: rng.gen_range(0.15 * s..0.4 * s),
                }
            }
        };
        shapes.push((shape, value, tex));
    }
    GrayImage::from_fn(size, size, |x, y| {
        let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
        let wave = |t: &[(f64, f64, f64, f64)]| t.iter().map(|&(kx, ky, ph, a)| a * (kx * u + ky * v + ph).sin()).sum::<f64>();
        let mut val = base + gx * (u / s - 0.5) + gy * (v / s - 0.5) + wave(&back);
        for (shape, value, tex) in &shapes {
            if shape.contains(u, v) {
                val = value + wave(tex);
            }
        }
        val.clamp(0.0, 1.0)
    })
}

fn bilinear(img: &GrayImage, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (xi, yi) = (x0 as isize, y0 as isize);
    let p = |dx, dy| img.get_clamped(xi + dx, yi + dy);
    (1.0 - fy) * ((1.0 - fx) * p(0, 0) + fx * p(1, 0)) + fy * ((1.0 - fx) * p(0, 1) + fx * p(1, 1))
}

/// Local random warp with peak displacement `amplitude` pixels followed by
/// `amplitude`-wide holes right of strong edges, filled from the far side.
pub fn distort(img: &GrayImage, amplitude: f64, seed: u64) -> Result<GrayImage> {
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(Error::arg("warp amplitude must be finite and >= 0"));
    }
    let (w, h) = (img.width(), img.height());
    let mut rng = rng_for(seed, 1);
    let sigma = 0.12 * w.min(h) as f64;
    let bumps: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64), a.cos(), a.sin())
        })
        .collect();
    let field = |x: f64, y: f64| {
        bumps.iter().fold((0.0, 0.0), |(sx, sy), &(cx, cy, ux, uy)| {
            let g = (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * sigma * sigma)).exp();
            (sx + g * ux, sy + g * uy)
        })
    };
    let mut peak = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = field(x as f64, y as f64);
            peak = peak.max(dx.hypot(dy));
        }
    }
    let scale = if peak > 0.0 { amplitude / peak } else { 0.0 };
    let warped = GrayImage::from_fn(w, h, |x, y| {
        let (dx, dy) = field(x as f64, y as f64);
        bilinear(img, x as f64 + scale * dx, y as f64 + scale * dy)
    })?;

    // dis-occlusion: a hole of the warp amplitude opens to the right of every
    // strong horizontal transition and is filled by stretching the far side
    let mut out = warped.into_data();
    let hole_w = amplitude.round() as usize;
    if hole_w > 0 {
        for y in 0..h {
            let mut x = 1;
            while x + 1 < w {
                if (img.get(x + 1, y) - img.get(x - 1, y)).abs() > 0.2 {
                    let end = (x + 1 + hole_w).min(w - 1);
                    let fill = out[y * w + end];
                    for v in &mut out[y * w + x + 1..y * w + end] {
                        *v = fill;
                    }
                    x = end + 1;
                } else {
                    x += 1;
                }
            }
        }
    }
    GrayImage::from_clamped(w, h, out)
}

/// Writes references, degraded views and a `manifest.csv` into `dir`.
/// Pseudo-DMOS of a degraded view is its warp amplitude.
pub fn write_corpus(dir: impl AsRef<Path>, refs: usize, amplitudes: &[f64], size: usize, seed: u64) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from("ref,deg,dmos,group\n");
    for i in 0..refs {
        let img_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let reference = reference_image(size, img_seed)?;
        let ref_name = format!("ref_{i:02}.pgm");
        save_pgm(&reference, dir.join(&ref_name))?;
        for (j, &a) in amplitudes.iter().enumerate() {
            let deg = distort(&reference, a, img_seed.wrapping_mul(31).wrapping_add(j as u64 + 1))?;
            let deg_name = format!("deg_{i:02}_{j}.pgm");
            save_pgm(&deg, dir.join(&deg_name))?;
            writeln!(manifest, "{ref_name},{deg_name},{a},content{i:02}").expect("string write");
        }
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = reference_image(48, 3).unwrap();
        assert_eq!(a, reference_image(48, 3).unwrap());
        assert_ne!(a, reference_image(48, 4).unwrap());
        let d = distort(&a, 4.0, 9).unwrap();
        assert_eq!(d, distort(&a, 4.0, 9).unwrap());
        assert!(d.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_amplitude_is_identity() {
        let a = reference_image(32, 1).unwrap();
        assert_eq!(distort(&a, 0.0, 5).unwrap(), a);
    }

    #[test]
    fn distortion_grows_with_amplitude() {
        let a = reference_image(64, 2).unwrap();
        let err = |amp| {
            let d = distort(&a, amp, 11).unwrap();
            a.data().iter().zip(d.data()).map(|(x, y)| (x - y).abs()).sum::<f64>()
        };
        let e: Vec<f64> = DEFAULT_AMPLITUDES.iter().map(|&amp| err(amp)).collect();
        assert!(e.windows(2).all(|p| p[1] > p[0]), "{e:?}");
    }
}

//! Grayscale image carrier, file I/O and patch extraction.

mod container;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};

pub use container::{ByteReader, ByteWriter, MAGIC};

/// Broadcast luma weights (R, G, B).
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Row-major luminance field with every sample in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg("image dimensions must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::arg(format!(
                "data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::arg(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image by clamping every value into `[0, 1]`. NaN maps to 0.
    pub fn from_clamped(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(width, height, data)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::from_clamped(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Sample with clamp-to-edge replication.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.data[cy * self.width + cx]
    }

    pub fn same_dims(&self, other: &GrayImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn transpose(&self) -> GrayImage {
        let mut data = vec![0.0; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                data[x * self.height + y] = self.get(x, y);
            }
        }
        GrayImage {
            width: self.height,
            height: self.width,
            data,
        }
    }

    /// Copies the `side`×`side` window with top-left corner at (x, y); out of
    /// bound samples replicate the nearest edge.
    pub fn window(&self, x: isize, y: isize, side: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(side * side);
        for dy in 0..side as isize {
            for dx in 0..side as isize {
                out.push(self.get_clamped(x + dx, y + dy));
            }
        }
        out
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Square training patch cut from an image.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub side: usize,
    pub data: Vec<f64>,
    /// (image id, top-left x, top-left y)
    pub source: (usize, usize, usize),
}

impl Patch {
    pub fn new(side: usize, data: Vec<f64>, source: (usize, usize, usize)) -> Result<Self> {
        if side < 3 {
            return Err(Error::arg("patch side must be at least 3"));
        }
        if data.len() != side * side {
            return Err(Error::arg("patch data length must be side*side"));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg("patch values must lie in [0, 1]"));
        }
        Ok(Self { side, data, source })
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage {
            width: self.side,
            height: self.side,
            data: self.data.clone(),
        }
    }
}

/// Loads a PNG, PGM or PPM file as luminance in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        other => {
            return Err(Error::Format(format!(
                "{}: expected PNG/PGM/PPM, found {:?}",
                path.display(),
                other
            )))
        }
    }
    let img = reader
        .decode()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(from_dynamic(&img))
}

/// Converts a decoded image to luminance, respecting 8/16-bit depth.
pub fn from_dynamic(img: &DynamicImage) -> GrayImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(b) => b.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.as_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(b) => b.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => img
            .to_rgb16()
            .pixels()
            .map(|p| luma(p.0.map(|c| c as f64 / 65535.0)))
            .collect(),
        _ => img
            .to_rgb8()
            .pixels()
            .map(|p| luma(p.0.map(|c| c as f64 / 255.0)))
            .collect(),
    };
    GrayImage::from_clamped(w, h, data).expect("decoded image has positive dimensions")
}

#[inline]
fn luma(rgb: [f64; 3]) -> f64 {
    LUMA_WEIGHTS[0] * rgb[0] + LUMA_WEIGHTS[1] * rgb[1] + LUMA_WEIGHTS[2] * rgb[2]
}

/// Writes a binary PGM (P5, maxval 255).
pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    write_pgm_bytes(img.width, img.height, &bytes, path.as_ref())
}

/// Writes a binary mask as a PGM with 0/255 samples.
pub fn save_mask_pgm(width: usize, height: usize, mask: &[bool], path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = mask.iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_pgm_bytes(width, height, &bytes, path.as_ref())
}

fn write_pgm_bytes(width: usize, height: usize, bytes: &[u8], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P5\n{width} {height}\n255\n").map_err(|e| Error::io(path, e))?;
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// All fully-inside `side`×`side` patches on a `stride` grid, row-major.
pub fn extract_patches(img: &GrayImage, side: usize, stride: usize) -> Result<Vec<Patch>> {
    extract_patches_tagged(img, 0, side, stride)
}

pub fn extract_patches_tagged(
    img: &GrayImage,
    image_id: usize,
    side: usize,
    stride: usize,
) -> Result<Vec<Patch>> {
    if stride == 0 {
        return Err(Error::arg("stride must be at least 1"));
    }
    if side < 3 {
        return Err(Error::arg("patch side must be at least 3"));
    }
    if side > img.width.min(img.height) {
        return Err(Error::arg(format!(
            "patch side {side} exceeds image dimension {}x{}",
            img.width, img.height
        )));
    }
    let mut out = Vec::new();
    for y in (0..=img.height - side).step_by(stride) {
        for x in (0..=img.width - side).step_by(stride) {
            out.push(Patch {
                side,
                data: img.window(x as isize, y as isize, side),
                source: (image_id, x, y),
            });
        }
    }
    Ok(out)
}

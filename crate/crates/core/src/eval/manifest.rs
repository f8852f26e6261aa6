//! Pair manifests (`ref,deg,dmos,group` CSV) and the images they name.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::imgio::{load_image, GrayImage};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    /// Paths exactly as written in the manifest.
    pub ref_name: String,
    pub deg_name: String,
    pub reference: PathBuf,
    pub degraded: PathBuf,
    pub dmos: f64,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

#[derive(Deserialize)]
struct RawRow {
    #[serde(rename = "ref")]
    reference: String,
    deg: String,
    dmos: f64,
    group: String,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    /// Parses manifest text, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| Error::Format(format!("manifest: {e}")))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["ref", "deg", "dmos", "group"] {
            return Err(Error::Format("manifest header must be `ref,deg,dmos,group`".into()));
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.deserialize::<RawRow>().enumerate() {
            let r = rec.map_err(|e| Error::Format(format!("manifest row {}: {e}", i + 1)))?;
            if !r.dmos.is_finite() {
                return Err(Error::Format(format!("manifest row {}: DMOS must be finite", i + 1)));
            }
            rows.push(ManifestRow {
                reference: base.join(&r.reference),
                degraded: base.join(&r.deg),
                ref_name: r.reference,
                deg_name: r.deg,
                dmos: r.dmos,
                group: r.group,
            });
        }
        Ok(Self { rows })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPair {
    /// Index of the manifest row.
    pub row: usize,
    pub reference: usize,
    pub degraded: usize,
    pub dmos: f64,
    pub group: String,
}

/// Decoded images of a manifest, each distinct path loaded once.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub images: Vec<GrayImage>,
    pub paths: Vec<PathBuf>,
    pub pairs: Vec<CorpusPair>,
    /// Rows skipped because an image could not be read, with the reason.
    pub skipped: Vec<(usize, String)>,
}

impl Corpus {
    pub fn from_images(images: Vec<GrayImage>, pairs: Vec<CorpusPair>) -> Result<Self> {
        for p in &pairs {
            if p.reference >= images.len() || p.degraded >= images.len() {
                return Err(Error::arg("corpus pair refers to a missing image"));
            }
        }
        let paths = (0..images.len()).map(|i| PathBuf::from(format!("#{i}"))).collect();
        Ok(Self { images, paths, pairs, skipped: Vec::new() })
    }

    /// Loads every image; rows whose files fail to load are skipped and listed.
    pub fn load(manifest: &Manifest) -> Self {
        let mut index: BTreeMap<&Path, usize> = BTreeMap::new();
        let mut paths: Vec<PathBuf> = Vec::new();
        for row in &manifest.rows {
            for p in [&row.reference, &row.degraded] {
                index.entry(p.as_path()).or_insert_with(|| {
                    paths.push(p.clone());
                    paths.len() - 1
                });
            }
        }
        let loaded: Vec<Result<GrayImage>> = paths.par_iter().map(load_image).collect();
        let mut images = Vec::new();
        let mut remap = vec![None; paths.len()];
        let mut kept_paths = Vec::new();
        let mut errors: BTreeMap<usize, String> = BTreeMap::new();
        for (i, r) in loaded.into_iter().enumerate() {
            match r {
                Ok(img) => {
                    remap[i] = Some(images.len());
                    images.push(img);
                    kept_paths.push(paths[i].clone());
                }
                Err(e) => {
                    errors.insert(i, e.to_string());
                }
            }
        }
        let mut pairs = Vec::new();
        let mut skipped = Vec::new();
        for (row_idx, row) in manifest.rows.iter().enumerate() {
            let (ri, di) = (index[row.reference.as_path()], index[row.degraded.as_path()]);
            match (remap[ri], remap[di]) {
                (Some(reference), Some(degraded)) => pairs.push(CorpusPair {
                    row: row_idx,
                    reference,
                    degraded,
                    dmos: row.dmos,
                    group: row.group.clone(),
                }),
                _ => {
                    let reason = errors.get(&ri).or_else(|| errors.get(&di)).cloned().unwrap_or_default();
                    log::warn!("skipping manifest row {}: {reason}", row_idx + 1);
                    skipped.push((row_idx, reason));
                }
            }
        }
        Self { images, paths: kept_paths, pairs, skipped }
    }
}

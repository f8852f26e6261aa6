//! Builds a model bundle from a training corpus: contour codebook, then the
//! convolutional dictionary, then the SVR by cross-validation, then the
//! normalization ranges.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::config::Config;
use crate::contour::{canny, d_low, ContourMap};
use crate::csc::learn_dictionary;
use crate::error::{Error, Result, StageExt};
use crate::eval::Corpus;
use crate::imgio::{extract_patches_tagged, GrayImage, Patch};
use crate::metric::{analyze_parts, raw_dissimilarities, ImageAnalysis, ModelBundle, NormStats};
use crate::preproc::bilateral_filter;
use crate::regress::{cross_validate_median, svr_predict};
use crate::token::{contour_patches, train_codebook};

/// Target assigned to reference images when they join the SVR training set.
pub const REFERENCE_TARGET: f64 = 0.0;

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub codebook_patches: usize,
    pub dictionary_patches: usize,
    pub dictionary_objective: Vec<f64>,
    pub svr_samples: usize,
    pub cv_pcc: Vec<f64>,
    pub cv_selected: usize,
    pub raw: Vec<[f64; 3]>,
}

impl TrainSummary {
    pub fn median_pcc(&self) -> f64 {
        self.cv_pcc[self.cv_selected]
    }
}

/// Degraded-image patches whose local contour map departs most from the
/// co-located reference contours.
pub fn select_csc_patches(
    corpus: &Corpus,
    filtered: &[GrayImage],
    contours: &[ContourMap],
    config: &Config,
) -> Result<Vec<Patch>> {
    let c = &config.csc;
    let mut scored: Vec<(f64, usize, Patch)> = Vec::new();
    for (pi, pair) in corpus.pairs.iter().enumerate() {
        let deg = &filtered[pair.degraded];
        let patches = extract_patches_tagged(deg, pair.degraded, c.train_patch_side, c.train_patch_stride)?;
        for patch in patches {
            let (_, x, y) = patch.source;
            let side = c.train_patch_side;
            let dl = d_low(&contours[pair.reference].crop(x, y, side, side), &contours[pair.degraded].crop(x, y, side, side))?;
            scored.push((dl, pi, patch));
        }
    }
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.source.2.cmp(&b.2.source.2)).then(a.2.source.1.cmp(&b.2.source.1))
    });
    let keep = ((scored.len() as f64 * c.select_fraction).ceil() as usize).max(c.kernels).min(c.max_train_patches);
    Ok(scored.into_iter().take(keep).map(|(_, _, p)| p).collect())
}

pub fn train_bundle(corpus: &Corpus, config: &Config) -> Result<(ModelBundle, TrainSummary)> {
    config.validate()?;
    if corpus.pairs.is_empty() {
        return Err(Error::Training("training corpus has no usable pairs".into()));
    }
    for p in &corpus.pairs {
        if !corpus.images[p.reference].same_dims(&corpus.images[p.degraded]) {
            return Err(Error::arg(format!("pair {} has mismatched image sizes", p.row + 1)));
        }
    }
    log::info!("filtering {} images", corpus.images.len());
    let filtered = corpus
        .images
        .par_iter()
        .map(|img| bilateral_filter(img, &config.bilateral))
        .collect::<Result<Vec<_>>>()
        .stage("preproc")?;
    let contours = filtered
        .par_iter()
        .map(|img| canny(img, &config.canny))
        .collect::<Result<Vec<_>>>()
        .stage("contour")?;

    let mut refs: Vec<usize> = corpus.pairs.iter().map(|p| p.reference).collect();
    refs.sort_unstable();
    refs.dedup();
    let t = &config.token;
    let mut token_patches = Vec::new();
    for &r in &refs {
        token_patches.extend(
            contour_patches(&filtered[r], &contours[r], t.patch_side, t.patches_per_image, r).stage("token")?,
        );
    }
    log::info!("training contour codebook on {} patches", token_patches.len());
    let codebook = train_codebook(&token_patches, t.categories, config.seed).stage("token")?;

    let csc_patches = select_csc_patches(corpus, &filtered, &contours, config).stage("csc")?;
    log::info!("learning {} kernels on {} patches", config.csc.kernels, csc_patches.len());
    let c = &config.csc;
    let (dictionary, trace) = learn_dictionary(&csc_patches, c.kernels, c.side, c.alpha, c.outer_iters, config.seed.wrapping_add(1))
        .stage("csc")?;

    log::info!("coding {} images", corpus.images.len());
    let parts = corpus
        .images
        .par_iter()
        .map(|img| analyze_parts(img, &codebook, &dictionary, config))
        .collect::<Result<Vec<_>>>()?;

    let mut ref_group: BTreeMap<usize, &str> = BTreeMap::new();
    for p in &corpus.pairs {
        ref_group.entry(p.reference).or_insert(&p.group);
    }
    let mut xs: Vec<&[f64]> = Vec::new();
    let mut ys = Vec::new();
    let mut groups: Vec<&str> = Vec::new();
    for p in &corpus.pairs {
        xs.push(&parts[p.degraded].3.values);
        ys.push(p.dmos);
        groups.push(&p.group);
    }
    for (&r, &g) in &ref_group {
        xs.push(&parts[r].3.values);
        ys.push(REFERENCE_TARGET);
        groups.push(g);
    }
    log::info!("cross-validating SVR over {} rounds", config.cv.rounds);
    let cv = cross_validate_median(&xs, &ys, &groups, &config.svr, &config.cv).stage("regress")?;

    let analyses: Vec<ImageAnalysis> = parts
        .into_iter()
        .map(|(filtered, contours, tokens, csc)| {
            let quality = svr_predict(&cv.model, &csc.values)?;
            Ok(ImageAnalysis { filtered, contours, tokens, csc, quality })
        })
        .collect::<Result<_>>()
        .stage("regress")?;
    let raw = corpus
        .pairs
        .par_iter()
        .map(|p| raw_dissimilarities(&analyses[p.reference], &analyses[p.degraded], config))
        .collect::<Result<Vec<_>>>()?;
    let norm = NormStats::fit(&raw).stage("metric")?;

    let summary = TrainSummary {
        codebook_patches: token_patches.len(),
        dictionary_patches: csc_patches.len(),
        dictionary_objective: trace.objective,
        svr_samples: ys.len(),
        cv_pcc: cv.pcc.clone(),
        cv_selected: cv.selected_round,
        raw,
    };
    let bundle = ModelBundle {
        config: config.clone(),
        codebook,
        dictionary,
        svr: cv.model,
        norm,
        cv_pcc: cv.pcc,
        cv_selected: cv.selected_round,
    };
    Ok((bundle, summary))
}

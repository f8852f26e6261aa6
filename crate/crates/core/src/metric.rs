//! Final pooling of the three structural dissimilarities, the trained model
//! bundle, and the end-to-end scoring of one image pair.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, Config};
use crate::contour::{canny, d_low, ContourMap};
use crate::csc::{activation_features_with, sparse_code, ActivationMode, ConvDictionary, CscFeature};
use crate::error::{Error, Result, StageExt};
use crate::imgio::{load_image, ByteReader, ByteWriter, GrayImage};
use crate::preproc::bilateral_filter;
use crate::register::match_pixels;
use crate::regress::{svr_predict, SvrModel};
use crate::token::{d_mid, token_field, TokenCodebook, TokenField};

const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolingWeights {
    pub w_l: f64,
    pub w_m: f64,
    pub w_h: f64,
}

impl Default for PoolingWeights {
    fn default() -> Self {
        Self { w_l: 0.05, w_m: 0.25, w_h: 0.75 }
    }
}

impl PoolingWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_l, self.w_m, self.w_h];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::arg(format!("pooling weights must be nonnegative with a positive sum, got {w:?}")));
        }
        Ok(())
    }

    /// Weights divided by their sum.
    pub fn normalized(&self) -> [f64; 3] {
        let sum = self.w_l + self.w_m + self.w_h;
        [self.w_l / sum, self.w_m / sum, self.w_h / sum]
    }
}

/// Per-estimator `(min, max)` of the raw dissimilarities on the training corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub low: (f64, f64),
    pub mid: (f64, f64),
    pub high: (f64, f64),
}

impl NormStats {
    /// Ranges anchored at zero (the identity pair) and extending to the
    /// largest observed value.
    pub fn fit(raw: &[[f64; 3]]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Training("no training pairs for normalization".into()));
        }
        let mut max = [0.0f64; 3];
        for r in raw {
            for (m, v) in max.iter_mut().zip(r) {
                if !v.is_finite() || *v < 0.0 {
                    return Err(Error::Training(format!("raw dissimilarity {v} out of range")));
                }
                *m = m.max(*v);
            }
        }
        for (name, m) in ["d_low", "d_mid", "d_high"].iter().zip(max.iter_mut()) {
            if *m <= 0.0 {
                log::warn!("{name} is zero on every training pair; normalizing with range [0, 1]");
                *m = 1.0;
            }
        }
        Ok(Self { low: (0.0, max[0]), mid: (0.0, max[1]), high: (0.0, max[2]) })
    }

    pub fn validate(&self) -> Result<()> {
        for (lo, hi) in [self.low, self.mid, self.high] {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::Model(format!("normalization range ({lo}, {hi}) is empty")));
            }
        }
        Ok(())
    }
}

pub fn normalize(raw: f64, (min, max): (f64, f64)) -> Result<f64> {
    if !(max > min) {
        return Err(Error::Model(format!("normalization range ({min}, {max}) is empty")));
    }
    Ok(((raw - min) / (max - min)).clamp(0.0, 1.0))
}

pub fn pool(d: [f64; 3], w: &PoolingWeights) -> f64 {
    let w = w.normalized();
    w[0] * d[0] + w[1] * d[1] + w[2] * d[2]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub d_low: f64,
    pub d_mid: f64,
    pub d_high: f64,
    pub d_low_n: f64,
    pub d_mid_n: f64,
    pub d_high_n: f64,
    pub s: f64,
    pub config_fingerprint: String,
    /// Weights after renormalization to unit sum.
    pub weights: [f64; 3],
    pub weights_configured: PoolingWeights,
}

/// Everything learned at training time, read-only afterwards.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub config: Config,
    pub codebook: TokenCodebook,
    pub dictionary: ConvDictionary,
    pub svr: SvrModel,
    pub norm: NormStats,
    /// Held-out PCC of every cross-validation round.
    pub cv_pcc: Vec<f64>,
    pub cv_selected: usize,
}

impl ModelBundle {
    pub fn validate(&self) -> Result<()> {
        self.codebook.validate()?;
        self.dictionary.validate().map_err(|e| Error::Model(e.to_string()))?;
        self.norm.validate()?;
        if self.svr.dim() != self.dictionary.len() {
            return Err(Error::Model(format!(
                "SVR expects {} features but the dictionary has {} kernels",
                self.svr.dim(),
                self.dictionary.len()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(BUNDLE_VERSION);
        w.section(b"CONF", |w| w.put_str(&serde_json::to_string(&self.config).expect("config serializes")));
        w.section(b"TOKN", |w| {
            let c = &self.codebook;
            w.put_usize(c.patch_side);
            w.put_usize(c.descriptor_dim);
            w.put_f64(c.temperature);
            w.put_usize(c.centroids.len());
            for row in &c.centroids {
                w.put_f64s(row);
            }
        });
        w.section(b"DICT", |w| {
            let d = &self.dictionary;
            w.put_usize(d.side);
            w.put_f64(d.lambda_train);
            w.put_u64(d.seed);
            w.put_usize(d.kernels.len());
            for k in &d.kernels {
                w.put_f64s(k);
            }
        });
        w.section(b"SVRM", |w| self.svr.write(w));
        w.section(b"NORM", |w| {
            for (lo, hi) in [self.norm.low, self.norm.mid, self.norm.high] {
                w.put_f64(lo);
                w.put_f64(hi);
            }
        });
        w.section(b"CVAL", |w| {
            w.put_usize(self.cv_selected);
            w.put_f64s(&self.cv_pcc);
        });
        w.into_bytes()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let (mut r, version) = ByteReader::open(buf)?;
        if version != BUNDLE_VERSION {
            return Err(Error::Model(format!("unsupported model version {version}")));
        }
        let config_text = r.section(b"CONF")?.get_str()?;
        let config = Config::from_json(&config_text).map_err(|e| Error::Model(e.to_string()))?;
        let mut s = r.section(b"TOKN")?;
        let (patch_side, descriptor_dim, temperature) = (s.get_usize()?, s.get_usize()?, s.get_f64()?);
        let rows = s.get_usize()?;
        let centroids = (0..rows).map(|_| s.get_f64s()).collect::<Result<Vec<_>>>()?;
        let codebook = TokenCodebook { patch_side, descriptor_dim, temperature, centroids };
        let mut s = r.section(b"DICT")?;
        let (side, lambda_train, seed) = (s.get_usize()?, s.get_f64()?, s.get_u64()?);
        let count = s.get_usize()?;
        let kernels = (0..count).map(|_| s.get_f64s()).collect::<Result<Vec<_>>>()?;
        let mut dictionary = ConvDictionary::new(side, kernels).map_err(|e| Error::Model(e.to_string()))?;
        dictionary.lambda_train = lambda_train;
        dictionary.seed = seed;
        let svr = SvrModel::read(&mut r.section(b"SVRM")?)?;
        let mut s = r.section(b"NORM")?;
        let mut pair = || -> Result<(f64, f64)> { Ok((s.get_f64()?, s.get_f64()?)) };
        let norm = NormStats { low: pair()?, mid: pair()?, high: pair()? };
        let mut s = r.section(b"CVAL")?;
        let cv_selected = s.get_usize()?;
        let cv_pcc = s.get_f64s()?;
        if !r.is_empty() {
            return Err(Error::Format("trailing data after model sections".into()));
        }
        let bundle = Self { config, codebook, dictionary, svr, norm, cv_pcc, cv_selected };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Hex SHA-256 of the serialized container.
    pub fn fingerprint(&self) -> String {
        hex(&Sha256::digest(self.to_bytes()))
    }
}

/// Combined hash of the scoring configuration and the model.
pub fn config_fingerprint(config: &Config, bundle: &ModelBundle) -> String {
    let mut h = Sha256::new();
    h.update(config.fingerprint().as_bytes());
    h.update(bundle.fingerprint().as_bytes());
    hex(&h.finalize())
}

/// Per-image intermediate representations.
#[derive(Debug, Clone)]
pub struct ImageAnalysis {
    pub filtered: GrayImage,
    pub contours: ContourMap,
    pub tokens: TokenField,
    pub csc: CscFeature,
    /// SVR prediction on `csc`.
    pub quality: f64,
}

pub fn activation_mode(config: &Config) -> ActivationMode {
    if config.csc.abs_activation {
        ActivationMode::Absolute
    } else {
        ActivationMode::Signed
    }
}

/// Filtering, contours and activation features, without the SVR stage.
pub(crate) fn analyze_parts(
    img: &GrayImage,
    codebook: &TokenCodebook,
    dict: &ConvDictionary,
    config: &Config,
) -> Result<(GrayImage, ContourMap, TokenField, CscFeature)> {
    let filtered = bilateral_filter(img, &config.bilateral).stage("preproc")?;
    let contours = canny(&filtered, &config.canny).stage("contour")?;
    let tokens = token_field(&filtered, &contours, codebook).stage("token")?;
    let z = sparse_code(&filtered, dict, config.csc.alpha, config.csc.code_iters).stage("csc")?;
    let csc = activation_features_with(&z, config.csc.epsilon, activation_mode(config));
    Ok((filtered, contours, tokens, csc))
}

pub fn analyze(img: &GrayImage, bundle: &ModelBundle, config: &Config) -> Result<ImageAnalysis> {
    let (filtered, contours, tokens, csc) = analyze_parts(img, &bundle.codebook, &bundle.dictionary, config)?;
    let quality = svr_predict(&bundle.svr, &csc.values).stage("regress")?;
    Ok(ImageAnalysis { filtered, contours, tokens, csc, quality })
}

/// Raw `[d_low, d_mid, d_high]` of a pair of analyzed images.
pub fn raw_dissimilarities(reference: &ImageAnalysis, degraded: &ImageAnalysis, config: &Config) -> Result<[f64; 3]> {
    if !reference.filtered.same_dims(&degraded.filtered) {
        return Err(Error::arg(format!(
            "reference is {}x{} but degraded is {}x{}",
            reference.filtered.width(),
            reference.filtered.height(),
            degraded.filtered.width(),
            degraded.filtered.height()
        )));
    }
    let dl = d_low(&reference.contours, &degraded.contours).stage("contour")?;
    let reg = &config.registration;
    let disp = match_pixels(&reference.filtered, &degraded.filtered, reg.block, reg.search_radius)
        .stage("register")?;
    let dm = d_mid(&reference.tokens, &degraded.tokens, &disp, config.token.beta, config.token.mid_norm)
        .stage("token")?;
    let dh = (reference.quality - degraded.quality).abs();
    Ok([dl, dm, dh])
}

pub fn report_from_raw(raw: [f64; 3], norm: &NormStats, config: &Config, fingerprint: String) -> Result<ScoreReport> {
    let n = [normalize(raw[0], norm.low)?, normalize(raw[1], norm.mid)?, normalize(raw[2], norm.high)?];
    Ok(ScoreReport {
        d_low: raw[0],
        d_mid: raw[1],
        d_high: raw[2],
        d_low_n: n[0],
        d_mid_n: n[1],
        d_high_n: n[2],
        s: pool(n, &config.weights),
        config_fingerprint: fingerprint,
        weights: config.weights.normalized(),
        weights_configured: config.weights,
    })
}

pub fn score_images(reference: &GrayImage, degraded: &GrayImage, bundle: &ModelBundle, config: &Config) -> Result<ScoreReport> {
    config.validate()?;
    let a = analyze(reference, bundle, config)?;
    let b = analyze(degraded, bundle, config)?;
    let raw = raw_dissimilarities(&a, &b, config)?;
    report_from_raw(raw, &bundle.norm, config, config_fingerprint(config, bundle))
}

pub fn score_pair(
    ref_path: impl AsRef<Path>,
    deg_path: impl AsRef<Path>,
    bundle: &ModelBundle,
    config: &Config,
) -> Result<ScoreReport> {
    let r = load_image(ref_path).stage("imgio")?;
    let d = load_image(deg_path).stage("imgio")?;
    score_images(&r, &d, bundle, config)
}

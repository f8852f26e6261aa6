//! Every tunable of the metric in one serializable tree.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contour::CannyParams;
use crate::error::{Error, Result};
use crate::metric::PoolingWeights;
use crate::preproc::BilateralParams;
use crate::register::RegistrationParams;
use crate::regress::{CvParams, SvrParams};
use crate::token::MidNorm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenConfig {
    /// Number of contour categories T.
    pub categories: usize,
    pub patch_side: usize,
    /// Minkowski exponent.
    pub beta: f64,
    pub mid_norm: MidNorm,
    /// Contour patches sampled per training image for the codebook.
    pub patches_per_image: usize,
}

impl Default for TokenConfig {
    fn default() -> Self {
        Self { categories: 32, patch_side: 15, beta: 4.0, mid_norm: MidNorm::Literal, patches_per_image: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CscConfig {
    /// Kernel count K.
    pub kernels: usize,
    /// Kernel side s.
    pub side: usize,
    /// Sparsity weight, shared by learning and inference.
    pub alpha: f64,
    /// Activation threshold.
    pub epsilon: f64,
    pub abs_activation: bool,
    pub outer_iters: usize,
    /// Side of the training patches drawn from degraded images.
    pub train_patch_side: usize,
    pub train_patch_stride: usize,
    /// Fraction of candidate patches kept, ranked by local contour dissimilarity.
    pub select_fraction: f64,
    pub max_train_patches: usize,
    /// FISTA iteration cap when coding whole images.
    pub code_iters: usize,
}

impl Default for CscConfig {
    fn default() -> Self {
        Self {
            kernels: 32,
            side: 8,
            alpha: 0.05,
            epsilon: 0.01,
            abs_activation: false,
            outer_iters: 20,
            train_patch_side: 16,
            train_patch_stride: 8,
            select_fraction: 0.1,
            max_train_patches: 64,
            code_iters: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub bilateral: BilateralParams,
    pub canny: CannyParams,
    pub registration: RegistrationParams,
    pub token: TokenConfig,
    pub csc: CscConfig,
    pub svr: SvrParams,
    pub cv: CvParams,
    pub weights: PoolingWeights,
    /// Seed for the codebook and dictionary initializations.
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            bilateral: BilateralParams::default(),
            canny: CannyParams::default(),
            registration: RegistrationParams::default(),
            token: TokenConfig::default(),
            csc: CscConfig::default(),
            svr: SvrParams::default(),
            cv: CvParams::default(),
            weights: PoolingWeights::default(),
            seed: 1,
        }
    }
}

fn check(ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::arg(format!("config: {what}")))
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.bilateral.validate()?;
        self.canny.validate()?;
        let r = &self.registration;
        check(r.block >= 1 && r.block % 2 == 1, "registration.block must be odd and >= 1")?;
        let t = &self.token;
        check(t.categories >= 1, "token.categories must be >= 1")?;
        check(t.patch_side >= 3 && t.patch_side % 2 == 1, "token.patch_side must be odd and >= 3")?;
        check(t.beta >= 1.0 && t.beta.is_finite(), "token.beta must be >= 1")?;
        check(t.patches_per_image >= 1, "token.patches_per_image must be >= 1")?;
        let c = &self.csc;
        check(c.kernels >= 1, "csc.kernels must be >= 1")?;
        check(c.side >= 1, "csc.side must be >= 1")?;
        check(c.alpha > 0.0 && c.alpha.is_finite(), "csc.alpha must be positive")?;
        check(c.epsilon >= 0.0 && c.epsilon.is_finite(), "csc.epsilon must be >= 0")?;
        check(c.outer_iters >= 1, "csc.outer_iters must be >= 1")?;
        check(c.train_patch_side >= c.side.max(3), "csc.train_patch_side must be >= max(side, 3)")?;
        check(c.train_patch_stride >= 1, "csc.train_patch_stride must be >= 1")?;
        check(c.select_fraction > 0.0 && c.select_fraction <= 1.0, "csc.select_fraction must lie in (0, 1]")?;
        check(c.max_train_patches >= c.kernels, "csc.max_train_patches must be >= csc.kernels")?;
        check(c.code_iters >= 1, "csc.code_iters must be >= 1")?;
        self.svr.validate()?;
        check(self.cv.rounds >= 1, "cv.rounds must be >= 1")?;
        check(self.cv.test_fraction > 0.0 && self.cv.test_fraction < 1.0, "cv.test_fraction must lie in (0, 1)")?;
        self.weights.validate()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

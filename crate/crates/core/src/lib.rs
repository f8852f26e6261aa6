//! Full-reference quality metric for synthesized (DIBR) views built on three
//! levels of structural representation: dilated contour maps, contour-category
//! distributions and convolutional sparse-coding activations.
//!
//! The scoring path is `preproc` → {`contour`; `register` + `token`;
//! `csc` + `regress`} → `metric`. `eval` holds the subjective-correlation
//! harness and `train` builds a [`metric::ModelBundle`] from a manifest.

pub mod config;
pub mod contour;
pub mod csc;
pub mod error;
pub mod eval;
pub mod imgio;
pub mod metric;
pub mod preproc;
pub mod register;
pub mod regress;
pub mod synth;
pub mod token;
pub mod train;

pub use config::Config;
pub use contour::{CannyParams, ContourMap};
pub use csc::{ConvDictionary, CscFeature, FeatureMaps};
pub use error::{Error, Result};
pub use imgio::{GrayImage, Patch};
pub use metric::{ModelBundle, NormStats, PoolingWeights, ScoreReport};
pub use preproc::BilateralParams;
pub use register::DisplacementField;
pub use regress::SvrModel;
pub use token::{MidNorm, TokenCodebook, TokenField};

//! Evaluation against subjective scores: statistics, logistic mapping,
//! F-test, manifest-driven scoring and the pooling-weight sweep.

mod ftest;
mod harness;
mod logistic;
mod manifest;
pub mod stats;

pub use ftest::{f_cdf, f_critical, f_test, ln_gamma, reg_inc_beta, FTest};
pub use harness::{
    evaluate, evaluate_scored, score_corpus, simplex_grid, weight_sweep, write_json, write_residuals_csv,
    write_sweep_csv, EvalReport, Evaluation, ResidualRow, ScoredPair, SkippedRow, SweepRow,
};
pub use logistic::{logistic_fit, LogisticFit, LogisticParams};
pub use manifest::{Corpus, CorpusPair, Manifest, ManifestRow};
pub use stats::{pcc, rmse, scc};

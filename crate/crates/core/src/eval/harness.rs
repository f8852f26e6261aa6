//! Manifest-driven scoring, correlation report and pooling-weight sweep.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::logistic::{logistic_fit, LogisticParams};
use super::manifest::{Corpus, Manifest};
use super::stats::{pcc, rmse, scc};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::metric::{analyze, config_fingerprint, normalize, pool, raw_dissimilarities, ModelBundle, NormStats, PoolingWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub row: usize,
    pub ref_name: String,
    pub deg_name: String,
    pub dmos: f64,
    /// Raw `[d_low, d_mid, d_high]`.
    pub raw: [f64; 3],
}

/// Raw dissimilarities for every loadable manifest row, in manifest order.
pub fn score_corpus(manifest: &Manifest, corpus: &Corpus, bundle: &ModelBundle, config: &Config) -> Result<Vec<ScoredPair>> {
    config.validate()?;
    let analyses = corpus.images.par_iter().map(|img| analyze(img, bundle, config)).collect::<Result<Vec<_>>>()?;
    corpus
        .pairs
        .par_iter()
        .map(|p| {
            let raw = raw_dissimilarities(&analyses[p.reference], &analyses[p.degraded], config)?;
            let row = &manifest.rows[p.row];
            Ok(ScoredPair { row: p.row, ref_name: row.ref_name.clone(), deg_name: row.deg_name.clone(), dmos: p.dmos, raw })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRow {
    #[serde(rename = "ref")]
    pub reference: String,
    pub deg: String,
    pub s: f64,
    pub mapped: f64,
    pub dmos: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SkippedRow {
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub pairs: usize,
    pub pcc: f64,
    pub scc: f64,
    pub rmse: f64,
    /// Spearman correlation of the unmapped scores with DMOS.
    pub scc_raw: f64,
    pub logistic: LogisticParams,
    pub logistic_converged: bool,
    pub weights: [f64; 3],
    pub weights_configured: PoolingWeights,
    pub config_fingerprint: String,
    pub model_fingerprint: String,
    pub skipped: Vec<SkippedRow>,
    pub config: Config,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub residuals: Vec<ResidualRow>,
}

fn pooled(scored: &[ScoredPair], norm: &NormStats, weights: &PoolingWeights) -> Result<Vec<f64>> {
    scored
        .iter()
        .map(|p| Ok(pool([normalize(p.raw[0], norm.low)?, normalize(p.raw[1], norm.mid)?, normalize(p.raw[2], norm.high)?], weights)))
        .collect()
}

struct Fitted {
    s: Vec<f64>,
    mapped: Vec<f64>,
    params: LogisticParams,
    converged: bool,
    pcc: f64,
    scc: f64,
    rmse: f64,
}

fn fit_scores(scored: &[ScoredPair], norm: &NormStats, weights: &PoolingWeights) -> Result<Fitted> {
    let s = pooled(scored, norm, weights)?;
    let dmos: Vec<f64> = scored.iter().map(|p| p.dmos).collect();
    let fit = logistic_fit(&s, &dmos)?;
    let mapped = fit.params.map(&s);
    Ok(Fitted {
        pcc: pcc(&mapped, &dmos).unwrap_or(f64::NAN),
        scc: scc(&mapped, &dmos).unwrap_or(f64::NAN),
        rmse: rmse(&mapped, &dmos)?,
        s,
        mapped,
        params: fit.params,
        converged: fit.converged,
    })
}

/// Correlation report of already-scored pairs under the weights in `config`.
pub fn evaluate_scored(scored: &[ScoredPair], bundle: &ModelBundle, config: &Config, skipped: &[(usize, String)]) -> Result<Evaluation> {
    let f = fit_scores(scored, &bundle.norm, &config.weights)?;
    let dmos: Vec<f64> = scored.iter().map(|p| p.dmos).collect();
    let residuals = scored
        .iter()
        .zip(f.s.iter().zip(&f.mapped))
        .map(|(p, (&s, &m))| ResidualRow {
            reference: p.ref_name.clone(),
            deg: p.deg_name.clone(),
            s,
            mapped: m,
            dmos: p.dmos,
            residual: m - p.dmos,
        })
        .collect();
    let report = EvalReport {
        pairs: scored.len(),
        pcc: f.pcc,
        scc: f.scc,
        rmse: f.rmse,
        scc_raw: scc(&f.s, &dmos).unwrap_or(f64::NAN),
        logistic: f.params,
        logistic_converged: f.converged,
        weights: config.weights.normalized(),
        weights_configured: config.weights,
        config_fingerprint: config_fingerprint(config, bundle),
        model_fingerprint: bundle.fingerprint(),
        skipped: skipped.iter().map(|(row, reason)| SkippedRow { row: row + 1, reason: reason.clone() }).collect(),
        config: config.clone(),
    };
    Ok(Evaluation { report, residuals })
}

/// Loads, scores and evaluates every pair of the manifest.
pub fn evaluate(manifest: &Manifest, bundle: &ModelBundle, config: &Config) -> Result<(Evaluation, Vec<ScoredPair>)> {
    let corpus = Corpus::load(manifest);
    let scored = score_corpus(manifest, &corpus, bundle, config)?;
    Ok((evaluate_scored(&scored, bundle, config, &corpus.skipped)?, scored))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub w_l: f64,
    pub w_m: f64,
    pub w_h: f64,
    pub pcc: f64,
    pub scc: f64,
    pub rmse: f64,
}

/// Grid points of the weight simplex at spacing `step`.
pub fn simplex_grid(step: f64) -> Result<Vec<PoolingWeights>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::arg(format!("sweep step must lie in (0, 1], got {step}")));
    }
    let n = (1.0 / step).round() as usize;
    if ((n as f64) * step - 1.0).abs() > 1e-9 {
        return Err(Error::arg(format!("sweep step {step} does not divide 1")));
    }
    let mut out = Vec::new();
    for i in 0..=n {
        for j in 0..=n - i {
            out.push(PoolingWeights { w_l: i as f64 / n as f64, w_m: j as f64 / n as f64, w_h: (n - i - j) as f64 / n as f64 });
        }
    }
    Ok(out)
}

/// Evaluates every simplex point; statistics that are undefined at a point
/// (for instance a constant pooled score) are reported as NaN.
pub fn weight_sweep(scored: &[ScoredPair], bundle: &ModelBundle, step: f64) -> Result<Vec<SweepRow>> {
    let grid = simplex_grid(step)?;
    Ok(grid
        .par_iter()
        .map(|w| {
            let (pcc, scc, rmse) = match fit_scores(scored, &bundle.norm, w) {
                Ok(f) => (f.pcc, f.scc, f.rmse),
                Err(_) => (f64::NAN, f64::NAN, f64::NAN),
            };
            SweepRow { w_l: w.w_l, w_m: w.w_m, w_h: w.w_h, pcc, scc, rmse }
        })
        .collect())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_residuals_csv(path: impl AsRef<Path>, rows: &[ResidualRow]) -> Result<()> {
    write_csv(path.as_ref(), rows)
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    write_csv(path.as_ref(), rows)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

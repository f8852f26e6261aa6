//! High-level estimator: support vector regression over dictionary
//! activation features, with median-model selection across repeated
//! content-grouped cross-validation.

mod smo;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csc::CscFeature;
use crate::error::{Error, Result};
use crate::eval::stats::pcc;
use crate::imgio::{ByteReader, ByteWriter};

pub const KKT_TOL: f64 = 1e-4;
const MAX_SMO_ITERS: usize = 10_000_000;
const MIN_GROUPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    #[default]
    Rbf,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvrParams {
    pub kernel: KernelKind,
    /// RBF width; `None` means `1 / feature_dim`.
    pub gamma: Option<f64>,
    pub c: f64,
    pub eps_tube: f64,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self { kernel: KernelKind::Rbf, gamma: None, c: 10.0, eps_tube: 0.1 }
    }
}

impl SvrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::arg(format!("SVR C must be positive, got {}", self.c)));
        }
        if !(self.eps_tube >= 0.0 && self.eps_tube.is_finite()) {
            return Err(Error::arg(format!("SVR eps_tube must be >= 0, got {}", self.eps_tube)));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::arg(format!("SVR gamma must be positive, got {g}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SvrDiagnostics {
    pub iterations: usize,
    pub kkt_gap: f64,
    /// Feature dimensions with zero spread on the training data.
    pub degenerate_dims: usize,
    /// Set when every input dimension is constant but targets vary.
    pub poor_fit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrModel {
    pub kernel: KernelKind,
    pub gamma: f64,
    pub c: f64,
    pub eps_tube: f64,
    /// Standardized support vectors with their dual coefficients.
    pub support_vectors: Vec<(Vec<f64>, f64)>,
    pub bias: f64,
    /// Per-dimension `(mean, stdev)`.
    pub feature_scaler: Vec<(f64, f64)>,
    pub diagnostics: SvrDiagnostics,
}

impl AsRef<[f64]> for CscFeature {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

fn kernel_value(kind: KernelKind, gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    match kind {
        KernelKind::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        KernelKind::Rbf => {
            let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            (-gamma * d).exp()
        }
    }
}

impl SvrModel {
    pub fn dim(&self) -> usize {
        self.feature_scaler.len()
    }

    fn scale(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.feature_scaler).map(|(v, (m, s))| (v - m) / s).collect()
    }

    pub(crate) fn write(&self, w: &mut ByteWriter) {
        w.put_u32(match self.kernel {
            KernelKind::Rbf => 0,
            KernelKind::Linear => 1,
        });
        w.put_f64(self.gamma);
        w.put_f64(self.c);
        w.put_f64(self.eps_tube);
        w.put_f64(self.bias);
        let (means, stds): (Vec<f64>, Vec<f64>) = self.feature_scaler.iter().cloned().unzip();
        w.put_f64s(&means);
        w.put_f64s(&stds);
        w.put_usize(self.support_vectors.len());
        for (v, coef) in &self.support_vectors {
            w.put_f64(*coef);
            w.put_f64s(v);
        }
    }

    pub(crate) fn read(r: &mut ByteReader) -> Result<Self> {
        let kernel = match r.get_u32()? {
            0 => KernelKind::Rbf,
            1 => KernelKind::Linear,
            k => return Err(Error::Model(format!("unknown SVR kernel tag {k}"))),
        };
        let (gamma, c, eps_tube, bias) = (r.get_f64()?, r.get_f64()?, r.get_f64()?, r.get_f64()?);
        let means = r.get_f64s()?;
        let stds = r.get_f64s()?;
        if means.len() != stds.len() || stds.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Model("bad SVR feature scaler".into()));
        }
        let count = r.get_usize()?;
        let mut support_vectors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let coef = r.get_f64()?;
            let v = r.get_f64s()?;
            if v.len() != means.len() || coef.abs() > c * (1.0 + 1e-9) {
                return Err(Error::Model("bad SVR support vector".into()));
            }
            support_vectors.push((v, coef));
        }
        Ok(Self {
            kernel,
            gamma,
            c,
            eps_tube,
            support_vectors,
            bias,
            feature_scaler: means.into_iter().zip(stds).collect(),
            diagnostics: SvrDiagnostics::default(),
        })
    }
}

/// Trains an epsilon-SVR by SMO on standardized features.
pub fn svr_train<F: AsRef<[f64]>>(features: &[F], targets: &[f64], params: &SvrParams) -> Result<SvrModel> {
    params.validate()?;
    if features.len() != targets.len() {
        return Err(Error::arg(format!("{} features but {} targets", features.len(), targets.len())));
    }
    if features.is_empty() {
        return Err(Error::arg("SVR needs at least one sample"));
    }
    let dim = features[0].as_ref().len();
    if dim == 0 || features.iter().any(|f| f.as_ref().len() != dim) {
        return Err(Error::arg("SVR features must share a nonzero dimension"));
    }
    if features.iter().any(|f| f.as_ref().iter().any(|v| !v.is_finite())) || targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::arg("non-finite SVR input"));
    }
    let l = features.len();
    let mut scaler = Vec::with_capacity(dim);
    let mut degenerate = 0;
    for d in 0..dim {
        let mean = features.iter().map(|f| f.as_ref()[d]).sum::<f64>() / l as f64;
        let var = features.iter().map(|f| (f.as_ref()[d] - mean).powi(2)).sum::<f64>() / l as f64;
        let sd = var.sqrt();
        if sd > 1e-12 * (1.0 + mean.abs()) {
            scaler.push((mean, sd));
        } else {
            degenerate += 1;
            scaler.push((mean, 1.0));
        }
    }
    let scaled: Vec<Vec<f64>> = features
        .iter()
        .map(|f| f.as_ref().iter().zip(&scaler).map(|(v, (m, s))| (v - m) / s).collect())
        .collect();
    let gamma = params.gamma.unwrap_or(1.0 / dim as f64);
    let mut kernel = vec![0.0; l * l];
    for i in 0..l {
        for j in 0..=i {
            let v = kernel_value(params.kernel, gamma, &scaled[i], &scaled[j]);
            kernel[i * l + j] = v;
            kernel[j * l + i] = v;
        }
    }
    let out = smo::solve(&kernel, targets, params.c, params.eps_tube, KKT_TOL, MAX_SMO_ITERS);
    if out.gap >= KKT_TOL {
        return Err(Error::Solver(format!("SMO stopped with KKT violation {:.3e}", out.gap)));
    }
    let targets_vary = targets.iter().any(|t| (t - targets[0]).abs() > params.eps_tube);
    let poor_fit = degenerate == dim && targets_vary;
    if poor_fit {
        log::warn!("SVR features are constant across samples while targets vary; the fit is degenerate");
    }
    let support_vectors = scaled
        .into_iter()
        .zip(&out.beta)
        .filter(|(_, b)| **b != 0.0)
        .map(|(v, b)| (v, *b))
        .collect();
    Ok(SvrModel {
        kernel: params.kernel,
        gamma,
        c: params.c,
        eps_tube: params.eps_tube,
        support_vectors,
        bias: -out.rho,
        feature_scaler: scaler,
        diagnostics: SvrDiagnostics {
            iterations: out.iterations,
            kkt_gap: out.gap,
            degenerate_dims: degenerate,
            poor_fit,
        },
    })
}

pub fn svr_predict(model: &SvrModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(Error::arg(format!("feature has {} dims, model expects {}", x.len(), model.dim())));
    }
    let z = model.scale(x);
    Ok(model
        .support_vectors
        .iter()
        .map(|(sv, coef)| coef * kernel_value(model.kernel, model.gamma, sv, &z))
        .sum::<f64>()
        + model.bias)
}

/// Absolute difference of the two predictions.
pub fn d_high(model: &SvrModel, f_ref: &CscFeature, f_deg: &CscFeature) -> Result<f64> {
    Ok((svr_predict(model, &f_ref.values)? - svr_predict(model, &f_deg.values)?).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvParams {
    pub rounds: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for CvParams {
    fn default() -> Self {
        Self { rounds: 1000, test_fraction: 0.2, seed: 7 }
    }
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub model: SvrModel,
    /// Held-out PCC per round, NaN where undefined.
    pub pcc: Vec<f64>,
    pub selected_round: usize,
}

impl CvOutcome {
    pub fn median_pcc(&self) -> f64 {
        self.pcc[self.selected_round]
    }
}

fn split_groups(groups: &[&str], test_fraction: f64, seed: u64, round: usize) -> BTreeSet<String> {
    let mut distinct: Vec<&str> = groups.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round as u64);
    distinct.shuffle(&mut rng);
    let n_test = ((distinct.len() as f64 * test_fraction).round() as usize).clamp(1, distinct.len() - 1);
    distinct[..n_test].iter().map(|s| s.to_string()).collect()
}

/// Repeated group-level train/test splits; returns the model whose held-out
/// PCC is the lower median of the finite values.
pub fn cross_validate_median<F, G>(
    features: &[F],
    targets: &[f64],
    groups: &[G],
    params: &SvrParams,
    cv: &CvParams,
) -> Result<CvOutcome>
where
    F: AsRef<[f64]> + Sync,
    G: AsRef<str> + Sync,
{
    if features.len() != targets.len() || groups.len() != targets.len() {
        return Err(Error::arg("features, targets and groups must have equal length"));
    }
    let names: Vec<&str> = groups.iter().map(|g| g.as_ref()).collect();
    let n_groups = names.iter().collect::<BTreeSet<_>>().len();
    if n_groups < MIN_GROUPS {
        return Err(Error::arg(format!("cross-validation needs at least {MIN_GROUPS} content groups, got {n_groups}")));
    }
    if cv.rounds == 0 || !(cv.test_fraction > 0.0 && cv.test_fraction < 1.0) {
        return Err(Error::arg("cross-validation needs rounds >= 1 and test fraction in (0, 1)"));
    }
    let rounds: Vec<Result<(f64, SvrModel)>> = (0..cv.rounds)
        .into_par_iter()
        .map(|round| {
            let test = split_groups(&names, cv.test_fraction, cv.seed, round);
            let (mut tr_x, mut tr_y, mut te_x, mut te_y) = (vec![], vec![], vec![], vec![]);
            let (mut tr_groups, mut te_groups) = (BTreeSet::new(), BTreeSet::new());
            for i in 0..targets.len() {
                if test.contains(names[i]) {
                    te_x.push(features[i].as_ref());
                    te_y.push(targets[i]);
                    te_groups.insert(names[i]);
                } else {
                    tr_x.push(features[i].as_ref());
                    tr_y.push(targets[i]);
                    tr_groups.insert(names[i]);
                }
            }
            if !tr_groups.is_disjoint(&te_groups) {
                return Err(Error::Training(format!("round {round} leaks a content group across the split")));
            }
            let model = svr_train(&tr_x, &tr_y, params)?;
            let pred = te_x.iter().map(|x| svr_predict(&model, x)).collect::<Result<Vec<_>>>()?;
            let r = pcc(&pred, &te_y).unwrap_or(f64::NAN);
            Ok((r, model))
        })
        .collect();
    let mut pccs = Vec::with_capacity(cv.rounds);
    let mut models = Vec::with_capacity(cv.rounds);
    for r in rounds {
        let (p, m) = r?;
        pccs.push(p);
        models.push(m);
    }
    let mut finite: Vec<(f64, usize)> = pccs.iter().enumerate().filter(|(_, p)| p.is_finite()).map(|(i, p)| (*p, i)).collect();
    if finite.is_empty() {
        return Err(Error::Training("held-out PCC undefined in every round".into()));
    }
    finite.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let selected_round = finite[(finite.len() - 1) / 2].1;
    let model = models.swap_remove(selected_round);
    Ok(CvOutcome { model, pcc: pccs, selected_round })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let y = (0..n).map(|i| 2.0 * i as f64 + 1.0).collect();
        (x, y)
    }

    #[test]
    fn linear_kernel_recovers_line() {
        let (x, y) = line(10);
        let p = SvrParams { kernel: KernelKind::Linear, c: 1000.0, eps_tube: 0.01, gamma: None };
        let m = svr_train(&x, &y, &p).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let pred = svr_predict(&m, xi).unwrap();
            assert!((pred - yi).abs() < 0.05, "{pred} vs {yi}");
        }
        // off-sample on the same line
        assert!((svr_predict(&m, &[4.5]).unwrap() - 10.0).abs() < 0.05);
    }

    #[test]
    fn constant_targets_inside_tube() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![(i as f64).sin(), i as f64 * 0.3]).collect();
        let y = vec![3.5; 12];
        let m = svr_train(&x, &y, &SvrParams::default()).unwrap();
        for xi in &x {
            assert!((svr_predict(&m, xi).unwrap() - 3.5).abs() <= 0.1 + 1e-9);
        }
    }

    #[test]
    fn single_sample() {
        let m = svr_train(&[vec![0.3, 0.7]], &[2.0], &SvrParams::default()).unwrap();
        assert!((svr_predict(&m, &[0.3, 0.7]).unwrap() - 2.0).abs() <= 0.1 + 1e-9);
    }

    #[test]
    fn no_support_vectors_returns_bias() {
        let mut m = svr_train(&[vec![1.0], vec![2.0]], &[0.0, 0.05], &SvrParams::default()).unwrap();
        m.support_vectors.clear();
        assert_eq!(svr_predict(&m, &[5.0]).unwrap(), m.bias);
        assert!(svr_predict(&m, &[5.0, 1.0]).is_err());
    }

    #[test]
    fn degenerate_features_flagged() {
        let x = vec![vec![1.0, 2.0]; 6];
        let y: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let m = svr_train(&x, &y, &SvrParams::default()).unwrap();
        assert!(m.diagnostics.poor_fit);
        assert_eq!(m.diagnostics.degenerate_dims, 2);
    }

    #[test]
    fn rbf_fit_and_dual_bounds() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 10.0, ((i * 7) % 13) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|v| (v[0]).sin() + 0.1 * v[1]).collect();
        let p = SvrParams::default();
        let m = svr_train(&x, &y, &p).unwrap();
        assert!(m.diagnostics.kkt_gap < KKT_TOL);
        assert!(m.support_vectors.iter().all(|(_, c)| c.abs() <= p.c + 1e-12));
        let err: f64 = x.iter().zip(&y).map(|(a, b)| (svr_predict(&m, a).unwrap() - b).abs()).fold(0.0, f64::max);
        assert!(err < 0.35, "max train error {err}");
    }

    #[test]
    fn d_high_linear_hand_value() {
        // standardization of x0 over {0, 1}: mean .5, sd .5, so a linear
        // model fitted to y = x0 through two points is exactly w = 1 in raw units
        let x = vec![vec![0.0, 3.0], vec![1.0, 3.0]];
        let p = SvrParams { kernel: KernelKind::Linear, c: 1e3, eps_tube: 0.0, gamma: None };
        let m = svr_train(&x, &[0.0, 1.0], &p).unwrap();
        let a = CscFeature { values: vec![0.4, 3.0], epsilon: 0.0 };
        let b = CscFeature { values: vec![0.6, 3.0], epsilon: 0.0 };
        assert!((d_high(&m, &a, &b).unwrap() - 0.2).abs() < 1e-3);
        assert_eq!(d_high(&m, &a, &a).unwrap(), 0.0);
        assert_eq!(d_high(&m, &a, &b).unwrap(), d_high(&m, &b, &a).unwrap());
    }

    fn grouped(n_groups: usize, per: usize) -> (Vec<Vec<f64>>, Vec<f64>, Vec<String>) {
        let mut x = vec![];
        let mut y = vec![];
        let mut g = vec![];
        for gi in 0..n_groups {
            for k in 0..per {
                let v = (gi * per + k) as f64 / (n_groups * per) as f64;
                x.push(vec![v, ((gi * 31 + k * 17) % 7) as f64 * 0.01]);
                y.push(3.0 * v + 0.5);
                g.push(format!("g{gi}"));
            }
        }
        (x, y, g)
    }

    #[test]
    fn cv_linear_corpus() {
        let (x, y, g) = grouped(10, 4);
        let p = SvrParams { kernel: KernelKind::Linear, c: 100.0, eps_tube: 0.01, gamma: None };
        let cv = CvParams { rounds: 50, ..Default::default() };
        let out = cross_validate_median(&x, &y, &g, &p, &cv).unwrap();
        assert_eq!(out.pcc.len(), 50);
        assert!(out.median_pcc() >= 0.999, "{}", out.median_pcc());
        let again = cross_validate_median(&x, &y, &g, &p, &cv).unwrap();
        assert_eq!(again.selected_round, out.selected_round);
        assert_eq!(again.model, out.model);
    }

    #[test]
    fn cv_single_round_and_preconditions() {
        let (x, y, g) = grouped(5, 3);
        let cv = CvParams { rounds: 1, ..Default::default() };
        let out = cross_validate_median(&x, &y, &g, &SvrParams::default(), &cv).unwrap();
        assert_eq!(out.selected_round, 0);
        let (x, y, g) = grouped(4, 3);
        assert!(matches!(cross_validate_median(&x, &y, &g, &SvrParams::default(), &cv), Err(Error::Argument(_))));
    }

    #[test]
    fn splits_are_group_disjoint() {
        let names: Vec<String> = (0..12).map(|i| format!("c{i}")).collect();
        let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        for round in 0..100 {
            let test = split_groups(&refs, 0.2, 3, round);
            assert_eq!(test.len(), 2);
            assert!(test.iter().all(|t| names.contains(t)));
        }
    }

    #[test]
    fn triangle_inequality() {
        use rand::Rng;
        let (x, y, _) = grouped(6, 4);
        let m = svr_train(&x, &y, &SvrParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let mut f = || CscFeature { values: vec![rng.gen::<f64>(), rng.gen::<f64>() * 0.1], epsilon: 0.0 };
            let (a, b, c) = (f(), f(), f());
            let ab = d_high(&m, &a, &b).unwrap();
            let bc = d_high(&m, &b, &c).unwrap();
            let ac = d_high(&m, &a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn container_round_trip() {
        let (x, y, _) = grouped(5, 3);
        let m = svr_train(&x, &y, &SvrParams::default()).unwrap();
        let mut w = ByteWriter::new(1);
        w.section(b"SVR ", |w| m.write(w));
        let bytes = w.into_bytes();
        let (mut r, _) = ByteReader::open(&bytes).unwrap();
        let back = SvrModel::read(&mut r.section(b"SVR ").unwrap()).unwrap();
        assert_eq!(back.support_vectors, m.support_vectors);
        assert_eq!(back.bias, m.bias);
        assert_eq!(svr_predict(&back, &x[2]).unwrap(), svr_predict(&m, &x[2]).unwrap());
    }
}

//! Correlation and error statistics used by the evaluation protocol.

use crate::error::{Error, Result};

fn check_pair(a: &[f64], b: &[f64], min: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::arg(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.len() < min {
        return Err(Error::arg(format!("need at least {min} samples, got {}", a.len())));
    }
    Ok(())
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Sample Pearson correlation.
pub fn pcc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, 2)?;
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::Undefined("correlation with zero variance".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank-order correlation.
pub fn scc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, 2)?;
    pcc(&ranks(a), &ranks(b))
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, 1)?;
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((s / a.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 1.0, 4.0, 3.0, 5.0];
        assert!((pcc(&a, &b).unwrap() - 0.8).abs() < 1e-12);
        // untied ranks: 1 - 6 sum(d^2) / (n (n^2 - 1)) with sum(d^2) = 4
        assert!((scc(&a, &b).unwrap() - 0.8).abs() < 1e-12);
        let lin: Vec<f64> = a.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pcc(&a, &lin).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((pcc(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((scc(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let shifted: Vec<f64> = a.iter().map(|x| x - 0.7).collect();
        assert!((rmse(&a, &shifted).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn undefined_cases() {
        assert!(matches!(pcc(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::Undefined(_))));
        assert!(matches!(scc(&[3.0, 3.0, 3.0], &[1.0, 2.0, 3.0]), Err(Error::Undefined(_))));
        assert!(pcc(&[1.0], &[1.0]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn tied_ranks() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    proptest::proptest! {
        #[test]
        fn pcc_affine_invariant(a in proptest::collection::vec(-10.0f64..10.0, 3..30), s in 0.1f64..5.0, t in -3.0f64..3.0) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x.sin() + i as f64 * 0.1).collect();
            if let (Ok(r0), true) = (pcc(&a, &b), true) {
                let a2: Vec<f64> = a.iter().map(|x| s * x + t).collect();
                proptest::prop_assert!((pcc(&a2, &b).unwrap() - r0).abs() < 1e-9);
            }
        }

        #[test]
        fn scc_monotone_invariant(a in proptest::collection::vec(-5.0f64..5.0, 3..30)) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| (x * 1.3).cos() + i as f64).collect();
            if let Ok(r0) = scc(&a, &b) {
                let a2: Vec<f64> = a.iter().map(|x| x.powi(3) + (0.5 * x).exp()).collect();
                proptest::prop_assert!((scc(&a2, &b).unwrap() - r0).abs() < 1e-12);
            }
        }
    }
}

//! Factor adjustment: remove the top-K singular directions of the design
//! from both the design and the response.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::linalg;

/// Thin SVD with singular values sorted descending.
#[derive(Debug, Clone)]
pub struct SvdTriples {
    pub singular_values: DVector<f64>,
    /// n x r, unit-norm columns.
    pub left: DMatrix<f64>,
    /// p x r, unit-norm columns.
    pub right: DMatrix<f64>,
}

impl SvdTriples {
    pub fn len(&self) -> usize {
        self.singular_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.singular_values.is_empty()
    }

    /// Keep only the first `k` triples.
    pub fn truncate(&self, k: usize) -> SvdTriples {
        SvdTriples {
            singular_values: self.singular_values.rows(0, k).into_owned(),
            left: self.left.columns(0, k).into_owned(),
            right: self.right.columns(0, k).into_owned(),
        }
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.left.nrows(), self.right.nrows());
        for k in 0..self.len() {
            out += self.singular_values[k] * self.left.column(k) * self.right.column(k).transpose();
        }
        out
    }
}

pub fn svd_design(x: &DMatrix<f64>) -> Result<SvdTriples> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return param("design must have at least one row and one column");
    }
    if !linalg::is_finite(x) {
        return Err(Error::Numeric("design has non-finite entries".into()));
    }
    let svd = SVD::try_new(x.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numeric("SVD did not converge".into()))?;
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V'");
    let r = svd.singular_values.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut left = DMatrix::zeros(x.nrows(), r);
    let mut right = DMatrix::zeros(x.ncols(), r);
    for (dst, &src) in order.iter().enumerate() {
        left.set_column(dst, &u.column(src));
        right.set_column(dst, &vt.row(src).transpose());
    }
    let singular_values = DVector::from_iterator(r, order.iter().map(|&i| svd.singular_values[i]));
    Ok(SvdTriples {
        singular_values,
        left,
        right,
    })
}

/// Largest admissible K: one dimension always remains.
pub fn k_cap(n: usize, p: usize) -> usize {
    n.min(p).saturating_sub(1)
}

/// Number of singular values with `sigma_k^2 > n log(p)` (strict).
pub fn select_k_threshold(singular_values: &[f64], n: usize, p: usize) -> usize {
    let cut = n as f64 * (p as f64).ln();
    let k = singular_values.iter().take_while(|s| *s * *s > cut).count();
    k.min(k_cap(n, p))
}

/// Elbow of the scree plot: the index with the largest relative drop
/// `(s_k^2 - s_{k+1}^2) / (s_{k+1}^2 + 1e-12)`, searched over the first half
/// of the spectrum. Ties go to the smaller index.
pub fn select_k_elbow(singular_values: &[f64]) -> Result<usize> {
    let len = singular_values.len();
    if len < 3 {
        return param(format!("elbow rule needs at least 3 singular values, got {len}"));
    }
    let sq: Vec<f64> = singular_values.iter().map(|s| s * s).collect();
    let limit = (len / 2).max(1);
    let mut best = (1, f64::NEG_INFINITY);
    for k in 1..=limit {
        let gap = (sq[k - 1] - sq[k]) / (sq[k] + 1e-12);
        if gap > best.1 {
            best = (k, gap);
        }
    }
    Ok(best.0)
}

/// How to choose the number of factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KRule {
    #[default]
    Threshold,
    Elbow,
    Fixed(usize),
}

impl KRule {
    pub fn choose(&self, triples: &SvdTriples, n: usize, p: usize) -> Result<usize> {
        let sv = triples.singular_values.as_slice();
        match *self {
            KRule::Threshold => Ok(select_k_threshold(sv, n, p)),
            KRule::Elbow => Ok(select_k_elbow(sv)?.min(k_cap(n, p))),
            KRule::Fixed(k) => Ok(k),
        }
    }
}

impl FromStr for KRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "threshold" => Ok(KRule::Threshold),
            "elbow" => Ok(KRule::Elbow),
            other => match other.strip_prefix("fixed:") {
                Some(k) => k
                    .trim()
                    .parse()
                    .map(KRule::Fixed)
                    .map_err(|_| Error::Parameter(format!("bad K in {other:?}"))),
                None => param(format!(
                    "unknown k rule {other:?} (expected threshold, elbow or fixed:<K>)"
                )),
            },
        }
    }
}

impl fmt::Display for KRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KRule::Threshold => write!(f, "threshold"),
            KRule::Elbow => write!(f, "elbow"),
            KRule::Fixed(k) => write!(f, "fixed:{k}"),
        }
    }
}

impl Serialize for KRule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for KRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The factor-adjusted linear model `y~ = X~ beta + z~`.
#[derive(Debug, Clone)]
pub struct FactorAdjusted {
    pub k: usize,
    pub y_tilde: DVector<f64>,
    pub x_tilde: DMatrix<f64>,
    /// `X~'X~ / n`.
    pub gram: DMatrix<f64>,
    /// `X~' y~`.
    pub xty: DVector<f64>,
    /// The K removed triples.
    pub triples: SvdTriples,
}

impl FactorAdjusted {
    pub fn n(&self) -> usize {
        self.x_tilde.nrows()
    }

    pub fn p(&self) -> usize {
        self.x_tilde.ncols()
    }

    /// Left singular vectors of the removed factors, n x K.
    pub fn factors(&self) -> &DMatrix<f64> {
        &self.triples.left
    }
}

/// Remove `k` factors. Computes the SVD only when `k > 0`.
pub fn adjust(x: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> Result<FactorAdjusted> {
    if k == 0 {
        return adjust_with(x, y, None, 0);
    }
    let triples = svd_design(x)?;
    adjust_with(x, y, Some(&triples), k)
}

/// Choose K with `rule` and adjust.
pub fn adjust_auto(x: &DMatrix<f64>, y: &DVector<f64>, rule: KRule) -> Result<FactorAdjusted> {
    if rule == KRule::Fixed(0) {
        return adjust_with(x, y, None, 0);
    }
    let triples = svd_design(x)?;
    let k = rule.choose(&triples, x.nrows(), x.ncols())?;
    adjust_with(x, y, Some(&triples), k)
}

/// Adjust using precomputed triples (must hold at least `k` of them).
pub fn adjust_with(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    triples: Option<&SvdTriples>,
    k: usize,
) -> Result<FactorAdjusted> {
    let (n, p) = x.shape();
    if n == 0 || p == 0 {
        return param("design must have at least one row and one column");
    }
    if y.len() != n {
        return param(format!("response has length {} but design has {n} rows", y.len()));
    }
    if k > 0 && k > k_cap(n, p) {
        return param(format!("K = {k} exceeds min(n, p) - 1 = {}", k_cap(n, p)));
    }
    let mut y_tilde = y.clone();
    let mut x_tilde = x.clone();
    let kept = match (k, triples) {
        (0, _) => SvdTriples {
            singular_values: DVector::zeros(0),
            left: DMatrix::zeros(n, 0),
            right: DMatrix::zeros(p, 0),
        },
        (_, Some(t)) if t.len() >= k => t.truncate(k),
        _ => return param(format!("need {k} singular triples to remove {k} factors")),
    };
    for f in 0..k {
        let u = kept.left.column(f);
        let v = kept.right.column(f);
        let s = kept.singular_values[f];
        let uy = u.dot(y);
        y_tilde.axpy(-uy, &u, 1.0);
        for j in 0..p {
            let vj = v[j];
            for i in 0..n {
                x_tilde[(i, j)] -= s * (u[i] * vj);
            }
        }
    }
    let gram = linalg::gram(&x_tilde);
    let xty = x_tilde.tr_mul(&y_tilde);
    Ok(FactorAdjusted {
        k,
        y_tilde,
        x_tilde,
        gram,
        xty,
        triples: kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::sample_design;

    fn random(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        sample_design(&DMatrix::identity(p, p), n, seed).unwrap()
    }

    #[test]
    fn svd_of_identity_and_diagonal() {
        let t = svd_design(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(t.singular_values.as_slice(), &[1.0, 1.0]);
        let t = svd_design(&DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0])).unwrap();
        assert!((t.singular_values[0] - 3.0).abs() < 1e-14);
        assert!((t.singular_values[1] - 2.0).abs() < 1e-14);
        assert!((t.right[(1, 0)].abs() - 1.0).abs() < 1e-14);
        assert!((t.left[(1, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn svd_reconstructs() {
        for (n, p) in [(5, 8), (8, 5), (6, 6)] {
            let x = random(n, p, 3);
            let t = svd_design(&x).unwrap();
            assert_eq!(t.len(), n.min(p));
            let err = (t.reconstruct() - &x).norm() / x.norm();
            assert!(err < 1e-10, "{err}");
            let utu = t.left.tr_mul(&t.left);
            let vtv = t.right.tr_mul(&t.right);
            let eye = DMatrix::identity(t.len(), t.len());
            assert!((utu - &eye).amax() < 1e-12);
            assert!((vtv - &eye).amax() < 1e-12);
            assert!(t.singular_values.as_slice().windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn svd_rejects_nan() {
        let mut x = DMatrix::identity(2, 2);
        x[(0, 1)] = f64::NAN;
        assert!(matches!(svd_design(&x), Err(Error::Numeric(_))));
    }

    #[test]
    fn threshold_rule() {
        // n log p = 100 ln 1000 ~ 690.8
        let sv: Vec<f64> = [5000.0f64, 1500.0, 300.0].iter().map(|s| s.sqrt()).collect();
        assert_eq!(select_k_threshold(&sv, 100, 1000), 2);
        assert_eq!(select_k_threshold(&[1.0, 0.5], 100, 1000), 0);
        // boundary: a value whose square equals n log p exactly is not counted
        let cut = 100.0 * 1000f64.ln();
        let root = cut.sqrt();
        let on_cut = [root.next_down(), root, root.next_up()]
            .into_iter()
            .find(|s| s * s == cut);
        if let Some(s) = on_cut {
            assert_eq!(select_k_threshold(&[s], 100, 1000), 0);
        }
        assert_eq!(select_k_threshold(&[root.next_down()], 100, 1000), 0);
        assert_eq!(select_k_threshold(&[root * 1.001], 100, 1000), 1);
    }

    #[test]
    fn elbow_rule() {
        let sq = |v: &[f64]| v.iter().map(|s| s.sqrt()).collect::<Vec<_>>();
        assert_eq!(select_k_elbow(&sq(&[100.0, 90.0, 5.0, 4.0, 3.0])).unwrap(), 2);
        assert_eq!(select_k_elbow(&sq(&[100.0, 5.0, 4.0, 3.0])).unwrap(), 1);
        assert_eq!(select_k_elbow(&sq(&[10.0, 10.0, 10.0])).unwrap(), 1);
        assert!(select_k_elbow(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn k_rule_parsing() {
        assert_eq!("threshold".parse::<KRule>().unwrap(), KRule::Threshold);
        assert_eq!("elbow".parse::<KRule>().unwrap(), KRule::Elbow);
        assert_eq!("fixed:3".parse::<KRule>().unwrap(), KRule::Fixed(3));
        assert!("fixed:x".parse::<KRule>().is_err());
        assert!("pca".parse::<KRule>().is_err());
        assert_eq!(KRule::Fixed(2).to_string(), "fixed:2");
    }

    #[test]
    fn k_zero_is_identity() {
        let x = random(10, 4, 1);
        let y = DVector::from_fn(10, |i, _| i as f64);
        let fa = adjust(&x, &y, 0).unwrap();
        assert_eq!(fa.x_tilde, x);
        assert_eq!(fa.y_tilde, y);
        assert_eq!(fa.gram, linalg::gram(&x));
    }

    #[test]
    fn k_too_large() {
        let x = random(4, 6, 1);
        let y = DVector::zeros(4);
        assert!(matches!(adjust(&x, &y, 4), Err(Error::Parameter(_))));
        assert!(matches!(adjust(&x, &y, 7), Err(Error::Parameter(_))));
        assert!(adjust(&x, &y, 3).is_ok());
    }

    #[test]
    fn projector_identities() {
        let (n, p, k) = (12, 9, 2);
        let x = random(n, p, 5);
        let y = DVector::from_fn(n, |i, _| (i as f64).sin());
        let fa = adjust(&x, &y, k).unwrap();
        let t = &fa.triples;
        let hu = DMatrix::identity(n, n) - &t.left * t.left.transpose();
        let hv = DMatrix::identity(p, p) - &t.right * t.right.transpose();
        let rel = |a: &DMatrix<f64>| (a - &fa.x_tilde).norm() / fa.x_tilde.norm();
        assert!(rel(&(&hu * &x)) < 1e-8);
        assert!(rel(&(&x * &hv)) < 1e-8);
        assert!((&hu * &y - &fa.y_tilde).norm() < 1e-10 * y.norm());
        // orthogonality to removed factors
        assert!(t.left.tr_mul(&fa.y_tilde).amax() < 1e-8 * y.norm());
        assert!(t.left.tr_mul(&fa.x_tilde).amax() < 1e-8 * x.norm());
        // G = Theta - sum (s_k^2 / n) v_k v_k'
        let theta = linalg::gram(&x);
        let mut want = theta.clone();
        for f in 0..k {
            let v = t.right.column(f);
            want -= (t.singular_values[f].powi(2) / n as f64) * v * v.transpose();
        }
        assert!((&fa.gram - want).amax() < 1e-8);
        assert!(linalg::min_eigenvalue(&fa.gram) > -1e-10);
    }

    #[test]
    fn spectrum_of_adjusted_gram() {
        let (n, p, k) = (30, 8, 3);
        let x = random(n, p, 9);
        let fa = adjust(&x, &DVector::zeros(n), k).unwrap();
        let (theta_vals, _) = linalg::sym_eigen_desc(&linalg::gram(&x));
        let (g_vals, _) = linalg::sym_eigen_desc(&fa.gram);
        let top = fa.triples.singular_values[0].powi(2) / n as f64;
        // G keeps Theta's trailing spectrum and replaces the top K by zeros
        for i in 0..(p - k) {
            let rel = (g_vals[i] - theta_vals[i + k]).abs() / theta_vals[i + k];
            assert!(rel < 1e-8, "{i}: {rel}");
        }
        for i in (p - k)..p {
            assert!(g_vals[i].abs() <= 1e-8 * top);
        }
    }

    #[test]
    fn sign_flips_do_not_change_outputs() {
        let (n, p) = (10, 6);
        let x = random(n, p, 2);
        let y = DVector::from_fn(n, |i, _| 1.0 + i as f64);
        let t = svd_design(&x).unwrap();
        let a = adjust_with(&x, &y, Some(&t), 2).unwrap();
        let mut flipped = t.clone();
        for f in 0..2 {
            flipped.left.column_mut(f).neg_mut();
            flipped.right.column_mut(f).neg_mut();
        }
        let b = adjust_with(&x, &y, Some(&flipped), 2).unwrap();
        assert_eq!(a.y_tilde, b.y_tilde);
        assert_eq!(a.x_tilde, b.x_tilde);
        assert_eq!(a.gram, b.gram);
    }

    #[test]
    fn second_pass_finds_no_factor() {
        // strong two-factor design: the threshold rule removes both factors,
        // and re-running it on the adjusted data selects nothing
        use crate::design::{materialize_cov, CovKind, CovSpec};
        let sigma = materialize_cov(&CovSpec::new(CovKind::TwoFactor { rho: 0.5, rho1: 0.6 }, 300)).unwrap();
        let x = sample_design(&sigma, 100, 4).unwrap();
        let y = DVector::zeros(100);
        let fa = adjust_auto(&x, &y, KRule::Threshold).unwrap();
        assert!(fa.k >= 1);
        let again = adjust_auto(&fa.x_tilde, &fa.y_tilde, KRule::Threshold).unwrap();
        assert_eq!(again.k, 0);
    }
}

//! FA-CAR for generalized linear models with canonical link. The left
//! singular vectors of the removed factors enter every local fit as
//! confounders; local scores are differences of maximized log-likelihoods.

use std::collections::{BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::factor::adjust_auto;
use crate::graph::{build_graph, build_graph_dropping, enumerate_neighborhoods};
use crate::scores::{FacarParams, Method, RankingResult};

pub const MAX_ITER: usize = 100;
/// Coefficient norm beyond which a still-improving fit is declared separated.
pub const SEPARATION_NORM: f64 = 30.0;

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Exponential family with canonical link, `f(y) = exp{y theta - b(theta) + c(y)}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    Logistic,
}

impl Family {
    /// `b(theta)`.
    pub fn cumulant(&self, theta: f64) -> f64 {
        match self {
            Family::Logistic => softplus(theta),
        }
    }

    /// `b'(theta)`.
    pub fn mean(&self, theta: f64) -> f64 {
        match self {
            Family::Logistic => sigmoid(theta),
        }
    }

    /// `b''(theta)`.
    pub fn variance(&self, theta: f64) -> f64 {
        match self {
            Family::Logistic => {
                let m = sigmoid(theta);
                m * (1.0 - m)
            }
        }
    }

    pub fn check_response(&self, y: &DVector<f64>) -> Result<()> {
        match self {
            Family::Logistic => {
                if let Some(i) = y.iter().position(|v| *v != 0.0 && *v != 1.0) {
                    return param(format!("logistic response must be 0/1; y[{i}] = {}", y[i]));
                }
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "logistic" => Ok(Family::Logistic),
            other => param(format!("unsupported family {other:?}")),
        }
    }
}

/// Maximizer of the local log-likelihood over `(alpha, beta0, beta_V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMleResult {
    pub loglik: f64,
    pub alpha: DVector<f64>,
    pub intercept: f64,
    pub beta_v: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Columns `[1, U (K), X~_V]` of one local model.
#[derive(Debug, Clone)]
pub struct LocalDesign {
    z: DMatrix<f64>,
    k: usize,
}

impl LocalDesign {
    pub fn new(x_tilde: &DMatrix<f64>, factors: &DMatrix<f64>, set: &[usize]) -> Result<Self> {
        let n = x_tilde.nrows();
        if factors.nrows() != n {
            return param("factor matrix and design disagree on n");
        }
        if let Some(&j) = set.iter().find(|&&j| j >= x_tilde.ncols()) {
            return param(format!("variable {j} out of range"));
        }
        let k = factors.ncols();
        let d = 1 + k + set.len();
        let mut z = DMatrix::zeros(n, d);
        z.column_mut(0).fill(1.0);
        for f in 0..k {
            z.set_column(1 + f, &factors.column(f));
        }
        for (c, &j) in set.iter().enumerate() {
            z.set_column(1 + k + c, &x_tilde.column(j));
        }
        Ok(Self { z, k })
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    /// Coefficients ordered `[beta0, alpha.., beta_V..]`.
    pub fn loglik(&self, family: Family, y: &DVector<f64>, coef: &DVector<f64>) -> f64 {
        let eta = &self.z * coef;
        eta.iter()
            .zip(y.iter())
            .map(|(t, yi)| t * yi - family.cumulant(*t))
            .sum()
    }

    pub fn gradient(&self, family: Family, y: &DVector<f64>, coef: &DVector<f64>) -> DVector<f64> {
        let eta = &self.z * coef;
        let resid = DVector::from_iterator(
            self.n(),
            eta.iter().zip(y.iter()).map(|(t, yi)| yi - family.mean(*t)),
        );
        self.z.tr_mul(&resid)
    }

    /// Negative Hessian `Z' W Z`.
    pub fn information(&self, family: Family, coef: &DVector<f64>) -> DMatrix<f64> {
        let eta = &self.z * coef;
        let d = self.dim();
        let mut info = DMatrix::zeros(d, d);
        for (i, t) in eta.iter().enumerate() {
            let w = family.variance(*t);
            let row = self.z.row(i);
            for a in 0..d {
                let wa = w * row[a];
                for b in a..d {
                    info[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                info[(a, b)] = info[(b, a)];
            }
        }
        info
    }

    /// Damped Newton from zero with step halving on likelihood decrease.
    pub fn fit(&self, family: Family, y: &DVector<f64>) -> Result<LocalMleResult> {
        let n = self.n() as f64;
        let d = self.dim();
        let mut coef = DVector::zeros(d);
        let mut ll = self.loglik(family, y, &coef);
        let mut converged = false;
        let mut iterations = 0;
        while iterations < MAX_ITER {
            let grad = self.gradient(family, y, &coef);
            if grad.amax() <= 1e-8 * n {
                converged = true;
                break;
            }
            iterations += 1;
            let info = self.information(family, &coef);
            let step = match info.clone().cholesky() {
                Some(c) => c.solve(&grad),
                None => return Err(Error::Numeric("local information matrix is singular".into())),
            };
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let cand = &coef + t * &step;
                let cand_ll = self.loglik(family, y, &cand);
                if cand_ll.is_finite() && cand_ll >= ll {
                    accepted = Some((cand, cand_ll));
                    break;
                }
                t *= 0.5;
            }
            let Some((cand, cand_ll)) = accepted else {
                // no ascent direction left at machine precision
                converged = true;
                break;
            };
            let moved = t * step.norm();
            let improved = cand_ll > ll;
            coef = cand;
            ll = cand_ll;
            if moved <= 1e-12 {
                converged = true;
                break;
            }
            if improved && coef.norm() > SEPARATION_NORM {
                return Err(Error::Separation);
            }
        }
        Ok(LocalMleResult {
            loglik: ll,
            intercept: coef[0],
            alpha: coef.rows(1, self.k).into_owned(),
            beta_v: coef.rows(1 + self.k, d - 1 - self.k).into_owned(),
            converged,
            iterations,
        })
    }
}

/// Maximize the local log-likelihood of `y` on `[1, U, X~_V]`.
pub fn local_mle(
    y: &DVector<f64>,
    x_tilde: &DMatrix<f64>,
    factors: &DMatrix<f64>,
    set: &[usize],
    family: Family,
) -> Result<LocalMleResult> {
    if y.len() != x_tilde.nrows() {
        return param("response length does not match the design");
    }
    family.check_response(y)?;
    LocalDesign::new(x_tilde, factors, set)?.fit(family, y)
}

/// `l_I - l_{I\{j}}`, clamped at 0 when slightly negative from solver tolerance.
pub fn score_local_glm(
    y: &DVector<f64>,
    x_tilde: &DMatrix<f64>,
    factors: &DMatrix<f64>,
    set: &[usize],
    j: usize,
    family: Family,
) -> Result<f64> {
    if !set.contains(&j) {
        return param(format!("variable {j} is not in neighborhood {set:?}"));
    }
    let rest: Vec<usize> = set.iter().copied().filter(|&i| i != j).collect();
    let full = local_mle(y, x_tilde, factors, set, family)?;
    let reduced = local_mle(y, x_tilde, factors, &rest, family)?;
    nested_difference(full.loglik, reduced.loglik, y.len())
}

fn nested_difference(full: f64, reduced: f64, n: usize) -> Result<f64> {
    let diff = full - reduced;
    if diff < -1e-8 * n as f64 {
        return Err(Error::Numeric(format!(
            "nested log-likelihoods out of order by {diff:e}"
        )));
    }
    Ok(diff.max(0.0))
}

/// Full GLM FA-CAR pipeline on a raw design.
pub fn score_facar_glm(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    params: &FacarParams,
    family: Family,
) -> Result<RankingResult> {
    family.check_response(y)?;
    let fa = adjust_auto(x, y, params.k_rule)?;
    let graph = if params.drop_degenerate {
        build_graph_dropping(&fa.gram, params.delta)?
    } else {
        build_graph(&fa.gram, params.delta)?
    };
    let nb = enumerate_neighborhoods(&graph, params.m)?;

    // every set and every set-minus-anchor, fitted once
    let mut needed: BTreeSet<Vec<usize>> = BTreeSet::new();
    for (j, sets) in nb.sets.iter().enumerate() {
        for set in sets {
            needed.insert(set.clone());
            needed.insert(set.iter().copied().filter(|&i| i != j).collect());
        }
    }
    let needed: Vec<Vec<usize>> = needed.into_iter().collect();
    let factors = fa.factors();
    let fits = crate::par::map(needed.len(), |i| {
        LocalDesign::new(&fa.x_tilde, factors, &needed[i])
            .and_then(|d| d.fit(family, y))
            .map(|r| r.loglik)
    });
    let loglik: HashMap<&[usize], &Result<f64>> =
        needed.iter().map(Vec::as_slice).zip(fits.iter()).collect();
    let n = y.len();
    let local = |set: &[usize], j: usize| -> Result<f64> {
        let rest: Vec<usize> = set.iter().copied().filter(|&i| i != j).collect();
        let full = loglik[set].clone()?;
        let reduced = loglik[rest.as_slice()].clone()?;
        nested_difference(full, reduced, n)
    };
    let mut skipped = 0;
    let mut scores = Vec::with_capacity(x.ncols());
    for (j, sets) in nb.sets.iter().enumerate() {
        let mut best: Option<f64> = None;
        for set in sets {
            match local(set, j) {
                Ok(t) => best = Some(best.map_or(t, |b: f64| b.max(t))),
                Err(e) => {
                    log::debug!("variable {j}: skipping neighborhood {set:?}: {e}");
                    skipped += 1;
                }
            }
        }
        scores.push(best.unwrap_or(0.0));
    }
    let mut out = RankingResult::new(Method::GlmFaCar, scores);
    out.skipped = skipped;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalVariant {
    /// Rank by |marginal coefficient| (MR-1).
    MleCoef,
    /// Rank by maximized marginal log-likelihood (MR-2).
    MaxLoglik,
}

/// Marginal GLM ranking on the raw design with an intercept. Separated
/// variables score `+inf` (ranked first); constant or unfittable columns
/// score `-inf` (ranked last).
pub fn score_mr_glm(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    family: Family,
    variant: MarginalVariant,
) -> Result<RankingResult> {
    if y.len() != x.nrows() {
        return param("response length does not match the design");
    }
    family.check_response(y)?;
    let empty = DMatrix::zeros(x.nrows(), 0);
    let results = crate::par::map(x.ncols(), |j| {
        let col = x.column(j);
        if col.max() == col.min() {
            return (f64::NEG_INFINITY, true);
        }
        match LocalDesign::new(x, &empty, &[j]).and_then(|d| d.fit(family, y)) {
            Ok(fit) => (
                match variant {
                    MarginalVariant::MleCoef => fit.beta_v[0].abs(),
                    MarginalVariant::MaxLoglik => fit.loglik,
                },
                false,
            ),
            Err(Error::Separation) => (f64::INFINITY, true),
            Err(_) => (f64::NEG_INFINITY, true),
        }
    });
    let method = match variant {
        MarginalVariant::MleCoef => Method::GlmMr1,
        MarginalVariant::MaxLoglik => Method::GlmMr2,
    };
    let mut out = RankingResult::new(method, results.iter().map(|r| r.0).collect());
    out.skipped = results.iter().filter(|r| r.1).count();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{gen_response_logistic, sample_design};

    fn random(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        sample_design(&DMatrix::identity(p, p), n, seed).unwrap()
    }

    fn no_factors(n: usize) -> DMatrix<f64> {
        DMatrix::zeros(n, 0)
    }

    #[test]
    fn family_functions() {
        let f = Family::Logistic;
        for t in [-40.0, -2.0, 0.0, 3.0, 40.0] {
            let m = f.mean(t);
            assert!((0.0..=1.0).contains(&m));
            assert!((f.variance(t) - m * (1.0 - m)).abs() < 1e-15);
            assert!((f.cumulant(t) - (1.0 + f64::exp(t)).ln()).abs() < 1e-12);
        }
        assert!(f.variance(0.0) > 0.0);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(f.check_response(&DVector::from_vec(vec![0.0, 0.5])).is_err());
    }

    #[test]
    fn intercept_only_half() {
        let n = 100;
        let y = DVector::from_fn(n, |i, _| (i % 2) as f64);
        let x = random(n, 2, 1);
        let r = local_mle(&y, &x, &no_factors(n), &[], Family::Logistic).unwrap();
        assert!(r.converged);
        assert!(r.intercept.abs() < 1e-10);
        assert!((r.loglik - n as f64 * 0.5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn intercept_only_three_quarters() {
        let n = 100;
        let y = DVector::from_fn(n, |i, _| if i % 4 == 0 { 0.0 } else { 1.0 });
        let x = random(n, 2, 1);
        let r = local_mle(&y, &x, &no_factors(n), &[], Family::Logistic).unwrap();
        assert!((r.intercept - 3f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn gradient_vanishes_and_hessian_is_definite() {
        let n = 120;
        let x = random(n, 4, 3);
        let beta = DVector::from_vec(vec![1.0, -0.5, 0.0, 0.3]);
        let y = gen_response_logistic(&x, &beta, 0.2, 4).unwrap();
        let u = crate::factor::svd_design(&x).unwrap().left.columns(0, 1).into_owned();
        let design = LocalDesign::new(&x, &u, &[0, 2]).unwrap();
        let fit = design.fit(Family::Logistic, &y).unwrap();
        assert!(fit.converged);
        let mut coef = vec![fit.intercept];
        coef.extend(fit.alpha.iter());
        coef.extend(fit.beta_v.iter());
        let coef = DVector::from_vec(coef);
        assert!(design.gradient(Family::Logistic, &y, &coef).amax() <= 1e-8 * n as f64);
        let info = design.information(Family::Logistic, &coef);
        assert!(crate::linalg::min_eigenvalue(&info) > 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::Rng;
        let n = 60;
        let x = random(n, 3, 7);
        let y = gen_response_logistic(&x, &DVector::from_vec(vec![0.8, 0.0, -1.0]), 0.0, 8).unwrap();
        let u = crate::factor::svd_design(&x).unwrap().left.columns(0, 2).into_owned();
        let design = LocalDesign::new(&x, &u, &[0, 1, 2]).unwrap();
        let mut rng = crate::rng::stream(99, 0);
        for _ in 0..100 {
            let coef = DVector::from_fn(design.dim(), |_, _| rng.random_range(-1.0..1.0));
            let g = design.gradient(Family::Logistic, &y, &coef);
            let h = 1e-5;
            for a in 0..design.dim() {
                let mut up = coef.clone();
                let mut dn = coef.clone();
                up[a] += h;
                dn[a] -= h;
                let fd = (design.loglik(Family::Logistic, &y, &up) - design.loglik(Family::Logistic, &y, &dn)) / (2.0 * h);
                assert!((fd - g[a]).abs() <= 1e-4 * g[a].abs().max(1.0), "{fd} vs {}", g[a]);
            }
        }
    }

    #[test]
    fn nested_likelihoods() {
        let n = 80;
        let x = random(n, 5, 10);
        let y = gen_response_logistic(&x, &DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0, 0.0]), 0.0, 11).unwrap();
        let u = no_factors(n);
        let sets: [&[usize]; 4] = [&[], &[0], &[0, 3], &[0, 3, 4]];
        let lls: Vec<f64> = sets
            .iter()
            .map(|s| local_mle(&y, &x, &u, s, Family::Logistic).unwrap().loglik)
            .collect();
        for w in lls.windows(2) {
            assert!(w[1] >= w[0] - 1e-8 * n as f64);
        }
    }

    #[test]
    fn duplicate_column_adds_nothing() {
        let n = 100;
        let mut x = random(n, 3, 12);
        let c = x.column(0).into_owned();
        x.set_column(2, &c);
        let y = gen_response_logistic(&x, &DVector::from_vec(vec![1.0, 0.5, 0.0]), 0.0, 13).unwrap();
        // x_2 duplicates x_0; adding x_0 to {1, 2} is uninformative, but the
        // local information matrix is singular, so use a near-copy
        let mut near = x.clone();
        let eps = DVector::from_fn(n, |i, _| 1e-9 * ((i % 3) as f64 - 1.0));
        near.set_column(2, &(c + eps));
        let t = score_local_glm(&y, &near, &no_factors(n), &[1, 2, 0], 0, Family::Logistic);
        match t {
            Ok(t) => assert!(t <= 1e-6 * n as f64, "{t}"),
            Err(Error::Numeric(_)) => {}
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn separation_is_detected() {
        let n = 40;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 - 19.5);
        let y = DVector::from_fn(n, |i, _| if i >= 20 { 1.0 } else { 0.0 });
        assert_eq!(
            local_mle(&y, &x, &no_factors(n), &[0], Family::Logistic),
            Err(Error::Separation)
        );
        let r = score_mr_glm(&y, &x, Family::Logistic, MarginalVariant::MleCoef).unwrap();
        assert_eq!(r.scores[0], f64::INFINITY);
    }

    #[test]
    fn permutation_invariance() {
        let n = 90;
        let x = random(n, 4, 14);
        let y = gen_response_logistic(&x, &DVector::from_vec(vec![1.5, 0.0, -1.0, 0.0]), 0.0, 15).unwrap();
        let perm: Vec<usize> = (0..n).map(|i| (i * 37) % n).collect();
        let xp = DMatrix::from_fn(n, 4, |i, j| x[(perm[i], j)]);
        let yp = DVector::from_fn(n, |i, _| y[perm[i]]);
        let u = no_factors(n);
        for set in [vec![0], vec![0, 2], vec![1, 2, 3]] {
            let a = local_mle(&y, &x, &u, &set, Family::Logistic).unwrap().loglik;
            let b = local_mle(&yp, &xp, &u, &set, Family::Logistic).unwrap().loglik;
            assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
        }
    }

    #[test]
    fn signal_score_grows_with_n() {
        let mut prev = 0.0;
        for n in [100, 200, 400] {
            let x = random(n, 2, 16);
            let y = gen_response_logistic(&x, &DVector::from_vec(vec![1.0, 0.0]), 0.0, 17).unwrap();
            let t = score_local_glm(&y, &x, &no_factors(n), &[0], 0, Family::Logistic).unwrap();
            assert!(t > prev);
            prev = t;
        }
    }

    #[test]
    fn marginal_variants_find_strong_signal() {
        let (n, p) = (500, 30);
        let x = random(n, p, 18);
        let mut beta = DVector::zeros(p);
        beta[7] = 2.0;
        let y = gen_response_logistic(&x, &beta, 0.0, 19).unwrap();
        for v in [MarginalVariant::MleCoef, MarginalVariant::MaxLoglik] {
            let r = score_mr_glm(&y, &x, Family::Logistic, v).unwrap();
            assert_eq!(r.ranking[0], 7);
        }
        let mut xc = x.clone();
        xc.column_mut(3).fill(2.0);
        let r = score_mr_glm(&y, &xc, Family::Logistic, MarginalVariant::MaxLoglik).unwrap();
        assert_eq!(*r.ranking.last().unwrap(), 3);
    }

    #[test]
    fn pipeline_ranks_signal_first() {
        let (n, p) = (300, 40);
        let sigma = crate::design::materialize_cov(&crate::design::CovSpec::new(
            crate::design::CovKind::Tridiagonal { rho: 0.5 },
            p,
        ))
        .unwrap();
        let x = sample_design(&sigma, n, 20).unwrap();
        let mut beta = DVector::zeros(p);
        beta[10] = 2.5;
        let y = gen_response_logistic(&x, &beta, 0.0, 21).unwrap();
        let params = FacarParams {
            k_rule: crate::factor::KRule::Fixed(1),
            ..Default::default()
        };
        let r = score_facar_glm(&y, &x, &params, Family::Logistic).unwrap();
        assert_eq!(r.ranking[0], 10);
        assert!(r.scores.iter().all(|s| *s >= 0.0));
    }
}

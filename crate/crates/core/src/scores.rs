//! Variable scores for the linear model: FA-CAR local likelihood-ratio
//! scores and the baseline rankers.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::factor::{adjust_auto, FactorAdjusted, KRule};
use crate::graph::{build_graph, build_graph_dropping, enumerate_neighborhoods, NeighborhoodCollection};
use crate::linalg::{block, min_eigenvalue, principal, select};

/// Principal submatrices with a smaller eigenvalue are treated as singular.
pub const SINGULAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "facar")]
    FaCar,
    #[serde(rename = "mr")]
    Mr,
    #[serde(rename = "famr")]
    FaMr,
    #[serde(rename = "holp")]
    Holp,
    #[serde(rename = "rrcs")]
    Rrcs,
    #[serde(rename = "lsr")]
    Lsr,
    /// FA-CAR with local logistic likelihood ratios.
    #[serde(rename = "glm-facar")]
    GlmFaCar,
    /// Marginal logistic fit, ranked by |coefficient|.
    #[serde(rename = "mr1")]
    GlmMr1,
    /// Marginal logistic fit, ranked by maximized log-likelihood.
    #[serde(rename = "mr2")]
    GlmMr2,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::FaCar,
        Method::Mr,
        Method::FaMr,
        Method::Holp,
        Method::Rrcs,
        Method::Lsr,
        Method::GlmFaCar,
        Method::GlmMr1,
        Method::GlmMr2,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::FaCar => "facar",
            Method::Mr => "mr",
            Method::FaMr => "famr",
            Method::Holp => "holp",
            Method::Rrcs => "rrcs",
            Method::Lsr => "lsr",
            Method::GlmFaCar => "glm-facar",
            Method::GlmMr1 => "mr1",
            Method::GlmMr2 => "mr2",
        }
    }

    pub fn is_glm(&self) -> bool {
        matches!(self, Method::GlmFaCar | Method::GlmMr1 | Method::GlmMr2)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown method {s:?}")))
    }
}

/// Scores plus the induced ranking (0-based variable indices, best first).
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub method: Method,
    pub scores: Vec<f64>,
    pub ranking: Vec<usize>,
    /// Neighborhoods (or variables) skipped because a fit was not possible.
    pub skipped: usize,
}

impl RankingResult {
    pub fn new(method: Method, scores: Vec<f64>) -> Self {
        let ranking = rank_descending(&scores);
        Self {
            method,
            scores,
            ranking,
            skipped: 0,
        }
    }

    /// 1-based rank of every variable.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.ranking.len()];
        for (pos, &j) in self.ranking.iter().enumerate() {
            ranks[j] = pos + 1;
        }
        ranks
    }
}

/// Indices sorted by descending score; ties by ascending index. NaN sorts last.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let key = |x: f64| if x.is_nan() { f64::NEG_INFINITY } else { x };
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| key(scores[b]).total_cmp(&key(scores[a])).then(a.cmp(&b)));
    idx
}

/// `T_{j|I} = ||P_I y~||^2 - ||P_{I\{j}} y~||^2`, evaluated through the Gram
/// matrix: with `N = I \ {j}`, `w = G_NN^{-1} G_Nj`,
/// `T = (y1_j - w'y1_N)^2 / (n (G_jj - G_jN w))` where `y1 = X~'y~`.
pub fn score_local(fa: &FactorAdjusted, set: &[usize], j: usize) -> Result<f64> {
    local_score_from_gram(&fa.gram, &fa.xty, fa.n(), set, j)
}

pub(crate) fn local_score_from_gram(
    gram: &DMatrix<f64>,
    xty: &DVector<f64>,
    n: usize,
    set: &[usize],
    j: usize,
) -> Result<f64> {
    if !set.contains(&j) {
        return param(format!("variable {j} is not in neighborhood {set:?}"));
    }
    let rest: Vec<usize> = set.iter().copied().filter(|&i| i != j).collect();
    let n = n as f64;
    if rest.is_empty() {
        let g = gram[(j, j)];
        if !(g >= SINGULAR_TOL) {
            return Err(Error::SingularNeighborhood(set.to_vec()));
        }
        return Ok(xty[j] * xty[j] / (n * g));
    }
    if min_eigenvalue(&principal(gram, set)) < SINGULAR_TOL {
        return Err(Error::SingularNeighborhood(set.to_vec()));
    }
    let g_nn = principal(gram, &rest);
    let g_nj = block(gram, &rest, &[j]).column(0).into_owned();
    let chol = g_nn
        .cholesky()
        .ok_or_else(|| Error::SingularNeighborhood(set.to_vec()))?;
    let w = chol.solve(&g_nj);
    let schur = gram[(j, j)] - g_nj.dot(&w);
    if !(schur > 0.0) {
        return Err(Error::SingularNeighborhood(set.to_vec()));
    }
    let b = xty[j] - w.dot(&select(xty, &rest));
    Ok(b * b / (n * schur))
}

/// `T*_j = max over neighborhoods of T_{j|I}`. Singular neighborhoods are
/// skipped; if all are skipped the singleton score is used, else 0.
pub fn score_facar(fa: &FactorAdjusted, neighborhoods: &NeighborhoodCollection) -> Result<RankingResult> {
    if neighborhoods.sets.len() != fa.p() {
        return param(format!(
            "neighborhoods cover {} variables but the design has {}",
            neighborhoods.sets.len(),
            fa.p()
        ));
    }
    let per_var = crate::par::map(fa.p(), |j| {
        let mut best: Option<f64> = None;
        let mut skipped = 0usize;
        for set in neighborhoods.anchored(j) {
            match score_local(fa, set, j) {
                Ok(t) => best = Some(best.map_or(t, |b: f64| b.max(t))),
                Err(e) => {
                    log::debug!("variable {j}: skipping neighborhood: {e}");
                    skipped += 1;
                }
            }
        }
        let score = best.unwrap_or_else(|| score_local(fa, &[j], j).unwrap_or(0.0));
        (score, skipped)
    });
    let skipped = per_var.iter().map(|(_, s)| s).sum();
    let mut out = RankingResult::new(Method::FaCar, per_var.into_iter().map(|(s, _)| s).collect());
    out.skipped = skipped;
    Ok(out)
}

/// FA-CAR tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FacarParams {
    pub delta: f64,
    pub m: usize,
    pub k_rule: KRule,
    #[serde(default)]
    pub drop_degenerate: bool,
}

impl Default for FacarParams {
    fn default() -> Self {
        Self {
            delta: 0.5,
            m: 2,
            k_rule: KRule::Threshold,
            drop_degenerate: false,
        }
    }
}

/// Factor-adjust, build the graph, enumerate neighborhoods, score.
pub fn rank_facar(x: &DMatrix<f64>, y: &DVector<f64>, params: &FacarParams) -> Result<(RankingResult, FactorAdjusted)> {
    let fa = adjust_auto(x, y, params.k_rule)?;
    let graph = if params.drop_degenerate {
        build_graph_dropping(&fa.gram, params.delta)?
    } else {
        build_graph(&fa.gram, params.delta)?
    };
    let nb = enumerate_neighborhoods(&graph, params.m)?;
    let result = score_facar(&fa, &nb)?;
    Ok((result, fa))
}

/// Marginal regression: `|x_j'y| / (x_j'x_j)`.
pub fn score_mr(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<RankingResult> {
    score_mr_with(x, y, false)
}

pub fn score_mr_with(x: &DMatrix<f64>, y: &DVector<f64>, drop_degenerate: bool) -> Result<RankingResult> {
    check_response(x, y)?;
    let mut scores = Vec::with_capacity(x.ncols());
    for (j, col) in x.column_iter().enumerate() {
        let nrm = col.norm_squared();
        if nrm == 0.0 {
            if drop_degenerate {
                scores.push(0.0);
                continue;
            }
            return Err(Error::DegenerateVariable(j));
        }
        scores.push(col.dot(y).abs() / nrm);
    }
    Ok(RankingResult::new(Method::Mr, scores))
}

/// MR on the adjusted model with normalized columns: `sqrt(T_{j|{j}})`.
pub fn score_famr(fa: &FactorAdjusted) -> Result<RankingResult> {
    let mut scores = Vec::with_capacity(fa.p());
    for j in 0..fa.p() {
        match score_local(fa, &[j], j) {
            Ok(t) => scores.push(t.sqrt()),
            Err(Error::SingularNeighborhood(_)) => return Err(Error::DegenerateVariable(j)),
            Err(e) => return Err(e),
        }
    }
    Ok(RankingResult::new(Method::FaMr, scores))
}

/// `|X'(XX' + ridge I)^{-1} y|`.
pub fn score_holp(x: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> Result<RankingResult> {
    check_response(x, y)?;
    if !(ridge >= 0.0) {
        return param(format!("ridge = {ridge} must be nonnegative"));
    }
    let n = x.nrows();
    let mut m = x * x.transpose();
    for i in 0..n {
        m[(i, i)] += ridge;
    }
    let singular = || {
        Error::Numeric(if ridge == 0.0 {
            "XX' is singular; supply a positive ridge".into()
        } else {
            format!("XX' + {ridge} I is singular")
        })
    };
    let chol = m.clone().cholesky().ok_or_else(singular)?;
    let l_diag = chol.l_dirty().diagonal();
    let (lo, hi) = l_diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(*d), hi.max(*d)));
    if !(lo > 0.0) || (lo / hi).powi(2) < 1e-13 {
        return Err(singular());
    }
    let alpha = chol.solve(y);
    let beta = x.tr_mul(&alpha);
    Ok(RankingResult::new(Method::Holp, beta.iter().map(|b| b.abs()).collect()))
}

/// Marginal Kendall tau by pair counting; tied pairs contribute 0.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0i64;
    for i in 0..n {
        for k in (i + 1)..n {
            sum += sign(x[i] - x[k]) * sign(y[i] - y[k]);
        }
    }
    2.0 * sum as f64 / (n as f64 * (n as f64 - 1.0))
}

fn sign(v: f64) -> i64 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Kendall-tau marginal ranking: `|tau(x_j, y)|`.
pub fn score_rrcs(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<RankingResult> {
    check_response(x, y)?;
    let n = x.nrows();
    if n < 2 {
        return param("Kendall tau needs at least two observations");
    }
    let mut ysign = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for k in (i + 1)..n {
            ysign.push(sign(y[i] - y[k]) as i32);
        }
    }
    let denom = n as f64 * (n as f64 - 1.0);
    let scores = crate::par::map(x.ncols(), |j| {
        let col = x.column(j);
        let mut sum = 0i64;
        let mut idx = 0;
        for i in 0..n {
            let xi = col[i];
            for k in (i + 1)..n {
                sum += (sign(xi - col[k]) as i32 * ysign[idx]) as i64;
                idx += 1;
            }
        }
        (2.0 * sum as f64 / denom).abs()
    });
    Ok(RankingResult::new(Method::Rrcs, scores))
}

/// Least squares on each pair `{2b, 2b+1}`; score `n (1 - h^2) beta_ols^2`.
pub fn score_lsr_block(x: &DMatrix<f64>, y: &DVector<f64>, h: f64) -> Result<RankingResult> {
    check_response(x, y)?;
    let p = x.ncols();
    if !p.is_multiple_of(2) {
        return param("block least squares needs an even number of variables");
    }
    let n = x.nrows() as f64;
    let mut scores = vec![0.0; p];
    for b in 0..p / 2 {
        let (c1, c2) = (x.column(2 * b), x.column(2 * b + 1));
        let (a, c, d) = (c1.norm_squared(), c1.dot(&c2), c2.norm_squared());
        let (r1, r2) = (c1.dot(y), c2.dot(y));
        let det = a * d - c * c;
        if !(det > 1e-12 * a * d) {
            return Err(Error::Numeric(format!("block {{{}, {}}} has a singular Gram matrix", 2 * b, 2 * b + 1)));
        }
        let b1 = (d * r1 - c * r2) / det;
        let b2 = (a * r2 - c * r1) / det;
        scores[2 * b] = n * (1.0 - h * h) * b1 * b1;
        scores[2 * b + 1] = n * (1.0 - h * h) * b2 * b2;
    }
    Ok(RankingResult::new(Method::Lsr, scores))
}

fn check_response(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return param(format!(
            "response has length {} but design has {} rows",
            y.len(),
            x.nrows()
        ));
    }
    Ok(())
}

/// `variable,score,rank` with 1-based variables and 17 significant digits.
pub fn scores_csv(results: &[RankingResult]) -> String {
    let mut out = String::from("variable");
    if let [only] = results {
        out.push_str(",score,rank\n");
        let ranks = only.ranks();
        for (j, s) in only.scores.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", j + 1, crate::fmt::sig17(*s), ranks[j]));
        }
        return out;
    }
    for r in results {
        out.push_str(&format!(",score_{0},rank_{0}", r.method));
    }
    out.push('\n');
    let ranks: Vec<Vec<usize>> = results.iter().map(RankingResult::ranks).collect();
    let p = results.first().map_or(0, |r| r.scores.len());
    for j in 0..p {
        out.push_str(&(j + 1).to_string());
        for (r, rk) in results.iter().zip(&ranks) {
            out.push_str(&format!(",{},{}", crate::fmt::sig17(r.scores[j]), rk[j]));
        }
        out.push('\n');
    }
    out
}

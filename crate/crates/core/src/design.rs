//! Synthetic designs, Rare/Weak coefficients, responses, and CSV ingestion.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::linalg::sym_eigen_desc;
use crate::rng;

/// Eigenvalues of Σ below this are rejected; those in `[-EIG_TOL, 0]` are clamped.
pub const EIG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovKind {
    /// Unit diagonal, `rho` on the first off-diagonals.
    Tridiagonal { rho: f64 },
    /// `rho^|i-j|`.
    Autoregressive { rho: f64 },
    EqualCorrelation { rho: f64 },
    /// `(rho/2) a1 a1' + (rho/2) a2 a2' + (1-rho) AR(rho1)` with `a1` all ones
    /// and `a2` alternating signs.
    TwoFactor { rho: f64, rho1: f64 },
    /// 2x2 diagonal blocks `[[1,h],[h,1]]`; `p` must be even.
    BlockwiseDiagonal { h: f64 },
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovSpec {
    #[serde(flatten)]
    pub kind: CovKind,
    pub p: usize,
}

impl CovSpec {
    pub fn new(kind: CovKind, p: usize) -> Self {
        Self { kind, p }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return param("dimension p must be positive");
        }
        let open = |x: f64, lo: f64, hi: f64| x > lo && x < hi;
        match self.kind {
            CovKind::Tridiagonal { rho } | CovKind::Autoregressive { rho } => {
                if !open(rho, -1.0, 1.0) {
                    return param(format!("rho = {rho} must lie in (-1, 1)"));
                }
            }
            CovKind::EqualCorrelation { rho } => {
                if !open(rho, 0.0, 1.0) {
                    return param(format!("rho = {rho} must lie in (0, 1)"));
                }
            }
            CovKind::TwoFactor { rho, rho1 } => {
                if !open(rho, 0.0, 1.0) {
                    return param(format!("rho = {rho} must lie in (0, 1)"));
                }
                if !open(rho1, -1.0, 1.0) {
                    return param(format!("rho1 = {rho1} must lie in (-1, 1)"));
                }
            }
            CovKind::BlockwiseDiagonal { h } => {
                if !open(h, -1.0, 1.0) {
                    return param(format!("h = {h} must lie in (-1, 1)"));
                }
                if !self.p.is_multiple_of(2) {
                    return param("blockwise-diagonal design needs an even p");
                }
            }
            CovKind::Identity => {}
        }
        Ok(())
    }

    /// Ideal number of factors for the design, as used in the simulation studies.
    pub fn ideal_k(&self) -> usize {
        match self.kind {
            CovKind::EqualCorrelation { .. } => 1,
            CovKind::TwoFactor { .. } => 2,
            _ => 0,
        }
    }
}

/// Materialize Σ. Entries are computed once for `i < j` and mirrored, so the
/// result is bitwise symmetric with an exact unit diagonal.
pub fn materialize_cov(spec: &CovSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let p = spec.p;
    let entry = |i: usize, j: usize| -> f64 {
        let d = i.abs_diff(j);
        match spec.kind {
            CovKind::Tridiagonal { rho } => {
                if d == 1 {
                    rho
                } else {
                    0.0
                }
            }
            CovKind::Autoregressive { rho } => rho.powi(d as i32),
            CovKind::EqualCorrelation { rho } => rho,
            CovKind::TwoFactor { rho, rho1 } => {
                let a2 = if d.is_multiple_of(2) { 1.0 } else { -1.0 };
                0.5 * rho + 0.5 * rho * a2 + (1.0 - rho) * rho1.powi(d as i32)
            }
            CovKind::BlockwiseDiagonal { h } => {
                if i / 2 == j / 2 {
                    h
                } else {
                    0.0
                }
            }
            CovKind::Identity => 0.0,
        }
    };
    let mut s = DMatrix::identity(p, p);
    for i in 0..p {
        for j in (i + 1)..p {
            let v = entry(i, j);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    Ok(s)
}

/// Draws rows from N(0, Σ) through a symmetric square-root factor of Σ.
/// Build once per Σ and reuse across repetitions.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    /// `Q diag(sqrt(lambda))`, so `L L' = Σ`.
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        let p = sigma.nrows();
        if p == 0 || sigma.ncols() != p {
            return param("covariance must be a non-empty square matrix");
        }
        if !crate::linalg::is_finite(sigma) {
            return Err(Error::Numeric("covariance has non-finite entries".into()));
        }
        let mut sym = sigma.clone();
        crate::linalg::symmetrize(&mut sym);
        let (values, mut vectors) = sym_eigen_desc(&sym);
        for (k, &lam) in values.iter().enumerate() {
            if lam < -EIG_TOL {
                return Err(Error::Numeric(format!(
                    "covariance is not positive semidefinite (eigenvalue {lam:e})"
                )));
            }
            let scale = lam.max(0.0).sqrt();
            vectors.column_mut(k).scale_mut(scale);
        }
        Ok(Self { factor: vectors })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample(&self, n: usize, rng: &mut rng::Rng) -> DMatrix<f64> {
        let p = self.dim();
        // filled row by row so the draw order does not depend on storage layout
        let mut z = DMatrix::<f64>::zeros(n, p);
        for i in 0..n {
            for j in 0..p {
                z[(i, j)] = StandardNormal.sample(rng);
            }
        }
        z * self.factor.transpose()
    }
}

pub fn sample_design(sigma: &DMatrix<f64>, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let sampler = GaussianSampler::new(sigma)?;
    Ok(sampler.sample(n, &mut rng::stream(seed, 0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignScheme {
    #[default]
    Symmetric,
    Positive,
}

/// Rare/Weak signal model: each coefficient is nonzero with probability
/// `p^-theta`, with magnitude `sigma * sqrt(2 r log(p) / n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RareWeakSpec {
    pub theta: f64,
    pub r: f64,
    pub sigma: f64,
    #[serde(default)]
    pub sign_scheme: SignScheme,
}

impl RareWeakSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return param(format!("theta = {} must lie in (0, 1)", self.theta));
        }
        if !(self.r > 0.0) {
            return param(format!("r = {} must be positive", self.r));
        }
        if !(self.sigma > 0.0) {
            return param(format!("sigma = {} must be positive", self.sigma));
        }
        Ok(())
    }

    pub fn epsilon(&self, p: usize) -> f64 {
        (p as f64).powf(-self.theta)
    }

    pub fn tau(&self, p: usize, n: usize) -> f64 {
        self.sigma * (2.0 * self.r * (p as f64).ln() / n as f64).sqrt()
    }
}

pub fn sample_beta_rw(spec: &RareWeakSpec, p: usize, n: usize, seed: u64) -> Result<DVector<f64>> {
    sample_beta_rw_with(spec, p, n, &mut rng::stream(seed, 0))
}

pub fn sample_beta_rw_with(
    spec: &RareWeakSpec,
    p: usize,
    n: usize,
    rng: &mut rng::Rng,
) -> Result<DVector<f64>> {
    spec.validate()?;
    if p < 2 || n < 1 {
        return param("rare/weak sampling needs p >= 2 and n >= 1");
    }
    let eps = spec.epsilon(p);
    let tau = spec.tau(p, n);
    let mut beta = DVector::zeros(p);
    for j in 0..p {
        let u: f64 = rng.random();
        let flip: bool = rng.random();
        if u < eps {
            beta[j] = match spec.sign_scheme {
                SignScheme::Symmetric if flip => -tau,
                _ => tau,
            };
        }
    }
    Ok(beta)
}

/// First `s` coordinates i.i.d. N(0, eta^2), the rest zero.
pub fn sample_beta_fixed(s: usize, eta: f64, p: usize, seed: u64) -> Result<DVector<f64>> {
    sample_beta_fixed_with(s, eta, p, &mut rng::stream(seed, 0))
}

pub fn sample_beta_fixed_with(
    s: usize,
    eta: f64,
    p: usize,
    rng: &mut rng::Rng,
) -> Result<DVector<f64>> {
    if s == 0 || s > p {
        return param(format!("signal count s = {s} must lie in [1, p = {p}]"));
    }
    if !(eta > 0.0) {
        return param(format!("eta = {eta} must be positive"));
    }
    let mut beta = DVector::zeros(p);
    for j in 0..s {
        let z: f64 = StandardNormal.sample(rng);
        beta[j] = eta * z;
    }
    Ok(beta)
}

/// `y = X beta + sigma z`.
pub fn gen_response_linear(
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    sigma: f64,
    seed: u64,
) -> Result<DVector<f64>> {
    gen_response_linear_with(x, beta, sigma, &mut rng::stream(seed, 0))
}

pub fn gen_response_linear_with(
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    sigma: f64,
    rng: &mut rng::Rng,
) -> Result<DVector<f64>> {
    check_dims(x, beta)?;
    let mut y = x * beta;
    if sigma != 0.0 {
        for yi in y.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *yi += sigma * z;
        }
    }
    Ok(y)
}

/// Bernoulli responses with success probability `1 / (1 + exp(-beta0 - x_i' beta))`.
pub fn gen_response_logistic(
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    beta0: f64,
    seed: u64,
) -> Result<DVector<f64>> {
    gen_response_logistic_with(x, beta, beta0, &mut rng::stream(seed, 0))
}

pub fn gen_response_logistic_with(
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    beta0: f64,
    rng: &mut rng::Rng,
) -> Result<DVector<f64>> {
    check_dims(x, beta)?;
    let eta = x * beta;
    Ok(eta.map(|e| {
        let u: f64 = rng.random();
        if u < crate::glm::sigmoid(beta0 + e) {
            1.0
        } else {
            0.0
        }
    }))
}

fn check_dims(x: &DMatrix<f64>, beta: &DVector<f64>) -> Result<()> {
    if x.ncols() != beta.len() {
        return param(format!(
            "design has {} columns but beta has length {}",
            x.ncols(),
            beta.len()
        ));
    }
    Ok(())
}

/// Ground truth bundle for one experiment. `beta` and `sigma` are unknown
/// for ingested data.
#[derive(Debug, Clone)]
pub struct DesignInstance {
    pub x: DMatrix<f64>,
    pub y: Option<DVector<f64>>,
    pub beta: Option<DVector<f64>>,
    pub sigma: Option<f64>,
}

impl DesignInstance {
    pub fn support(&self) -> Vec<usize> {
        self.beta.as_ref().map(support_of).unwrap_or_default()
    }
}

pub fn support_of(beta: &DVector<f64>) -> Vec<usize> {
    beta.iter()
        .enumerate()
        .filter(|(_, b)| **b != 0.0)
        .map(|(j, _)| j)
        .collect()
}

/// Parse a rectangular numeric CSV. A first row with any non-numeric cell is
/// treated as a header. Row numbers in errors are 1-based file lines.
pub fn parse_design_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (line, record) in reader.records().enumerate() {
        let row = line + 1;
        let record = record.map_err(|e| Error::Format {
            row,
            col: 0,
            msg: e.to_string(),
        })?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let parsed: Vec<std::result::Result<f64, usize>> = record
            .iter()
            .enumerate()
            .map(|(c, cell)| cell.parse::<f64>().map_err(|_| c + 1))
            .collect();
        if row == 1 && parsed.iter().any(|r| r.is_err()) {
            width = Some(record.len());
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Format {
                    row,
                    col: record.len().min(w) + 1,
                    msg: format!("expected {w} fields, found {}", record.len()),
                })
            }
            _ => {}
        }
        let mut values = Vec::with_capacity(record.len());
        for r in parsed {
            match r {
                Ok(v) => values.push(v),
                Err(col) => {
                    return Err(Error::Format {
                        row,
                        col,
                        msg: format!("non-numeric cell {:?}", &record[col - 1]),
                    })
                }
            }
        }
        rows.push(values);
    }
    let ncols = width.unwrap_or(0);
    if rows.is_empty() || ncols == 0 {
        return Err(Error::Format {
            row: 1,
            col: 0,
            msg: "no numeric data".into(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// One value per line; a non-numeric first line is skipped as a header.
pub fn parse_response(text: &str) -> Result<DVector<f64>> {
    let mut values = Vec::new();
    for (line, raw) in text.lines().enumerate() {
        let cell = raw.trim();
        if cell.is_empty() {
            continue;
        }
        match cell.parse::<f64>() {
            Ok(v) => values.push(v),
            Err(_) if line == 0 => continue,
            Err(_) => {
                return Err(Error::Format {
                    row: line + 1,
                    col: 1,
                    msg: format!("non-numeric response {cell:?}"),
                })
            }
        }
    }
    if values.is_empty() {
        return Err(Error::Format {
            row: 1,
            col: 0,
            msg: "no response values".into(),
        });
    }
    Ok(DVector::from_vec(values))
}

pub fn load_design_csv(design: &Path, response: Option<&Path>) -> Result<DesignInstance> {
    let x = parse_design_csv(&std::fs::read_to_string(design)?)?;
    let y = match response {
        Some(path) => {
            let y = parse_response(&std::fs::read_to_string(path)?)?;
            if y.len() != x.nrows() {
                return param(format!(
                    "response has {} values but design has {} rows",
                    y.len(),
                    x.nrows()
                ));
            }
            Some(y)
        }
        None => None,
    };
    Ok(DesignInstance {
        x,
        y,
        beta: None,
        sigma: None,
    })
}

//! Signal cancellation on a noiseless blockwise-diagonal design: marginal
//! ranking can put a noise variable above a signal, local likelihood ratios
//! do not.

use nalgebra::{DMatrix, DVector};

use crate::design::{materialize_cov, CovKind, CovSpec};
use crate::error::{param, Result};
use crate::factor::adjust;
use crate::graph::{build_graph, enumerate_neighborhoods};
use crate::linalg::sym_eigen_desc;
use crate::scores::{score_facar, score_mr, RankingResult};

#[derive(Debug, Clone)]
pub struct CancellationExample {
    pub a: f64,
    pub h: f64,
    pub n: usize,
    pub tau: f64,
    pub beta: DVector<f64>,
    pub mr: RankingResult,
    pub facar: RankingResult,
}

impl CancellationExample {
    /// `T*_j / (n tau^2)`.
    pub fn scaled_facar(&self, j: usize) -> f64 {
        self.facar.scores[j] / (self.n as f64 * self.tau * self.tau)
    }

    /// MR score over `tau`.
    pub fn scaled_mr(&self, j: usize) -> f64 {
        self.mr.scores[j] / self.tau
    }
}

/// `X = sqrt(n) Sigma^{1/2}` with `n = p = 2 * blocks`, so `X'X/n` equals the
/// blockwise design exactly; `y = X beta` with `beta_1 = -tau`,
/// `beta_2 = beta_3 = a tau` and `n tau^2 = 1`. Variables are 0-based here.
pub fn cancellation_example(a: f64, h: f64, delta: f64, blocks: usize) -> Result<CancellationExample> {
    if blocks < 2 {
        return param("need at least two blocks");
    }
    let p = 2 * blocks;
    let n = p;
    let sigma = materialize_cov(&CovSpec::new(CovKind::BlockwiseDiagonal { h }, p))?;
    let (vals, vecs) = sym_eigen_desc(&sigma);
    let root = DMatrix::from_diagonal(&vals.map(|v| v.max(0.0).sqrt()));
    let x = (&vecs * root * vecs.transpose()) * (n as f64).sqrt();
    let tau = 1.0 / (n as f64).sqrt();
    let mut beta = DVector::zeros(p);
    beta[0] = -tau;
    beta[1] = a * tau;
    beta[2] = a * tau;
    let y = &x * &beta;

    let mr = score_mr(&x, &y)?;
    let fa = adjust(&x, &y, 0)?;
    let graph = build_graph(&fa.gram, delta)?;
    let nb = enumerate_neighborhoods(&graph, 2)?;
    let facar = score_facar(&fa, &nb)?;
    Ok(CancellationExample { a, h, n, tau, beta, mr, facar })
}

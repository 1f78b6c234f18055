//! Analytic oracles: phase exponents for the blockwise-diagonal design and
//! the per-signal noncentrality exponents omega.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::graph::{anchored_sets, build_graph};
use crate::linalg::{block, min_eigenvalue, principal, select};

/// Combinatorial guard for [`nu_g_star`].
pub const NU_G_MAX: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateMethod {
    Car,
    Mr,
    Lsr,
}

impl RateMethod {
    pub const ALL: [RateMethod; 3] = [RateMethod::Car, RateMethod::Mr, RateMethod::Lsr];

    pub fn name(&self) -> &'static str {
        match self {
            RateMethod::Car => "CAR",
            RateMethod::Mr => "MR",
            RateMethod::Lsr => "LSR",
        }
    }
}

impl fmt::Display for RateMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn pos_sq(x: f64) -> f64 {
    let x = x.max(0.0);
    x * x
}

/// Rate exponents for `(theta, r, h)` on the blockwise-diagonal design with
/// Rare/Weak signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateOracle {
    pub theta: f64,
    pub r: f64,
    pub h: f64,
    pub q_car: f64,
    pub q_mr: f64,
    pub q_lsr: f64,
}

pub fn rate_oracle(theta: f64, r: f64, h: f64) -> Result<RateOracle> {
    if !(theta > 0.0 && theta < 1.0) {
        return param(format!("theta = {theta} must lie in (0, 1)"));
    }
    if !(r > 0.0 && r.is_finite()) {
        return param(format!("r = {r} must be positive"));
    }
    if !(h > -1.0 && h < 1.0) {
        return param(format!("h = {h} must lie in (-1, 1)"));
    }
    let a = h.abs();
    let first = pos_sq(r.sqrt() - (1.0 - theta).sqrt());
    let lsr_amp = ((1.0 - h * h) * r).sqrt();
    // the paired-signal branch also binds at theta = 1/2
    let (q_mr, q_car) = if theta <= 0.5 {
        let tail = (1.0 - 2.0 * theta).sqrt();
        (
            first.min(pos_sq((1.0 - a) * r.sqrt() - tail)),
            first.min(pos_sq(lsr_amp - tail)),
        )
    } else {
        (first, first)
    };
    Ok(RateOracle {
        theta,
        r,
        h,
        q_car,
        q_mr,
        q_lsr: pos_sq(lsr_amp - (1.0 - theta).sqrt()),
    })
}

impl RateOracle {
    pub fn q_star(&self, method: RateMethod) -> f64 {
        match method {
            RateMethod::Car => self.q_car,
            RateMethod::Mr => self.q_mr,
            RateMethod::Lsr => self.q_lsr,
        }
    }

    /// `1 - min(theta, q*)`; the sure-screening size is `p^{eta*}` up to
    /// multi-log factors.
    pub fn eta_star(&self, method: RateMethod) -> f64 {
        1.0 - self.theta.min(self.q_star(method))
    }

    /// Exponent of the expected number of false positives at threshold `q`.
    pub fn rho1(&self, method: RateMethod, q: f64) -> f64 {
        let (theta, r, a) = (self.theta, self.r, self.h.abs());
        match method {
            RateMethod::Car | RateMethod::Mr => {
                q.min(theta + pos_sq(q.sqrt() - a * r.sqrt()))
            }
            RateMethod::Lsr => q,
        }
    }

    /// Exponent of the expected number of missed signals at threshold `q`.
    pub fn rho2(&self, method: RateMethod, q: f64) -> f64 {
        let (theta, r, a) = (self.theta, self.r, self.h.abs());
        let single = theta + pos_sq(r.sqrt() - q.sqrt());
        let lsr_amp = ((1.0 - self.h * self.h) * r).sqrt();
        match method {
            RateMethod::Mr => single.min(2.0 * theta + pos_sq((1.0 - a) * r.sqrt() - q.sqrt())),
            RateMethod::Car => single.min(2.0 * theta + pos_sq(lsr_amp - q.sqrt())),
            RateMethod::Lsr => theta + pos_sq(lsr_amp - q.sqrt()),
        }
    }
}

/// Evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// The 20 x 20 x 19 grid over (0.05..0.95) x (0.25..5) x (-0.9..0.9).
pub fn dominance_grid() -> Vec<(f64, f64, f64)> {
    let mut out = Vec::with_capacity(20 * 20 * 19);
    for &theta in &linspace(0.05, 0.95, 20) {
        for &r in &linspace(0.25, 5.0, 20) {
            for &h in &linspace(-0.9, 0.9, 19) {
                out.push((theta, r, h));
            }
        }
    }
    out
}

/// True iff `eta*_CAR <= min(eta*_MR, eta*_LSR) + 1e-12` at every point.
pub fn rate_dominance_check(grid: &[(f64, f64, f64)]) -> Result<bool> {
    for &(theta, r, h) in grid {
        let o = rate_oracle(theta, r, h)?;
        let best_other = o.eta_star(RateMethod::Mr).min(o.eta_star(RateMethod::Lsr));
        if o.eta_star(RateMethod::Car) > best_other + 1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Per-signal omega exponents.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaSignal {
    pub j: usize,
    /// Component of the signal graph containing `j`.
    pub component: Vec<usize>,
    /// Maximizing neighborhood.
    pub best_set: Vec<usize>,
    pub omega: f64,
    pub omega_star: f64,
}

/// Schur complement `G(j,j) - G(j,N) G(N,N)^{-1} G(N,j)`, erroring on a
/// singular block.
fn schur(g0: &DMatrix<f64>, j: usize, nset: &[usize]) -> Result<(f64, Option<DMatrix<f64>>)> {
    if nset.is_empty() {
        return Ok((g0[(j, j)], None));
    }
    let gnn = principal(g0, nset);
    if min_eigenvalue(&gnn) < crate::scores::SINGULAR_TOL {
        return Err(Error::SingularNeighborhood(nset.to_vec()));
    }
    let inv = gnn
        .try_inverse()
        .ok_or_else(|| Error::SingularNeighborhood(nset.to_vec()))?;
    let gjn = block(g0, &[j], nset);
    let a = g0[(j, j)] - (&gjn * &inv * gjn.transpose())[(0, 0)];
    Ok((a, Some(inv)))
}

/// `omega_{j|I}` for `I` inside the signal component `comp`.
pub fn omega_local(
    g0: &DMatrix<f64>,
    beta: &DVector<f64>,
    comp: &[usize],
    set: &[usize],
    j: usize,
    n: usize,
    sigma: f64,
) -> Result<f64> {
    let p = g0.nrows();
    let nset: Vec<usize> = set.iter().copied().filter(|&i| i != j).collect();
    let fset: Vec<usize> = comp.iter().copied().filter(|i| !set.contains(i)).collect();
    let (a, inv) = schur(g0, j, &nset)?;
    if !(a > 0.0) {
        return Err(Error::SingularNeighborhood(set.to_vec()));
    }
    let mut shift = 0.0;
    if !fset.is_empty() {
        let mut coupling = block(g0, &[j], &fset);
        if let Some(inv) = inv {
            coupling -= block(g0, &[j], &nset) * inv * block(g0, &nset, &fset);
        }
        shift = (coupling * select(beta, &fset))[0] / a;
    }
    let amp = beta[j] + shift;
    Ok(n as f64 * a * amp * amp / (2.0 * sigma * sigma * (p as f64).ln()))
}

/// `omega_j(r, m)` and `omega*_j` for every signal, using the threshold graph
/// of `g0` at `delta`.
pub fn omega_oracle(
    g0: &DMatrix<f64>,
    beta: &DVector<f64>,
    delta: f64,
    m: usize,
    n: usize,
    sigma: f64,
) -> Result<Vec<OmegaSignal>> {
    let p = g0.nrows();
    if beta.len() != p {
        return param("beta length does not match G0");
    }
    if !(sigma > 0.0) {
        return param("sigma must be positive");
    }
    if p < 2 {
        return param("need p >= 2 for log(p) scaling");
    }
    if m == 0 {
        return param("m must be at least 1");
    }
    let graph = build_graph(g0, delta)?;
    let support = crate::design::support_of(beta);
    let in_support: Vec<bool> = (0..p).map(|i| beta[i] != 0.0).collect();

    // components of the induced subgraph on the support
    let mut comp_of = vec![usize::MAX; p];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for &s in &support {
        if comp_of[s] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut stack = vec![s];
        let mut members = Vec::new();
        comp_of[s] = id;
        while let Some(v) = stack.pop() {
            members.push(v);
            for &w in &graph.adjacency[v] {
                if in_support[w] && comp_of[w] == usize::MAX {
                    comp_of[w] = id;
                    stack.push(w);
                }
            }
        }
        members.sort_unstable();
        comps.push(members);
    }

    let mut out = Vec::with_capacity(support.len());
    for &j in &support {
        let comp = &comps[comp_of[j]];
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for set in anchored_sets(&graph, j, m) {
            if !set.iter().all(|i| comp.binary_search(i).is_ok()) {
                continue;
            }
            let w = omega_local(g0, beta, comp, &set, j, n, sigma)?;
            if w > best.0 {
                best = (w, set);
            }
        }
        let others: Vec<usize> = comp.iter().copied().filter(|&i| i != j).collect();
        let (a_full, _) = schur(g0, j, &others)?;
        let omega_star = n as f64 * a_full * beta[j] * beta[j]
            / (2.0 * sigma * sigma * (p as f64).ln());
        out.push(OmegaSignal {
            j,
            component: comp.clone(),
            best_set: best.1,
            omega: best.0,
            omega_star,
        });
    }
    Ok(out)
}

/// Smallest eigenvalue over all `g x g` principal submatrices.
pub fn nu_g_star(omega: &DMatrix<f64>, g: usize) -> Result<f64> {
    let p = omega.nrows();
    if omega.ncols() != p {
        return param("matrix must be square");
    }
    if g == 0 || g > p {
        return param(format!("g = {g} must lie in 1..={p}"));
    }
    if g > NU_G_MAX {
        return Err(Error::Cost(format!(
            "g = {g} exceeds the subset-enumeration guard {NU_G_MAX}"
        )));
    }
    let mut idx: Vec<usize> = (0..g).collect();
    let mut best = f64::INFINITY;
    loop {
        best = best.min(min_eigenvalue(&principal(omega, &idx)));
        // next combination in lexicographic order
        let mut i = g;
        while i > 0 && idx[i - 1] == p - g + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        idx[i - 1] += 1;
        for k in i..g {
            idx[k] = idx[k - 1] + 1;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eta(o: &RateOracle) -> [f64; 3] {
        RateMethod::ALL.map(|m| o.eta_star(m))
    }

    #[test]
    fn table_rows_by_formula() {
        // independent restatement, evaluated by hand
        let o = rate_oracle(0.8, 1.5, 0.4).unwrap();
        let first = (1.5f64.sqrt() - 0.2f64.sqrt()).powi(2);
        let lsr = ((0.84f64 * 1.5).sqrt() - 0.2f64.sqrt()).powi(2);
        assert!((o.q_car - first).abs() < 1e-15);
        assert!((o.q_lsr - lsr).abs() < 1e-15);
        let e = eta(&o);
        assert!((e[0] - 0.395445).abs() < 1e-6);
        assert!((e[2] - 0.543992).abs() < 1e-6);

        let e = eta(&rate_oracle(0.5, 2.0, 0.8).unwrap());
        assert!((e[0] - 0.5).abs() < 1e-12);
        assert!((e[1] - 0.92).abs() < 1e-12);
        assert!((e[2] - 0.98).abs() < 1e-12);

        let e = eta(&rate_oracle(0.3, 2.0, 0.2).unwrap());
        assert!((e[0] - 0.7).abs() < 1e-12);
        assert!((e[1] - 0.751084).abs() < 1e-6);
        assert!((e[2] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn h_zero_coincides() {
        let o = rate_oracle(0.6, 1.0, 0.0).unwrap();
        let q = (1.0 - 0.4f64.sqrt()).powi(2);
        for m in RateMethod::ALL {
            assert!((o.q_star(m) - q).abs() < 1e-15);
            assert!((o.eta_star(m) - (1.0 - q)).abs() < 1e-15);
        }
        assert!((q - 0.1351).abs() < 1e-4);
    }

    #[test]
    fn parameter_range() {
        assert!(rate_oracle(1.0, 1.0, 0.0).is_err());
        assert!(rate_oracle(0.0, 1.0, 0.0).is_err());
        assert!(rate_oracle(0.5, 0.0, 0.0).is_err());
        assert!(rate_oracle(0.5, 1.0, 1.0).is_err());
        assert!(rate_oracle(0.5, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn dominance() {
        let grid = dominance_grid();
        assert_eq!(grid.len(), 7600);
        assert!(rate_dominance_check(&grid).unwrap());
        let o = rate_oracle(0.5, 2.0, 0.8).unwrap();
        assert!(o.eta_star(RateMethod::Car) < o.eta_star(RateMethod::Mr).min(o.eta_star(RateMethod::Lsr)));
    }

    #[test]
    fn branch_is_left_continuous() {
        for &(r, h) in &[(2.0, 0.8), (1.0, 0.3), (4.0, -0.6)] {
            let at = rate_oracle(0.5, r, h).unwrap();
            let below = rate_oracle(0.5 - 1e-12, r, h).unwrap();
            assert!((at.q_mr - below.q_mr).abs() < 1e-5);
            assert!((at.q_car - below.q_car).abs() < 1e-5);
        }
    }

    #[test]
    fn eta_star_definition_and_sign() {
        for (theta, r, h) in dominance_grid().into_iter().step_by(37) {
            let o = rate_oracle(theta, r, h).unwrap();
            for m in RateMethod::ALL {
                assert!(o.q_star(m) >= 0.0);
                assert_eq!(o.eta_star(m), 1.0 - theta.min(o.q_star(m)));
                for q in [0.0, 0.3, 1.0, 3.0] {
                    assert!(o.rho1(m, q) >= 0.0 && o.rho2(m, q) >= theta);
                }
            }
        }
    }

    #[test]
    fn omega_identity_design() {
        let p = 50;
        let n = 100;
        let sigma = 1.0;
        let r = 2.0;
        let tau = sigma * (2.0 * r * (p as f64).ln() / n as f64).sqrt();
        let mut beta = DVector::zeros(p);
        beta[3] = tau;
        beta[20] = -tau;
        let out = omega_oracle(&DMatrix::identity(p, p), &beta, 0.5, 2, n, sigma).unwrap();
        for s in &out {
            assert!((s.omega - r).abs() < 1e-12);
            assert!((s.omega_star - r).abs() < 1e-12);
            assert_eq!(s.best_set, vec![s.j]);
        }
    }

    #[test]
    fn omega_block_pair() {
        let (p, n, h) = (10, 40, 0.6);
        let mut g0 = DMatrix::identity(p, p);
        g0[(0, 1)] = h;
        g0[(1, 0)] = h;
        let mut beta = DVector::zeros(p);
        beta[0] = 0.7;
        beta[1] = -0.4;
        let out = omega_oracle(&g0, &beta, 0.5, 2, n, 1.0).unwrap();
        let scale = n as f64 / (2.0 * (p as f64).ln());
        let pair = (1.0 - h * h) * scale * 0.49;
        let single = scale * (0.7f64 - h * 0.4).powi(2);
        assert!((out[0].omega_star - pair).abs() < 1e-12);
        assert!((out[0].omega - pair.max(single)).abs() < 1e-12);
    }

    #[test]
    fn omega_monotone_in_m() {
        use rand::Rng;
        let mut rng = crate::rng::stream(5, 0);
        for _ in 0..20 {
            let p = 12;
            let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
            let mut g0 = a.transpose() * &a / p as f64 + DMatrix::identity(p, p) * 0.5;
            let d: Vec<f64> = (0..p).map(|i| g0[(i, i)].sqrt()).collect();
            g0 = DMatrix::from_fn(p, p, |i, j| g0[(i, j)] / (d[i] * d[j]));
            let beta = DVector::from_fn(p, |i, _| if i % 3 == 0 { rng.random_range(0.5..1.5) } else { 0.0 });
            let mut prev: Option<Vec<f64>> = None;
            for m in 1..=4 {
                let w: Vec<f64> = omega_oracle(&g0, &beta, 0.2, m, 50, 1.0)
                    .unwrap()
                    .iter()
                    .map(|s| s.omega)
                    .collect();
                if let Some(prev) = &prev {
                    for (a, b) in prev.iter().zip(&w) {
                        assert!(b >= a);
                    }
                }
                prev = Some(w);
            }
        }
    }

    #[test]
    fn nu_g() {
        assert_eq!(nu_g_star(&DMatrix::identity(5, 5), 3).unwrap(), 1.0);
        let h = 0.3;
        let m = DMatrix::from_row_slice(2, 2, &[1.0, h, h, 1.0]);
        assert!((nu_g_star(&m, 2).unwrap() - 0.7).abs() < 1e-14);
        let ar = DMatrix::from_fn(6, 6, |i, j| 0.6f64.powi((i as i32 - j as i32).abs()));
        assert!((nu_g_star(&ar, 2).unwrap() - 0.4).abs() < 1e-14);
        assert!(matches!(nu_g_star(&DMatrix::identity(20, 20), 13), Err(Error::Cost(_))));
    }
}

//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use facar::design::{materialize_cov, CovKind, CovSpec, GaussianSampler};
use facar::graph::CovariateGraph;
use facar::rng;

/// Residual sum of squares of `y` regressed on the columns `cols` of `x`.
pub fn rss(x: &DMatrix<f64>, y: &DVector<f64>, cols: &[usize]) -> f64 {
    if cols.is_empty() {
        return y.norm_squared();
    }
    let sub = x.select_columns(cols);
    let q = sub.qr().q();
    let fitted = &q * (q.transpose() * y);
    (y - fitted).norm_squared()
}

/// `T_{j|I}` straight from its definition: the drop in RSS from adding `j`
/// to the model spanned by `I \ {j}`.
pub fn projection_score(x: &DMatrix<f64>, y: &DVector<f64>, set: &[usize], j: usize) -> f64 {
    let rest: Vec<usize> = set.iter().copied().filter(|&i| i != j).collect();
    rss(x, y, &rest) - rss(x, y, set)
}

/// Connected subsets through `j` of size at most `m`, by exhaustive search,
/// ordered by size then lexicographically.
pub fn brute_force_sets(graph: &CovariateGraph, j: usize, m: usize) -> Vec<Vec<usize>> {
    let p = graph.p;
    let mut out = Vec::new();
    for mask in 0u32..(1 << p) {
        if mask & (1 << j) == 0 || mask.count_ones() as usize > m {
            continue;
        }
        let set: Vec<usize> = (0..p).filter(|&i| mask & (1 << i) != 0).collect();
        if connected(graph, &set) {
            out.push(set);
        }
    }
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

fn connected(graph: &CovariateGraph, set: &[usize]) -> bool {
    let mut seen = vec![set[0]];
    let mut queue = VecDeque::from([set[0]]);
    while let Some(v) = queue.pop_front() {
        for &w in &graph.adjacency[v] {
            if set.contains(&w) && !seen.contains(&w) {
                seen.push(w);
                queue.push_back(w);
            }
        }
    }
    seen.len() == set.len()
}

/// Erdos-Renyi graph with edge probability `prob`.
pub fn random_graph(p: usize, prob: f64, seed: u64) -> CovariateGraph {
    let mut r = rng::stream(seed, 7);
    let mut adjacency = vec![Vec::new(); p];
    for i in 0..p {
        for k in i + 1..p {
            if r.random::<f64>() < prob {
                adjacency[i].push(k);
                adjacency[k].push(i);
            }
        }
    }
    let max_degree = adjacency.iter().map(Vec::len).max().unwrap_or(0);
    CovariateGraph { p, adjacency, delta: 0.5, max_degree, excluded: vec![false; p] }
}

/// AR(rho) Gaussian design with a sparse linear response.
pub fn random_instance(seed: u64, n: usize, p: usize, rho: f64) -> (DMatrix<f64>, DVector<f64>) {
    let sigma = materialize_cov(&CovSpec::new(CovKind::Autoregressive { rho }, p)).unwrap();
    let x = GaussianSampler::new(&sigma).unwrap().sample(n, &mut rng::stream(seed, 1));
    let mut r = rng::stream(seed, 2);
    let mut beta = DVector::zeros(p);
    for j in 0..p.min(3) {
        beta[(j * 5) % p] = r.random_range(-2.0..2.0);
    }
    let noise = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
    let y = &x * beta + noise;
    (x, y)
}

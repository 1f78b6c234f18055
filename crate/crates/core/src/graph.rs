//! Threshold graph on the variables and anchored enumeration of small
//! connected vertex sets ("neighborhoods").

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::error::{param, Error, Result};

/// Enumeration is refused above this degree when `m >= 3`.
pub const MAX_DEGREE_GUARD: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateGraph {
    pub p: usize,
    /// Sorted neighbor lists.
    pub adjacency: Vec<Vec<usize>>,
    pub delta: f64,
    pub max_degree: usize,
    /// Variables left out of the graph because their variance is zero.
    pub excluded: Vec<bool>,
}

impl CovariateGraph {
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, nbrs) in self.adjacency.iter().enumerate() {
            out.extend(nbrs.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search(&j).is_ok()
    }

    pub fn is_excluded(&self, j: usize) -> bool {
        self.excluded[j]
    }
}

fn build(g: &DMatrix<f64>, delta: f64, drop_degenerate: bool) -> Result<CovariateGraph> {
    let p = g.nrows();
    if g.ncols() != p {
        return param("Gram matrix must be square");
    }
    if !(delta > 0.0 && delta < 1.0) {
        return param(format!("delta = {delta} must lie in (0, 1)"));
    }
    let mut excluded = vec![false; p];
    for j in 0..p {
        let d = g[(j, j)];
        if !(d > 0.0) {
            if drop_degenerate {
                excluded[j] = true;
            } else {
                return Err(Error::DegenerateVariable(j));
            }
        }
    }
    let scale: Vec<f64> = (0..p).map(|j| g[(j, j)].max(0.0).sqrt()).collect();
    let mut adjacency = vec![Vec::new(); p];
    for i in 0..p {
        if excluded[i] {
            continue;
        }
        for j in (i + 1)..p {
            if excluded[j] {
                continue;
            }
            if g[(i, j)].abs() / (scale[i] * scale[j]) > delta {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
    }
    for nbrs in adjacency.iter_mut() {
        nbrs.sort_unstable();
    }
    let max_degree = adjacency.iter().map(Vec::len).max().unwrap_or(0);
    Ok(CovariateGraph {
        p,
        adjacency,
        delta,
        max_degree,
        excluded,
    })
}

/// Edge `(i, j)` iff `|G(i,j)| / sqrt(G(i,i) G(j,j)) > delta`. A variable
/// with nonpositive variance is an error.
pub fn build_graph(g: &DMatrix<f64>, delta: f64) -> Result<CovariateGraph> {
    build(g, delta, false)
}

/// Like [`build_graph`] but zero-variance variables become isolated,
/// excluded nodes.
pub fn build_graph_dropping(g: &DMatrix<f64>, delta: f64) -> Result<CovariateGraph> {
    build(g, delta, true)
}

/// Per-anchor lists of connected vertex sets of size at most `m` that contain
/// the anchor. Sets are sorted ascending; each list is ordered by size, then
/// lexicographically, and starts with the singleton.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodCollection {
    pub m: usize,
    pub sets: Vec<Vec<Vec<usize>>>,
}

impl NeighborhoodCollection {
    pub fn anchored(&self, j: usize) -> &[Vec<usize>] {
        &self.sets[j]
    }

    pub fn total_count(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }
}

/// Connected sets through `anchor`, grown one neighbor at a time.
pub fn anchored_sets(graph: &CovariateGraph, anchor: usize, m: usize) -> Vec<Vec<usize>> {
    if graph.excluded[anchor] {
        return Vec::new();
    }
    let mut out = vec![vec![anchor]];
    let mut level: BTreeSet<Vec<usize>> = BTreeSet::new();
    level.insert(vec![anchor]);
    for _ in 1..m {
        let mut next = BTreeSet::new();
        for set in &level {
            for &v in set {
                for &w in &graph.adjacency[v] {
                    if let Err(pos) = set.binary_search(&w) {
                        let mut grown = set.clone();
                        grown.insert(pos, w);
                        next.insert(grown);
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        out.extend(next.iter().cloned());
        level = next;
    }
    out
}

pub fn enumerate_neighborhoods(graph: &CovariateGraph, m: usize) -> Result<NeighborhoodCollection> {
    if m == 0 {
        return param("neighborhood size cap m must be at least 1");
    }
    if m >= 3 && graph.max_degree > MAX_DEGREE_GUARD {
        return Err(Error::Cost(format!(
            "max degree {} with m = {m} would enumerate up to p*m*(2.72*d)^m = {:.3e} sets; raise delta or lower m",
            graph.max_degree,
            enumeration_bound(graph.p, graph.max_degree, m)
        )));
    }
    let sets = crate::par::map(graph.p, |j| anchored_sets(graph, j, m));
    Ok(NeighborhoodCollection { m, sets })
}

/// `p m (2.72 d)^m`.
pub fn enumeration_bound(p: usize, max_degree: usize, m: usize) -> f64 {
    p as f64 * m as f64 * (2.72 * max_degree as f64).powi(m as i32)
}

pub fn verify_enum_bound(collection: &NeighborhoodCollection, graph: &CovariateGraph) -> bool {
    if graph.max_degree == 0 {
        return collection
            .sets
            .iter()
            .flatten()
            .all(|s| s.len() == 1);
    }
    collection.total_count() as f64 <= enumeration_bound(graph.p, graph.max_degree, collection.m)
}

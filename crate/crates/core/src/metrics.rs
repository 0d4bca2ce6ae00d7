//! Homophily and centrality measurements for dataset characterization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::GraphBundle;
use crate::graph::{Graph, GraphError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("graph has no edges")]
    EmptyEdgeSet,
    #[error("katz iteration diverged; attenuation too large")]
    KatzDiverged,
    #[error("katz iteration did not converge within {0} iterations")]
    KatzMaxIter(usize),
}

/// Global and per-node edge homophily with a bucketed histogram of the
/// defined local values. Isolated nodes report no local value and are
/// excluded from the histogram.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HomophilyReport {
    pub global_h: f64,
    pub local_h: Vec<Option<f64>>,
    pub histogram: Vec<usize>,
}

/// Fraction of undirected edges whose endpoints share a label.
pub fn global_edge_homophily(bundle: &GraphBundle) -> Result<f64, MetricsError> {
    let edges = bundle.graph.edges_undirected();
    if edges.is_empty() {
        return Err(MetricsError::EmptyEdgeSet);
    }
    let same = edges
        .iter()
        .filter(|&&(u, v)| bundle.labels[u] == bundle.labels[v])
        .count();
    Ok(same as f64 / edges.len() as f64)
}

/// Fraction of v's incident edges whose other endpoint shares v's label;
/// `None` when v has no neighbors.
pub fn local_edge_homophily(bundle: &GraphBundle, v: usize) -> Result<Option<f64>, MetricsError> {
    if v >= bundle.num_nodes() {
        return Err(GraphError::NodeOutOfRange {
            node: v,
            num_nodes: bundle.num_nodes(),
        }
        .into());
    }
    let neigh = bundle.graph.neighbors(v);
    if neigh.is_empty() {
        return Ok(None);
    }
    let same = neigh
        .iter()
        .filter(|&&u| bundle.labels[u] == bundle.labels[v])
        .count();
    Ok(Some(same as f64 / neigh.len() as f64))
}

pub fn homophily_report(bundle: &GraphBundle) -> Result<HomophilyReport, MetricsError> {
    let global_h = global_edge_homophily(bundle)?;
    let mut local_h = Vec::with_capacity(bundle.num_nodes());
    let mut histogram = vec![0usize; 10];
    for v in 0..bundle.num_nodes() {
        let h = local_edge_homophily(bundle, v)?;
        if let Some(h) = h {
            let bucket = ((h * 10.0) as usize).min(9);
            histogram[bucket] += 1;
        }
        local_h.push(h);
    }
    Ok(HomophilyReport {
        global_h,
        local_h,
        histogram,
    })
}

/// Katz centrality x = sum over m >= 1 of attenuation^m (A^m 1), computed by
/// fixed-point iteration x <- attenuation * A (x + 1). The m = 0 self term is
/// excluded.
pub fn katz_centrality(
    graph: &Graph,
    attenuation: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, MetricsError> {
    let n = graph.num_nodes();
    let mut x = vec![0.0f64; n];
    let mut next = vec![0.0f64; n];
    for _ in 0..max_iter {
        for v in 0..n {
            let mut acc = 0.0;
            for &u in graph.neighbors(v) {
                acc += x[u] + 1.0;
            }
            next[v] = attenuation * acc;
        }
        let delta: f64 = x
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut x, &mut next);
        if x.iter().any(|v| !v.is_finite() || v.abs() > 1e12) {
            return Err(MetricsError::KatzDiverged);
        }
        if delta < tol {
            return Ok(x);
        }
    }
    Err(MetricsError::KatzMaxIter(max_iter))
}

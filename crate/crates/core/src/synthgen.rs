//! Synthetic node-classification graphs: uniform class labels, per-class
//! Gaussian features with a shared diagonal covariance, block-Bernoulli
//! edges, and combined graphs mixing homophily regimes.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{BundleError, GraphBundle};
use crate::graph::Graph;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("spec needs at least as many nodes as classes (N={n}, C={c})")]
    Degenerate { n: usize, c: usize },
    #[error("block matrix must be {c}x{c}, got {rows}x{cols}")]
    BlockShape { c: usize, rows: usize, cols: usize },
    #[error("block matrix entry {0} outside [0,1]")]
    BlockRange(f64),
    #[error("block matrix must be symmetric")]
    BlockAsymmetric,
    #[error("class means must be CxF ({c}x{f}), got {rows}x{cols}")]
    MeanShape {
        c: usize,
        f: usize,
        rows: usize,
        cols: usize,
    },
    #[error("variances must be positive")]
    NonPositiveVariance,
    #[error("target homophily {target} with p_in {p_in} needs p_out {p_out} > 1; infeasible")]
    InfeasibleTarget { target: f64, p_in: f64, p_out: f64 },
    #[error("target homophily must lie strictly in (0,1), got {0}")]
    TargetRange(f64),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("combined specs must share classes and feature dim: {0} vs {1}")]
    Mismatch(String, String),
    #[error("cross-edge probability {0} outside [0,1]")]
    CrossProb(f64),
    #[error(transparent)]
    Bundle(#[from] BundleError),
}

/// Parameters of one block-model graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// CxF matrix of per-class feature means, row-major.
    pub class_means: Vec<Vec<f64>>,
    /// Diagonal of the shared covariance (length F).
    pub shared_variance: Vec<f64>,
    /// CxC symmetric edge-probability matrix.
    pub block_matrix: Vec<Vec<f64>>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Scaled one-hot-like class means: class c carries `mu_gap` on its own
    /// block of F/C coordinates, zero elsewhere; shared variance
    /// `noise_var` in every dimension.
    pub fn with_block_means(
        num_nodes: usize,
        num_classes: usize,
        feature_dim: usize,
        mu_gap: f64,
        noise_var: f64,
        block_matrix: Vec<Vec<f64>>,
        seed: u64,
    ) -> Self {
        let mut class_means = vec![vec![0.0; feature_dim]; num_classes];
        for (c, mean) in class_means.iter_mut().enumerate() {
            let lo = c * feature_dim / num_classes;
            let hi = (c + 1) * feature_dim / num_classes;
            for slot in &mut mean[lo..hi] {
                *slot = mu_gap;
            }
        }
        SyntheticSpec {
            num_nodes,
            num_classes,
            feature_dim,
            class_means,
            shared_variance: vec![noise_var; feature_dim],
            block_matrix,
            seed,
        }
    }

    /// Convenience constructor targeting a global edge homophily level.
    pub fn with_target_h(
        num_nodes: usize,
        num_classes: usize,
        feature_dim: usize,
        p_in: f64,
        target_h: f64,
        mu_gap: f64,
        noise_var: f64,
        seed: u64,
    ) -> Result<Self, SynthError> {
        let block = block_matrix_for_target_h(num_classes, p_in, target_h)?;
        Ok(Self::with_block_means(
            num_nodes,
            num_classes,
            feature_dim,
            mu_gap,
            noise_var,
            block,
            seed,
        ))
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.num_classes > self.num_nodes || self.num_classes == 0 {
            return Err(SynthError::Degenerate {
                n: self.num_nodes,
                c: self.num_classes,
            });
        }
        let c = self.num_classes;
        if self.block_matrix.len() != c || self.block_matrix.iter().any(|r| r.len() != c) {
            return Err(SynthError::BlockShape {
                c,
                rows: self.block_matrix.len(),
                cols: self.block_matrix.first().map_or(0, Vec::len),
            });
        }
        for i in 0..c {
            for j in 0..c {
                let p = self.block_matrix[i][j];
                if !(0.0..=1.0).contains(&p) {
                    return Err(SynthError::BlockRange(p));
                }
                if (p - self.block_matrix[j][i]).abs() > 1e-12 {
                    return Err(SynthError::BlockAsymmetric);
                }
            }
        }
        if self.class_means.len() != c
            || self.class_means.iter().any(|r| r.len() != self.feature_dim)
        {
            return Err(SynthError::MeanShape {
                c,
                f: self.feature_dim,
                rows: self.class_means.len(),
                cols: self.class_means.first().map_or(0, Vec::len),
            });
        }
        if self.shared_variance.len() != self.feature_dim
            || self.shared_variance.iter().any(|&v| v <= 0.0)
        {
            return Err(SynthError::NonPositiveVariance);
        }
        Ok(())
    }
}

/// Two block-model halves joined by independent cross edges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CombineSpec {
    pub spec_1: SyntheticSpec,
    pub spec_2: SyntheticSpec,
    pub cross_edge_prob: f64,
    pub seed: u64,
}

/// B with diagonal `p_in` and the off-diagonal solving the expected
/// edge-count balance for `target_h` under uniform classes.
pub fn block_matrix_for_target_h(
    num_classes: usize,
    p_in: f64,
    target_h: f64,
) -> Result<Vec<Vec<f64>>, SynthError> {
    if num_classes < 2 {
        return Err(SynthError::TooFewClasses(num_classes));
    }
    if !(target_h > 0.0 && target_h < 1.0) {
        return Err(SynthError::TargetRange(target_h));
    }
    let p_out = p_in * (1.0 - target_h) / ((num_classes - 1) as f64 * target_h);
    if p_out > 1.0 {
        return Err(SynthError::InfeasibleTarget {
            target: target_h,
            p_in,
            p_out,
        });
    }
    let p_out = p_out.clamp(0.0, 1.0);
    let mut block = vec![vec![p_out; num_classes]; num_classes];
    for (c, row) in block.iter_mut().enumerate() {
        row[c] = p_in;
    }
    Ok(block)
}

/// Sample one graph. The RNG stream order is labels, features, edges, masks,
/// so identical specs produce bit-identical bundles.
pub fn generate_graph(spec: &SyntheticSpec) -> Result<GraphBundle, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.num_nodes;

    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..spec.num_classes)).collect();
    let features = sample_features(spec, &labels, &mut rng);

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = spec.block_matrix[labels[i]][labels[j]];
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let graph = Graph::build(&edges, n).expect("generated endpoints in range");

    let (train, val, test) = split_masks(&labels, spec.num_classes, &mut rng);
    Ok(GraphBundle::new(graph, features, labels, train, val, test)?)
}

/// Join two generated halves: node ids of the second are offset, every cross
/// pair carries an edge with `cross_edge_prob`, and masks are regenerated
/// over the union.
pub fn combine_graphs(spec: &CombineSpec) -> Result<GraphBundle, SynthError> {
    if spec.spec_1.num_classes != spec.spec_2.num_classes
        || spec.spec_1.feature_dim != spec.spec_2.feature_dim
    {
        return Err(SynthError::Mismatch(
            format!(
                "C={},F={}",
                spec.spec_1.num_classes, spec.spec_1.feature_dim
            ),
            format!(
                "C={},F={}",
                spec.spec_2.num_classes, spec.spec_2.feature_dim
            ),
        ));
    }
    if !(0.0..=1.0).contains(&spec.cross_edge_prob) {
        return Err(SynthError::CrossProb(spec.cross_edge_prob));
    }
    let g1 = generate_graph(&spec.spec_1)?;
    let g2 = generate_graph(&spec.spec_2)?;
    let (n1, n2) = (g1.num_nodes(), g2.num_nodes());
    let n = n1 + n2;

    let mut edges = g1.graph.edges_undirected();
    edges.extend(
        g2.graph
            .edges_undirected()
            .into_iter()
            .map(|(u, v)| (u + n1, v + n1)),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for u in 0..n1 {
        for v in 0..n2 {
            if rng.gen::<f64>() < spec.cross_edge_prob {
                edges.push((u, v + n1));
            }
        }
    }
    let graph = Graph::build(&edges, n).expect("offset endpoints in range");

    let f = spec.spec_1.feature_dim;
    let mut features = Array2::zeros((n, f));
    features
        .slice_mut(ndarray::s![0..n1, ..])
        .assign(&g1.features);
    features
        .slice_mut(ndarray::s![n1..n, ..])
        .assign(&g2.features);
    let mut labels = g1.labels;
    labels.extend_from_slice(&g2.labels);

    let (train, val, test) = split_masks(&labels, spec.spec_1.num_classes, &mut rng);
    Ok(GraphBundle::new(graph, features, labels, train, val, test)?)
}

fn sample_features(
    spec: &SyntheticSpec,
    labels: &[usize],
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let std: Vec<f64> = spec.shared_variance.iter().map(|v| v.sqrt()).collect();
    let mut features = Array2::zeros((labels.len(), spec.feature_dim));
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..spec.feature_dim {
            let z: f64 = StandardNormal.sample(rng);
            features[(i, j)] = spec.class_means[y][j] + std[j] * z;
        }
    }
    features
}

/// 20 train nodes per class (halved for small classes), then the remainder
/// split 1:2 into val:test with 500/1000 caps.
fn split_masks(
    labels: &[usize],
    num_classes: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<bool>, Vec<bool>, Vec<bool>) {
    let n = labels.len();
    let mut train = vec![false; n];
    let mut val = vec![false; n];
    let mut test = vec![false; n];

    let mut rest = Vec::new();
    for c in 0..num_classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        members.shuffle(rng);
        let take = members.len().div_ceil(2).min(20);
        for &i in &members[..take] {
            train[i] = true;
        }
        rest.extend_from_slice(&members[take..]);
    }
    rest.sort_unstable();
    rest.shuffle(rng);
    let val_n = (rest.len() / 3).min(500);
    let test_n = (rest.len() - val_n).min(1000);
    for &i in &rest[..val_n] {
        val[i] = true;
    }
    for &i in &rest[val_n..val_n + test_n] {
        test[i] = true;
    }
    (train, val, test)
}

//! Adaptive convolution: decoupled per-edge aggregation weights driven by
//! the meta-weight, and the three-channel layer mixing aggregation with the
//! initial feature and topology embeddings.

use std::rc::Rc;

use mwgnn_autodiff::{EdgeIndex, Result, Tape, TensorError, TensorId};

/// Bound ids of one scoring perceptron (input -> tanh hidden -> scalar).
#[derive(Debug, Clone, Copy)]
pub struct PsiIds {
    pub w1: TensorId,
    pub b1: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
}

impl PsiIds {
    pub fn bind(binding: &mwgnn_autodiff::Binding, prefix: &str) -> Result<Self> {
        Ok(PsiIds {
            w1: binding.id(&format!("{prefix}.w1"))?,
            b1: binding.id(&format!("{prefix}.b1"))?,
            w2: binding.id(&format!("{prefix}.w2"))?,
            b2: binding.id(&format!("{prefix}.b2"))?,
        })
    }
}

/// Per-directed-edge aggregation weights, aligned with the CSR edge order of
/// `edges`. `s_f` and `s_t` are each normalized over every destination's
/// in-edges; `s` is their fusion once [`fuse_weights`] has run.
pub struct EdgeScores {
    pub edges: Rc<EdgeIndex>,
    pub s_f: TensorId,
    pub s_t: TensorId,
    pub s: Option<TensorId>,
}

/// Per-edge scoring perceptron over concatenated [dst_repr, src_feat] rows.
/// The first layer distributes over the concatenation, so each side is
/// projected once per node and only the d_psi-wide results are gathered per
/// edge; the scores equal a direct evaluation on the stacked pairs.
fn psi_scores(
    tape: &mut Tape,
    dst_repr: TensorId,
    src_feat: TensorId,
    psi: &PsiIds,
    dst: &Rc<Vec<usize>>,
    src: &Rc<Vec<usize>>,
) -> Result<TensorId> {
    let a = tape.shape(dst_repr).1;
    let b = tape.shape(src_feat).1;
    let w1_top = tape.slice_rows(psi.w1, 0, a)?;
    let w1_bot = tape.slice_rows(psi.w1, a, b)?;
    let dst_proj = tape.matmul(dst_repr, w1_top)?;
    let src_proj = tape.matmul(src_feat, w1_bot)?;
    let dst_rows = tape.gather_rows(dst_proj, dst.clone())?;
    let src_rows = tape.gather_rows(src_proj, src.clone())?;
    let lin = tape.add(dst_rows, src_rows)?;
    let lin = tape.add_row(lin, psi.b1)?;
    let hid = tape.tanh(lin)?;
    let out = tape.matmul(hid, psi.w2)?;
    tape.add_row(out, psi.b2)
}

/// Raw per-edge scores from destination context paired with source signal,
/// softmax-normalized per destination. `dst_repr_f`/`dst_repr_t` carry the
/// meta-weight in the full model and fall back to raw features/LDP when the
/// meta path is ablated.
pub fn decoupled_edge_weights(
    tape: &mut Tape,
    dst_repr_f: TensorId,
    dst_repr_t: TensorId,
    x: TensorId,
    ldp: TensorId,
    psi_f: &PsiIds,
    psi_t: &PsiIds,
    edges: &Rc<EdgeIndex>,
) -> Result<EdgeScores> {
    let dst = Rc::new(edges.dst.clone());
    let src = Rc::new(edges.src.clone());
    let offsets = Rc::new(edges.offsets.clone());

    let raw_f = psi_scores(tape, dst_repr_f, x, psi_f, &dst, &src)?;
    let s_f = tape.edge_softmax(raw_f, offsets.clone())?;

    let raw_t = psi_scores(tape, dst_repr_t, ldp, psi_t, &dst, &src)?;
    let s_t = tape.edge_softmax(raw_t, offsets)?;

    Ok(EdgeScores {
        edges: edges.clone(),
        s_f,
        s_t,
        s: None,
    })
}

/// s = alpha * s_f + (1 - alpha) * s_t, elementwise over edges.
pub fn fuse_weights(tape: &mut Tape, scores: &mut EdgeScores, alpha: f64) -> Result<TensorId> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(TensorError::ShapeMismatch {
            op: "fuse_weights",
            details: format!("alpha {alpha} outside [0,1]"),
        });
    }
    let a = tape.scale(scores.s_f, alpha)?;
    let b = tape.scale(scores.s_t, 1.0 - alpha)?;
    let s = tape.add(a, b)?;
    scores.s = Some(s);
    Ok(s)
}

/// Initial channel embeddings shared by every layer: a feature projection
/// and a topology projection of the adjacency rows. The adjacency product is
/// taken edge-wise, so no dense NxN matrix is formed.
pub struct ChannelEmbeddings {
    pub h_f0: TensorId,
    pub h_t0: TensorId,
}

#[allow(clippy::too_many_arguments)]
pub fn init_channel_embeddings(
    tape: &mut Tape,
    x: TensorId,
    fc_f_w: TensorId,
    fc_f_b: TensorId,
    fc_t_w: TensorId,
    fc_t_b: TensorId,
    edge_ones: TensorId,
    edges: Rc<EdgeIndex>,
) -> Result<ChannelEmbeddings> {
    let f_lin = tape.matmul(x, fc_f_w)?;
    let f_lin = tape.add_row(f_lin, fc_f_b)?;
    let h_f0 = tape.tanh(f_lin)?;

    // Row v of A · W is the sum of W rows over v's neighbors.
    let t_lin = tape.edge_aggregate(fc_t_w, edge_ones, edges)?;
    let t_lin = tape.add_row(t_lin, fc_t_b)?;
    let h_t0 = tape.tanh(t_lin)?;
    Ok(ChannelEmbeddings { h_f0, h_t0 })
}

/// Channel mix weights of one layer stack.
#[derive(Debug, Clone, Copy)]
pub struct ChannelWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta: f64,
}

impl ChannelWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda1 + self.lambda2 >= 1.0 {
            return Err(TensorError::ShapeMismatch {
                op: "adaptive_layer",
                details: format!(
                    "lambda1 {} lambda2 {} violate lambda >= 0, sum < 1",
                    self.lambda1, self.lambda2
                ),
            });
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(TensorError::ShapeMismatch {
                op: "adaptive_layer",
                details: format!("beta {} outside [0,1]", self.beta),
            });
        }
        Ok(())
    }
}

/// One adaptive layer: weighted-neighbor aggregation mixed with the two
/// channels, then the (1-beta)I + beta*W transform. `activate` selects the
/// ReLU used on hidden layers; the final layer passes through untouched.
pub fn adaptive_layer(
    tape: &mut Tape,
    h: TensorId,
    s: TensorId,
    edges: Rc<EdgeIndex>,
    ch: &ChannelEmbeddings,
    w_l: TensorId,
    cw: ChannelWeights,
    activate: bool,
) -> Result<TensorId> {
    cw.validate()?;
    let agg = tape.edge_aggregate(h, s, edges)?;
    let mut m = tape.scale(agg, 1.0 - cw.lambda1 - cw.lambda2)?;
    if cw.lambda1 != 0.0 {
        let f = tape.scale(ch.h_f0, cw.lambda1)?;
        m = tape.add(m, f)?;
    }
    if cw.lambda2 != 0.0 {
        let t = tape.scale(ch.h_t0, cw.lambda2)?;
        m = tape.add(m, t)?;
    }
    let keep = tape.scale(m, 1.0 - cw.beta)?;
    let trans = tape.matmul(m, w_l)?;
    let trans = tape.scale(trans, cw.beta)?;
    let out = tape.add(keep, trans)?;
    if activate {
        tape.relu(out)
    } else {
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::models::csr_edge_index;
    use mwgnn_autodiff::ParamStore;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn register_psi(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) {
        store
            .insert_glorot(format!("{prefix}.w1"), input, hidden, rng)
            .unwrap();
        store.insert_zeros(format!("{prefix}.b1"), 1, hidden).unwrap();
        store
            .insert_glorot(format!("{prefix}.w2"), hidden, 1, rng)
            .unwrap();
        store.insert_zeros(format!("{prefix}.b2"), 1, 1).unwrap();
    }

    fn zero_psi(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize) {
        store.insert_zeros(format!("{prefix}.w1"), input, hidden).unwrap();
        store.insert_zeros(format!("{prefix}.b1"), 1, hidden).unwrap();
        store.insert_zeros(format!("{prefix}.w2"), hidden, 1).unwrap();
        store.insert_zeros(format!("{prefix}.b2"), 1, 1).unwrap();
    }

    fn toy_graph() -> Graph {
        Graph::build(&[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)], 4).unwrap()
    }

    #[test]
    fn zero_psi_weights_give_uniform_scores() {
        let g = toy_graph();
        let edges = Rc::new(csr_edge_index(&g));
        let mut store = ParamStore::new();
        zero_psi(&mut store, "psi_f", 2 + 3, 4);
        zero_psi(&mut store, "psi_t", 2 + 5, 4);

        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let w_meta = tape.constant(Array2::from_shape_fn((4, 2), |(i, j)| (i + j) as f64));
        let x = tape.constant(Array2::from_shape_fn((4, 3), |(i, j)| (i * j) as f64));
        let ldp = tape.constant(Array2::ones((4, 5)));
        let psi_f = PsiIds::bind(&binding, "psi_f").unwrap();
        let psi_t = PsiIds::bind(&binding, "psi_t").unwrap();
        let scores =
            decoupled_edge_weights(&mut tape, w_meta, w_meta, x, ldp, &psi_f, &psi_t, &edges)
                .unwrap();
        for (e, &dst) in edges.dst.iter().enumerate() {
            let deg = g.degree(dst) as f64;
            assert!((tape.value(scores.s_f)[(e, 0)] - 1.0 / deg).abs() < 1e-12);
            assert!((tape.value(scores.s_t)[(e, 0)] - 1.0 / deg).abs() < 1e-12);
        }
    }

    #[test]
    fn per_destination_scores_sum_to_one() {
        let g = toy_graph();
        let edges = Rc::new(csr_edge_index(&g));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        register_psi(&mut store, "psi_f", 2 + 3, 4, &mut rng);
        register_psi(&mut store, "psi_t", 2 + 5, 4, &mut rng);

        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let w_meta = tape.constant(Array2::from_shape_fn((4, 2), |(i, j)| (i as f64) - j as f64));
        let x = tape.constant(Array2::from_shape_fn((4, 3), |(i, j)| ((i + 2 * j) as f64).sin()));
        let ldp = tape.constant(Array2::from_shape_fn((4, 5), |(i, j)| (i * 5 + j) as f64 * 0.1));
        let psi_f = PsiIds::bind(&binding, "psi_f").unwrap();
        let psi_t = PsiIds::bind(&binding, "psi_t").unwrap();
        let scores =
            decoupled_edge_weights(&mut tape, w_meta, w_meta, x, ldp, &psi_f, &psi_t, &edges)
                .unwrap();
        for v in 0..4 {
            let (lo, hi) = (edges.offsets[v], edges.offsets[v + 1]);
            let sum_f: f64 = (lo..hi).map(|e| tape.value(scores.s_f)[(e, 0)]).sum();
            let sum_t: f64 = (lo..hi).map(|e| tape.value(scores.s_t)[(e, 0)]).sum();
            assert!((sum_f - 1.0).abs() < 1e-9);
            assert!((sum_t - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn scores_exist_only_on_adjacency_support() {
        // Dense mask oracle: rebuild A ⊙ S densely and check zeros off-support.
        let g = toy_graph();
        let edges = Rc::new(csr_edge_index(&g));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        register_psi(&mut store, "psi_f", 1 + 2, 3, &mut rng);
        register_psi(&mut store, "psi_t", 1 + 5, 3, &mut rng);
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let w_meta = tape.constant(Array2::ones((4, 1)));
        let x = tape.constant(Array2::from_shape_fn((4, 2), |(i, j)| (i + j) as f64));
        let ldp = tape.constant(Array2::ones((4, 5)));
        let psi_f = PsiIds::bind(&binding, "psi_f").unwrap();
        let psi_t = PsiIds::bind(&binding, "psi_t").unwrap();
        let scores =
            decoupled_edge_weights(&mut tape, w_meta, w_meta, x, ldp, &psi_f, &psi_t, &edges)
                .unwrap();

        let mut dense = Array2::zeros((4, 4));
        for (e, (&d, &s)) in edges.dst.iter().zip(&edges.src).enumerate() {
            dense[(d, s)] = tape.value(scores.s_f)[(e, 0)];
        }
        for i in 0..4 {
            for j in 0..4 {
                if !g.neighbors(i).contains(&j) {
                    assert_eq!(dense[(i, j)], 0.0, "non-edge {i},{j} carries score");
                }
            }
        }
    }

    #[test]
    fn fuse_weights_interpolates() {
        let edges = Rc::new(csr_edge_index(&Graph::build(&[(0, 1)], 2).unwrap()));
        let mut tape = Tape::new();
        let s_f = tape.constant(array![[0.2], [0.7]]);
        let s_t = tape.constant(array![[0.6], [0.1]]);
        let mut scores = EdgeScores {
            edges,
            s_f,
            s_t,
            s: None,
        };
        let s = fuse_weights(&mut tape, &mut scores, 0.5).unwrap();
        assert!((tape.value(s)[(0, 0)] - 0.4).abs() < 1e-12);

        let s1 = fuse_weights(&mut tape, &mut scores, 1.0).unwrap();
        assert_eq!(tape.value(s1), tape.value(s_f));
        let s0 = fuse_weights(&mut tape, &mut scores, 0.0).unwrap();
        assert_eq!(tape.value(s0), tape.value(s_t));
        assert!(fuse_weights(&mut tape, &mut scores, 1.5).is_err());
    }

    #[test]
    fn fused_scores_stay_between_the_two_inputs() {
        let edges = Rc::new(csr_edge_index(&Graph::build(&[(0, 1)], 2).unwrap()));
        let mut tape = Tape::new();
        let s_f = tape.constant(array![[0.3], [0.9]]);
        let s_t = tape.constant(array![[0.8], [0.2]]);
        let mut scores = EdgeScores {
            edges,
            s_f,
            s_t,
            s: None,
        };
        let s = fuse_weights(&mut tape, &mut scores, 0.37).unwrap();
        for e in 0..2 {
            let (f, t) = (tape.value(s_f)[(e, 0)], tape.value(s_t)[(e, 0)]);
            let v = tape.value(s)[(e, 0)];
            assert!(v >= f.min(t) - 1e-12 && v <= f.max(t) + 1e-12);
        }
    }

    #[test]
    fn channel_embeddings_zero_weights_and_isolated_nodes() {
        let g = Graph::build(&[(0, 1)], 3).unwrap(); // node 2 isolated
        let edges = Rc::new(csr_edge_index(&g));
        let mut store = ParamStore::new();
        store.insert_zeros("fc_f.w", 2, 4).unwrap();
        store.insert_zeros("fc_f.b", 1, 4).unwrap();
        store.insert_zeros("fc_t.w", 3, 4).unwrap();
        store
            .insert("fc_t.b", Array2::from_elem((1, 4), 0.5))
            .unwrap();
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let x = tape.constant(Array2::from_shape_fn((3, 2), |(i, j)| (i + j) as f64));
        let ones = tape.constant(Array2::ones((edges.num_edges(), 1)));
        let ch = init_channel_embeddings(
            &mut tape,
            x,
            binding.id("fc_f.w").unwrap(),
            binding.id("fc_f.b").unwrap(),
            binding.id("fc_t.w").unwrap(),
            binding.id("fc_t.b").unwrap(),
            ones,
            edges,
        )
        .unwrap();
        // Zero feature weights and bias: H_f0 is exactly zero.
        assert!(tape.value(ch.h_f0).iter().all(|&v| v == 0.0));
        // Isolated node's topology row is tanh(bias) alone.
        for j in 0..4 {
            assert!((tape.value(ch.h_t0)[(2, j)] - 0.5f64.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_features_give_identical_feature_embeddings() {
        let g = Graph::build(&[(0, 1), (1, 2)], 3).unwrap();
        let edges = Rc::new(csr_edge_index(&g));
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut store = ParamStore::new();
        store.insert_glorot("fc_f.w", 2, 4, &mut rng).unwrap();
        store.insert_zeros("fc_f.b", 1, 4).unwrap();
        store.insert_glorot("fc_t.w", 3, 4, &mut rng).unwrap();
        store.insert_zeros("fc_t.b", 1, 4).unwrap();
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let x = tape.constant(Array2::from_elem((3, 2), 0.7));
        let ones = tape.constant(Array2::ones((edges.num_edges(), 1)));
        let ch = init_channel_embeddings(
            &mut tape,
            x,
            binding.id("fc_f.w").unwrap(),
            binding.id("fc_f.b").unwrap(),
            binding.id("fc_t.w").unwrap(),
            binding.id("fc_t.b").unwrap(),
            ones,
            edges,
        )
        .unwrap();
        let v = tape.value(ch.h_f0);
        for i in 1..3 {
            for j in 0..4 {
                assert_eq!(v[(0, j)], v[(i, j)]);
            }
        }
    }

    #[test]
    fn adaptive_layer_reduces_to_plain_convolution() {
        // lambda1 = lambda2 = 0, beta = 1 collapses to relu(P̂ H W), checked
        // against a dense evaluation.
        let g = toy_graph();
        let edges = Rc::new(csr_edge_index(&g));
        let n = 4;
        let d = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        store.insert_glorot("w_l", d, d, &mut rng).unwrap();
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let h = tape.constant(Array2::from_shape_fn((n, d), |(i, j)| ((i * d + j) as f64).cos()));
        // Uniform normalized scores.
        let mut w = Array2::zeros((edges.num_edges(), 1));
        for (e, &dst) in edges.dst.iter().enumerate() {
            w[(e, 0)] = 1.0 / g.degree(dst) as f64;
        }
        let s = tape.constant(w.clone());
        let zero = tape.zeros(n, d);
        let ch = ChannelEmbeddings {
            h_f0: zero,
            h_t0: zero,
        };
        let out = adaptive_layer(
            &mut tape,
            h,
            s,
            edges.clone(),
            &ch,
            binding.id("w_l").unwrap(),
            ChannelWeights {
                lambda1: 0.0,
                lambda2: 0.0,
                beta: 1.0,
            },
            true,
        )
        .unwrap();

        // Dense oracle.
        let mut p_hat = Array2::zeros((n, n));
        for (e, (&dsti, &srcj)) in edges.dst.iter().zip(&edges.src).enumerate() {
            p_hat[(dsti, srcj)] = w[(e, 0)];
        }
        let dense = p_hat.dot(tape.value(h)).dot(store.get("w_l").unwrap());
        for i in 0..n {
            for j in 0..d {
                let want = dense[(i, j)].max(0.0);
                assert!((tape.value(out)[(i, j)] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn beta_zero_skips_the_transform() {
        let g = toy_graph();
        let edges = Rc::new(csr_edge_index(&g));
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut store = ParamStore::new();
        store.insert_glorot("w_l", 2, 2, &mut rng).unwrap();
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let h = tape.constant(Array2::from_shape_fn((4, 2), |(i, j)| (i + j) as f64 * 0.3));
        let mut w = Array2::zeros((edges.num_edges(), 1));
        for (e, &dst) in edges.dst.iter().enumerate() {
            w[(e, 0)] = 1.0 / g.degree(dst) as f64;
        }
        let s = tape.constant(w);
        let zero = tape.zeros(4, 2);
        let ch = ChannelEmbeddings {
            h_f0: zero,
            h_t0: zero,
        };
        let agg = tape.edge_aggregate(h, s, edges.clone()).unwrap();
        let out = adaptive_layer(
            &mut tape,
            h,
            s,
            edges,
            &ch,
            binding.id("w_l").unwrap(),
            ChannelWeights {
                lambda1: 0.0,
                lambda2: 0.0,
                beta: 0.0,
            },
            false,
        )
        .unwrap();
        let diff = tape.value(out) - tape.value(agg);
        assert!(diff.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn feature_channel_dominates_at_high_lambda1() {
        let g = toy_graph();
        let edges = Rc::new(csr_edge_index(&g));
        let mut tape = Tape::new();
        let w_l = tape.constant(Array2::eye(2));
        let h = tape.constant(Array2::from_shape_fn((4, 2), |(i, j)| (i * 2 + j) as f64));
        let h_f0 = tape.constant(Array2::from_elem((4, 2), 3.0));
        let zero = tape.zeros(4, 2);
        let mut w = Array2::zeros((edges.num_edges(), 1));
        for (e, &dst) in edges.dst.iter().enumerate() {
            w[(e, 0)] = 1.0 / g.degree(dst) as f64;
        }
        let s = tape.constant(w.clone());
        let ch = ChannelEmbeddings { h_f0, h_t0: zero };
        let eps = 0.01;
        let out = adaptive_layer(
            &mut tape,
            h,
            s,
            edges.clone(),
            &ch,
            w_l,
            ChannelWeights {
                lambda1: 1.0 - eps,
                lambda2: 0.0,
                beta: 0.0,
            },
            false,
        )
        .unwrap();
        // Dense oracle: eps * P̂H + (1-eps) * H_f0.
        let mut p_hat = Array2::zeros((4, 4));
        for (e, (&dsti, &srcj)) in edges.dst.iter().zip(&edges.src).enumerate() {
            p_hat[(dsti, srcj)] = w[(e, 0)];
        }
        let want = p_hat.dot(tape.value(h)) * eps + &(tape.value(ch.h_f0) * (1.0 - eps));
        let diff = tape.value(out) - &want;
        assert!(diff.iter().all(|&v| v.abs() < 1e-10));
    }

    #[test]
    fn invalid_channel_weights_are_rejected() {
        assert!(ChannelWeights {
            lambda1: 0.6,
            lambda2: 0.5,
            beta: 0.5
        }
        .validate()
        .is_err());
        assert!(ChannelWeights {
            lambda1: -0.1,
            lambda2: 0.0,
            beta: 0.5
        }
        .validate()
        .is_err());
        assert!(ChannelWeights {
            lambda1: 0.1,
            lambda2: 0.1,
            beta: 1.5
        }
        .validate()
        .is_err());
    }
}

//! Per-node meta-weight construction: learned distributions over the
//! topology, feature, and position fields of each node's k-hop context,
//! fused by a shared attention vector.

use std::rc::Rc;

use mwgnn_autodiff::{Binding, Result, Tape, TensorId};
use ndarray::Array2;

/// Bound tape ids of one GRU's gate parameters. Gate matrices are stored as
/// (hidden + input) x hidden and applied by right multiplication to the
/// concatenated [h, x] row batch.
#[derive(Debug, Clone, Copy)]
pub struct GruIds {
    pub w_u: TensorId,
    pub w_r: TensorId,
    pub w_h: TensorId,
    pub b_u: TensorId,
    pub b_r: TensorId,
    pub b_h: TensorId,
}

impl GruIds {
    pub fn bind(binding: &Binding, prefix: &str) -> Result<Self> {
        Ok(GruIds {
            w_u: binding.id(&format!("{prefix}.w_u"))?,
            w_r: binding.id(&format!("{prefix}.w_r"))?,
            w_h: binding.id(&format!("{prefix}.w_h"))?,
            b_u: binding.id(&format!("{prefix}.b_u"))?,
            b_r: binding.id(&format!("{prefix}.b_r"))?,
            b_h: binding.id(&format!("{prefix}.b_h"))?,
        })
    }
}

/// One GRU step over a batch of rows: h' = h + u ⊙ (candidate − h).
fn gru_step(
    tape: &mut Tape,
    h: TensorId,
    x: TensorId,
    p: &GruIds,
) -> Result<TensorId> {
    let hx = tape.concat_cols(h, x)?;
    let u_lin = tape.matmul(hx, p.w_u)?;
    let u_lin = tape.add_row(u_lin, p.b_u)?;
    let u = tape.sigmoid(u_lin)?;
    let r_lin = tape.matmul(hx, p.w_r)?;
    let r_lin = tape.add_row(r_lin, p.b_r)?;
    let r = tape.sigmoid(r_lin)?;
    let rh = tape.hadamard(r, h)?;
    let rhx = tape.concat_cols(rh, x)?;
    let c_lin = tape.matmul(rhx, p.w_h)?;
    let c_lin = tape.add_row(c_lin, p.b_h)?;
    let cand = tape.tanh(c_lin)?;
    let delta = tape.sub(cand, h)?;
    let update = tape.hadamard(u, delta)?;
    tape.add(h, update)
}

/// Encode one explicit sequence of input vectors; the empty sequence maps to
/// the zero vector.
pub fn gru_encode(
    tape: &mut Tape,
    sequence: &Array2<f64>,
    p: &GruIds,
    hidden: usize,
) -> Result<TensorId> {
    let steps = sequence.nrows();
    let feat = tape.constant(sequence.clone());
    let seqs = vec![(0..steps).collect::<Vec<usize>>()];
    gru_encode_batch(tape, feat, &seqs, p, hidden)
}

/// Run one shared GRU over many index sequences into `feat` at once.
/// Sequences are processed stepwise over a length-sorted batch so all
/// sequences advance through the same tape ops; the output keeps the input
/// order, one row per sequence.
pub fn gru_encode_batch(
    tape: &mut Tape,
    feat: TensorId,
    seqs: &[Vec<usize>],
    p: &GruIds,
    hidden: usize,
) -> Result<TensorId> {
    let n_seq = seqs.len();
    let mut order: Vec<usize> = (0..n_seq).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(seqs[i].len()), i));
    let lens: Vec<usize> = order.iter().map(|&i| seqs[i].len()).collect();
    let max_len = lens.first().copied().unwrap_or(0);

    let mut segments: Vec<TensorId> = Vec::new();
    let mut emitted: Vec<usize> = Vec::new(); // positions in `order`, emission order

    if max_len > 0 {
        let n0 = lens.partition_point(|&l| l > 0);
        let mut h = tape.zeros(n0, hidden);
        for t in 0..max_len {
            let n_t = lens.partition_point(|&l| l > t);
            let n_next = lens.partition_point(|&l| l > t + 1);
            let idx: Vec<usize> = (0..n_t).map(|pos| seqs[order[pos]][t]).collect();
            let x_t = tape.gather_rows(feat, Rc::new(idx))?;
            let h_new = gru_step(tape, h, x_t, p)?;
            if n_next < n_t {
                segments.push(tape.slice_rows(h_new, n_next, n_t - n_next)?);
                emitted.extend(n_next..n_t);
            }
            if n_next == 0 {
                break;
            }
            h = tape.slice_rows(h_new, 0, n_next)?;
        }
    }
    let n_live = lens.partition_point(|&l| l > 0);
    if n_live < n_seq {
        segments.push(tape.zeros(n_seq - n_live, hidden));
        emitted.extend(n_live..n_seq);
    }

    let stacked = tape.concat_rows(&segments)?;
    let mut back = vec![0usize; n_seq];
    for (row, &pos) in emitted.iter().enumerate() {
        back[order[pos]] = row;
    }
    tape.gather_rows(stacked, Rc::new(back))
}

/// Topology distribution: GRU over the LDP rows of each node's degree-sorted
/// context.
pub fn topo_distribution(
    tape: &mut Tape,
    ldp: TensorId,
    contexts: &[Vec<usize>],
    p: &GruIds,
    d_meta: usize,
) -> Result<TensorId> {
    gru_encode_batch(tape, ldp, contexts, p, d_meta)
}

/// Feature distribution, average flavor: context mean of the raw features
/// followed by a learned projection to the meta width.
pub fn feature_distribution_average(
    tape: &mut Tape,
    x: TensorId,
    khop_edges: Rc<mwgnn_autodiff::EdgeIndex>,
    khop_weights: TensorId,
    proj_w: TensorId,
    proj_b: TensorId,
) -> Result<TensorId> {
    let mean = tape.edge_aggregate(x, khop_weights, khop_edges)?;
    let lin = tape.matmul(mean, proj_w)?;
    tape.add_row(lin, proj_b)
}

/// Feature distribution, GRU flavor: the degree-sorted feature rows run
/// through their own GRU.
pub fn feature_distribution_gru(
    tape: &mut Tape,
    x: TensorId,
    contexts: &[Vec<usize>],
    p: &GruIds,
    d_meta: usize,
) -> Result<TensorId> {
    gru_encode_batch(tape, x, contexts, p, d_meta)
}

/// Position distribution: two-layer perceptron over the shortest-path
/// distance rows.
pub fn position_distribution(
    tape: &mut Tape,
    spd: TensorId,
    w1: TensorId,
    b1: TensorId,
    w2: TensorId,
    b2: TensorId,
) -> Result<TensorId> {
    let lin = tape.matmul(spd, w1)?;
    let lin = tape.add_row(lin, b1)?;
    let hid = tape.tanh(lin)?;
    let out = tape.matmul(hid, w2)?;
    tape.add_row(out, b2)
}

/// Attention over any nonempty set of distribution matrices: one shared
/// query scores each field per node, softmax rows weight the fields, and the
/// meta-weight is the per-node convex combination.
pub struct AttentionOut {
    pub w_meta: TensorId,
    /// N x (number of fields), rows on the simplex.
    pub attention: TensorId,
}

pub fn attention_integrate(
    tape: &mut Tape,
    fields: &[TensorId],
    w_a: TensorId,
    b: TensorId,
    q: TensorId,
) -> Result<AttentionOut> {
    let mut omega: Option<TensorId> = None;
    for &d in fields {
        let lin = tape.matmul(d, w_a)?;
        let lin = tape.add_row(lin, b)?;
        let act = tape.tanh(lin)?;
        let col = tape.matmul(act, q)?;
        omega = Some(match omega {
            None => col,
            Some(prev) => tape.concat_cols(prev, col)?,
        });
    }
    let omega = omega.expect("at least one field");
    let attention = tape.row_softmax(omega)?;
    let mut w_meta: Option<TensorId> = None;
    for (c, &d) in fields.iter().enumerate() {
        let a_c = tape.slice_cols(attention, c, 1)?;
        let weighted = tape.scale_rows(d, a_c)?;
        w_meta = Some(match w_meta {
            None => weighted,
            Some(prev) => tape.add(prev, weighted)?,
        });
    }
    Ok(AttentionOut {
        w_meta: w_meta.expect("at least one field"),
        attention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use mwgnn_autodiff::ParamStore;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn register_gru(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) {
        for gate in ["w_u", "w_r", "w_h"] {
            store
                .insert_glorot(format!("{prefix}.{gate}"), hidden + input, hidden, rng)
                .unwrap();
        }
        for gate in ["b_u", "b_r", "b_h"] {
            store.insert_zeros(format!("{prefix}.{gate}"), 1, hidden).unwrap();
        }
    }

    #[test]
    fn zero_inputs_zero_biases_stay_at_the_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        register_gru(&mut store, "g", 3, 4, &mut rng);
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let p = GruIds::bind(&binding, "g").unwrap();
        let seq = Array2::zeros((5, 3));
        let out = gru_encode(&mut tape, &seq, &p, 4).unwrap();
        assert!(tape.value(out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hidden_entries_stay_strictly_inside_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        register_gru(&mut store, "g", 2, 3, &mut rng);
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let p = GruIds::bind(&binding, "g").unwrap();
        let seq = array![[5.0, -3.0], [0.5, 2.0], [-4.0, 4.0], [1.0, 1.0]];
        let out = gru_encode(&mut tape, &seq, &p, 3).unwrap();
        assert!(tape.value(out).iter().all(|&v| v > -1.0 && v < 1.0));
    }

    #[test]
    fn empty_sequence_returns_zero_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        register_gru(&mut store, "g", 2, 3, &mut rng);
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let p = GruIds::bind(&binding, "g").unwrap();
        let seq = Array2::zeros((0, 2));
        let out = gru_encode(&mut tape, &seq, &p, 3).unwrap();
        assert_eq!(tape.shape(out), (1, 3));
        assert!(tape.value(out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batched_encoder_matches_per_sequence_encoder() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        register_gru(&mut store, "g", 3, 5, &mut rng);

        let feat = Array2::from_shape_fn((7, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
        let seqs: Vec<Vec<usize>> = vec![
            vec![0, 2, 4, 6],
            vec![1],
            vec![],
            vec![5, 3],
            vec![6, 6, 6],
        ];

        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let p = GruIds::bind(&binding, "g").unwrap();
        let f = tape.constant(feat.clone());
        let batch = gru_encode_batch(&mut tape, f, &seqs, &p, 5).unwrap();
        let batch_vals = tape.value(batch).clone();

        for (i, seq) in seqs.iter().enumerate() {
            let mut t2 = Tape::new();
            let b2 = store.bind(&mut t2);
            let p2 = GruIds::bind(&b2, "g").unwrap();
            let rows = Array2::from_shape_fn((seq.len(), 3), |(r, c)| feat[(seq[r], c)]);
            let one = gru_encode(&mut t2, &rows, &p2, 5).unwrap();
            for j in 0..5 {
                assert!(
                    (batch_vals[(i, j)] - t2.value(one)[(0, j)]).abs() < 1e-12,
                    "sequence {i} dim {j}"
                );
            }
        }
    }

    #[test]
    fn attention_of_identical_fields_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        store.insert_glorot("att.w_a", 4, 3, &mut rng).unwrap();
        store.insert_zeros("att.b", 1, 3).unwrap();
        store.insert_glorot("att.q", 3, 1, &mut rng).unwrap();

        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let d = tape.constant(Array2::from_shape_fn((6, 4), |(i, j)| (i + j) as f64 * 0.1));
        let out = attention_integrate(
            &mut tape,
            &[d, d, d],
            binding.id("att.w_a").unwrap(),
            binding.id("att.b").unwrap(),
            binding.id("att.q").unwrap(),
        )
        .unwrap();
        for row in tape.value(out.attention).rows() {
            for &a in row {
                assert!((a - 1.0 / 3.0).abs() < 1e-12);
            }
        }
        // And the meta-weight equals the shared field.
        let diff = tape.value(out.w_meta) - tape.value(d);
        assert!(diff.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn scalar_attention_matches_softmax_oracle() {
        // d_meta = d_q = 1, q = 1, W_a = 1, b = 0, field values (1, 0, 0).
        let mut store = ParamStore::new();
        store.insert("att.w_a", array![[1.0]]).unwrap();
        store.insert("att.b", array![[0.0]]).unwrap();
        store.insert("att.q", array![[1.0]]).unwrap();
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let d_t = tape.constant(array![[1.0]]);
        let d_f = tape.constant(array![[0.0]]);
        let d_p = tape.constant(array![[0.0]]);
        let out = attention_integrate(
            &mut tape,
            &[d_t, d_f, d_p],
            binding.id("att.w_a").unwrap(),
            binding.id("att.b").unwrap(),
            binding.id("att.q").unwrap(),
        )
        .unwrap();

        // Independent oracle: omega = (tanh 1, 0, 0) through a softmax.
        let omega = [1.0f64.tanh(), 0.0, 0.0];
        let z: f64 = omega.iter().map(|w| w.exp()).sum();
        let want: Vec<f64> = omega.iter().map(|w| w.exp() / z).collect();

        let att = tape.value(out.attention);
        for c in 0..3 {
            assert!((att[(0, c)] - want[c]).abs() < 1e-12);
        }
        // Close to the hand-rounded reference values.
        assert!((att[(0, 0)] - 0.517).abs() < 1e-3);
        assert!((att[(0, 1)] - 0.2415).abs() < 1e-3);
        let w_meta = tape.value(out.w_meta)[(0, 0)];
        assert!((w_meta - want[0]).abs() < 1e-12);
    }

    #[test]
    fn attention_rows_sum_to_one_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        store.insert_glorot("att.w_a", 3, 2, &mut rng).unwrap();
        store.insert_zeros("att.b", 1, 2).unwrap();
        store.insert_glorot("att.q", 2, 1, &mut rng).unwrap();
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let d1 = tape.constant(Array2::from_shape_fn((5, 3), |(i, j)| (i as f64) - (j as f64)));
        let d2 = tape.constant(Array2::from_shape_fn((5, 3), |(i, j)| (i * j) as f64 * 0.2));
        let out = attention_integrate(
            &mut tape,
            &[d1, d2],
            binding.id("att.w_a").unwrap(),
            binding.id("att.b").unwrap(),
            binding.id("att.q").unwrap(),
        )
        .unwrap();
        for row in tape.value(out.attention).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v >= 0.0));
        }

        // Shifting a row of omega by a constant leaves its softmax unchanged.
        let mut t2 = Tape::new();
        let omega = t2.constant(array![[0.4, -1.2, 3.0]]);
        let soft = t2.row_softmax(omega).unwrap();
        let shifted = t2.constant(array![[0.4 + 7.0, -1.2 + 7.0, 3.0 + 7.0]]);
        let soft2 = t2.row_softmax(shifted).unwrap();
        let diff = t2.value(soft) - t2.value(soft2);
        assert!(diff.iter().all(|&v| v.abs() < 1e-12));
    }
}

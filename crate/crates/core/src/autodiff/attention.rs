//! Multi-head attention built from tape primitives.
//!
//! `softmax((Q Wq)(K Wk)^T / sqrt(d_head)) (V Wv)` per head, heads
//! concatenated. There is no output projection. Rotary encodings are applied
//! per head to the projected queries/keys when positions are supplied.

use super::tape::{NodeId, Tape};
use super::{AutodiffError, Real};

/// Inputs to one attention call. `mask[i * n_k + j]` says whether query `i`
/// may attend to key `j`.
pub struct AttentionSpec<'a> {
    pub q: NodeId,
    pub k: NodeId,
    pub v: NodeId,
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub mask: &'a [bool],
    pub heads: usize,
    /// Rotary positions for the projected queries; `None` skips rotation.
    pub pos_q: Option<&'a [usize]>,
    /// Rotary positions for the projected keys.
    pub pos_k: Option<&'a [usize]>,
}

/// Runs masked multi-head attention, returning an (n_q, d) node.
pub fn attention<F: Real>(
    tape: &mut Tape<F>,
    spec: &AttentionSpec<'_>,
) -> Result<NodeId, AutodiffError> {
    let (n_q, _) = tape.shape(spec.q);
    let (n_k, _) = tape.shape(spec.k);
    let d = tape.shape(spec.wq).1;
    assert_eq!(d % spec.heads, 0, "dim {} not divisible by {} heads", d, spec.heads);
    assert_eq!(spec.mask.len(), n_q * n_k, "attention mask shape mismatch");
    let d_head = d / spec.heads;

    for i in 0..n_q {
        if !spec.mask[i * n_k..(i + 1) * n_k].iter().any(|&b| b) {
            return Err(AutodiffError::AllMaskedRow { row: i });
        }
    }

    let qp = tape.matmul(spec.q, spec.wq);
    let kp = tape.matmul(spec.k, spec.wk);
    let vp = tape.matmul(spec.v, spec.wv);

    let scale = F::from_f64(1.0 / (d_head as f64).sqrt());
    let mut head_outs = Vec::with_capacity(spec.heads);
    for h in 0..spec.heads {
        let mut qh = tape.slice_cols(qp, h * d_head, d_head);
        let mut kh = tape.slice_cols(kp, h * d_head, d_head);
        let vh = tape.slice_cols(vp, h * d_head, d_head);
        if let Some(pos) = spec.pos_q {
            qh = tape.rope(qh, pos);
        }
        if let Some(pos) = spec.pos_k {
            kh = tape.rope(kh, pos);
        }
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt);
        let scaled = tape.scale(scores, scale);
        let weights = tape.masked_softmax_rows(scaled, spec.mask);
        head_outs.push(tape.matmul(weights, vh));
    }
    Ok(tape.concat_cols(&head_outs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye(n: usize) -> Vec<f64> {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        m
    }

    #[test]
    fn single_key_returns_projected_value_row() {
        let mut tape: Tape<f64> = Tape::new();
        let d = 4;
        let q = tape.input(vec![0.3, -1.0, 2.0, 0.5], 1, d);
        let k = tape.input(vec![9.0, 9.0, 9.0, 9.0], 1, d);
        let v = tape.input(vec![1.0, 2.0, 3.0, 4.0], 1, d);
        let wq = tape.input(eye(d), d, d);
        let wk = tape.input(eye(d), d, d);
        let wv = tape.input(eye(d), d, d);
        let out = attention(
            &mut tape,
            &AttentionSpec {
                q,
                k,
                v,
                wq,
                wk,
                wv,
                mask: &[true],
                heads: 2,
                pos_q: None,
                pos_k: None,
            },
        )
        .unwrap();
        assert_eq!(tape.values(out), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn saturated_softmax_selects_matching_key() {
        // Orthogonal one-hot keys; the query equals key 1 scaled up, so the
        // softmax saturates onto value row 1.
        let mut tape: Tape<f64> = Tape::new();
        let d = 4;
        let mut kv = vec![0.0; 3 * d];
        for i in 0..3 {
            kv[i * d + i] = 1.0;
        }
        let mut vv = vec![0.0; 3 * d];
        for i in 0..3 {
            for j in 0..d {
                vv[i * d + j] = (i as f64 + 1.0) * 10.0 + j as f64;
            }
        }
        let mut qv = vec![0.0; d];
        qv[1] = 60.0;
        let q = tape.input(qv, 1, d);
        let k = tape.input(kv, 3, d);
        let v = tape.input(vv.clone(), 3, d);
        let wq = tape.input(eye(d), d, d);
        let wk = tape.input(eye(d), d, d);
        let wv = tape.input(eye(d), d, d);
        let out = attention(
            &mut tape,
            &AttentionSpec {
                q,
                k,
                v,
                wq,
                wk,
                wv,
                mask: &[true, true, true],
                heads: 1,
                pos_q: None,
                pos_k: None,
            },
        )
        .unwrap();
        for j in 0..d {
            assert!((tape.values(out)[j] - vv[d + j]).abs() < 1e-6);
        }
    }

    #[test]
    fn fully_masked_row_is_an_error() {
        let mut tape: Tape<f64> = Tape::new();
        let d = 2;
        let q = tape.input(vec![1.0, 0.0], 1, d);
        let k = tape.input(vec![1.0, 0.0], 1, d);
        let v = tape.input(vec![1.0, 0.0], 1, d);
        let w = tape.input(eye(d), d, d);
        let res = attention(
            &mut tape,
            &AttentionSpec {
                q,
                k,
                v,
                wq: w,
                wk: w,
                wv: w,
                mask: &[false],
                heads: 1,
                pos_q: None,
                pos_k: None,
            },
        );
        match res {
            Err(AutodiffError::AllMaskedRow { row: 0 }) => {}
            other => panic!("expected AllMaskedRow, got {other:?}"),
        }
    }
}

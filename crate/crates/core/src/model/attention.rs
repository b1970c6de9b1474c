//! Plain-matrix versions of the attention constraints, shared by training
//! (which rebuilds them on the autograd tape) and by tests.

use super::config::AttNorm;
use crate::align::Alignment;
use crate::autograd::softmax_into;
use crate::error::{Error, Result};
use crate::tensor::{AttentionMatrix, Matrix};

/// `0` where target and source sentence IDs agree, `-inf` elsewhere.
pub fn sentence_mask(target_ids: &[usize], source_ids: &[usize]) -> Matrix {
    let mut m = Matrix::zeros(target_ids.len(), source_ids.len());
    for (i, ti) in target_ids.iter().enumerate() {
        for (j, sj) in source_ids.iter().enumerate() {
            if ti != sj {
                m[(i, j)] = f64::NEG_INFINITY;
            }
        }
    }
    m
}

/// Lower-triangular decoder self-attention mask.
pub fn causal_mask(n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            m[(i, j)] = f64::NEG_INFINITY;
        }
    }
    m
}

/// Single-head `softmax((h_dec Wq)(h_enc Wk)^T / sqrt(d) + mask)`, `d` being
/// the projected width.
pub fn masked_attention(
    h_dec: &Matrix,
    h_enc: &Matrix,
    w_q: &Matrix,
    w_k: &Matrix,
    mask: &Matrix,
) -> Result<AttentionMatrix> {
    let q = h_dec.matmul(w_q);
    let k = h_enc.matmul(w_k);
    let scale = 1.0 / (w_q.cols as f64).sqrt();
    let mut logits = q.matmul_t(&k);
    assert_eq!(logits.shape(), mask.shape(), "mask shape mismatch");
    for (l, m) in logits.data.iter_mut().zip(&mask.data) {
        *l = *l * scale + m;
    }
    let mut out = Matrix::zeros(logits.rows, logits.cols);
    for r in 0..logits.rows {
        softmax_into(logits.row(r), out.row_mut(r)).ok_or(Error::DegenerateRow { row: r })?;
    }
    Ok(out)
}

/// Ground-truth attention: `1/T` on the `T` source cells each target token is
/// aligned to. Rows without an alignment stay zero.
pub fn target_map(alignment: &Alignment, m: usize, n: usize) -> Result<Matrix> {
    let mut u = Matrix::zeros(m, n);
    let mut seen_t = vec![false; m];
    let mut seen_s = vec![false; n];
    for p in &alignment.pairs {
        if p.source.start == 0
            || p.target.start == 0
            || p.source.end > n
            || p.target.end > m
            || p.source.is_empty()
            || p.target.is_empty()
        {
            return Err(Error::InvalidAlignment(format!(
                "pair {}-{}:{}-{} outside {n} sources x {m} targets",
                p.source.start, p.source.end, p.target.start, p.target.end
            )));
        }
        for t in p.target.start..=p.target.end {
            if std::mem::replace(&mut seen_t[t - 1], true) {
                return Err(Error::InvalidAlignment(format!("target {t} aligned twice")));
            }
        }
        for s in p.source.start..=p.source.end {
            if std::mem::replace(&mut seen_s[s - 1], true) {
                return Err(Error::InvalidAlignment(format!("source {s} aligned twice")));
            }
        }
        let w = 1.0 / p.source.len() as f64;
        for t in p.target.start..=p.target.end {
            for s in p.source.start..=p.source.end {
                u[(t - 1, s - 1)] = w;
            }
        }
    }
    Ok(u)
}

/// Mean per-entry penalty between attention and its target map.
pub fn attention_regularizer(a: &AttentionMatrix, u: &Matrix, norm: AttNorm) -> f64 {
    assert_eq!(a.shape(), u.shape(), "regularizer shape mismatch");
    let total: f64 = a
        .data
        .iter()
        .zip(&u.data)
        .map(|(x, y)| match norm {
            AttNorm::Abs => (x - y).abs(),
            AttNorm::Squared => (x - y).powi(2),
        })
        .sum();
    total / a.data.len() as f64
}

/// Song-level regularization target: `u` plus per-cell weights that average
/// the penalty within each sentence block and then over sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTarget {
    pub u: Matrix,
    pub weights: Matrix,
}

impl AttentionTarget {
    pub fn new(alignment: &Alignment, target_sentence_ids: &[usize], source_sentence_ids: &[usize]) -> Result<Self> {
        let (m, n) = (target_sentence_ids.len(), source_sentence_ids.len());
        let u = target_map(alignment, m, n)?;
        let count = |ids: &[usize]| ids.last().map_or(0, |&l| l + 1);
        let sentences = count(target_sentence_ids);
        if sentences != count(source_sentence_ids) {
            return Err(Error::Input(format!(
                "{sentences} target sentences vs {} source sentences",
                count(source_sentence_ids)
            )));
        }
        let mut rows = vec![0usize; sentences];
        let mut cols = vec![0usize; sentences];
        target_sentence_ids.iter().for_each(|&s| rows[s] += 1);
        source_sentence_ids.iter().for_each(|&s| cols[s] += 1);
        let mut weights = Matrix::zeros(m, n);
        for (i, &ti) in target_sentence_ids.iter().enumerate() {
            for (j, &sj) in source_sentence_ids.iter().enumerate() {
                if ti == sj {
                    if rows[ti] == 0 || cols[ti] == 0 {
                        continue;
                    }
                    weights[(i, j)] = 1.0 / (sentences * rows[ti] * cols[ti]) as f64;
                }
            }
        }
        // alignment must not cross sentence boundaries
        for i in 0..m {
            for j in 0..n {
                if u[(i, j)] != 0.0 && target_sentence_ids[i] != source_sentence_ids[j] {
                    return Err(Error::InvalidAlignment(format!(
                        "target {} aligned to source {} in another sentence",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { u, weights })
    }

    /// Weighted penalty for a plain attention matrix (mirrors the tape op).
    pub fn penalty(&self, a: &AttentionMatrix, norm: AttNorm) -> f64 {
        (0..a.data.len())
            .map(|k| {
                let d = a.data[k] - self.u.data[k];
                self.weights.data[k]
                    * match norm {
                        AttNorm::Abs => d.abs(),
                        AttNorm::Squared => d * d,
                    }
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::Span;
    use approx::assert_abs_diff_eq;

    const NI: f64 = f64::NEG_INFINITY;

    #[test]
    fn mask_examples() {
        let m = sentence_mask(&[0, 0, 1], &[0, 1, 1]);
        assert_eq!(m.to_rows(), vec![vec![0.0, NI, NI], vec![0.0, NI, NI], vec![NI, 0.0, 0.0]]);
        assert!(sentence_mask(&[0, 0], &[0, 0, 0]).data.iter().all(|&v| v == 0.0));
        assert!(sentence_mask(&[0], &[1, 2]).data.iter().all(|&v| v == NI));
    }

    #[test]
    fn attention_examples() {
        let eye = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let zeros = Matrix::zeros(2, 2);
        let h_enc = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0], vec![7.0, 8.0]]);
        let a = masked_attention(&Matrix::filled(3, 2, 1.0), &h_enc, &eye, &zeros, &Matrix::zeros(3, 4)).unwrap();
        assert!(a.data.iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let mut mask = Matrix::filled(2, 4, NI);
        mask[(0, 2)] = 0.0;
        mask[(1, 0)] = 0.0;
        let a = masked_attention(&Matrix::filled(2, 2, 1.0), &h_enc, &eye, &eye, &mask).unwrap();
        assert_eq!(a[(0, 2)], 1.0);
        assert_eq!(a[(1, 0)], 1.0);
        assert_eq!(a.data.iter().filter(|&&v| v == 0.0).count(), 6);

        let dead = sentence_mask(&[0, 1], &[0, 0, 0, 0]);
        assert!(matches!(
            masked_attention(&Matrix::filled(2, 2, 1.0), &h_enc, &eye, &eye, &dead),
            Err(Error::DegenerateRow { row: 1 })
        ));
    }

    #[test]
    fn target_map_examples() {
        let mut al = Alignment::default();
        al.push(Span::new(1, 3), Span::new(1, 1));
        let u = target_map(&al, 2, 5).unwrap();
        assert_eq!(u.row(0), &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0, 0.0]);
        assert_eq!(u.row(1), &[0.0; 5]);

        let diag = Alignment::new(
            (1..=3).map(|i| crate::align::AlignedPair { source: Span::new(i, i), target: Span::new(i, i) }).collect(),
        );
        let u = target_map(&diag, 3, 3).unwrap();
        assert_eq!(u, Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]));

        let mut overlap = Alignment::default();
        overlap.push(Span::new(1, 2), Span::new(1, 1));
        overlap.push(Span::new(2, 3), Span::new(2, 2));
        assert!(matches!(target_map(&overlap, 2, 3), Err(Error::InvalidAlignment(_))));
    }

    #[test]
    fn regularizer_examples() {
        let u = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(attention_regularizer(&u, &u, AttNorm::Abs), 0.0);
        let a = Matrix::filled(2, 2, 0.5);
        assert_abs_diff_eq!(attention_regularizer(&a, &u, AttNorm::Abs), 0.5);
        assert_abs_diff_eq!(attention_regularizer(&a, &u, AttNorm::Squared), 0.25);
    }

    #[test]
    fn song_target_weights_average_over_blocks() {
        let mut al = Alignment::default();
        al.push(Span::new(1, 1), Span::new(1, 2));
        al.push(Span::new(2, 2), Span::new(3, 3));
        al.push(Span::new(3, 3), Span::new(4, 4));
        let t = AttentionTarget::new(&al, &[0, 0, 0, 1], &[0, 0, 1]).unwrap();
        assert_abs_diff_eq!(t.weights.data.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.weights[(0, 0)], 1.0 / 12.0);
        assert_eq!(t.weights[(3, 0)], 0.0);
        assert_eq!(t.penalty(&t.u, AttNorm::Abs), 0.0);
    }
}

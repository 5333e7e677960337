//! Parameter-free cosine baselines: bag-of-words aggregation (max / sum /
//! avg) and the coattention aggregator, scored by cosine similarity.

use crate::embeddings::FeatureMatrix;
use crate::ndcore::{dot, matmul_tn, norm, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggKind {
    Max,
    Sum,
    Avg,
    Coatt,
}

/// Column-wise aggregation over unmasked rows; zero vector when every row
/// is masked.
pub fn aggregate(fm: &FeatureMatrix, kind: AggKind) -> Vec<f64> {
    let d = fm.values.cols();
    match kind {
        AggKind::Max => {
            let mut out = vec![0.0; d];
            let mut any = false;
            for (r, &keep) in fm.mask.iter().enumerate() {
                if !keep {
                    continue;
                }
                let row = fm.values.row(r);
                if !any {
                    out.copy_from_slice(row);
                    any = true;
                } else {
                    for (o, &v) in out.iter_mut().zip(row) {
                        if v > *o {
                            *o = v;
                        }
                    }
                }
            }
            out
        }
        AggKind::Sum | AggKind::Avg => {
            let mut out = vec![0.0; d];
            let mut count = 0usize;
            for (r, &keep) in fm.mask.iter().enumerate() {
                if !keep {
                    continue;
                }
                count += 1;
                for (o, &v) in out.iter_mut().zip(fm.values.row(r)) {
                    *o += v;
                }
            }
            if kind == AggKind::Avg && count > 0 {
                for o in &mut out {
                    *o /= count as f64;
                }
            }
            out
        }
        AggKind::Coatt => unreachable!("coattention aggregates a pair, not one utterance"),
    }
}

/// Bidirectional attention contexts from the query–memory affinity matrix.
///
/// `L = E_m·E_qᵀ`; `A_q` row-normalizes `L` over query positions and `A_m`
/// row-normalizes `Lᵀ` over memory positions, with masked positions forced
/// to zero weight. Returns `C_q = A_qᵀ·E_m` (`|q|×d`) and `C_m = A_mᵀ·E_q`
/// (`|m|×d`).
pub fn coattention(q: &FeatureMatrix, m: &FeatureMatrix) -> Result<(Tensor, Tensor)> {
    let d = q.values.cols();
    if m.values.cols() != d {
        return Err(Error::Shape(format!(
            "coattention of {:?} and {:?}",
            q.values.shape(),
            m.values.shape()
        )));
    }
    let (lq, lm) = (q.values.rows(), m.values.rows());

    // affinity L[mi][qi]
    let mut affinity = Tensor::zeros(&[lm, lq]);
    for mi in 0..lm {
        for qi in 0..lq {
            affinity.data_mut()[mi * lq + qi] = dot(m.values.row(mi), q.values.row(qi));
        }
    }

    let a_q = masked_row_softmax(&affinity, &q.mask); // lm × lq
    let affinity_t = transpose(&affinity); // lq × lm
    let a_m = masked_row_softmax(&affinity_t, &m.mask); // lq × lm

    let c_q = matmul_tn(&a_q, &m.values)?; // lq × d
    let c_m = matmul_tn(&a_m, &q.values)?; // lm × d
    Ok((c_q, c_m))
}

/// Row-wise softmax restricted to unmasked columns; masked columns get
/// exactly zero weight. A row with no unmasked columns comes out all zero.
fn masked_row_softmax(t: &Tensor, col_mask: &[bool]) -> Tensor {
    let (rows, cols) = (t.rows(), t.cols());
    let mut out = Tensor::zeros(&[rows, cols]);
    for r in 0..rows {
        let row = t.row(r);
        let max = row
            .iter()
            .zip(col_mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut sum = 0.0;
        let orow = out.row_mut(r);
        for c in 0..cols {
            if col_mask[c] {
                let e = (row[c] - max).exp();
                orow[c] = e;
                sum += e;
            }
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    out
}

fn transpose(t: &Tensor) -> Tensor {
    let (rows, cols) = (t.rows(), t.cols());
    let mut out = Tensor::zeros(&[cols, rows]);
    for r in 0..rows {
        for c in 0..cols {
            out.data_mut()[c * rows + r] = t.data()[r * cols + c];
        }
    }
    out
}

/// Cosine similarity with the zero-norm guard: either aggregate having
/// zero norm scores 0 rather than NaN.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom < f64::MIN_POSITIVE {
        0.0
    } else {
        dot(a, b) / denom
    }
}

/// Deterministic relevance score in `[-1, 1]` for one question–memory pair.
pub fn cosine_score(q: &FeatureMatrix, m: &FeatureMatrix, kind: AggKind) -> Result<f64> {
    let (aq, am) = match kind {
        AggKind::Coatt => {
            let (c_q, c_m) = coattention(q, m)?;
            let fq = FeatureMatrix {
                values: c_q,
                length: q.length,
                mask: q.mask.clone(),
            };
            let fm = FeatureMatrix {
                values: c_m,
                length: m.length,
                mask: m.mask.clone(),
            };
            (aggregate(&fq, AggKind::Avg), aggregate(&fm, AggKind::Avg))
        }
        k => (aggregate(q, k), aggregate(m, k)),
    };
    Ok(cosine_sim(&aq, &am))
}

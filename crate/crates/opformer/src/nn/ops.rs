//! The attention and feed-forward primitives of the operator transformer.

use super::{NnError, Result};
use crate::tensor::{Graph, Var};

fn dims2(g: &Graph, v: Var) -> Result<(usize, usize)> {
    let s = g.shape(v);
    if s.len() != 2 {
        return Err(NnError::InvalidInput(format!(
            "expected a rank-2 tensor, got shape {s:?}"
        )));
    }
    Ok((s[0], s[1]))
}

/// Fourier-type linear attention: (1/n) (Qhat Khat^T) V, where the hat is
/// layer normalization over the feature axis with no affine part. There is
/// no softmax; the product is reassociated as Qhat (Khat^T V) so the cost is
/// linear in the sequence length.
pub fn fourier_attention(g: &mut Graph, q: Var, k: Var, v: Var, eps: f64) -> Result<Var> {
    let (n, d) = dims2(g, q)?;
    if n == 0 {
        return Err(NnError::EmptySequence { op: "fourier_attention" });
    }
    for (name, var) in [("K", k), ("V", v)] {
        let (n2, d2) = dims2(g, var)?;
        if n2 != n || d2 != d {
            return Err(NnError::InvalidInput(format!(
                "{name} has shape [{n2}, {d2}], expected [{n}, {d}]"
            )));
        }
    }
    let qh = g.layer_norm(q, None, None, eps)?;
    let kh = g.layer_norm(k, None, None, eps)?;
    let kt = g.transpose_last(kh)?;
    let ktv = g.matmul(kt, v)?;
    let out = g.matmul(qh, ktv)?;
    Ok(g.scale(out, 1.0 / n as f64))
}

/// Cross-attention between query embeddings q(y_k) and encoded input tokens:
/// z_s(y_k) = sum_i [ (1/n) sum_j k_i(x_j) v_s(x_j) ] q_i(y_k),
/// i.e. (1/n) q (k^T v). Each output row depends only on its own query.
pub fn cross_attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Var> {
    let (n, d) = dims2(g, k)?;
    if n == 0 {
        return Err(NnError::EmptySequence { op: "cross_attention" });
    }
    let (nv, _c) = dims2(g, v)?;
    if nv != n {
        return Err(NnError::InvalidInput(format!(
            "keys carry {n} tokens but values carry {nv}"
        )));
    }
    let (_m, dq) = dims2(g, q)?;
    if dq != d {
        return Err(NnError::InvalidInput(format!(
            "query width {dq} does not match key width {d}"
        )));
    }
    let kt = g.transpose_last(k)?;
    let ktv = g.matmul(kt, v)?;
    let out = g.matmul(q, ktv)?;
    Ok(g.scale(out, 1.0 / n as f64))
}

/// Gated-GELU feed-forward block: (GELU(x W + b) ⊙ (x Wg + bg)) Wo + bo.
#[allow(clippy::too_many_arguments)]
pub fn gegelu_ffn(
    g: &mut Graph,
    x: Var,
    w: Var,
    b: Var,
    wg: Var,
    bg: Var,
    wo: Var,
    bo: Var,
) -> Result<Var> {
    let h = g.matmul(x, w)?;
    let h = g.add(h, b)?;
    let gate = g.matmul(x, wg)?;
    let gate = g.add(gate, bg)?;
    let act = g.gelu(h);
    let gated = g.mul(act, gate)?;
    let out = g.matmul(gated, wo)?;
    Ok(g.add(out, bo)?)
}

//! Scaled dot-product attention split across heads.

use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

/// Output of [`multi_head_attention`]: the concatenated head outputs and
/// each head's row-stochastic weight matrix (queries × keys).
pub struct Attended {
    pub output: Var,
    pub weights: Vec<Var>,
}

/// Splits the columns of `q`/`k` (width `d_k`) and `v` (width `d_v`) evenly
/// across `heads`, computes `softmax(q_h k_hᵀ / sqrt(d_k / heads)) v_h` per
/// head with the softmax over keys, and concatenates the head outputs.
pub fn multi_head_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
) -> Result<Attended> {
    let d_k = tape.value(q).cols();
    let d_v = tape.value(v).cols();
    if heads == 0 || !d_k.is_multiple_of(heads) || !d_v.is_multiple_of(heads) {
        return Err(Error::invalid(format!(
            "{heads} heads do not evenly split key width {d_k} and value width {d_v}"
        )));
    }
    if tape.value(k).cols() != d_k {
        return Err(Error::shape("attention keys", tape.shape(q), tape.shape(k)));
    }
    if tape.value(k).rows() != tape.value(v).rows() {
        return Err(Error::shape(
            "attention values",
            tape.shape(k),
            tape.shape(v),
        ));
    }
    let (hk, hv) = (d_k / heads, d_v / heads);
    let scale = 1.0 / (hk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                tape.narrow(q, 1, h * hk, hk)?,
                tape.narrow(k, 1, h * hk, hk)?,
                tape.narrow(v, 1, h * hv, hv)?,
            )
        };
        let scores = tape.matmul_t(qh, kh)?;
        let scores = tape.scale(scores, scale);
        let w = tape.softmax(scores, 1)?;
        outs.push(tape.matmul(w, vh)?);
        weights.push(w);
    }
    let output = if heads == 1 {
        outs[0]
    } else {
        tape.concat(&outs, 1)?
    };
    Ok(Attended { output, weights })
}

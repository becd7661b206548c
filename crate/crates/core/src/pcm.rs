//! Pairwise cross-modal transformer.
//!
//! For a directed pair `src → tgt`, a stack of `depth` layers refines the
//! target sequence by attending into the source sequence:
//!
//! ```text
//! Z_0 = X_tgt
//! Z̄_i = CM(LN1(Z_{i-1}), LN1(X_src)) + LN1(Z_{i-1})
//! Z_i = FFN(LN2(Z̄_i)) + LN2(Z̄_i)
//! ```
//!
//! Keys and values always come from the layer-0 source sequence. Each
//! unordered pair runs both directions and concatenates the two final
//! outputs feature-wise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{multi_head_attention, Attended};
use crate::encoders::{apply_layer_norm, feed_forward, layer_norm_params, projection};
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::numerics::{Dropout, Init, ParamStore, Session, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcmConfig {
    pub depth: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of the value width.
    pub ff_mult: usize,
}

impl Default for PcmConfig {
    fn default() -> Self {
        PcmConfig {
            depth: 2,
            heads: 2,
            ff_mult: 4,
        }
    }
}

pub const PREFIX: &str = "pcm";

/// Unordered pairs in fusion order; `(x, y)` yields `[Z^{y→x}, Z^{x→y}]`.
pub const PAIRS: [(Modality, Modality); 3] = [
    (Modality::Audio, Modality::Visual),
    (Modality::Visual, Modality::Text),
    (Modality::Text, Modality::Audio),
];

pub fn direction_prefix(src: Modality, tgt: Modality) -> String {
    format!("{PREFIX}.{}_to_{}", src.tag(), tgt.tag())
}

/// Pairs whose two modalities are both present.
pub fn active_pairs(modalities: &[Modality]) -> Vec<(Modality, Modality)> {
    PAIRS
        .into_iter()
        .filter(|(x, y)| modalities.contains(x) && modalities.contains(y))
        .collect()
}

pub fn init_pcm<R: Rng + ?Sized>(
    store: &mut ParamStore,
    d_h: usize,
    modalities: &[Modality],
    cfg: &PcmConfig,
    rng: &mut R,
) -> Result<()> {
    if cfg.heads == 0 || !d_h.is_multiple_of(cfg.heads) {
        return Err(Error::Config(format!(
            "cross-modal attention: {} heads do not divide d_h = {d_h}",
            cfg.heads
        )));
    }
    let d_ff = cfg.ff_mult.max(1) * d_h;
    for (x, y) in active_pairs(modalities) {
        for (src, tgt) in [(y, x), (x, y)] {
            let dir = direction_prefix(src, tgt);
            for i in 0..cfg.depth {
                let l = format!("{dir}.layer{i}");
                for w in ["Wq", "Wk", "Wv"] {
                    projection(store, format!("{l}.{w}"), d_h, d_h, rng)?;
                }
                layer_norm_params(store, &format!("{l}.ln1"), d_h, rng)?;
                layer_norm_params(store, &format!("{l}.ln2"), d_h, rng)?;
                projection(store, format!("{l}.ffn.W1"), d_h, d_ff, rng)?;
                store.insert(format!("{l}.ffn.b1"), Init::Zeros.sample(&[d_ff], rng))?;
                projection(store, format!("{l}.ffn.W2"), d_ff, d_h, rng)?;
                store.insert(format!("{l}.ffn.b2"), Init::Zeros.sample(&[d_h], rng))?;
            }
        }
    }
    Ok(())
}

/// `softmax(X_q W_Q (X_kv W_K)ᵀ / sqrt(d_K)) · X_kv W_V`, multi-head.
pub fn cross_modal_attention(
    sess: &mut Session,
    x_q: Var,
    x_kv: Var,
    layer: &str,
    heads: usize,
) -> Result<Attended> {
    if sess.tape.value(x_q).rows() != sess.tape.value(x_kv).rows() {
        return Err(Error::shape(
            "cross_modal_attention",
            sess.tape.shape(x_q),
            sess.tape.shape(x_kv),
        ));
    }
    let [wq, wk, wv] = ["Wq", "Wk", "Wv"].map(|w| sess.param(&format!("{layer}.{w}")));
    let q = sess.tape.matmul(x_q, wq?)?;
    let k = sess.tape.matmul(x_kv, wk?)?;
    let v = sess.tape.matmul(x_kv, wv?)?;
    multi_head_attention(&mut sess.tape, q, k, v, heads)
}

pub struct BlockOutput {
    pub output: Var,
    pub attention: Vec<Var>,
}

/// One cross-modal layer: `z_prev` is the target stream entering the
/// layer, `source` the layer-0 source sequence.
pub fn cross_modal_block(
    sess: &mut Session,
    z_prev: Var,
    source: Var,
    layer: &str,
    heads: usize,
    dropout: &mut Dropout,
) -> Result<BlockOutput> {
    let ln1 = format!("{layer}.ln1");
    let lz = apply_layer_norm(sess, &ln1, z_prev)?;
    let ls = apply_layer_norm(sess, &ln1, source)?;
    let att = cross_modal_attention(sess, lz, ls, layer, heads)?;
    let cm = dropout.apply(&mut sess.tape, att.output)?;
    let zbar = sess.tape.add(cm, lz)?;
    let lzb = apply_layer_norm(sess, &format!("{layer}.ln2"), zbar)?;
    let f = feed_forward(sess, &format!("{layer}.ffn"), lzb)?;
    let f = dropout.apply(&mut sess.tape, f)?;
    Ok(BlockOutput {
        output: sess.tape.add(f, lzb)?,
        attention: att.weights,
    })
}

/// Runs the `depth`-layer stack for `src → tgt`.
pub fn directional_stack(
    sess: &mut Session,
    source: Var,
    target: Var,
    prefix: &str,
    cfg: &PcmConfig,
    dropout: &mut Dropout,
    attention: &mut Vec<Var>,
) -> Result<Var> {
    let mut z = target;
    for i in 0..cfg.depth {
        let out = cross_modal_block(
            sess,
            z,
            source,
            &format!("{prefix}.layer{i}"),
            cfg.heads,
            dropout,
        )?;
        z = out.output;
        attention.extend(out.attention);
    }
    Ok(z)
}

pub struct PcmOutput {
    /// `Z_{x⇄y}` per active pair, each `[N × 2·d_h]`.
    pub pairs: Vec<((Modality, Modality), Var)>,
    pub attention: Vec<Var>,
}

pub fn pcm_forward(
    sess: &mut Session,
    inputs: &[(Modality, Var)],
    cfg: &PcmConfig,
    dropout: &mut Dropout,
) -> Result<PcmOutput> {
    let lookup = |m: Modality| {
        inputs
            .iter()
            .find(|(k, _)| *k == m)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::invalid(format!("missing {} input", m.name())))
    };
    let mods: Vec<Modality> = inputs.iter().map(|(m, _)| *m).collect();
    let mut pairs = Vec::new();
    let mut attention = Vec::new();
    for (x, y) in active_pairs(&mods) {
        let (vx, vy) = (lookup(x)?, lookup(y)?);
        let into_x = directional_stack(
            sess,
            vy,
            vx,
            &direction_prefix(y, x),
            cfg,
            dropout,
            &mut attention,
        )?;
        let into_y = directional_stack(
            sess,
            vx,
            vy,
            &direction_prefix(x, y),
            cfg,
            dropout,
            &mut attention,
        )?;
        pairs.push(((x, y), sess.tape.concat(&[into_x, into_y], 1)?));
    }
    Ok(PcmOutput { pairs, attention })
}

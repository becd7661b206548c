//! Unimodal utterance encoders and the speaker-embedding enhancement.
//!
//! Audio and visual features go through one affine map each. Text goes
//! through an input projection followed by pre-norm self-attention blocks
//! running over the utterances of the conversation; there is no positional
//! encoding, so the text encoder is permutation-equivariant in utterance
//! order. Every encoder emits width `d_h`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::multi_head_attention;
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::numerics::{Init, ParamStore, Session, Var};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextEncoderConfig {
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of `d_h`.
    pub ff_mult: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        TextEncoderConfig {
            layers: 1,
            heads: 4,
            ff_mult: 4,
        }
    }
}

pub fn modality_prefix(m: Modality) -> String {
    format!("enc.{}", m.name())
}

pub const SPEAKER_TABLE: &str = "enc.speaker";

pub(crate) fn linear<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    d_out: usize,
    d_in: usize,
    bias: bool,
    rng: &mut R,
) -> Result<()> {
    store.insert(
        format!("{prefix}.W"),
        Init::Xavier {
            fan_in: d_in,
            fan_out: d_out,
        }
        .sample(&[d_out, d_in], rng),
    )?;
    if bias {
        store.insert(format!("{prefix}.b"), Init::Zeros.sample(&[d_out], rng))?;
    }
    Ok(())
}

/// A weight stored input-major (`[d_in × d_out]`), applied as `x · W`.
pub(crate) fn projection<R: Rng + ?Sized>(
    store: &mut ParamStore,
    path: String,
    d_in: usize,
    d_out: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert(
        path,
        Init::Xavier {
            fan_in: d_in,
            fan_out: d_out,
        }
        .sample(&[d_in, d_out], rng),
    )
}

pub(crate) fn layer_norm_params<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    d: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert(format!("{prefix}.gamma"), Init::Ones.sample(&[d], rng))?;
    store.insert(format!("{prefix}.beta"), Init::Zeros.sample(&[d], rng))
}

/// `x · Wᵀ (+ b)` with `W` stored `[d_out × d_in]`.
pub(crate) fn apply_linear(sess: &mut Session, prefix: &str, x: Var, bias: bool) -> Result<Var> {
    let w = sess.param(&format!("{prefix}.W"))?;
    let y = sess.tape.matmul_t(x, w)?;
    if bias {
        let b = sess.param(&format!("{prefix}.b"))?;
        sess.tape.add_bias(y, b)
    } else {
        Ok(y)
    }
}

pub(crate) fn apply_layer_norm(sess: &mut Session, prefix: &str, x: Var) -> Result<Var> {
    let g = sess.param(&format!("{prefix}.gamma"))?;
    let b = sess.param(&format!("{prefix}.beta"))?;
    sess.tape.layer_norm(x, g, b, LN_EPS)
}

pub fn init_text_encoder<R: Rng + ?Sized>(
    store: &mut ParamStore,
    d_l: usize,
    d_h: usize,
    cfg: &TextEncoderConfig,
    rng: &mut R,
) -> Result<()> {
    if cfg.heads == 0 || !d_h.is_multiple_of(cfg.heads) {
        return Err(Error::Config(format!(
            "text encoder: {} heads do not divide d_h = {d_h}",
            cfg.heads
        )));
    }
    let p = modality_prefix(Modality::Text);
    linear(store, &format!("{p}.in"), d_h, d_l, true, rng)?;
    let d_ff = cfg.ff_mult.max(1) * d_h;
    for k in 0..cfg.layers {
        let l = format!("{p}.layer{k}");
        layer_norm_params(store, &format!("{l}.ln1"), d_h, rng)?;
        for w in ["Wq", "Wk", "Wv", "Wo"] {
            projection(store, format!("{l}.attn.{w}"), d_h, d_h, rng)?;
        }
        layer_norm_params(store, &format!("{l}.ln2"), d_h, rng)?;
        projection(store, format!("{l}.ffn.W1"), d_h, d_ff, rng)?;
        store.insert(format!("{l}.ffn.b1"), Init::Zeros.sample(&[d_ff], rng))?;
        projection(store, format!("{l}.ffn.W2"), d_ff, d_h, rng)?;
        store.insert(format!("{l}.ffn.b2"), Init::Zeros.sample(&[d_h], rng))?;
    }
    Ok(())
}

/// Encodes the conversation's per-utterance text vectors `[N × d_l]` into
/// `[N × d_h]`.
pub fn encode_text(sess: &mut Session, text: Var, cfg: &TextEncoderConfig) -> Result<Var> {
    let p = modality_prefix(Modality::Text);
    let w_in = sess.param(&format!("{p}.in.W"))?;
    let d_l = sess.tape.value(w_in).cols();
    if sess.tape.value(text).cols() != d_l {
        return Err(Error::shape("encode_text", sess.tape.shape(text), &[d_l]));
    }
    let mut x = apply_linear(sess, &format!("{p}.in"), text, true)?;
    for k in 0..cfg.layers {
        let l = format!("{p}.layer{k}");
        let h = apply_layer_norm(sess, &format!("{l}.ln1"), x)?;
        let [wq, wk, wv, wo] =
            ["Wq", "Wk", "Wv", "Wo"].map(|w| sess.param(&format!("{l}.attn.{w}")));
        let q = sess.tape.matmul(h, wq?)?;
        let kk = sess.tape.matmul(h, wk?)?;
        let v = sess.tape.matmul(h, wv?)?;
        let att = multi_head_attention(&mut sess.tape, q, kk, v, cfg.heads)?;
        let o = sess.tape.matmul(att.output, wo?)?;
        x = sess.tape.add(x, o)?;

        let h = apply_layer_norm(sess, &format!("{l}.ln2"), x)?;
        let f = feed_forward(sess, &format!("{l}.ffn"), h)?;
        x = sess.tape.add(x, f)?;
    }
    Ok(x)
}

/// `max(0, x·W1 + b1)·W2 + b2`.
pub(crate) fn feed_forward(sess: &mut Session, prefix: &str, x: Var) -> Result<Var> {
    let w1 = sess.param(&format!("{prefix}.W1"))?;
    let b1 = sess.param(&format!("{prefix}.b1"))?;
    let w2 = sess.param(&format!("{prefix}.W2"))?;
    let b2 = sess.param(&format!("{prefix}.b2"))?;
    let h = sess.tape.matmul(x, w1)?;
    let h = sess.tape.add_bias(h, b1)?;
    let h = sess.tape.relu(h);
    let y = sess.tape.matmul(h, w2)?;
    sess.tape.add_bias(y, b2)
}

pub fn init_av_encoder<R: Rng + ?Sized>(
    store: &mut ParamStore,
    modality: Modality,
    d_in: usize,
    d_h: usize,
    rng: &mut R,
) -> Result<()> {
    if modality == Modality::Text {
        return Err(Error::invalid("text uses the attention encoder"));
    }
    linear(store, &modality_prefix(modality), d_h, d_in, true, rng)
}

/// Row-wise affine map `[N × d_τ] → [N × d_h]` for audio or visual input.
pub fn encode_av(sess: &mut Session, features: Var, modality: Modality) -> Result<Var> {
    let prefix = modality_prefix(modality);
    let w = sess.param(&format!("{prefix}.W"))?;
    let d_in = sess.tape.value(w).cols();
    if sess.tape.value(features).cols() != d_in {
        return Err(Error::shape(
            "encode_av",
            sess.tape.shape(features),
            &[d_in],
        ));
    }
    apply_linear(sess, &prefix, features, true)
}

pub fn init_speaker_table<R: Rng + ?Sized>(
    store: &mut ParamStore,
    n_speakers: usize,
    d_h: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert(
        SPEAKER_TABLE,
        Init::Normal { std: 1.0 }.sample(&[n_speakers, d_h], rng),
    )
}

/// `x + η · table[speaker_i]` row by row.
pub fn add_speaker(sess: &mut Session, x: Var, speakers: &[usize], eta: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Config(format!(
            "speaker mixing ratio {eta} outside [0, 1]"
        )));
    }
    if speakers.len() != sess.tape.value(x).rows() {
        return Err(Error::shape(
            "add_speaker",
            sess.tape.shape(x),
            &[speakers.len()],
        ));
    }
    if eta == 0.0 {
        return Ok(x);
    }
    let table = sess.param(SPEAKER_TABLE)?;
    if sess.tape.value(table).cols() != sess.tape.value(x).cols() {
        return Err(Error::shape(
            "add_speaker",
            sess.tape.shape(x),
            sess.tape.shape(table),
        ));
    }
    let emb = sess.tape.embedding_lookup(table, speakers)?;
    let emb = if eta == 1.0 {
        emb
    } else {
        sess.tape.scale(emb, eta)
    };
    sess.tape.add(x, emb)
}

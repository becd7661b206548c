//! Relational temporal graph network: relational graph convolution over the
//! multimodal graph followed by multi-head graph-transformer aggregation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{MultimodalGraph, RelationType};
use crate::modality::Modality;
use crate::numerics::{Init, ParamStore, Session, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RtGcnConfig {
    pub d_h1: usize,
    pub d_h2: usize,
    pub d_alpha: usize,
    pub heads: usize,
    pub rgcn_layers: usize,
    pub gt_layers: usize,
}

impl Default for RtGcnConfig {
    fn default() -> Self {
        RtGcnConfig {
            d_h1: 200,
            d_h2: 200,
            d_alpha: 64,
            heads: 7,
            rgcn_layers: 1,
            gt_layers: 1,
        }
    }
}

impl RtGcnConfig {
    pub fn output_width(&self) -> usize {
        if self.gt_layers == 0 {
            self.d_h1
        } else {
            self.heads * self.d_h2
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_h1 == 0 || self.d_h2 == 0 || self.d_alpha == 0 || self.heads == 0 {
            return Err(Error::Config(
                "graph network widths and head count must be positive".into(),
            ));
        }
        if self.rgcn_layers == 0 {
            return Err(Error::Config(
                "need at least one relational convolution layer".into(),
            ));
        }
        Ok(())
    }
}

pub const PREFIX: &str = "rtgcn";

fn rgcn_prefix(k: usize) -> String {
    format!("{PREFIX}.rgcn{k}")
}

fn gt_prefix(k: usize) -> String {
    format!("{PREFIX}.gt{k}")
}

fn weight<R: Rng + ?Sized>(
    store: &mut ParamStore,
    path: String,
    d_out: usize,
    d_in: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert(
        path,
        Init::Xavier {
            fan_in: d_in,
            fan_out: d_out,
        }
        .sample(&[d_out, d_in], rng),
    )
}

/// Registers `W_0` and one `W_r` per relation for every convolution layer,
/// then `W_1..W_4` per head for every transformer layer.
pub fn init_rtgcn<R: Rng + ?Sized>(
    store: &mut ParamStore,
    d_in: usize,
    cfg: &RtGcnConfig,
    relations: &[RelationType],
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    let mut width = d_in;
    for k in 0..cfg.rgcn_layers {
        let p = rgcn_prefix(k);
        weight(store, format!("{p}.W0"), cfg.d_h1, width, rng)?;
        for r in relations {
            weight(store, format!("{p}.W_{}", r.key()), cfg.d_h1, width, rng)?;
        }
        width = cfg.d_h1;
    }
    for k in 0..cfg.gt_layers {
        let p = gt_prefix(k);
        for c in 0..cfg.heads {
            let h = format!("{p}.head{c}");
            weight(store, format!("{h}.W1"), cfg.d_h2, width, rng)?;
            weight(store, format!("{h}.W2"), cfg.d_h2, width, rng)?;
            weight(store, format!("{h}.W3"), cfg.d_alpha, width, rng)?;
            weight(store, format!("{h}.W4"), cfg.d_alpha, width, rng)?;
        }
        width = cfg.heads * cfg.d_h2;
    }
    Ok(())
}

fn check_rows(sess: &Session, graph: &MultimodalGraph, x: Var, op: &'static str) -> Result<()> {
    let n = graph.node_count();
    if sess.tape.value(x).rows() != n {
        return Err(Error::shape(op, sess.tape.shape(x), &[n]));
    }
    Ok(())
}

/// `g_i = Σ_r Σ_{j∈N_r(i)} W_r x_j / |N_r(i)| + W_0 x_i` over the stacked
/// node features `x`.
pub fn rgcn_layer(
    sess: &mut Session,
    graph: &MultimodalGraph,
    x: Var,
    prefix: &str,
) -> Result<Var> {
    check_rows(sess, graph, x, "rgcn_layer")?;
    let w0 = sess.param(&format!("{prefix}.W0"))?;
    let d_in = sess.tape.value(w0).cols();
    if sess.tape.value(x).cols() != d_in {
        return Err(Error::shape(
            "rgcn_layer",
            sess.tape.shape(x),
            sess.tape.shape(w0),
        ));
    }
    let mut out = sess.tape.matmul_t(x, w0)?;
    let n = graph.node_count();
    for rel in graph.spec.relations() {
        let edges = graph.normalized_edges(rel);
        if edges.is_empty() {
            continue;
        }
        let w = sess.param(&format!("{prefix}.W_{}", rel.key()))?;
        let mean = sess.tape.aggregate(x, &edges, n)?;
        let term = sess.tape.matmul_t(mean, w)?;
        out = sess.tape.add(out, term)?;
    }
    Ok(out)
}

pub struct GraphTransformerOutput {
    pub output: Var,
    /// Per head, `[nodes × nodes]` weights; row `i` is `α_i·` over the
    /// in-neighbors of `i` (zero elsewhere).
    pub attention: Vec<Var>,
}

/// Per head `o_i = W_1 g_i + Σ_{j∈N(i)} α_ij W_2 g_j` with
/// `α_i· = softmax_j((W_3 g_i)ᵀ(W_4 g_j) / sqrt(d_α))`; heads concatenated.
pub fn graph_transformer_layer(
    sess: &mut Session,
    graph: &MultimodalGraph,
    g: Var,
    prefix: &str,
    heads: usize,
) -> Result<GraphTransformerOutput> {
    check_rows(sess, graph, g, "graph_transformer_layer")?;
    let mask = graph.neighbor_mask();
    let mut outs = Vec::with_capacity(heads);
    let mut attention = Vec::with_capacity(heads);
    for c in 0..heads {
        let h = format!("{prefix}.head{c}");
        let [w1, w2, w3, w4] = ["W1", "W2", "W3", "W4"].map(|w| sess.param(&format!("{h}.{w}")));
        let (w1, w2, w3, w4) = (w1?, w2?, w3?, w4?);
        if sess.tape.value(w1).cols() != sess.tape.value(g).cols() {
            return Err(Error::shape(
                "graph_transformer_layer",
                sess.tape.shape(g),
                sess.tape.shape(w1),
            ));
        }
        let d_alpha = sess.tape.value(w3).rows() as f64;
        let q = sess.tape.matmul_t(g, w3)?;
        let k = sess.tape.matmul_t(g, w4)?;
        let scores = sess.tape.matmul_t(q, k)?;
        let scores = sess.tape.scale(scores, 1.0 / d_alpha.sqrt());
        let alpha = sess.tape.masked_softmax(scores, &mask)?;
        let own = sess.tape.matmul_t(g, w1)?;
        let msg = sess.tape.matmul_t(g, w2)?;
        let agg = sess.tape.matmul(alpha, msg)?;
        outs.push(sess.tape.add(own, agg)?);
        attention.push(alpha);
    }
    let output = if heads == 1 {
        outs[0]
    } else {
        sess.tape.concat(&outs, 1)?
    };
    Ok(GraphTransformerOutput { output, attention })
}

pub struct RtGcnOutput {
    /// `G^τ` per present modality, each `[N × output_width]`.
    pub per_modality: Vec<(Modality, Var)>,
    pub attention: Vec<Var>,
}

/// Stacks the encoder outputs in modality-block order, runs the convolution
/// and transformer layers, and splits the rows back per modality.
pub fn rt_gcn_forward(
    sess: &mut Session,
    graph: &MultimodalGraph,
    inputs: &[(Modality, Var)],
    cfg: &RtGcnConfig,
) -> Result<RtGcnOutput> {
    let mods: Vec<Modality> = inputs.iter().map(|(m, _)| *m).collect();
    if mods != graph.modalities() {
        return Err(Error::invalid(format!(
            "inputs for {mods:?} do not match graph modalities {:?}",
            graph.modalities()
        )));
    }
    let n = graph.n_utterances;
    for &(_, x) in inputs {
        if sess.tape.value(x).rows() != n {
            return Err(Error::shape("rt_gcn_forward", sess.tape.shape(x), &[n]));
        }
    }
    let vars: Vec<Var> = inputs.iter().map(|(_, v)| *v).collect();
    let mut h = if vars.len() == 1 {
        vars[0]
    } else {
        sess.tape.concat(&vars, 0)?
    };
    for k in 0..cfg.rgcn_layers {
        h = rgcn_layer(sess, graph, h, &rgcn_prefix(k))?;
    }
    let mut attention = Vec::new();
    for k in 0..cfg.gt_layers {
        let out = graph_transformer_layer(sess, graph, h, &gt_prefix(k), cfg.heads)?;
        h = out.output;
        attention.extend(out.attention);
    }
    let mut per_modality = Vec::with_capacity(mods.len());
    for (b, &m) in mods.iter().enumerate() {
        let block = if mods.len() == 1 {
            h
        } else {
            sess.tape.narrow(h, 0, b * n, n)?
        };
        per_modality.push((m, block));
    }
    Ok(RtGcnOutput {
        per_modality,
        attention,
    })
}

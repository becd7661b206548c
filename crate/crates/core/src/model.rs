//! The assembled network: encoders → (graph network ∥ cross-modal
//! transformer) → fusion → classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{Conversation, CorpusMeta};
use crate::encoders::{self, TextEncoderConfig};
use crate::error::{Error, Result};
use crate::graph::{GraphSpec, MultimodalGraph};
use crate::head;
use crate::modality::Modality;
use crate::numerics::{Dropout, ParamStore, Session, Tensor, Var};
use crate::pcm::{self, PcmConfig};
use crate::rtgcn::{self, RtGcnConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_h: usize,
    /// Speaker-embedding mixing ratio in `[0, 1]`.
    pub eta: f64,
    pub dropout: f64,
    pub text: TextEncoderConfig,
    pub graph: GraphSpec,
    pub rtgcn: RtGcnConfig,
    pub pcm: PcmConfig,
    pub use_rtgcn: bool,
    pub use_pcm: bool,
    /// Classifier hidden width; half the fused width when unset.
    pub head_hidden: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_h: 200,
            eta: 1.0,
            dropout: 0.5,
            text: TextEncoderConfig::default(),
            graph: GraphSpec::full(11, 9),
            rtgcn: RtGcnConfig::default(),
            pcm: PcmConfig::default(),
            use_rtgcn: true,
            use_pcm: true,
            head_hidden: None,
        }
    }
}

impl ModelConfig {
    pub fn modalities(&self) -> &[Modality] {
        &self.graph.modalities
    }

    pub fn pcm_pairs(&self) -> Vec<(Modality, Modality)> {
        if self.use_pcm {
            pcm::active_pairs(self.modalities())
        } else {
            Vec::new()
        }
    }

    pub fn fused_width(&self) -> usize {
        let g = if self.use_rtgcn {
            self.modalities().len() * self.rtgcn.output_width()
        } else {
            0
        };
        g + self.pcm_pairs().len() * 2 * self.d_h
    }

    pub fn head_hidden(&self) -> usize {
        self.head_hidden
            .unwrap_or_else(|| head::default_hidden(self.fused_width()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_h == 0 {
            return Err(Error::Config("d_h must be positive".into()));
        }
        if self.modalities().is_empty() {
            return Err(Error::Config("modality set is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta = {} outside [0, 1]", self.eta)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout = {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.use_rtgcn {
            self.rtgcn.validate()?;
        }
        if self.fused_width() == 0 {
            return Err(Error::Config(
                "ablation leaves the fused representation empty (no graph features and no modality pairs)".into(),
            ));
        }
        Ok(())
    }
}

/// Intermediate results of one conversation's forward pass.
pub struct ConversationForward {
    pub graph: MultimodalGraph,
    /// Raw feature leaves per present modality (`[N × d_τ]`, pooled text).
    pub features: Vec<(Modality, Var)>,
    /// Speaker-enhanced encoder outputs, `[N × d_h]`.
    pub encoded: Vec<(Modality, Var)>,
    /// `G^τ` per modality when the graph network is enabled.
    pub graph_out: Vec<(Modality, Var)>,
    /// `Z_{x⇄y}` per active pair when the cross-modal transformer is enabled.
    pub pairs: Vec<((Modality, Modality), Var)>,
    /// Attention weight matrices from every attention site.
    pub attention: Vec<Var>,
    pub fused: Var,
}

pub struct Model {
    pub config: ModelConfig,
    pub meta: CorpusMeta,
}

impl Model {
    pub fn new(config: ModelConfig, meta: CorpusMeta) -> Result<Self> {
        config.validate()?;
        meta.validate()?;
        Ok(Model { config, meta })
    }

    pub fn input_width(&self, m: Modality) -> usize {
        match m {
            Modality::Audio => self.meta.d_a,
            Modality::Visual => self.meta.d_v,
            Modality::Text => self.meta.d_l,
        }
    }

    /// Draws every parameter from a stream seeded by `seed`, in a fixed
    /// module order.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for &m in cfg.modalities() {
            match m {
                Modality::Text => encoders::init_text_encoder(
                    &mut store,
                    self.meta.d_l,
                    cfg.d_h,
                    &cfg.text,
                    &mut rng,
                )?,
                _ => encoders::init_av_encoder(
                    &mut store,
                    m,
                    self.input_width(m),
                    cfg.d_h,
                    &mut rng,
                )?,
            }
        }
        encoders::init_speaker_table(&mut store, self.meta.n_speakers, cfg.d_h, &mut rng)?;
        if cfg.use_rtgcn {
            rtgcn::init_rtgcn(
                &mut store,
                cfg.d_h,
                &cfg.rtgcn,
                &cfg.graph.relations(),
                &mut rng,
            )?;
        }
        if cfg.use_pcm {
            pcm::init_pcm(&mut store, cfg.d_h, cfg.modalities(), &cfg.pcm, &mut rng)?;
        }
        head::init_head(
            &mut store,
            cfg.fused_width(),
            cfg.head_hidden(),
            self.meta.n_labels,
            &mut rng,
        )?;
        Ok(store)
    }

    /// Checks that `store` holds exactly the parameters this model expects,
    /// with matching shapes.
    pub fn check_params(&self, store: &ParamStore) -> Result<()> {
        let fresh = self.init_params(0)?;
        for (path, t) in fresh.iter() {
            let got = store
                .get(path)
                .map_err(|_| Error::Checkpoint(format!("missing parameter `{path}`")))?;
            if got.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "`{path}` has shape {:?}, model expects {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if let Some(extra) = store.paths().find(|p| !fresh.contains(p)) {
            return Err(Error::Checkpoint(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }

    pub fn feature_tensor(&self, conv: &Conversation, m: Modality) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = conv
            .utterances
            .iter()
            .map(|u| match m {
                Modality::Audio => u.audio.clone(),
                Modality::Visual => u.visual.clone(),
                Modality::Text => u.pooled_text(),
            })
            .collect();
        Tensor::from_rows(&rows)
    }

    /// Runs one conversation through encoders, graph network and
    /// cross-modal transformer, returning the fused `[N × d_H]` features.
    /// With `track_inputs`, feature leaves take part in differentiation.
    pub fn forward_conversation(
        &self,
        sess: &mut Session,
        conv: &Conversation,
        dropout: &mut Dropout,
        track_inputs: bool,
    ) -> Result<ConversationForward> {
        let cfg = &self.config;
        let n = conv.len();
        let graph = MultimodalGraph::build_with(n, &cfg.graph)?;
        let speakers = conv.speakers();
        let mut features = Vec::new();
        let mut encoded = Vec::new();
        for &m in cfg.modalities() {
            let x = sess.tape.leaf(self.feature_tensor(conv, m)?, track_inputs);
            features.push((m, x));
            let e = match m {
                Modality::Text => encoders::encode_text(sess, x, &cfg.text)?,
                _ => encoders::encode_av(sess, x, m)?,
            };
            encoded.push((m, encoders::add_speaker(sess, e, &speakers, cfg.eta)?));
        }
        let mut attention = Vec::new();
        let mut parts = Vec::new();
        let mut graph_out = Vec::new();
        if cfg.use_rtgcn {
            let out = rtgcn::rt_gcn_forward(sess, &graph, &encoded, &cfg.rtgcn)?;
            parts.extend(out.per_modality.iter().map(|(_, v)| *v));
            graph_out = out.per_modality;
            attention.extend(out.attention);
        }
        let mut pairs = Vec::new();
        if cfg.use_pcm {
            let out = pcm::pcm_forward(sess, &encoded, &cfg.pcm, dropout)?;
            parts.extend(out.pairs.iter().map(|(_, v)| *v));
            pairs = out.pairs;
            attention.extend(out.attention);
        }
        let fused = head::fuse(sess, &parts)?;
        Ok(ConversationForward {
            graph,
            features,
            encoded,
            graph_out,
            pairs,
            attention,
            fused,
        })
    }

    /// Stacks the fused features of several conversations and classifies
    /// every utterance. Returns the logits and the concatenated labels.
    pub fn forward_batch(
        &self,
        sess: &mut Session,
        convs: &[&Conversation],
        dropout: &mut Dropout,
    ) -> Result<(Var, Vec<usize>)> {
        if convs.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut fused = Vec::with_capacity(convs.len());
        let mut labels = Vec::new();
        for c in convs {
            fused.push(self.forward_conversation(sess, c, dropout, false)?.fused);
            labels.extend(c.labels());
        }
        let h = if fused.len() == 1 {
            fused[0]
        } else {
            sess.tape.concat(&fused, 0)?
        };
        Ok((head::logits(sess, h)?, labels))
    }
}

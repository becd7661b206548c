use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::TextEncoderConfig;
use crate::error::{Error, Result};
use crate::graph::GraphSpec;
use crate::modality::{parse_modalities, Modality};
use crate::model::ModelConfig;
use crate::pcm::PcmConfig;
use crate::rtgcn::RtGcnConfig;

/// Flat run configuration. Every field may be set from a TOML file and
/// overridden with `key=value` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_dialogues: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub past: usize,
    pub future: usize,
    pub strict_window: bool,
    /// Graph-transformer heads.
    pub heads: usize,
    /// Cross-modal attention heads.
    pub pcm_heads: usize,
    pub pcm_depth: usize,
    pub eta: f64,
    pub d_h: usize,
    pub d_h1: usize,
    pub d_h2: usize,
    pub d_alpha: usize,
    /// Cross-modal value width; must equal `d_h`.
    pub d_v: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    /// Classifier hidden width; half the fused width when absent.
    pub head_hidden: Option<usize>,
    pub no_rtgcn: bool,
    pub no_pcm: bool,
    pub no_rmulti: bool,
    pub no_rtemp: bool,
    /// Modality subset as tags, e.g. `"avt"` or `"t"`.
    pub modalities: String,
    /// Train/valid/test fractions of the conversations.
    pub split: [f64; 3],
    /// End training once train accuracy reaches this value.
    pub stop_at_train_accuracy: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            learning_rate: 3e-4,
            batch_dialogues: 10,
            epochs: 60,
            dropout: 0.5,
            past: 11,
            future: 9,
            strict_window: false,
            heads: 7,
            pcm_heads: 2,
            pcm_depth: 2,
            eta: 1.0,
            d_h: 200,
            d_h1: 200,
            d_h2: 200,
            d_alpha: 64,
            d_v: 200,
            text_layers: 1,
            text_heads: 4,
            head_hidden: None,
            no_rtgcn: false,
            no_pcm: false,
            no_rmulti: false,
            no_rtemp: false,
            modalities: "avt".into(),
            split: [0.8, 0.1, 0.1],
            stop_at_train_accuracy: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies `key=value` overrides; values use TOML syntax, with bare
    /// words taken as strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for kv in overrides {
            let kv = kv.as_ref();
            let (key, raw) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
            let (key, raw) = (key.trim(), raw.trim());
            let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
                Ok(mut t) => t.remove("v").expect("parsed key"),
                Err(_) => toml::Value::String(raw.to_string()),
            };
            table.insert(key.to_string(), value);
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn modality_set(&self) -> Result<Vec<Modality>> {
        let mods = parse_modalities(&self.modalities).map_err(|e| Error::Config(e.to_string()))?;
        if mods.is_empty() {
            return Err(Error::Config("modality subset is empty".into()));
        }
        Ok(mods)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate = {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_dialogues == 0 {
            return Err(Error::Config("batch_dialogues must be positive".into()));
        }
        if self.d_v != self.d_h {
            return Err(Error::Config(format!(
                "d_v = {} must equal d_h = {} (residual connections)",
                self.d_v, self.d_h
            )));
        }
        if let Some(a) = self.stop_at_train_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!(
                    "stop_at_train_accuracy = {a} outside [0, 1]"
                )));
            }
        }
        self.model_config()?.validate()
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let modalities = self.modality_set()?;
        Ok(ModelConfig {
            d_h: self.d_h,
            eta: self.eta,
            dropout: self.dropout,
            text: TextEncoderConfig {
                layers: self.text_layers,
                heads: self.text_heads,
                ..TextEncoderConfig::default()
            },
            graph: GraphSpec {
                past: self.past,
                future: self.future,
                multimodal: !self.no_rmulti,
                temporal: !self.no_rtemp,
                strict_window: self.strict_window,
                modalities,
            },
            rtgcn: RtGcnConfig {
                d_h1: self.d_h1,
                d_h2: self.d_h2,
                d_alpha: self.d_alpha,
                heads: self.heads,
                ..RtGcnConfig::default()
            },
            pcm: PcmConfig {
                depth: self.pcm_depth,
                heads: self.pcm_heads,
                ..PcmConfig::default()
            },
            use_rtgcn: !self.no_rtgcn,
            use_pcm: !self.no_pcm,
            head_hidden: self.head_hidden,
        })
    }
}

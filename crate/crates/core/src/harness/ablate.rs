use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::metrics::MetricsReport;
use super::train::{evaluate_model, train};
use crate::dataio::{split, Corpus};
use crate::error::{Error, Result};
use crate::graph::MultimodalGraph;
use crate::model::Model;

/// A named set of config overrides.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Variant {
    pub name: String,
    pub overrides: Vec<String>,
}

/// Parses a comma-separated variant list. Each entry is `full`, a flag
/// name (`no_rtgcn`, `no_pcm`, `no_rmulti`, `no_rtemp`), a `key=value`
/// override, or several of these joined with `+`.
pub fn parse_variants(list: &str) -> Result<Vec<Variant>> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let mut overrides = Vec::new();
        for part in name.split('+').map(str::trim) {
            match part {
                "full" => {}
                "no_rtgcn" | "no_pcm" | "no_rmulti" | "no_rtemp" => {
                    overrides.push(format!("{part}=true"))
                }
                kv if kv.contains('=') => overrides.push(kv.to_string()),
                other => return Err(Error::Config(format!("unknown ablation flag `{other}`"))),
            }
        }
        out.push(Variant {
            name: name.to_string(),
            overrides,
        });
    }
    if out.is_empty() {
        return Err(Error::Config("no ablation variants given".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub param_count: usize,
    pub rtgcn_params: usize,
    pub pcm_params: usize,
    /// Total graph edges over the evaluated conversations.
    pub edges: usize,
    pub best_epoch: usize,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub variants: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<28} {:>12} {:>10} {:>10} {:>8} {:>8} {:>8}\n",
            "variant", "params", "rtgcn", "pcm", "edges", "acc", "w-F1"
        );
        for r in &self.variants {
            s += &format!(
                "{:<28} {:>12} {:>10} {:>10} {:>8} {:>8.4} {:>8.4}\n",
                r.name,
                r.param_count,
                r.rtgcn_params,
                r.pcm_params,
                r.edges,
                r.metrics.accuracy,
                r.metrics.weighted_f1
            );
        }
        s
    }
}

/// Trains every variant on the same split and evaluates it on the test
/// part (the train part when the test part is empty).
pub fn ablate(base: &RunConfig, corpus: &Corpus, variants: &[Variant]) -> Result<AblationReport> {
    corpus.validate()?;
    let parts = split(&corpus.conversations, base.split, base.seed)?;
    let held_out = if parts.test.is_empty() {
        &parts.train
    } else {
        &parts.test
    };
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let cfg = base.with_overrides(&v.overrides)?;
        cfg.validate()
            .map_err(|e| Error::Config(format!("variant `{}`: {e}", v.name)))?;
        let model = Model::new(cfg.model_config()?, corpus.meta.clone())?;
        let init = model.init_params(cfg.seed)?;
        let mut edges = 0;
        for c in held_out {
            edges += MultimodalGraph::build_with(c.len(), &model.config.graph)?
                .edges
                .len();
        }
        let outcome = train(&cfg, &corpus.meta, &parts.train, &parts.valid)?;
        let metrics = evaluate_model(&model, &outcome.best.params, held_out)?.report;
        rows.push(AblationRow {
            name: v.name.clone(),
            param_count: init.scalar_count(),
            rtgcn_params: init.scalar_count_under(crate::rtgcn::PREFIX),
            pcm_params: init.scalar_count_under(crate::pcm::PREFIX),
            edges,
            best_epoch: outcome.best.epoch,
            metrics,
        });
    }
    Ok(AblationReport { variants: rows })
}

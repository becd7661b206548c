use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::metrics::MetricsReport;
use crate::dataio::{split, Conversation, Corpus, CorpusMeta};
use crate::error::{Error, Result};
use crate::head;
use crate::model::Model;
use crate::numerics::{
    adam_step, read_checkpoint, write_checkpoint, AdamConfig, AdamState, Dropout, ParamStore,
    Session,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train_log.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFIG_FILE: &str = "config.toml";

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Utterance-weighted mean of the minibatch losses, dropout active.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub train_weighted_f1: f64,
    pub valid_loss: Option<f64>,
    pub valid_accuracy: Option<f64>,
    pub valid_weighted_f1: Option<f64>,
}

pub struct Evaluation {
    pub report: MetricsReport,
    /// Mean cross-entropy per utterance.
    pub loss: f64,
    pub predictions: Vec<usize>,
}

/// Evaluation-mode pass over `convs`, one conversation at a time.
pub fn evaluate_model(
    model: &Model,
    store: &ParamStore,
    convs: &[Conversation],
) -> Result<Evaluation> {
    let mut labels = Vec::new();
    let mut predictions = Vec::new();
    let mut loss_sum = 0.0;
    for conv in convs {
        let mut sess = Session::new(store, false);
        let (logits, ys) = model.forward_batch(&mut sess, &[conv], &mut Dropout::eval())?;
        let loss = head::objective(&mut sess, logits, &ys)?;
        loss_sum += sess.tape.value(loss).item() * ys.len() as f64;
        predictions.extend(head::argmax_rows(sess.tape.value(logits)));
        labels.extend(ys);
    }
    let report = MetricsReport::from_predictions(&labels, &predictions, model.meta.n_labels)?;
    Ok(Evaluation {
        loss: loss_sum / labels.len() as f64,
        report,
        predictions,
    })
}

/// A trained (or initial) model with everything needed to rebuild it.
pub struct Checkpoint {
    pub config: RunConfig,
    pub meta: CorpusMeta,
    /// Epoch whose parameters these are; 0 for the initialization.
    pub epoch: usize,
    pub params: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: RunConfig,
    meta: CorpusMeta,
    epoch: usize,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model> {
        Model::new(self.config.model_config()?, self.meta.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            config: self.config.clone(),
            meta: self.meta.clone(),
            epoch: self.epoch,
        };
        write_checkpoint(path, &serde_json::to_value(&header)?, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (extra, params) = read_checkpoint(path)?;
        let header: CheckpointHeader = serde_json::from_value(extra)
            .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
        let ckpt = Checkpoint {
            config: header.config,
            meta: header.meta,
            epoch: header.epoch,
            params,
        };
        ckpt.model()?.check_params(&ckpt.params)?;
        Ok(ckpt)
    }

    /// Evaluates on `corpus`, which must share this checkpoint's feature
    /// widths, label count and speaker count.
    pub fn evaluate(&self, corpus: &Corpus) -> Result<Evaluation> {
        let (a, b) = (&self.meta, &corpus.meta);
        if (a.d_a, a.d_v, a.d_l, a.n_labels, a.n_speakers)
            != (b.d_a, b.d_v, b.d_l, b.n_labels, b.n_speakers)
        {
            return Err(Error::invalid(format!(
                "corpus meta (d_a={}, d_v={}, d_l={}, M={}, N_S={}) does not match checkpoint (d_a={}, d_v={}, d_l={}, M={}, N_S={})",
                b.d_a, b.d_v, b.d_l, b.n_labels, b.n_speakers, a.d_a, a.d_v, a.d_l, a.n_labels, a.n_speakers
            )));
        }
        corpus.validate()?;
        evaluate_model(&self.model()?, &self.params, &corpus.conversations)
    }
}

pub struct TrainOutcome {
    /// Parameters with the best selection score (valid w-F1, or train w-F1
    /// without a validation set).
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn loss_curve(&self) -> Vec<f64> {
        self.log.iter().map(|e| e.train_loss).collect()
    }
}

pub fn train(
    cfg: &RunConfig,
    meta: &CorpusMeta,
    train_set: &[Conversation],
    valid_set: &[Conversation],
) -> Result<TrainOutcome> {
    train_with(cfg, meta, train_set, valid_set, |_| {})
}

/// Adam over shuffled minibatches of whole conversations, calling
/// `on_epoch` after each epoch.
pub fn train_with(
    cfg: &RunConfig,
    meta: &CorpusMeta,
    train_set: &[Conversation],
    valid_set: &[Conversation],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = Model::new(cfg.model_config()?, meta.clone())?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    for c in train_set.iter().chain(valid_set) {
        c.validate(meta)?;
    }
    let mut store = model.init_params(cfg.seed)?;
    let mut shuffle_rng = stream(cfg.seed, SHUFFLE_STREAM);
    let mut dropout = Dropout::train(cfg.dropout, stream(cfg.seed, DROPOUT_STREAM));
    let adam = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::default();
    let mut best = (store.clone(), f64::NEG_INFINITY, 0);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for (batch, ids) in order.chunks(cfg.batch_dialogues).enumerate() {
            let convs: Vec<&Conversation> = ids.iter().map(|&i| &train_set[i]).collect();
            let (grads, loss, n) = {
                let mut sess = Session::new(&store, true);
                let (logits, labels) = model.forward_batch(&mut sess, &convs, &mut dropout)?;
                let loss = head::objective(&mut sess, logits, &labels)?;
                let value = sess.tape.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch,
                        loss: value,
                    });
                }
                sess.tape.backward(loss)?;
                (sess.grads(), value, labels.len())
            };
            adam_step(&mut store, &grads, &mut state, &adam)?;
            if !store.all_finite() {
                return Err(Error::Diverged { epoch, batch, loss });
            }
            loss_sum += loss * n as f64;
            count += n;
        }
        let tr = evaluate_model(&model, &store, train_set)?;
        let va = if valid_set.is_empty() {
            None
        } else {
            Some(evaluate_model(&model, &store, valid_set)?)
        };
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / count as f64,
            train_accuracy: tr.report.accuracy,
            train_weighted_f1: tr.report.weighted_f1,
            valid_loss: va.as_ref().map(|e| e.loss),
            valid_accuracy: va.as_ref().map(|e| e.report.accuracy),
            valid_weighted_f1: va.as_ref().map(|e| e.report.weighted_f1),
        };
        let score = entry.valid_weighted_f1.unwrap_or(entry.train_weighted_f1);
        if score > best.1 {
            best = (store.clone(), score, epoch);
        }
        on_epoch(&entry);
        log.push(entry);
        if cfg
            .stop_at_train_accuracy
            .is_some_and(|t| tr.report.accuracy >= t)
        {
            break;
        }
    }
    Ok(TrainOutcome {
        best: Checkpoint {
            config: cfg.clone(),
            meta: meta.clone(),
            epoch: best.2,
            params: best.0,
        },
        log,
    })
}

/// Splits `corpus`, trains, and writes the checkpoint, epoch log, resolved
/// config and metrics (on the test part, or the train part when the test
/// part is empty) into `out_dir`.
pub fn run_training(
    cfg: &RunConfig,
    corpus: &Corpus,
    out_dir: &Path,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(TrainOutcome, MetricsReport)> {
    corpus.validate()?;
    let parts = split(&corpus.conversations, cfg.split, cfg.seed)?;
    let outcome = train_with(cfg, &corpus.meta, &parts.train, &parts.valid, on_epoch)?;
    let held_out = if parts.test.is_empty() {
        &parts.train
    } else {
        &parts.test
    };
    let mut report = evaluate_model(&outcome.best.model()?, &outcome.best.params, held_out)?.report;
    report.loss_curve = outcome.loss_curve();
    fs::create_dir_all(out_dir)?;
    outcome.best.save(&out_dir.join(CHECKPOINT_FILE))?;
    fs::write(
        out_dir.join(LOG_FILE),
        serde_json::to_string_pretty(&outcome.log)?,
    )?;
    fs::write(out_dir.join(METRICS_FILE), report.to_json())?;
    fs::write(out_dir.join(CONFIG_FILE), cfg.to_toml())?;
    Ok((outcome, report))
}

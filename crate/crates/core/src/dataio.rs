//! Corpus model and its JSON Lines on-disk form.
//!
//! Line 1 holds [`CorpusMeta`]; every following non-blank line holds one
//! [`Conversation`]. Utterance indices are implicit in array order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusMeta {
    pub d_a: usize,
    pub d_v: usize,
    pub d_l: usize,
    #[serde(rename = "M")]
    pub n_labels: usize,
    #[serde(rename = "N_S")]
    pub n_speakers: usize,
    pub label_names: Vec<String>,
}

impl CorpusMeta {
    /// Six-way label set with IEMOCAP-shaped feature widths.
    pub fn iemocap6() -> Self {
        Self::with_labels(&["happy", "sad", "neutral", "angry", "excited", "frustrated"])
    }

    /// Four-way label set with IEMOCAP-shaped feature widths.
    pub fn iemocap4() -> Self {
        Self::with_labels(&["happy", "sad", "neutral", "angry"])
    }

    fn with_labels(labels: &[&str]) -> Self {
        CorpusMeta {
            d_a: 100,
            d_v: 512,
            d_l: 768,
            n_labels: labels.len(),
            n_speakers: 2,
            label_names: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_a == 0 || self.d_v == 0 || self.d_l == 0 {
            return Err(Error::invalid("feature widths must be positive"));
        }
        if self.n_labels == 0 || self.n_speakers == 0 {
            return Err(Error::invalid("label and speaker counts must be positive"));
        }
        if self.label_names.len() != self.n_labels {
            return Err(Error::invalid(format!(
                "{} label names for M = {}",
                self.label_names.len(),
                self.n_labels
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub speaker: usize,
    pub label: usize,
    pub audio: Vec<f64>,
    pub visual: Vec<f64>,
    /// Token rows; a pooled sentence vector is a single row.
    #[serde(deserialize_with = "text_rows")]
    pub text: Vec<Vec<f64>>,
}

impl Utterance {
    /// Mean over token rows.
    pub fn pooled_text(&self) -> Vec<f64> {
        let d = self.text[0].len();
        let mut out = vec![0.0; d];
        for row in &self.text {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let t = self.text.len() as f64;
        out.iter_mut().for_each(|v| *v /= t);
        out
    }
}

fn text_rows<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Vec<f64>>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Text {
        Tokens(Vec<Vec<f64>>),
        Pooled(Vec<f64>),
    }
    Ok(match Text::deserialize(d)? {
        Text::Tokens(rows) => rows,
        Text::Pooled(row) => vec![row],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.utterances.iter().map(|u| u.label).collect()
    }

    pub fn speakers(&self) -> Vec<usize> {
        self.utterances.iter().map(|u| u.speaker).collect()
    }

    /// Checks every utterance against the corpus widths and label/speaker
    /// ranges.
    pub fn validate(&self, meta: &CorpusMeta) -> Result<()> {
        if self.utterances.is_empty() {
            return Err(Error::invalid(format!(
                "conversation `{}` has no utterances",
                self.id
            )));
        }
        for (i, u) in self.utterances.iter().enumerate() {
            let at = || format!("conversation `{}` utterance {i}", self.id);
            if u.label >= meta.n_labels {
                return Err(Error::invalid(format!(
                    "{}: unknown label id {} (M = {})",
                    at(),
                    u.label,
                    meta.n_labels
                )));
            }
            if u.speaker >= meta.n_speakers {
                return Err(Error::invalid(format!(
                    "{}: speaker {} out of range (N_S = {})",
                    at(),
                    u.speaker,
                    meta.n_speakers
                )));
            }
            for (name, v, want) in [
                ("audio", &u.audio, meta.d_a),
                ("visual", &u.visual, meta.d_v),
            ] {
                if v.len() != want {
                    return Err(Error::invalid(format!(
                        "{}: {name} has length {}, expected {want}",
                        at(),
                        v.len()
                    )));
                }
            }
            if u.text.is_empty() {
                return Err(Error::invalid(format!("{}: text has no rows", at())));
            }
            for (k, row) in u.text.iter().enumerate() {
                if row.len() != meta.d_l {
                    return Err(Error::invalid(format!(
                        "{}: text row {k} has length {}, expected {}",
                        at(),
                        row.len(),
                        meta.d_l
                    )));
                }
            }
            let finite = u
                .audio
                .iter()
                .chain(&u.visual)
                .chain(u.text.iter().flatten());
            if let Some(bad) = finite.into_iter().find(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{}: non-finite feature {bad}",
                    at()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub meta: CorpusMeta,
    pub conversations: Vec<Conversation>,
}

impl Corpus {
    pub fn utterance_count(&self) -> usize {
        self.conversations.iter().map(Conversation::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        self.conversations
            .iter()
            .try_for_each(|c| c.validate(&self.meta))
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.meta)?;
        out.push('\n');
        for c in &self.conversations {
            out.push_str(&serde_json::to_string(c)?);
            out.push('\n');
        }
        Ok(out)
    }
}

pub fn parse_corpus(reader: impl BufRead, origin: &Path) -> Result<Corpus> {
    let record = |line: usize, msg: String| Error::Record {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut meta: Option<CorpusMeta> = None;
    let mut conversations = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line_no = k + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match &meta {
            None => {
                let m: CorpusMeta = serde_json::from_str(&line)
                    .map_err(|e| record(line_no, format!("malformed metadata record: {e}")))?;
                m.validate().map_err(|e| record(line_no, e.to_string()))?;
                meta = Some(m);
            }
            Some(m) => {
                let c: Conversation = serde_json::from_str(&line)
                    .map_err(|e| record(line_no, format!("malformed conversation record: {e}")))?;
                c.validate(m).map_err(|e| record(line_no, e.to_string()))?;
                conversations.push(c);
            }
        }
    }
    let meta = meta.ok_or_else(|| record(1, "missing metadata record".into()))?;
    Ok(Corpus {
        meta,
        conversations,
    })
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let f = File::open(path).map_err(Error::file(path))?;
    parse_corpus(BufReader::new(f), path)
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(Error::file(path))?);
    w.write_all(corpus.to_jsonl()?.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Parameters of the planted-signal generator.
#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub n_conversations: usize,
    /// Inclusive utterance-count range per conversation.
    pub min_len: usize,
    pub max_len: usize,
    pub n_speakers: usize,
    /// Shift applied to the label's coordinate block in every modality.
    pub mu: f64,
    pub seed: u64,
    pub meta: CorpusMeta,
}

impl SynthSpec {
    pub fn new(meta: CorpusMeta, n_conversations: usize, seed: u64) -> Self {
        SynthSpec {
            n_conversations,
            min_len: 4,
            max_len: 8,
            n_speakers: meta.n_speakers,
            mu: 3.0,
            seed,
            meta,
        }
    }
}

/// Generates a corpus whose label `k` raises coordinates
/// `[k·b, (k+1)·b)` of each modality by `mu` over unit Gaussian noise,
/// with `b = d / M`. Labels and speakers are uniform.
pub fn synth_corpus(spec: &SynthSpec) -> Result<Corpus> {
    if spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(Error::invalid(format!(
            "degenerate length range {}..={}",
            spec.min_len, spec.max_len
        )));
    }
    if spec.n_speakers == 0 {
        return Err(Error::invalid("need at least one speaker"));
    }
    if !spec.mu.is_finite() {
        return Err(Error::invalid("mu must be finite"));
    }
    let mut meta = spec.meta.clone();
    meta.n_speakers = spec.n_speakers;
    meta.validate()?;
    let m = meta.n_labels;
    for (name, d) in [("d_a", meta.d_a), ("d_v", meta.d_v), ("d_l", meta.d_l)] {
        if d < m {
            return Err(Error::invalid(format!(
                "{name} = {d} is narrower than the {m} label blocks"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let features = |d: usize, label: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let b = d / m;
        (0..d)
            .map(|k| {
                let noise: f64 = rng.sample(StandardNormal);
                if k / b == label && k < b * m {
                    noise + spec.mu
                } else {
                    noise
                }
            })
            .collect()
    };
    let mut conversations = Vec::with_capacity(spec.n_conversations);
    for c in 0..spec.n_conversations {
        let n = rng.gen_range(spec.min_len..=spec.max_len);
        let mut utterances = Vec::with_capacity(n);
        for _ in 0..n {
            let label = rng.gen_range(0..m);
            let speaker = rng.gen_range(0..spec.n_speakers);
            let audio = features(meta.d_a, label, &mut rng);
            let visual = features(meta.d_v, label, &mut rng);
            let text = vec![features(meta.d_l, label, &mut rng)];
            utterances.push(Utterance {
                speaker,
                label,
                audio,
                visual,
                text,
            });
        }
        conversations.push(Conversation {
            id: format!("synth-{c:04}"),
            utterances,
        });
    }
    Ok(Corpus {
        meta,
        conversations,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<Conversation>,
    pub valid: Vec<Conversation>,
    pub test: Vec<Conversation>,
}

/// Assigns whole conversations to train/valid/test. Counts are the rounded
/// ratio shares (test takes the remainder); each part keeps corpus order.
pub fn split(conversations: &[Conversation], ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::invalid(format!(
            "split ratios {ratios:?} outside [0, 1]"
        )));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios sum to {total}, expected 1"
        )));
    }
    let n = conversations.len();
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_valid = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let part = |ids: &[usize]| {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        ids.into_iter()
            .map(|i| conversations[i].clone())
            .collect::<Vec<_>>()
    };
    Ok(Split {
        train: part(&order[..n_train]),
        valid: part(&order[n_train..n_train + n_valid]),
        test: part(&order[n_train + n_valid..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_meta() -> CorpusMeta {
        CorpusMeta {
            d_a: 2,
            d_v: 2,
            d_l: 3,
            n_labels: 2,
            n_speakers: 2,
            label_names: vec!["neg".into(), "pos".into()],
        }
    }

    fn parse(s: &str) -> Result<Corpus> {
        parse_corpus(s.as_bytes(), Path::new("mem.jsonl"))
    }

    const META: &str = r#"{"d_a":2,"d_v":2,"d_l":3,"M":2,"N_S":2,"label_names":["neg","pos"]}"#;

    #[test]
    fn two_conversations_round_trip() {
        let src = format!(
            "{META}\n{}\n{}\n",
            r#"{"id":"c0","utterances":[{"speaker":0,"label":1,"audio":[1.0,2.0],"visual":[0.5,0.25],"text":[[1.0,0.0,-1.0]]}]}"#,
            r#"{"id":"c1","utterances":[{"speaker":1,"label":0,"audio":[0.0,0.0],"visual":[1.0,1.0],"text":[[1.0,2.0,3.0],[3.0,2.0,1.0]]}]}"#
        );
        let c = parse(&src).unwrap();
        assert_eq!(c.conversations.len(), 2);
        assert_eq!(c.meta, tiny_meta());
        assert_eq!(c.to_jsonl().unwrap(), src);
        assert_eq!(
            c.conversations[1].utterances[0].pooled_text(),
            vec![2.0, 2.0, 2.0]
        );
    }

    #[test]
    fn pooled_text_row_is_accepted() {
        let src = format!(
            "{META}\n{}\n",
            r#"{"id":"c0","utterances":[{"speaker":0,"label":1,"audio":[1,2],"visual":[0,0],"text":[1,0,-1]}]}"#
        );
        let c = parse(&src).unwrap();
        assert_eq!(
            c.conversations[0].utterances[0].text,
            vec![vec![1.0, 0.0, -1.0]]
        );
    }

    #[test]
    fn wrong_audio_width_names_the_utterance() {
        let mut meta = tiny_meta();
        meta.d_a = 100;
        let meta_line = serde_json::to_string(&meta).unwrap();
        let audio = vec![0.0; 99];
        let conv = serde_json::json!({"id": "dlg", "utterances": [
            {"speaker": 0, "label": 0, "audio": vec![0.0; 100], "visual": [0, 0], "text": [[0, 0, 0]]},
            {"speaker": 0, "label": 0, "audio": audio, "visual": [0, 0], "text": [[0, 0, 0]]},
        ]});
        let err = parse(&format!("{meta_line}\n{conv}\n")).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Record { line: 2, .. }), "{msg}");
        assert!(
            msg.contains("`dlg` utterance 1") && msg.contains("length 99"),
            "{msg}"
        );
    }

    #[test]
    fn empty_conversation_list_is_fine() {
        let c = parse(&format!("{META}\n")).unwrap();
        assert!(c.conversations.is_empty());
    }

    #[test]
    fn malformed_and_invalid_records() {
        let err = parse(&format!("{META}\n{{not json\n")).unwrap_err();
        assert!(matches!(err, Error::Record { line: 2, .. }));

        let bad_label = r#"{"id":"c","utterances":[{"speaker":0,"label":2,"audio":[0,0],"visual":[0,0],"text":[[0,0,0]]}]}"#;
        let err = parse(&format!("{META}\n{bad_label}\n")).unwrap_err();
        assert!(err.to_string().contains("unknown label id 2"));

        let nan = r#"{"id":"c","utterances":[{"speaker":0,"label":0,"audio":[0,1e999],"visual":[0,0],"text":[[0,0,0]]}]}"#;
        assert!(parse(&format!("{META}\n{nan}\n")).is_err());

        assert!(matches!(parse(""), Err(Error::Record { line: 1, .. })));
    }

    #[test]
    fn non_finite_values_are_rejected_by_validation() {
        let c = Conversation {
            id: "x".into(),
            utterances: vec![Utterance {
                speaker: 0,
                label: 0,
                audio: vec![0.0, f64::NAN],
                visual: vec![0.0, 0.0],
                text: vec![vec![0.0; 3]],
            }],
        };
        assert!(c
            .validate(&tiny_meta())
            .unwrap_err()
            .to_string()
            .contains("non-finite"));
    }

    #[test]
    fn synth_is_deterministic() {
        let mut spec = SynthSpec::new(tiny_meta(), 4, 7);
        spec.min_len = 3;
        spec.max_len = 5;
        let a = synth_corpus(&spec).unwrap();
        let b = synth_corpus(&spec).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert!(a.conversations.iter().all(|c| (3..=5).contains(&c.len())));
        spec.seed = 8;
        assert_ne!(synth_corpus(&spec).unwrap(), a);
    }

    #[test]
    fn synth_rejects_degenerate_ranges() {
        let mut spec = SynthSpec::new(tiny_meta(), 2, 1);
        spec.min_len = 5;
        spec.max_len = 4;
        assert!(synth_corpus(&spec).is_err());
        spec.min_len = 0;
        assert!(synth_corpus(&spec).is_err());
        let mut spec = SynthSpec::new(tiny_meta(), 2, 1);
        spec.n_speakers = 0;
        assert!(synth_corpus(&spec).is_err());
    }

    fn convs(n: usize) -> Vec<Conversation> {
        (0..n)
            .map(|k| Conversation {
                id: format!("c{k}"),
                utterances: vec![],
            })
            .collect()
    }

    #[test]
    fn split_counts_and_determinism() {
        let all = convs(10);
        let s = split(&all, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, split(&all, [0.8, 0.1, 0.1], 3).unwrap());

        let mut ids: Vec<String> = s
            .train
            .iter()
            .chain(&s.valid)
            .chain(&s.test)
            .map(|c| c.id.clone())
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn split_ratio_sum_is_checked() {
        assert!(split(&convs(3), [0.5, 0.5, 0.1], 0).is_err());
        assert!(split(&convs(3), [1.0, 0.0, 0.0], 0).is_ok());
    }
}

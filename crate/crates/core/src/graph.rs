//! Per-conversation multimodal graph: three nodes per utterance (one per
//! modality), 9 intra-utterance multimodal relation types and 6 temporal
//! ones linking same-modality nodes inside a `[P, F]` window.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modality::Modality;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub utterance: usize,
    pub modality: Modality,
}

impl NodeId {
    pub fn new(utterance: usize, modality: Modality) -> Self {
        NodeId {
            utterance,
            modality,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.modality.tag(), self.utterance)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationType {
    /// Same utterance, `src` modality node into `dst` modality node.
    Multi { src: Modality, dst: Modality },
    /// Earlier utterance into the query utterance, one modality.
    Past(Modality),
    /// Later utterance into the query utterance, one modality.
    Future(Modality),
}

impl RelationType {
    pub const ALL: [RelationType; 15] = {
        use Modality::*;
        use RelationType::*;
        [
            Multi {
                src: Audio,
                dst: Visual,
            },
            Multi {
                src: Visual,
                dst: Audio,
            },
            Multi {
                src: Audio,
                dst: Audio,
            },
            Multi {
                src: Visual,
                dst: Text,
            },
            Multi {
                src: Text,
                dst: Visual,
            },
            Multi {
                src: Visual,
                dst: Visual,
            },
            Multi {
                src: Text,
                dst: Audio,
            },
            Multi {
                src: Audio,
                dst: Text,
            },
            Multi {
                src: Text,
                dst: Text,
            },
            Past(Audio),
            Past(Visual),
            Past(Text),
            Future(Audio),
            Future(Visual),
            Future(Text),
        ]
    };

    pub fn is_multimodal(self) -> bool {
        matches!(self, RelationType::Multi { .. })
    }

    pub fn is_temporal(self) -> bool {
        !self.is_multimodal()
    }

    /// Identifier used in parameter paths, e.g. `a_to_v` or `past_l`.
    pub fn key(self) -> String {
        match self {
            RelationType::Multi { src, dst } => format!("{}_to_{}", src.tag(), dst.tag()),
            RelationType::Past(m) => format!("past_{}", m.tag()),
            RelationType::Future(m) => format!("future_{}", m.tag()),
        }
    }

    fn modalities(self) -> (Modality, Modality) {
        match self {
            RelationType::Multi { src, dst } => (src, dst),
            RelationType::Past(m) | RelationType::Future(m) => (m, m),
        }
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RelationType::Multi { src, dst } => write!(f, "{}->{}", src.tag(), dst.tag()),
            _ => f.write_str(&self.key()),
        }
    }
}

impl FromStr for RelationType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RelationType::ALL
            .into_iter()
            .find(|r| r.to_string() == s || r.key() == s)
            .ok_or_else(|| Error::invalid(format!("unknown relation `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub rel: RelationType,
}

/// Which parts of the graph to build.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub past: usize,
    pub future: usize,
    pub multimodal: bool,
    pub temporal: bool,
    /// Use the exclusive window bounds `i-P < j < i` and `i < j < i+F`
    /// (P-1 and F-1 neighbors) instead of the default P and F neighbors.
    pub strict_window: bool,
    pub modalities: Vec<Modality>,
}

impl GraphSpec {
    pub fn full(past: usize, future: usize) -> Self {
        GraphSpec {
            past,
            future,
            multimodal: true,
            temporal: true,
            strict_window: false,
            modalities: Modality::ALL.to_vec(),
        }
    }

    /// Relation types that can occur under this spec, in canonical order.
    /// Multimodal relations need at least two modalities.
    pub fn relations(&self) -> Vec<RelationType> {
        let multi = self.multimodal && self.modalities.len() >= 2;
        RelationType::ALL
            .into_iter()
            .filter(|r| {
                let (s, d) = r.modalities();
                let present = self.modalities.contains(&s) && self.modalities.contains(&d);
                present
                    && if r.is_multimodal() {
                        multi
                    } else {
                        self.temporal
                    }
            })
            .collect()
    }

    fn past_range(&self, i: usize) -> std::ops::Range<usize> {
        let lo = if self.strict_window {
            (i + 1).saturating_sub(self.past)
        } else {
            i.saturating_sub(self.past)
        };
        lo..i
    }

    fn future_range(&self, i: usize, n: usize) -> std::ops::RangeInclusive<usize> {
        let span = if self.strict_window {
            self.future.saturating_sub(1)
        } else {
            self.future
        };
        (i + 1)..=(i + span).min(n - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalGraph {
    pub n_utterances: usize,
    pub spec: GraphSpec,
    /// Sorted by `(dst, rel, src)`.
    pub edges: Vec<Edge>,
}

impl MultimodalGraph {
    /// Full graph over all three modalities with a `[past, future]` window.
    pub fn build(n: usize, past: usize, future: usize) -> Result<Self> {
        Self::build_with(n, &GraphSpec::full(past, future))
    }

    pub fn build_with(n: usize, spec: &GraphSpec) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("graph needs at least one utterance"));
        }
        if spec.modalities.is_empty() {
            return Err(Error::invalid("graph needs at least one modality"));
        }
        let relations = spec.relations();
        let mut edges = Vec::new();
        for i in 0..n {
            for &rel in &relations {
                match rel {
                    RelationType::Multi { src, dst } => edges.push(Edge {
                        src: NodeId::new(i, src),
                        dst: NodeId::new(i, dst),
                        rel,
                    }),
                    RelationType::Past(m) => {
                        for j in spec.past_range(i) {
                            edges.push(Edge {
                                src: NodeId::new(j, m),
                                dst: NodeId::new(i, m),
                                rel,
                            });
                        }
                    }
                    RelationType::Future(m) => {
                        for j in spec.future_range(i, n) {
                            edges.push(Edge {
                                src: NodeId::new(j, m),
                                dst: NodeId::new(i, m),
                                rel,
                            });
                        }
                    }
                }
            }
        }
        edges.sort_by_key(|e| (e.dst, e.rel, e.src));
        edges.dedup();
        Ok(MultimodalGraph {
            n_utterances: n,
            spec: spec.clone(),
            edges,
        })
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.spec.modalities
    }

    pub fn node_count(&self) -> usize {
        self.n_utterances * self.spec.modalities.len()
    }

    /// Row of `node` in the stacked feature matrix: modality blocks in
    /// canonical order, utterances in order within a block.
    pub fn node_index(&self, node: NodeId) -> Option<usize> {
        let block = self
            .spec
            .modalities
            .iter()
            .position(|&m| m == node.modality)?;
        (node.utterance < self.n_utterances).then(|| block * self.n_utterances + node.utterance)
    }

    fn index(&self, node: NodeId) -> usize {
        self.node_index(node)
            .expect("edge endpoint belongs to graph")
    }

    /// Edges of one relation as `(src_row, dst_row, 1/|N_r(dst)|)`.
    pub fn normalized_edges(&self, rel: RelationType) -> Vec<(usize, usize, f64)> {
        let mut in_degree: BTreeMap<usize, usize> = BTreeMap::new();
        let rows: Vec<(usize, usize)> = self
            .edges
            .iter()
            .filter(|e| e.rel == rel)
            .map(|e| (self.index(e.src), self.index(e.dst)))
            .collect();
        for &(_, d) in &rows {
            *in_degree.entry(d).or_default() += 1;
        }
        rows.into_iter()
            .map(|(s, d)| (s, d, 1.0 / in_degree[&d] as f64))
            .collect()
    }

    /// Row-major `[nodes × nodes]` mask; entry `(i, j)` is set when some
    /// edge runs from `j` into `i`.
    pub fn neighbor_mask(&self) -> Vec<bool> {
        let n = self.node_count();
        let mut mask = vec![false; n * n];
        for e in &self.edges {
            mask[self.index(e.dst) * n + self.index(e.src)] = true;
        }
        mask
    }

    /// Edge count per relation type; every one of the 15 types is present.
    pub fn edge_stats(&self) -> BTreeMap<RelationType, usize> {
        let mut stats: BTreeMap<RelationType, usize> =
            RelationType::ALL.iter().map(|&r| (r, 0)).collect();
        for e in &self.edges {
            *stats.get_mut(&e.rel).expect("known relation") += 1;
        }
        stats
    }

    /// One `src_i src_τ dst_i dst_τ rel` line per edge.
    pub fn to_edgelist(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                e.src.utterance, e.src.modality, e.dst.utterance, e.dst.modality, e.rel
            );
        }
        out
    }

    /// Graphviz rendering: audio nodes square, visual circle, text
    /// triangle; multimodal edges blue, past red, future dashed red.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph conversation {\n  rankdir=LR;\n");
        for &m in self.modalities() {
            let shape = match m {
                Modality::Audio => "square",
                Modality::Visual => "circle",
                Modality::Text => "triangle",
            };
            for i in 0..self.n_utterances {
                let node = NodeId::new(i, m);
                let _ = writeln!(out, "  \"{node}\" [shape={shape}];");
            }
        }
        for e in &self.edges {
            let style = match e.rel {
                RelationType::Multi { .. } => "color=blue",
                RelationType::Past(_) => "color=red",
                RelationType::Future(_) => "color=red, style=dashed",
            };
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [label=\"{}\", {style}];",
                e.src, e.dst, e.rel
            );
        }
        out.push_str("}\n");
        out
    }
}

pub fn parse_edgelist(text: &str) -> Result<Vec<Edge>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, line)| {
            let bad = |what: &str| Error::invalid(format!("edgelist line {}: {what}", k + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let idx = |s: &str| s.parse::<usize>().map_err(|_| bad("bad utterance index"));
            Ok(Edge {
                src: NodeId::new(idx(f[0])?, f[1].parse()?),
                dst: NodeId::new(idx(f[2])?, f[3].parse()?),
                rel: f[4].parse()?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Edgelist,
    Dot,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edgelist" => Ok(ExportFormat::Edgelist),
            "dot" => Ok(ExportFormat::Dot),
            _ => Err(Error::invalid(format!("unknown graph format `{s}`"))),
        }
    }
}

pub fn export_graph(graph: &MultimodalGraph, path: &Path, format: ExportFormat) -> Result<()> {
    let body = match format {
        ExportFormat::Edgelist => graph.to_edgelist(),
        ExportFormat::Dot => graph.to_dot(),
    };
    std::fs::write(path, body)?;
    Ok(())
}

/// `9N + 3·Σ min(i, P) + 3·Σ min(N-1-i, F)` for the full graph.
pub fn expected_edge_count(n: usize, past: usize, future: usize) -> usize {
    9 * n
        + (0..n)
            .map(|i| 3 * i.min(past) + 3 * (n - 1 - i).min(future))
            .sum::<usize>()
}

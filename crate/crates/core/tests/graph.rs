use std::collections::BTreeSet;

use mmerc::graph::{
    expected_edge_count, export_graph, parse_edgelist, Edge, ExportFormat, GraphSpec,
    MultimodalGraph, NodeId, RelationType,
};
use mmerc::Modality;
use proptest::prelude::*;

/// Tests every (src, dst, relation) triple against the membership
/// predicates directly.
fn brute_force(n: usize, p: usize, f: usize) -> BTreeSet<Edge> {
    let nodes: Vec<NodeId> = (0..n)
        .flat_map(|i| Modality::ALL.map(|m| NodeId::new(i, m)))
        .collect();
    let mut out = BTreeSet::new();
    for &src in &nodes {
        for &dst in &nodes {
            for rel in RelationType::ALL {
                let (i, j) = (dst.utterance as i64, src.utterance as i64);
                let member = match rel {
                    RelationType::Multi { src: a, dst: b } => {
                        i == j && src.modality == a && dst.modality == b
                    }
                    RelationType::Past(m) => {
                        src.modality == m && dst.modality == m && i - p as i64 <= j && j < i
                    }
                    RelationType::Future(m) => {
                        src.modality == m && dst.modality == m && i < j && j <= i + f as i64
                    }
                };
                if member {
                    out.insert(Edge { src, dst, rel });
                }
            }
        }
    }
    out
}

#[test]
fn builder_matches_brute_force_on_all_small_cases() {
    let mut cases = 0;
    for n in 1..=6 {
        for p in 0..=6 {
            for f in 0..=6 {
                let g = MultimodalGraph::build(n, p, f).unwrap();
                let got: BTreeSet<Edge> = g.edges.iter().copied().collect();
                assert_eq!(got.len(), g.edges.len(), "duplicates at N={n} P={p} F={f}");
                assert_eq!(got, brute_force(n, p, f), "N={n} P={p} F={f}");
                assert_eq!(g.edges.len(), expected_edge_count(n, p, f));
                cases += 1;
            }
        }
    }
    assert_eq!(cases, 6 * 7 * 7);
}

#[test]
fn spot_edge_counts() {
    for (n, p, f, want) in [(1, 5, 5, 9), (3, 1, 1, 39), (3, 0, 0, 27)] {
        assert_eq!(MultimodalGraph::build(n, p, f).unwrap().edges.len(), want);
        assert_eq!(brute_force(n, p, f).len(), want);
    }
}

#[test]
fn edge_stats_partition_the_edges() {
    let g = MultimodalGraph::build(3, 1, 1).unwrap();
    let stats = g.edge_stats();
    assert_eq!(stats.len(), 15);
    assert_eq!(stats.values().sum::<usize>(), g.edges.len());
    for (rel, count) in &stats {
        assert_eq!(*count, if rel.is_multimodal() { 3 } else { 2 }, "{rel}");
    }
    let single = MultimodalGraph::build(1, 3, 3).unwrap().edge_stats();
    assert!(single
        .iter()
        .filter(|(r, _)| r.is_temporal())
        .all(|(_, &c)| c == 0));
}

#[test]
fn edge_invariants_hold() {
    let g = MultimodalGraph::build(6, 2, 3).unwrap();
    for e in &g.edges {
        match e.rel {
            RelationType::Multi { src, dst } => {
                assert_eq!(e.src.utterance, e.dst.utterance);
                assert_eq!((e.src.modality, e.dst.modality), (src, dst));
            }
            RelationType::Past(m) | RelationType::Future(m) => {
                assert_eq!((e.src.modality, e.dst.modality), (m, m));
                assert_ne!(e.src.utterance, e.dst.utterance);
            }
        }
    }
}

#[test]
fn ablated_families() {
    let n = 5;
    let no_temp = GraphSpec {
        temporal: false,
        ..GraphSpec::full(11, 9)
    };
    assert_eq!(
        MultimodalGraph::build_with(n, &no_temp)
            .unwrap()
            .edges
            .len(),
        9 * n
    );
    let no_multi = GraphSpec {
        multimodal: false,
        ..GraphSpec::full(2, 1)
    };
    let g = MultimodalGraph::build_with(n, &no_multi).unwrap();
    assert!(g.edges.iter().all(|e| e.rel.is_temporal()));
    assert_eq!(g.edges.len(), expected_edge_count(n, 2, 1) - 9 * n);
}

#[test]
fn exports_round_trip_and_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let g = MultimodalGraph::build(4, 2, 1).unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    export_graph(&g, &a, ExportFormat::Edgelist).unwrap();
    export_graph(
        &MultimodalGraph::build(4, 2, 1).unwrap(),
        &b,
        ExportFormat::Edgelist,
    )
    .unwrap();
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert_eq!(parse_edgelist(&text).unwrap(), g.edges);
    let one = MultimodalGraph::build(1, 0, 0).unwrap();
    assert_eq!(one.to_edgelist().lines().count(), 9);
    let dot = dir.path().join("g.dot");
    export_graph(&g, &dot, ExportFormat::Dot).unwrap();
    assert!(std::fs::read_to_string(&dot)
        .unwrap()
        .starts_with("digraph"));
}

proptest! {
    #[test]
    fn enlarging_the_window_never_removes_edges(n in 1usize..12, p in 0usize..6, f in 0usize..6, dp in 0usize..3, df in 0usize..3) {
        let small: BTreeSet<Edge> = MultimodalGraph::build(n, p, f).unwrap().edges.into_iter().collect();
        let big: BTreeSet<Edge> = MultimodalGraph::build(n, p + dp, f + df).unwrap().edges.into_iter().collect();
        prop_assert!(small.is_subset(&big));
    }

    #[test]
    fn closed_form_count_holds(n in 1usize..40, p in 0usize..15, f in 0usize..15) {
        prop_assert_eq!(MultimodalGraph::build(n, p, f).unwrap().edges.len(), expected_edge_count(n, p, f));
    }
}

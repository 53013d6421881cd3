use commsearch::graph::{is_connected, Graph, NodeSet};
use commsearch::identify::{
    esg, global_search, global_search_traced, local_search, oracle_search, prefix_esg, score_order, EsgConfig,
};
use commsearch::metrics::{f1, jaccard, nmi};
use commsearch::model::EmbeddingPair;
use commsearch::scoring::{compute_scores, ScoreVector, Similarity};
use ndarray::Array1;
use proptest::prelude::*;

fn connected_graph(max_n: usize) -> impl Strategy<Value = Graph> {
    (2..=max_n).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<prop::sample::Index>(), n - 1),
            prop::collection::vec((0..n, 0..n), 0..=n),
        )
            .prop_map(move |(parents, extra)| {
                let mut edges: Vec<(usize, usize)> =
                    parents.iter().enumerate().map(|(i, p)| (i + 1, p.index(i + 1))).collect();
                edges.extend(extra);
                Graph::from_edges(n, &edges).unwrap()
            })
    })
}

fn instance(max_n: usize) -> impl Strategy<Value = (Graph, Vec<f64>, usize)> {
    connected_graph(max_n).prop_flat_map(|g| {
        let n = g.node_count();
        (Just(g), prop::collection::vec(-1.0f64..1.0, n), 0..n)
    })
}

fn embeddings(rows: &[Vec<f64>]) -> Vec<EmbeddingPair> {
    rows.iter()
        .map(|r| EmbeddingPair {
            z_node: Array1::from(r.clone()),
            z_com: Array1::from(r.iter().map(|v| -v).collect::<Vec<_>>()),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn esg_ignores_uniform_shifts((g, scores, q) in instance(10), shift in -5.0f64..5.0, mask in any::<u16>()) {
        let n = g.node_count();
        let c: NodeSet = (0..n).filter(|v| mask & (1 << v) != 0 || *v == q).collect();
        let query = NodeSet::singleton(q);
        let a = ScoreVector::from_raw(scores.clone(), query.clone()).unwrap();
        let b = ScoreVector::from_raw(scores.iter().map(|s| s + shift).collect(), query).unwrap();
        prop_assert!((esg(&a, &c, 0.5).unwrap() - esg(&b, &c, 0.5).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn searches_ignore_positive_rescaling((g, scores, q) in instance(10), factor in 0.1f64..10.0) {
        let query = NodeSet::singleton(q);
        let a = ScoreVector::from_raw(scores.clone(), query.clone()).unwrap();
        let b = ScoreVector::from_raw(scores.iter().map(|s| s * factor).collect(), query.clone()).unwrap();
        let cfg = EsgConfig::default();
        let (la, lb) = (local_search(&a, &g, &query, &cfg).unwrap(), local_search(&b, &g, &query, &cfg).unwrap());
        prop_assert!((la.esg * factor - lb.esg).abs() < 1e-9 * (1.0 + lb.esg.abs()));
        let (ga, gb) = (global_search(&a, &g, &query, &cfg).unwrap(), global_search(&b, &g, &query, &cfg).unwrap());
        prop_assert_eq!(ga.nodes, gb.nodes);
    }

    #[test]
    fn local_search_stays_connected_and_bounded((g, scores, q) in instance(14), cap in 1usize..8) {
        let query = NodeSet::singleton(q);
        let s = ScoreVector::from_raw(scores, query.clone()).unwrap();
        let cfg = EsgConfig { tau: 0.5, max_size: Some(cap) };
        let c = local_search(&s, &g, &query, &cfg).unwrap();
        prop_assert!(query.is_subset(&c.nodes));
        prop_assert!(c.connected);
        prop_assert!(is_connected(&g, &c.nodes).unwrap());
        prop_assert!(c.nodes.len() <= cap.max(1));
        prop_assert!((c.esg - esg(&s, &c.nodes, 0.5).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn global_result_is_query_plus_a_top_prefix((g, scores, q) in instance(14), tau in 0.0f64..=1.0) {
        let query = NodeSet::singleton(q);
        let s = ScoreVector::from_raw(scores, query.clone()).unwrap();
        let cfg = EsgConfig { tau, max_size: Some(g.node_count()) };
        let (c, trace) = global_search_traced(&s, &g, &query, &cfg).unwrap();
        let prefix = NodeSet::new(trace.order[..trace.prefix_len].to_vec());
        prop_assert_eq!(c.nodes, query.union(&prefix));
        let bound = (g.node_count() as f64).log2().ceil() as usize;
        prop_assert!(trace.iterations() <= bound);
        prop_assert!(trace.prefix_len >= 1);
        let order = score_order(&s);
        for w in order.windows(2) {
            let (a, b) = (s.scores()[w[0]], s.scores()[w[1]]);
            prop_assert!(a > b || (a == b && w[0] < w[1]));
        }
    }

    #[test]
    fn oracle_beats_local_on_small_graphs((g, scores, q) in instance(9)) {
        let query = NodeSet::singleton(q);
        let s = ScoreVector::from_raw(scores, query.clone()).unwrap();
        let best = oracle_search(&s, &g, &query, 0.5).unwrap();
        prop_assert!(best.connected);
        prop_assert!(query.is_subset(&best.nodes));
        let cfg = EsgConfig { tau: 0.5, max_size: Some(g.node_count()) };
        let local = local_search(&s, &g, &query, &cfg).unwrap();
        prop_assert!(best.esg >= local.esg - 1e-12);
    }

    #[test]
    fn prefix_values_match_direct_esg((g, scores, q) in instance(12)) {
        let s = ScoreVector::from_raw(scores, NodeSet::singleton(q)).unwrap();
        let order = score_order(&s);
        let values = prefix_esg(&s, &order, 0.5);
        prop_assert_eq!(values.len(), g.node_count());
        for p in 1..=order.len() {
            let direct = esg(&s, &NodeSet::new(order[..p].to_vec()), 0.5).unwrap();
            prop_assert!((values[p - 1] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_scores_ignore_embedding_scale(rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 2..10), c in 0.01f64..100.0) {
        let e = embeddings(&rows);
        let scaled = embeddings(&rows.iter().map(|r| r.iter().map(|v| v * c).collect()).collect::<Vec<_>>());
        let q = NodeSet::new(vec![0, 1]);
        let a = compute_scores(&e, &q, Similarity::Cosine).unwrap();
        let b = compute_scores(&scaled, &q, Similarity::Cosine).unwrap();
        for (x, y) in a.scores().iter().zip(b.scores()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        for s in a.scores() {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(s));
        }
    }

    #[test]
    fn multi_node_query_scores_average_single_queries(rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 3..10), sim in prop::sample::select(vec![Similarity::Cosine, Similarity::L1, Similarity::L2])) {
        let e = embeddings(&rows);
        let q = NodeSet::new(vec![0, 1, 2]);
        let joint = compute_scores(&e, &q, sim).unwrap();
        let singles: Vec<ScoreVector> = q.iter().map(|u| compute_scores(&e, &NodeSet::singleton(u), sim).unwrap()).collect();
        for v in 0..e.len() {
            let avg = singles.iter().map(|s| s.scores()[v]).sum::<f64>() / 3.0;
            prop_assert!((joint.scores()[v] - avg).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_are_symmetric_and_bounded(n in 1usize..30, a in any::<u32>(), b in any::<u32>()) {
        let p: NodeSet = (0..n).filter(|v| a & (1 << v) != 0).collect();
        let t: NodeSet = (0..n).filter(|v| b & (1 << v) != 0).collect();
        prop_assume!(!p.is_empty() && !t.is_empty());
        let f = f1(&p, &t).unwrap();
        prop_assert_eq!(f, f1(&t, &p).unwrap());
        prop_assert_eq!(jaccard(&p, &t), jaccard(&t, &p));
        let (x, y) = (nmi(&p, &t, n).unwrap(), nmi(&t, &p, n).unwrap());
        prop_assert!((x - y).abs() < 1e-12);
        for m in [f, jaccard(&p, &t), x] {
            prop_assert!((0.0..=1.0).contains(&m));
        }
        prop_assert!(jaccard(&p, &t) <= f + 1e-15);
    }
}

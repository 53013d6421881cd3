use commsearch::graph::{induced_subgraph, is_connected, khop_nodes, load_graph, propagate, FeatureMatrix, Graph, NodeSet};
use commsearch::io::load_communities;
use commsearch::sampler::{conductance, sample_augmented, WORST_CONDUCTANCE};
use ndarray::Array2;
use proptest::prelude::*;

fn graph_strategy(max_n: usize) -> impl Strategy<Value = Graph> {
    (1..=max_n).prop_flat_map(|n| {
        prop::collection::vec((0..n, 0..n), 0..=3 * n).prop_map(move |edges| Graph::from_edges(n, &edges).unwrap())
    })
}

fn features(n: usize, d: usize, seed: u64) -> FeatureMatrix {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    FeatureMatrix::new(Array2::from_shape_fn((n, d), |_| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }))
    .unwrap()
}

/// Dense D^{-1/2} A D^{-1/2} with zero rows for isolated nodes.
fn dense_normalized(g: &Graph) -> Array2<f64> {
    let n = g.node_count();
    let mut a = Array2::zeros((n, n));
    for u in 0..n {
        for v in 0..n {
            if u != v && g.has_edge(u, v) {
                a[[u, v]] = 1.0 / ((g.degree(u) * g.degree(v)) as f64).sqrt();
            }
        }
    }
    a
}

/// Distances by repeated one-step expansion of the frontier.
fn ball_by_expansion(g: &Graph, seeds: &[usize], k: usize) -> Vec<usize> {
    let mut inside = vec![false; g.node_count()];
    for &s in seeds {
        inside[s] = true;
    }
    for _ in 0..k {
        let snapshot = inside.clone();
        for u in 0..g.node_count() {
            if snapshot[u] {
                for v in 0..g.node_count() {
                    if g.has_edge(u, v) {
                        inside[v] = true;
                    }
                }
            }
        }
    }
    (0..g.node_count()).filter(|&v| inside[v]).collect()
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    parent[x] = r;
    r
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn propagation_matches_dense_powers(g in graph_strategy(20), seed in any::<u64>(), k_max in 0usize..5) {
        let x = features(g.node_count(), 3, seed);
        let hops = propagate(&g, &x, k_max).unwrap();
        prop_assert_eq!(hops.len(), k_max + 1);
        let a = dense_normalized(&g);
        let mut expect = x.as_array().clone();
        for hop in &hops {
            for (got, want) in hop.as_array().iter().zip(expect.iter()) {
                prop_assert!((got - want).abs() < 1e-10);
            }
            expect = a.dot(&expect);
        }
    }

    #[test]
    fn propagation_is_linear(g in graph_strategy(15), s1 in any::<u64>(), s2 in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let n = g.node_count();
        let (x, y) = (features(n, 2, s1), features(n, 2, s2));
        let combo = FeatureMatrix::new(x.as_array() * a + y.as_array() * b).unwrap();
        let (px, py, pc) = (propagate(&g, &x, 3).unwrap(), propagate(&g, &y, 3).unwrap(), propagate(&g, &combo, 3).unwrap());
        for k in 0..=3 {
            let want = px[k].as_array() * a + py[k].as_array() * b;
            for (got, w) in pc[k].as_array().iter().zip(want.iter()) {
                prop_assert!((got - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn khop_grows_and_matches_expansion(g in graph_strategy(16), seed_pick in any::<prop::sample::Index>()) {
        let s = seed_pick.index(g.node_count());
        let seeds = NodeSet::singleton(s);
        let mut prev = NodeSet::default();
        for k in 0..6 {
            let ball = khop_nodes(&g, &seeds, k).unwrap();
            prop_assert!(prev.is_subset(&ball));
            let oracle = ball_by_expansion(&g, &[s], k);
            prop_assert_eq!(ball.ids(), oracle.as_slice());
            prev = ball;
        }
    }

    #[test]
    fn induced_subgraph_keeps_exactly_inner_edges(g in graph_strategy(16), mask in any::<u32>()) {
        let nodes: NodeSet = (0..g.node_count()).filter(|v| mask & (1 << v) != 0).collect();
        prop_assume!(!nodes.is_empty());
        let sub = induced_subgraph(&g, &nodes).unwrap();
        let mut expected = Vec::new();
        for (u, v) in g.edges() {
            if nodes.contains(u) && nodes.contains(v) {
                expected.push((sub.local_id(u).unwrap(), sub.local_id(v).unwrap()));
            }
        }
        let got: Vec<(usize, usize)> = sub.graph.edges().collect();
        prop_assert_eq!(got.len(), expected.len());
        for (a, b) in expected {
            prop_assert!(sub.graph.has_edge(a, b));
        }
        for local in 0..nodes.len() {
            prop_assert_eq!(sub.local_id(sub.original_id(local)), Some(local));
        }
    }

    #[test]
    fn augmented_subgraph_is_the_sweep_argmin(g in graph_strategy(14), pick in any::<prop::sample::Index>(), k_max in 1usize..6) {
        let center = pick.index(g.node_count());
        let got = sample_augmented(&g, center, k_max).unwrap();
        let mut best = (f64::INFINITY, 0);
        for k in 1..=k_max {
            let ball = khop_nodes(&g, &NodeSet::singleton(center), k).unwrap();
            let phi = if ball.len() == g.node_count() { WORST_CONDUCTANCE } else { conductance(&g, &ball).unwrap() };
            if phi < best.0 {
                best = (phi, k);
            }
        }
        prop_assert_eq!(got.conductance, best.0);
        let want_ball = khop_nodes(&g, &NodeSet::singleton(center), best.1).unwrap();
        prop_assert_eq!(&got.nodes, &want_ball);
        prop_assert!(got.nodes.contains(center));
        prop_assert!((0.0..=1.0).contains(&got.conductance));
    }

    #[test]
    fn conductance_is_complement_symmetric(g in graph_strategy(14), mask in any::<u32>()) {
        let n = g.node_count();
        let c: NodeSet = (0..n).filter(|v| mask & (1 << v) != 0).collect();
        prop_assume!(!c.is_empty() && c.len() < n);
        let rest: NodeSet = (0..n).filter(|v| !c.contains(*v)).collect();
        prop_assert_eq!(conductance(&g, &c).unwrap(), conductance(&g, &rest).unwrap());
    }
}

#[test]
fn karate_factions_are_connected() {
    let g = load_graph(include_str!("../fixtures/karate.edges").as_bytes(), None).unwrap();
    assert_eq!(g.node_count(), 34);
    assert_eq!(g.edge_count(), 78);
    let factions = load_communities(include_str!("../fixtures/karate.communities").as_bytes()).unwrap();
    for f in &factions {
        let mut parent: Vec<usize> = (0..34).collect();
        for (u, v) in g.edges() {
            if f.contains(u) && f.contains(v) {
                let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
                parent[ru] = rv;
            }
        }
        let root = find(&mut parent, f.ids()[0]);
        let oracle = f.iter().all(|v| find(&mut parent, v) == root);
        assert!(oracle);
        assert_eq!(is_connected(&g, f).unwrap(), oracle);
    }
}

#[test]
fn edge_list_errors_carry_line_numbers() {
    let err = load_graph("0 1\n# c\n1 two\n".as_bytes(), None).unwrap_err();
    assert!(err.to_string().contains("line 3"));
    assert!(load_graph("0 1\n".as_bytes(), Some(1)).is_err());
    assert_eq!(load_graph("0 1\n".as_bytes(), Some(5)).unwrap().node_count(), 5);
}

use commsearch::graph::{induced_subgraph, load_graph, propagate, FeatureMatrix, Graph, NodeSet};
use commsearch::model::{
    build_tokens, context_tokens, encode, encode_batch, encode_with_readout, AttentionScale, HopTokenSequence, ModelDims,
    ModelParams,
};
use commsearch::sampler::sample_augmented;
use commsearch::train::{
    link_loss, loss_and_grad, personalization_loss, pretrain, TrainConfig, TripletConvention,
};
use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
}

fn path5() -> Graph {
    load_graph("0 1\n1 2\n2 3\n3 4\n".as_bytes(), None).unwrap()
}

fn six_node_graph(seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(usize, usize)> = (0..5).map(|i| (i, i + 1)).collect();
    for _ in 0..4 {
        edges.push((rng.gen_range(0..6), rng.gen_range(0..6)));
    }
    Graph::from_edges(6, &edges).unwrap()
}

fn layer_norm(x: &Array2<f64>, gamma: &Array2<f64>, beta: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + 1e-5).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gamma[[0, j]] + beta[[0, j]];
        }
    }
    out
}

fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Straight-line re-implementation of the encoder without the tape.
fn oracle_encode(p: &ModelParams, tokens: &Array2<f64>) -> (Array1<f64>, Array1<f64>, Vec<f64>) {
    let dims = p.dims;
    let rows = tokens.nrows();
    let dh = dims.model_dim / dims.heads;
    let divisor = match dims.attention_scale {
        AttentionScale::PerHead => (dh as f64).sqrt(),
        AttentionScale::ModelWidth => (dims.model_dim as f64).sqrt(),
    };
    let mut h = tokens.dot(&p.projection);
    for layer in &p.layers {
        h = &h + &p.pos_enc.slice(s![..rows, ..]);
        let n = layer_norm(&h, &layer.attn_norm_scale, &layer.attn_norm_shift);
        let mut cat = Array2::zeros((rows, dims.heads * dh));
        for (i, w) in layer.heads.iter().enumerate() {
            let q = n.dot(&w.query);
            let k = n.dot(&w.key);
            let v = n.dot(&w.value);
            let a = softmax_rows(&(q.dot(&k.t()) / divisor));
            cat.slice_mut(s![.., i * dh..(i + 1) * dh]).assign(&a.dot(&v));
        }
        h = &h + &cat.dot(&layer.output);
        let n = layer_norm(&h, &layer.ffn_norm_scale, &layer.ffn_norm_shift);
        let f = (n.dot(&layer.ffn_in) + &layer.ffn_in_bias).mapv(gelu);
        h = &h + &(f.dot(&layer.ffn_out) + &layer.ffn_out_bias);
    }
    let m = dims.model_dim;
    let top = p.readout.slice(s![..m, 0]);
    let bottom = p.readout.slice(s![m.., 0]);
    let center = h.row(0).dot(&top);
    let logits: Vec<f64> = (1..rows).map(|k| center + h.row(k).dot(&bottom)).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let alpha: Vec<f64> = exps.iter().map(|e| e / total).collect();
    let mut z_com = Array1::zeros(m);
    for (k, a) in alpha.iter().enumerate() {
        z_com.scaled_add(*a, &h.row(k + 1));
    }
    (h.row(0).to_owned(), z_com, alpha)
}

#[test]
fn encoder_matches_straight_line_oracle() {
    let g = path5();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = FeatureMatrix::new(random_matrix(&mut rng, 5, 2)).unwrap();
    for scale in [AttentionScale::PerHead, AttentionScale::ModelWidth] {
        let mut dims = ModelDims::new(2, 4, 1, 2, 3);
        dims.attention_scale = scale;
        let mut p = ModelParams::init(dims, &mut rng).unwrap();
        for layer in &mut p.layers {
            layer.ffn_in_bias = random_matrix(&mut rng, 1, dims.ffn_dim);
            layer.attn_norm_scale = random_matrix(&mut rng, 1, 4);
            layer.ffn_norm_shift = random_matrix(&mut rng, 1, 4);
        }
        for v in 0..5 {
            let seq = context_tokens(&g, &x, v, 3).unwrap();
            let (pair, alpha) = encode_with_readout(&p, &seq).unwrap();
            let (zn, zc, a) = oracle_encode(&p, &seq.tokens);
            for (got, want) in pair.z_node.iter().zip(zn.iter()) {
                assert!((got - want).abs() < 1e-12, "z_node {got} vs {want}");
            }
            for (got, want) in pair.z_com.iter().zip(zc.iter()) {
                assert!((got - want).abs() < 1e-12, "z_com {got} vs {want}");
            }
            for (got, want) in alpha.iter().zip(&a) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn tokens_are_propagated_features_of_the_augmented_subgraph() {
    let g = path5();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = FeatureMatrix::new(random_matrix(&mut rng, 5, 2)).unwrap();
    for v in 0..5 {
        let sub = sample_augmented(&g, v, 4).unwrap();
        let induced = induced_subgraph(&g, &sub.nodes).unwrap();
        let local_x = x.select_rows(sub.nodes.ids());
        let hops = propagate(&induced.graph, &local_x, sub.k_star).unwrap();
        let local = induced.local_id(v).unwrap();
        let seq = context_tokens(&g, &x, v, 4).unwrap();
        assert_eq!(seq.center, v);
        assert_eq!(seq.hops(), sub.k_star);
        for (k, hop) in hops.iter().enumerate() {
            assert_eq!(seq.tokens.row(k), hop.row(local));
        }
        let direct = build_tokens(&induced.graph, &local_x, local, sub.k_star).unwrap();
        assert_eq!(direct.tokens, seq.tokens);
    }
}

#[test]
fn batch_encoding_equals_per_node_loop() {
    let g = load_graph(include_str!("../fixtures/karate.edges").as_bytes(), None).unwrap();
    let x = FeatureMatrix::identity(34);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = ModelParams::init(ModelDims::new(34, 8, 1, 2, 5), &mut rng).unwrap();
    let all = NodeSet::full(34);
    let batch = encode_batch(&p, &g, &x, 5, &all).unwrap();
    for v in 0..34 {
        let single = encode(&p, &context_tokens(&g, &x, v, 5).unwrap()).unwrap();
        assert_eq!(batch[v], single);
    }
    let some = NodeSet::new(vec![30, 2, 17]);
    let part = encode_batch(&p, &g, &x, 5, &some).unwrap();
    assert_eq!(part[0], batch[2]);
    assert_eq!(part[2], batch[30]);
}

#[test]
fn zero_readout_spreads_weight_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut p = ModelParams::init(ModelDims::new(3, 8, 1, 2, 5), &mut rng).unwrap();
    p.readout.fill(0.0);
    for hops in 1..=5 {
        let seq = HopTokenSequence {
            center: 0,
            tokens: random_matrix(&mut rng, hops + 1, 3),
        };
        let (_, alpha) = encode_with_readout(&p, &seq).unwrap();
        for a in alpha {
            assert!((a - 1.0 / hops as f64).abs() < 1e-15);
        }
    }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        model_dim: 8,
        heads: 2,
        layers: 1,
        ..TrainConfig::default()
    }
}

fn setup(seed: u64, cfg: &TrainConfig) -> (Graph, FeatureMatrix, ModelParams) {
    let g = six_node_graph(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = FeatureMatrix::new(random_matrix(&mut rng, 6, 3)).unwrap();
    let p = ModelParams::init(cfg.model_dims(3), &mut rng).unwrap();
    (g, x, p)
}

#[test]
fn finite_differences_agree_for_standard_convention_and_two_layers() {
    let cfg = TrainConfig {
        layers: 2,
        triplet: TripletConvention::Standard,
        attention_scale: AttentionScale::ModelWidth,
        ..small_config()
    };
    let (g, x, p) = setup(21, &cfg);
    let batch = NodeSet::full(6);
    let (_, grads) = loss_and_grad(&p, &g, &x, &batch, &cfg).unwrap();
    let h = 1e-5;
    let count = p.tensors().len();
    let mut checked = 0;
    for t in 0..count {
        let (rows, cols) = p.tensors()[t].dim();
        for (r, c) in (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))) {
            let eval = |delta: f64| {
                let mut q = p.clone();
                q.tensors_mut()[t][[r, c]] += delta;
                loss_and_grad(&q, &g, &x, &batch, &cfg).unwrap().0.total
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let analytic = grads.tensors[t][[r, c]];
            if analytic.abs() > 1e-8 {
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
                assert!(rel < 1e-4, "{}[{r},{c}]: analytic {analytic} numeric {numeric}", grads.names[t]);
                checked += 1;
            }
        }
    }
    assert!(checked > 100);
}

#[test]
fn tape_loss_equals_scalar_reference() {
    for triplet in [TripletConvention::Reversed, TripletConvention::Standard] {
        let cfg = TrainConfig {
            triplet,
            alpha: 0.3,
            ..small_config()
        };
        let (g, x, p) = setup(5, &cfg);
        let batch = NodeSet::new(vec![0, 2, 3, 5]);
        let (loss, _) = loss_and_grad(&p, &g, &x, &batch, &cfg).unwrap();
        let pairs: Vec<_> = batch
            .iter()
            .map(|v| encode(&p, &context_tokens(&g, &x, v, cfg.max_hops).unwrap()).unwrap())
            .collect();
        let lp = personalization_loss(&pairs, cfg.margin, triplet);
        let lk = link_loss(&pairs, batch.ids(), &g);
        assert!((loss.l_p - lp).abs() < 1e-10);
        assert!((loss.l_k - lk).abs() < 1e-10);
        assert!((loss.total - (lp + 0.3 * lk)).abs() < 1e-10);
        assert_eq!(loss.batch_size, 4);
    }
}

#[test]
fn losses_ignore_batch_order() {
    let cfg = small_config();
    let (g, x, p) = setup(9, &cfg);
    let order = [4usize, 1, 5, 0, 3, 2];
    let pairs: Vec<_> = order
        .iter()
        .map(|&v| encode(&p, &context_tokens(&g, &x, v, 5).unwrap()).unwrap())
        .collect();
    let mut rev_pairs = pairs.clone();
    rev_pairs.reverse();
    let mut rev_order = order.to_vec();
    rev_order.reverse();
    let a = personalization_loss(&pairs, 0.5, TripletConvention::Reversed);
    let b = personalization_loss(&rev_pairs, 0.5, TripletConvention::Reversed);
    assert!((a - b).abs() < 1e-9);
    let a = link_loss(&pairs, &order, &g);
    let b = link_loss(&rev_pairs, &rev_order, &g);
    assert!((a - b).abs() < 1e-9);
}

#[test]
fn alpha_weights_only_the_link_term() {
    let base = small_config();
    let (g, x, p) = setup(11, &base);
    let batch = NodeSet::full(6);
    let zero = TrainConfig { alpha: 0.0, ..base.clone() };
    let (l0, g0) = loss_and_grad(&p, &g, &x, &batch, &zero).unwrap();
    assert_eq!(l0.total, l0.l_p);
    let some = TrainConfig { alpha: 0.25, ..base };
    let (l1, g1) = loss_and_grad(&p, &g, &x, &batch, &some).unwrap();
    assert_eq!(l0.l_p, l1.l_p);
    assert!((l1.total - l0.total - 0.25 * l1.l_k).abs() < 1e-12);
    assert_ne!(g0, g1);
}

#[test]
fn frozen_tensors_get_exactly_zero_gradient() {
    let cfg = TrainConfig {
        frozen: vec!["projection".into(), "layer0.head1".into()],
        ..small_config()
    };
    let (g, x, p) = setup(13, &cfg);
    let (_, grads) = loss_and_grad(&p, &g, &x, &NodeSet::full(6), &cfg).unwrap();
    for (name, t) in grads.names.iter().zip(&grads.tensors) {
        let frozen = name.starts_with("projection") || name.starts_with("layer0.head1");
        if frozen {
            assert!(t.iter().all(|v| *v == 0.0), "{name} moved");
        }
    }
    assert!(grads.get("layer0.head0.query").unwrap().iter().any(|v| *v != 0.0));
    assert!(grads.get("layer0.ffn.in").unwrap().iter().any(|v| *v != 0.0));

    let train = TrainConfig { epochs: 3, ..cfg };
    let trained = pretrain(&six_node_graph(13), &x, &train).unwrap();
    let init = pretrain(&six_node_graph(13), &x, &TrainConfig { epochs: 0, ..train.clone() }).unwrap();
    assert_eq!(trained.params.projection, init.params.projection);
    assert_eq!(trained.params.layers[0].heads[1], init.params.layers[0].heads[1]);
    assert_ne!(trained.params.layers[0].ffn_in, init.params.layers[0].ffn_in);
}

#[test]
fn zero_epochs_returns_initial_parameters() {
    let cfg = TrainConfig { epochs: 0, seed: 42, ..small_config() };
    let g = six_node_graph(1);
    let x = FeatureMatrix::identity(6);
    let out = pretrain(&g, &x, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let init = ModelParams::init(cfg.model_dims(6), &mut rng).unwrap();
    assert_eq!(out.params, init);
    assert!(out.log.epochs.is_empty());
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let cfg = TrainConfig { epochs: 4, seed: 3, ..small_config() };
    let g = six_node_graph(2);
    let x = FeatureMatrix::identity(6);
    let a = pretrain(&g, &x, &cfg).unwrap();
    let b = pretrain(&g, &x, &cfg).unwrap();
    assert_eq!(a.params.to_bytes(), b.params.to_bytes());
    let strip = |log: &commsearch::train::TrainLog| -> Vec<(usize, f64, f64, f64)> {
        log.epochs.iter().map(|r| (r.epoch, r.l_p, r.l_k, r.total)).collect()
    };
    assert_eq!(strip(&a.log), strip(&b.log));
    let c = pretrain(&g, &x, &TrainConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(a.params, c.params);
}

use std::collections::BTreeSet;

use ppr_cert::analysis::{
    all_purities, certified_accuracy, clean_accuracy, neighborhood_purity, BoundType, CertStatus, CertificateRecord,
};
use ppr_cert::graph::{
    apply_policy, build_scenario, generate_sbm, generate_sbm_with_blocks, load_graph, parse_edge_list,
    spanning_tree_edges, GlobalBudget, LoadOptions, LocalBudget, ScenarioMode,
};
use ppr_cert::models::{
    diffuse_logits, feature_propagation_logits, label_propagation_logits, mlp_logits, predict, FeatureMatrix,
    LinearModel, LogisticFitOptions, LogitsMatrix, MlpModel, Model,
};
use ppr_cert::oracle::{dense_pagerank, graph_adjacency};
use ppr_cert::policy_iter::certify_local_all;
use ppr_cert::{DirectedGraph, EdgePolicy, Error};
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn minimal_cycle_file_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.tsv");
    std::fs::write(&path, "# cycle\n0\t1\n1\t0\n").unwrap();
    let g = load_graph(&path, &LoadOptions::default()).unwrap().graph;
    assert_eq!((g.node_count(), g.edge_count()), (2, 2));
    match parse_edge_list("3 a\n", &LoadOptions::default()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn sbm_edge_count_is_within_three_sigma() {
    let g = generate_sbm(200, 2, 0.05, 0.005, 7).unwrap();
    let within = 2.0 * (100.0 * 99.0 / 2.0);
    let across = 100.0 * 100.0;
    let mean = within * 0.05 + across * 0.005;
    let var = within * 0.05 * 0.95 + across * 0.005 * 0.995;
    // Each undirected draw contributes two directed edges.
    let undirected = g.edge_count() as f64 / 2.0;
    assert!(g.is_symmetric());
    assert!((undirected - mean).abs() <= 3.0 * var.sqrt(), "{undirected} vs {mean}");
}

#[test]
fn sbm_extremes() {
    assert_eq!(generate_sbm(4, 1, 1.0, 0.0, 0).unwrap().edge_count(), 12);
    assert_eq!(generate_sbm(100, 2, 0.0, 0.0, 0).unwrap().edge_count(), 0);
    assert!(generate_sbm(2, 3, 0.5, 0.1, 0).is_err());
    assert_eq!(generate_sbm(60, 3, 0.2, 0.02, 9).unwrap(), generate_sbm(60, 3, 0.2, 0.02, 9).unwrap());
}

fn random_connected(rng: &mut ChaCha8Rng, n: usize, p: f64) -> DirectedGraph {
    let mut edges = vec![];
    for v in 1..n {
        let u = rng.random_range(0..v);
        edges.push((u, v));
        edges.push((v, u));
    }
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    DirectedGraph::from_edges(n, edges).unwrap()
}

#[test]
fn random_policy_matches_set_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let g = random_connected(&mut rng, 5, 0.3);
        let s = build_scenario(&g, ScenarioMode::AddAndRemove, &LocalBudget::Unlimited, GlobalBudget::Unlimited).unwrap();
        let fragile: Vec<_> = s.fragile_edges().map(|(_, e, _)| e).collect();
        let flipped: BTreeSet<_> = fragile.iter().copied().filter(|_| rng.random_bool(0.4)).collect();
        let out = apply_policy(&s, &EdgePolicy::from_edges(flipped.iter().copied())).unwrap();
        let clean: BTreeSet<_> = g.edges().collect();
        let expected: BTreeSet<_> = clean.symmetric_difference(&flipped).copied().collect();
        assert_eq!(out.edges().collect::<BTreeSet<_>>(), expected);
    }
}

#[test]
fn remove_only_everything_flipped_leaves_the_tree() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = random_connected(&mut rng, 9, 0.3);
    let s = build_scenario(&g, ScenarioMode::RemoveOnly, &LocalBudget::Unlimited, GlobalBudget::Unlimited).unwrap();
    let all = EdgePolicy::from_edges(s.fragile_edges().map(|(_, e, _)| e));
    let out = apply_policy(&s, &all).unwrap();
    let tree: BTreeSet<_> = spanning_tree_edges(&g).into_iter().collect();
    assert_eq!(out.edges().collect::<BTreeSet<_>>(), tree);
    let none = apply_policy(&s, &EdgePolicy::new()).unwrap();
    assert_eq!(none, g);
    // A policy outside F is rejected.
    assert!(apply_policy(&s, &EdgePolicy::from_edges([(0, 0)])).is_err());
}

#[test]
fn path_graph_has_no_fragile_edges() {
    let g = DirectedGraph::from_edges(4, [(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2)]).unwrap();
    let s = build_scenario(&g, ScenarioMode::RemoveOnly, &LocalBudget::Strength(5), GlobalBudget::Unlimited).unwrap();
    assert_eq!(s.fragile_count(), 0);
}

#[test]
fn feature_propagation_separates_block_indicator_features() {
    let sbm = generate_sbm_with_blocks(30, 2, 0.4, 0.02, 3).unwrap();
    let (g, ids) = ppr_cert::graph::largest_component(&sbm.graph);
    let blocks: Vec<usize> = ids.iter().map(|&v| sbm.blocks[v]).collect();
    let n = g.node_count();
    let x = FeatureMatrix::new(n, 2, blocks.iter().flat_map(|&b| [(b == 0) as u8 as f64, (b == 1) as u8 as f64]).collect()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let labeled: Vec<(usize, usize)> = (0..n).filter(|_| rng.random_bool(0.3)).map(|v| (v, blocks[v])).collect();
    let (h, _) = feature_propagation_logits(&g, 0.85, &x, &labeled, 2, LogisticFitOptions::default(), 0).unwrap();
    let pred = predict(&g, 0.85, &h).unwrap();
    let test: Vec<usize> = (0..n).filter(|v| !labeled.iter().any(|l| l.0 == *v)).collect();
    let acc = test.iter().filter(|&&v| pred[v] == blocks[v]).count() as f64 / test.len() as f64;
    assert!(acc > 0.9, "accuracy {acc}");
}

#[test]
fn memorizes_one_hot_indicators_of_labeled_nodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = random_connected(&mut rng, 12, 0.15);
    let labeled: Vec<(usize, usize)> = (0..6).map(|v| (v, v % 3)).collect();
    let x = FeatureMatrix::new(12, 6, (0..12).flat_map(|v| (0..6).map(move |d| (v == d) as u8 as f64)).collect()).unwrap();
    let opts = LogisticFitOptions { reg: 1e-6, ..Default::default() };
    let diffused = ppr_cert::models::diffuse_features(&g, 0.1, &x).unwrap();
    let model = ppr_cert::models::fit_logistic(&diffused, &labeled, 3, opts, 0).unwrap();
    let h = model.forward(&diffused).unwrap();
    let pred = ppr_cert::models::argmax_rows(&h);
    assert!(labeled.iter().all(|&(v, y)| pred[v] == y));
}

#[test]
fn zero_weights_certify_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = random_connected(&mut rng, 8, 0.2);
    let x = FeatureMatrix::new(8, 3, (0..24).map(|_| rng.random()).collect()).unwrap();
    let h = LinearModel::zeros(3, 2).forward(&x).unwrap();
    assert!(h.values().iter().all(|&v| v == 0.0));
    let s = build_scenario(&g, ScenarioMode::RemoveOnly, &LocalBudget::Strength(12), GlobalBudget::Unlimited).unwrap();
    let certs = certify_local_all(&s, 0.85, &h, &[0; 8]).unwrap();
    assert!(certs.iter().all(|c| c.worst_margin == 0.0 && c.status == CertStatus::Nonrobust));
}

#[test]
fn label_propagation_matches_dense_diffusion() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = random_connected(&mut rng, 6, 0.2);
    let labels = [(0, 0), (2, 1), (5, 1)];
    let h = label_propagation_logits(&labels, 6, 2).unwrap();
    let d = diffuse_logits(&g, 0.85, &h).unwrap();
    let adj = graph_adjacency(&g);
    let mut colsum = [0.0; 2];
    for t in 0..6 {
        let mut z = vec![0.0; 6];
        z[t] = 1.0;
        let pi = dense_pagerank(&adj, 0.85, &z);
        for &(v, c) in &labels {
            colsum[c] += pi[v];
        }
        for c in 0..2 {
            let want: f64 = labels.iter().filter(|l| l.1 == c).map(|l| pi[l.0]).sum();
            assert!((d.get(t, c) - want).abs() < 1e-10);
        }
    }
    for c in 0..2 {
        let got: f64 = (0..6).map(|t| d.get(t, c)).sum();
        assert!((got - colsum[c]).abs() < 1e-10);
    }
}

#[test]
fn disconnected_cliques_take_their_labels() {
    let mut edges = vec![];
    for block in [0..4, 4..8] {
        for u in block.clone() {
            for v in block.clone() {
                if u != v {
                    edges.push((u, v));
                }
            }
        }
    }
    let g = DirectedGraph::from_edges(8, edges).unwrap();
    let h = label_propagation_logits(&[(0, 1), (5, 0)], 8, 2).unwrap();
    assert_eq!(predict(&g, 0.85, &h).unwrap(), vec![1, 1, 1, 1, 0, 0, 0, 0]);
}

#[test]
fn mlp_forward_matches_reference_product() {
    let (d, hidden, k) = (5, 64, 3);
    let model = MlpModel::seeded(d, hidden, k, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = FeatureMatrix::new(7, d, (0..7 * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let p = model.params();
    let (w1, rest) = p.split_at(d * hidden);
    let (b1, rest) = rest.split_at(hidden);
    let (w2, b2) = rest.split_at(hidden * k);
    let h = mlp_logits(&model, &x).unwrap();
    for v in 0..7 {
        let z: Vec<f64> = (0..hidden)
            .map(|j| (b1[j] + (0..d).map(|i| x.get(v, i) * w1[i * hidden + j]).sum::<f64>()).max(0.0))
            .collect();
        for c in 0..k {
            let want = b2[c] + (0..hidden).map(|j| z[j] * w2[j * k + c]).sum::<f64>();
            assert!((h.get(v, c) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn external_logits_give_identical_certificates() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let g = random_connected(&mut rng, 10, 0.2);
    let x = FeatureMatrix::new(10, 4, (0..40).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let labels: Vec<(usize, usize)> = (0..10).map(|v| (v, v % 2)).collect();
    let (h, _) = feature_propagation_logits(&g, 0.85, &x, &labels, 2, LogisticFitOptions::default(), 0).unwrap();
    let external = LogitsMatrix::parse_csv(&h.to_csv()).unwrap();
    let s = build_scenario(&g, ScenarioMode::AddAndRemove, &LocalBudget::Strength(10), GlobalBudget::Unlimited).unwrap();
    let pred = predict(&g, 0.85, &h).unwrap();
    let a = certify_local_all(&s, 0.85, &h, &pred).unwrap();
    let b = certify_local_all(&s, 0.85, &external, &pred).unwrap();
    assert_eq!(a, b);
}

#[test]
fn star_purity_and_mixed_accuracy_by_hand() {
    // Center 0 with leaves 1..=5; labels center 0, leaves 0, 0, 1, 1, 1.
    let edges: Vec<_> = (1..6).flat_map(|v| [(0, v), (v, 0)]).collect();
    let g = DirectedGraph::from_edges(6, edges).unwrap();
    let labels = [0, 0, 0, 1, 1, 1];
    assert!((neighborhood_purity(&g, &labels, 0) - 2.0 / 5.0).abs() < 1e-15);
    // Leaf 1 sees the center and the other four leaves: labels 0, 0, 1, 1, 1.
    assert!((neighborhood_purity(&g, &labels, 1) - 2.0 / 5.0).abs() < 1e-15);
    assert!((neighborhood_purity(&g, &labels, 3) - 2.0 / 5.0).abs() < 1e-15);

    let status = [true, true, false, true, false, true, true, false, false, true];
    let pred = [0, 1, 1, 0, 0, 1, 1, 0, 1, 1];
    let truth = [0, 1, 0, 1, 0, 1, 0, 0, 1, 1];
    let records: Vec<_> = (0..10).map(|v| record(v, status[v])).collect();
    // Robust and correct: nodes 0, 1, 5, 9.
    assert_eq!(certified_accuracy(&records, &pred, &truth), 0.4);
    assert_eq!(clean_accuracy(&records, &pred, &truth), 0.7);
}

fn record(node: usize, robust: bool) -> CertificateRecord {
    CertificateRecord {
        node,
        y: 0,
        worst_class: 1,
        worst_margin: if robust { 1.0 } else { -1.0 },
        status: if robust { CertStatus::Robust } else { CertStatus::Nonrobust },
        bound_type: BoundType::Exact,
        witness_flips: vec![],
        attack_verified: None,
        attack_margin: None,
        marginal: false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn remove_only_graphs_lie_between_tree_and_clean(seed in any::<u64>(), n in 3usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_connected(&mut rng, n, 0.3);
        let s = build_scenario(&g, ScenarioMode::RemoveOnly, &LocalBudget::Strength(9), GlobalBudget::Unlimited).unwrap();
        let again = build_scenario(&g, ScenarioMode::RemoveOnly, &LocalBudget::Strength(9), GlobalBudget::Unlimited).unwrap();
        prop_assert_eq!(s.to_dump(), again.to_dump());
        let mask: Vec<bool> = (0..s.fragile_count()).map(|_| rng.random_bool(0.5)).collect();
        let out = s.perturbed_graph(&mask);
        let tree: BTreeSet<_> = spanning_tree_edges(&g).into_iter().collect();
        let edges: BTreeSet<_> = out.edges().collect();
        prop_assert!(tree.is_subset(&edges));
        prop_assert!(edges.iter().all(|&(u, v)| g.has_edge(u, v)));
        prop_assert!((0..n).all(|v| out.out_degree(v) >= 1));
    }

    #[test]
    fn predictions_ignore_constant_shifts(seed in any::<u64>(), shift in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_connected(&mut rng, 8, 0.2);
        let h = LogitsMatrix::new(8, 3, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let shifted = LogitsMatrix::new(8, 3, h.values().iter().map(|v| v + shift).collect()).unwrap();
        prop_assert_eq!(predict(&g, 0.85, &h).unwrap(), predict(&g, 0.85, &shifted).unwrap());
    }

    #[test]
    fn diffusion_commutes_with_class_mixing(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_connected(&mut rng, 7, 0.25);
        let h = LogitsMatrix::new(7, 3, (0..21).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let a: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mix = |m: &LogitsMatrix| -> Vec<f64> { (0..7).map(|v| (0..3).map(|c| m.get(v, c) * a[c]).sum()).collect() };
        let mixed = LogitsMatrix::new(7, 2, mix(&h).into_iter().flat_map(|v| [v, 0.0]).collect()).unwrap();
        let lhs = diffuse_logits(&g, 0.85, &mixed).unwrap();
        let rhs = mix(&diffuse_logits(&g, 0.85, &h).unwrap());
        for v in 0..7 {
            prop_assert!((lhs.get(v, 0) - rhs[v]).abs() <= 1e-9);
        }
    }

    #[test]
    fn certified_accuracy_never_exceeds_clean(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..30);
        let records: Vec<_> = (0..n).map(|v| record(v, rng.random_bool(0.5))).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let ca = certified_accuracy(&records, &pred, &truth);
        prop_assert!(ca <= clean_accuracy(&records, &pred, &truth));
        prop_assert!((0.0..=1.0).contains(&ca));
    }

    #[test]
    fn purity_is_a_ratio(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_connected(&mut rng, 10, 0.1);
        let labels: Vec<usize> = (0..10).map(|_| rng.random_range(0..3)).collect();
        prop_assert!(all_purities(&g, &labels).iter().all(|p| (0.0..=1.0).contains(p)));
        prop_assert!(all_purities(&g, &[0; 10]).iter().all(|&p| p == 1.0));
    }
}

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rds_core::blockmodel::{exact_joint_law, induced_block_seed, projected_joint_law, total_variation, BlockModel, TwoBlockParams};
use rds_core::estimators::{build_sigma_blockmodel, closed_form_weights, general_weights, gls_vh, vh};
use rds_core::graph::{read_edge_list, TransitionMatrix, WeightedGraph};
use rds_core::sampler::{walk_without_replacement, RdsSample, SeedSpec};
use rds_core::spectral::{bottleneck, decompose};
use rds_core::tree::{OffspringLaw, ReferralTree};

/// Random connected weighted graph: a spanning path plus random extra edges.
fn graph_strategy(max_nodes: usize) -> impl Strategy<Value = WeightedGraph<f64>> {
    (2..=max_nodes).prop_flat_map(|n| {
        let path = proptest::collection::vec(0.1f64..5.0, n - 1);
        let extra = proptest::collection::vec((0..n, 0..n, 0.1f64..5.0), 0..3 * n);
        (Just(n), path, extra).prop_map(|(n, path, extra)| {
            let mut edges: Vec<(usize, usize, f64)> = path.into_iter().enumerate().map(|(i, w)| (i, i + 1, w)).collect();
            edges.extend(extra);
            WeightedGraph::from_edges(n, edges).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn eigenbasis_is_pi_orthonormal_and_reconstructs(g in graph_strategy(20)) {
        let chain = TransitionMatrix::from_graph(&g).unwrap();
        let dec = decompose(&chain).unwrap();
        let n = g.node_count();
        prop_assert_eq!(dec.eigenvalue(0), 1.0);
        prop_assert!(dec.eigenvector(0).iter().all(|&v| v == 1.0));
        for a in 0..n {
            prop_assert!(dec.eigenvalue(a).abs() <= 1.0 + 1e-9);
            if a > 0 {
                prop_assert!(dec.eigenvalue(a - 1).abs() >= dec.eigenvalue(a).abs() - 1e-9);
            }
            for b in 0..n {
                let ip = dec.inner_product(dec.eigenvector(a).as_slice(), dec.eigenvector(b).as_slice());
                let target = if a == b { 1.0 } else { 0.0 };
                prop_assert!((ip - target).abs() < 1e-9, "<f{},f{}> = {}", a, b, ip);
            }
        }
        let rebuilt = dec.reconstruct_power(1);
        for i in 0..n {
            for k in 0..n {
                prop_assert!((rebuilt[(i, k)] - chain.get(i, k)).abs() < 1e-9);
            }
        }
        let y: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let back = dec.reconstruct(&dec.expand(&y).unwrap()).unwrap();
        for (a, b) in y.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn transition_is_stochastic_and_reversible(g in graph_strategy(25)) {
        let chain = TransitionMatrix::from_graph(&g).unwrap();
        let n = g.node_count();
        let pi = chain.stationary();
        prop_assert!((pi.sum() - 1.0).abs() < 1e-12);
        for i in 0..n {
            let row: f64 = (0..n).map(|j| chain.get(i, j)).sum();
            prop_assert!((row - 1.0).abs() < 1e-12);
            for j in 0..n {
                prop_assert!((pi[i] * chain.get(i, j) - pi[j] * chain.get(j, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bottleneck_is_affine_invariant(g in graph_strategy(15), a in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0], b in -5.0f64..5.0) {
        let n = g.node_count();
        let y: Vec<f64> = (0..n).map(|i| (i % 3) as f64 + if i == 0 { 0.5 } else { 0.0 }).collect();
        let z: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let s1 = bottleneck(&g, &y).unwrap();
        let s2 = bottleneck(&g, &z).unwrap();
        prop_assert!((s1.lambda_tilde - s2.lambda_tilde).abs() < 1e-10);
        prop_assert!(s1.lambda_tilde <= 1.0 + 1e-12 && s1.lambda_tilde >= -1.0 - 1e-12);
    }

    #[test]
    fn edge_list_round_trip(g in graph_strategy(12)) {
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        let back: WeightedGraph<f64> = read_edge_list(&buf[..]).unwrap();
        let mut again = Vec::new();
        back.write_edge_list(&mut again).unwrap();
        prop_assert_eq!(&buf, &again);
        prop_assert_eq!(back.node_count(), g.node_count());
        let labels_g: BTreeSet<(String, String, u64)> = g.edges().map(|(i, j, w)| {
            let (a, b) = (g.label(i).to_string(), g.label(j).to_string());
            (a.clone().min(b.clone()), a.max(b), w.to_bits())
        }).collect();
        let labels_b: BTreeSet<(String, String, u64)> = back.edges().map(|(i, j, w)| {
            let (a, b) = (back.label(i).to_string(), back.label(j).to_string());
            (a.clone().min(b.clone()), a.max(b), w.to_bits())
        }).collect();
        prop_assert_eq!(labels_g, labels_b);
    }

    #[test]
    fn largest_component_is_connected(n in 2usize..30, edges in proptest::collection::vec((0usize..30, 0usize..30), 0..40)) {
        let edges: Vec<(usize, usize, f64)> = edges.into_iter().filter(|&(a, b)| a < n && b < n).map(|(a, b)| (a, b, 1.0)).collect();
        let g = WeightedGraph::from_edges(n, edges).unwrap();
        let sub = g.largest_connected_component().unwrap();
        prop_assert!(sub.graph.is_connected());
        let biggest = g.components().iter().map(Vec::len).max().unwrap();
        prop_assert_eq!(sub.graph.node_count(), biggest);
    }

    #[test]
    fn general_gls_matches_closed_form(m in 1usize..4, depth in 0usize..5, p in 0.05f64..0.95, q in 0.05f64..0.95) {
        let tree = ReferralTree::m_tree(m, depth).unwrap();
        prop_assume!(tree.len() <= 31);
        let params = TwoBlockParams::new(p, q).unwrap();
        let model = BlockModel::two_block(params, [1.0, 0.0]).unwrap();
        let dec = decompose(model.chain()).unwrap();
        let general = general_weights(build_sigma_blockmodel(&tree, &dec, &[1.0, 0.0]).unwrap()).unwrap();
        let closed = closed_form_weights(&tree, params.lambda2()).unwrap();
        prop_assert!((general.sum() - 1.0).abs() < 1e-10);
        for (a, b) in general.weights.iter().zip(&closed.weights) {
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }

    #[test]
    fn vh_estimators_ignore_weight_scale(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let mut edges = Vec::new();
        for i in 0..40usize {
            edges.push((i, (i + 1) % 40, 1.0 + (i % 3) as f64));
            edges.push((i, (i + 5) % 40, 0.5));
        }
        let scaled: Vec<_> = edges.iter().map(|&(a, b, w)| (a, b, w * scale)).collect();
        let g1 = WeightedGraph::from_edges(40, edges).unwrap();
        let g2 = WeightedGraph::from_edges(40, scaled).unwrap();
        let y: Vec<f64> = (0..40).map(|i| (i < 15) as u8 as f64).collect();
        let law = OffspringLaw::OnePlusBinomial { trials: 2, prob: 0.5 };
        let s1 = walk_without_replacement(&g1, &law, &SeedSpec::FixedNode(3), 25, 10, &y, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        // same recruitment (uniform over contacts), only degrees differ
        let s2 = RdsSample::new(s1.shared_tree(), s1.states().to_vec(), s1.traits().to_vec(),
            Some(s1.states().iter().map(|&x| g2.degree(x)).collect()), false).unwrap();
        prop_assert!((vh(&s1).unwrap().value - vh(&s2).unwrap().value).abs() < 1e-12);
        let w = closed_form_weights(s1.tree(), 0.6).unwrap();
        prop_assert!((gls_vh(&s1, &w).unwrap().value - gls_vh(&s2, &w).unwrap().value).abs() < 1e-12);
    }
}

#[test]
fn two_block_second_eigenvalue_grid() {
    for i in 1..20 {
        for j in 1..20 {
            let (p, q) = (i as f64 / 20.0, j as f64 / 20.0);
            let chain = TransitionMatrix::from_reversible(DMatrix::from_row_slice(2, 2, &[p, 1.0 - p, 1.0 - q, q])).unwrap();
            let dec = decompose(&chain).unwrap();
            let lambda = dec.lambda2();
            assert!((lambda - (p + q - 1.0)).abs() < 1e-12, "p={p} q={q}: {lambda}");
        }
    }
}

/// All rooted trees with up to 4 vertices in breadth-first numbering.
fn small_trees() -> Vec<ReferralTree> {
    let candidates: Vec<Vec<Option<usize>>> = vec![
        vec![None],
        vec![None, Some(0)],
        vec![None, Some(0), Some(0)],
        vec![None, Some(0), Some(1)],
        vec![None, Some(0), Some(0), Some(0)],
        vec![None, Some(0), Some(0), Some(1)],
        vec![None, Some(0), Some(1), Some(1)],
        vec![None, Some(0), Some(1), Some(2)],
    ];
    candidates.into_iter().map(|p| ReferralTree::from_parents(p).unwrap()).collect()
}

#[test]
fn block_projection_is_exact_for_small_trees() {
    let params = TwoBlockParams::new(0.9, 0.65).unwrap();
    let model = BlockModel::two_block(params, [1.0, 0.0]).unwrap().with_expansion(2).unwrap();
    let node_chain = TransitionMatrix::from_graph(&model.expand_graph().unwrap()).unwrap();
    let assignment = model.assignment().unwrap();
    let labels: Vec<Option<usize>> = assignment.iter().copied().map(Some).collect();
    let seeds = [vec![1.0, 0.0, 0.0, 0.0], vec![0.1, 0.2, 0.3, 0.4], node_chain.stationary().iter().copied().collect()];
    for tree in small_trees() {
        for nu in &seeds {
            let mu = induced_block_seed(nu, &assignment, 2).unwrap();
            let projected = projected_joint_law(&node_chain, &tree, nu, &labels).unwrap();
            let block = exact_joint_law(model.chain(), &tree, &mu).unwrap();
            assert!(total_variation(&projected, &block) < 1e-12);
        }
    }
}

#[test]
fn galton_watson_walks_share_tree() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let tree = Arc::new(ReferralTree::galton_watson(&OffspringLaw::OnePlusBinomial { trials: 2, prob: 0.5 }, 6, &mut rng).unwrap());
    let chain = TransitionMatrix::from_reversible(DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.3, 0.7])).unwrap();
    let a = rds_core::sampler::walk(&chain, tree.clone(), &SeedSpec::Stationary, &[1.0, 0.0], &mut rng).unwrap();
    assert_eq!(a.tree(), tree.as_ref());
}

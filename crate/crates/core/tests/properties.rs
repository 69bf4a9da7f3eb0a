//! Structural invariants of hop sets, label statistics and label transitions.

mod common;

use proptest::prelude::*;
use relgraph::encoder::EncoderConfig;
use relgraph::labelstats::{lc_emp, relative_gap};
use relgraph::markov::{build_transition, stationary_by_solve};
use relgraph::sbm::{expected_transition, generate_sbm, SbmSpec};
use relgraph::{build_graph, hop_sets, LabeledGraph, UnreachablePolicy};

use common::{
    all_pairs_distances, naive_hop, naive_lc, random_connected_sbm, random_graph, rng, INF,
};

fn permuted(g: &LabeledGraph, perm: &[usize]) -> LabeledGraph {
    let edges: Vec<(usize, usize)> = g
        .edge_list()
        .into_iter()
        .map(|(u, v)| (perm[u], perm[v]))
        .collect();
    let mut labels = vec![0; g.num_nodes()];
    for (u, &p) in perm.iter().enumerate() {
        labels[p] = g.label(u);
    }
    build_graph(
        &edges,
        &labels,
        Some(g.num_labels()),
        None,
        g.has_self_loops(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hop_sets_match_distance_oracle(seed in 0u64..10_000, n in 2usize..40, p in 0.02f64..0.3, k in 1usize..5) {
        let g = random_graph(n, 3.min(n), p, seed % 2 == 0, &mut rng(seed));
        let dist = all_pairs_distances(&g);
        for a in 0..n {
            let hops = hop_sets(&g, a, k, UnreachablePolicy::IncludeInBeyond);
            for h in 1..=k + 1 {
                prop_assert_eq!(hops.hop(h).to_vec(), naive_hop(&dist, a, h, k));
            }
            let covered: usize = hops.sizes().iter().sum();
            prop_assert_eq!(covered, n - 1);

            let excl = hop_sets(&g, a, k, UnreachablePolicy::Exclude);
            let expected: Vec<usize> = naive_hop(&dist, a, k + 1, k).into_iter().filter(|&v| dist[a][v] != INF).collect();
            prop_assert_eq!(excl.beyond.clone(), expected);
        }
    }

    #[test]
    fn lc_emp_matches_double_loop(seed in 0u64..10_000, n in 2usize..60, p in 0.02f64..0.3) {
        let g = random_graph(n, 3.min(n), p, false, &mut rng(seed));
        let dist = all_pairs_distances(&g);
        let curve = lc_emp(&g, 4).unwrap();
        for h in 1..=4 {
            prop_assert!((curve.lc_values[h - 1] - naive_lc(&g, &dist, h)).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&curve.lc_values[h - 1]));
        }
    }

    #[test]
    fn transition_is_a_markov_matrix(seed in 0u64..10_000) {
        let g = random_connected_sbm(seed);
        let t = build_transition(&g).unwrap();
        let c = t.num_labels();
        for i in 0..c {
            let row: f64 = (0..c).map(|j| t.matrix[(i, j)]).sum();
            prop_assert!((row - 1.0).abs() <= 1e-12);
            prop_assert!((0..c).all(|j| t.matrix[(i, j)] >= 0.0));
        }
        prop_assert!((t.pi.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(t.fixed_point_residual <= 1e-10);
        let solved = stationary_by_solve(&t.matrix).unwrap();
        for (a, b) in t.pi.iter().zip(&solved) {
            prop_assert!((a - b).abs() <= 1e-10, "closed form {} vs solve {}", a, b);
        }
        prop_assert!((t.eigenvalues[0].re - 1.0).abs() <= 1e-9);
        if let Some(l2) = t.lambda2 {
            prop_assert!(l2.modulus <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn relabeling_nodes_changes_nothing(seed in 0u64..10_000, n in 3usize..40) {
        let mut r = rng(seed);
        let g = random_graph(n, 3, 0.2, true, &mut r);
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
        let h = permuted(&g, &perm);
        let (a, b) = (lc_emp(&g, 3).unwrap(), lc_emp(&h, 3).unwrap());
        prop_assert_eq!(&a.per_node_counts, &b.per_node_counts);
        for (x, y) in a.lc_values.iter().zip(&b.lc_values) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        if let (Ok(ta), Ok(tb)) = (build_transition(&g), build_transition(&h)) {
            prop_assert!((&ta.matrix - &tb.matrix).abs().max() <= 1e-15);
        }
    }

    #[test]
    fn similarity_is_symmetric(seed in 0u64..1000) {
        let g = common::small_featured_graph(6, 4, seed);
        let enc = common::encoder_for(&g, EncoderConfig { embed_dim: 3, ..EncoderConfig::default() }, seed);
        let h = enc.forward(g.features().unwrap()).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let (a, b) = (enc.theta(h.row(i), h.row(j)).unwrap(), enc.theta(h.row(j), h.row(i)).unwrap());
                prop_assert_eq!(a, b);
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a));
            }
        }
    }
}

#[test]
fn lc_emp_is_independent_of_worker_count() {
    let g = random_connected_sbm(5);
    let many = lc_emp(&g, 4).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let one = pool.install(|| lc_emp(&g, 4).unwrap());
    assert_eq!(many, one);
}

#[test]
fn homophilic_sbm_has_decreasing_consistency() {
    let mut decreasing = 0;
    for seed in 0..20 {
        let g = generate_sbm(&SbmSpec::homophilic(seed)).unwrap();
        let lc = lc_emp(&g, 4).unwrap().lc_values;
        if lc.windows(2).all(|w| w[1] < w[0]) {
            decreasing += 1;
        }
        if seed == 0 {
            assert!(
                relative_gap(&g, 1, 3, UnreachablePolicy::IncludeInBeyond)
                    .unwrap()
                    .gap
                    > 0.0
            );
        }
    }
    assert!(decreasing >= 18, "{decreasing}/20 seeds decreasing");
}

#[test]
fn sbm_transition_concentrates_on_expectation() {
    for spec in [
        SbmSpec::homophilic(3),
        SbmSpec::heterophilic(3),
        SbmSpec::new(vec![150, 100, 250], 0.06, 0.01, 9),
    ] {
        let g = generate_sbm(&spec).unwrap();
        let observed = build_transition(&g).unwrap().matrix;
        let expected = expected_transition(&spec).unwrap();
        let worst = (&observed - &expected).abs().max();
        assert!(worst < 0.05, "{spec:?}: {worst}");
    }
}

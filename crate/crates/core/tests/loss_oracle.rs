//! Relative losses against enumeration oracles and hand-derived values.

mod common;

use proptest::prelude::*;
use rand::Rng;
use relgraph::encoder::{Activation, EncoderConfig};
use relgraph::loss::{
    build_plan, count_sim_ops, listwise_ratio, loss_and_grads, loss_in, loss_list, loss_out,
    loss_pair, pairwise_ratio, HopIndex, LossConfig, LossVariant, Temperatures,
};
use relgraph::{hop_sets, Matrix, UnreachablePolicy};

use common::{
    brute_force_loss, constant_projection, encoder_for, featured_path, layered_tree, rng,
};

fn encoder_config(spacing: f64) -> EncoderConfig {
    EncoderConfig {
        embed_dim: 4,
        layers: 2,
        hidden_dim: Some(6),
        activation: Activation::Prelu,
        tau_base: 0.5,
        tau_spacing: spacing,
    }
}

fn cfg(k: usize, alpha: f64, variant: LossVariant) -> LossConfig {
    LossConfig {
        k,
        alpha,
        variant,
        ..LossConfig::default()
    }
}

#[test]
fn matches_enumeration_on_random_instances() {
    let mut r = rng(77);
    for instance in 0..10u64 {
        let n = r.random_range(5..=15);
        let k = r.random_range(1..=3);
        let alpha = if instance % 2 == 0 { 1.0 } else { 0.7 };
        let g = common::small_featured_graph(n, 5, instance + 100);
        let enc = encoder_for(&g, encoder_config(0.1), instance);
        let pair = loss_pair(&enc, &g, &cfg(k, alpha, LossVariant::Pair))
            .unwrap()
            .loss;
        let list = loss_list(&enc, &g, &cfg(k, alpha, LossVariant::List))
            .unwrap()
            .loss;
        let pair_oracle = brute_force_loss(&enc, &g, k, alpha, false);
        let list_oracle = brute_force_loss(&enc, &g, k, alpha, true);
        assert!(
            (pair - pair_oracle).abs() <= 1e-10,
            "instance {instance}: {pair} vs {pair_oracle}"
        );
        assert!(
            (list - list_oracle).abs() <= 1e-10,
            "instance {instance}: {list} vs {list_oracle}"
        );
    }
}

#[test]
fn per_anchor_terms_add_up() {
    let g = common::small_featured_graph(10, 4, 3);
    let enc = encoder_for(&g, encoder_config(0.0), 3);
    let report = loss_pair(&enc, &g, &cfg(2, 1.0, LossVariant::Pair)).unwrap();
    let total: f64 = report.per_anchor_terms.iter().map(|t| t.1).sum();
    assert!((total - report.loss).abs() < 1e-12);
    assert_eq!(report.per_anchor_terms.len(), 10);
}

#[test]
fn equal_similarities_give_counting_values() {
    // anchor 0 of a 4-path with k = 2 has singleton hops 1, 2 and beyond
    let g = featured_path(4, 3, 5);
    let mut enc = encoder_for(&g, encoder_config(0.0), 5);
    constant_projection(&mut enc);
    let pair = loss_pair(&enc, &g, &cfg(2, 1.0, LossVariant::Pair)).unwrap();
    let at0 = pair.per_anchor_terms[0].1;
    assert!((at0 - 3.0 * 2f64.ln() / 2.0).abs() < 1e-9, "{at0}");

    let list = loss_list(&enc, &g, &cfg(2, 1.0, LossVariant::List)).unwrap();
    let at0 = list.per_anchor_terms[0].1;
    assert!((at0 - (3f64.ln() + 2f64.ln()) / 2.0).abs() < 1e-9, "{at0}");

    // k = 1 on a 3-path: singleton hop 1 against singleton beyond
    let g = featured_path(3, 3, 6);
    let mut enc = encoder_for(&g, encoder_config(0.0), 6);
    constant_projection(&mut enc);
    let list = loss_list(&enc, &g, &cfg(1, 1.0, LossVariant::List)).unwrap();
    assert!((list.per_anchor_terms[0].1 - 2f64.ln()).abs() < 1e-9);
}

#[test]
fn ratios_of_singletons() {
    let g = featured_path(4, 3, 8);
    let mut enc = encoder_for(&g, encoder_config(0.0), 8);
    constant_projection(&mut enc);
    let h = enc.forward(g.features().unwrap()).unwrap();
    let hops = hop_sets(&g, 0, 2, UnreachablePolicy::IncludeInBeyond);
    assert!((pairwise_ratio(&enc, &h, &hops, 1, 1).unwrap().unwrap() - 0.5).abs() < 1e-12);
    for n in 1..=2 {
        let r = listwise_ratio(&enc, &h, &hops, n).unwrap().unwrap();
        assert!((r - 1.0 / (2 - n + 2) as f64).abs() < 1e-12);
    }
    // hop 2 of the middle anchor of a 3-path is empty
    let g3 = featured_path(3, 3, 8);
    let enc3 = encoder_for(&g3, encoder_config(0.0), 8);
    let h3 = enc3.forward(g3.features().unwrap()).unwrap();
    let mid = hop_sets(&g3, 1, 2, UnreachablePolicy::IncludeInBeyond);
    assert_eq!(pairwise_ratio(&enc3, &h3, &mid, 1, 1).unwrap(), None);
    // only hop 1 is non-empty: the ratio is 1
    assert_eq!(listwise_ratio(&enc3, &h3, &mid, 1).unwrap(), Some(1.0));
}

#[test]
fn three_node_ratio_matches_enumeration() {
    let g = featured_path(3, 4, 9);
    let enc = encoder_for(&g, encoder_config(0.0), 9);
    let h = enc.forward(g.features().unwrap()).unwrap();
    let z = enc.project(&h).unwrap();
    let hops = hop_sets(&g, 0, 1, UnreachablePolicy::IncludeInBeyond);
    let tau = enc.hop_temperature(1);
    let e1 = (relgraph::encoder::cosine(z.row(0), z.row(1)) / tau).exp();
    let e2 = (relgraph::encoder::cosine(z.row(0), z.row(2)) / tau).exp();
    let r = pairwise_ratio(&enc, &h, &hops, 1, 1).unwrap().unwrap();
    assert!((r - e1 / (e1 + e2)).abs() < 1e-12);
}

#[test]
fn full_clamp_gives_constant_loss_and_zero_gradient() {
    let g = common::small_featured_graph(10, 4, 11);
    let enc = encoder_for(&g, encoder_config(0.0), 11);
    let ax = enc.propagate_features(g.features().unwrap()).unwrap();
    let anchors: Vec<usize> = (0..10).collect();
    for variant in [LossVariant::Pair, LossVariant::List] {
        let alpha = 1e-6;
        let c = cfg(2, alpha, variant);
        let index = HopIndex::build(&g, 2, UnreachablePolicy::IncludeInBeyond).unwrap();
        let plan = build_plan(&index, &anchors, &c, Temperatures::of(&enc), 0).unwrap();
        let (report, grads) = loss_and_grads(&enc, &ax, &plan).unwrap();
        assert_eq!(report.clamp_fraction, 1.0);
        let expected = report.terms as f64 * -alpha.ln() / 2.0;
        assert!((report.loss - expected).abs() < 1e-9 * expected);
        assert!(grads.iter().all(|gm| gm.data().iter().all(|&x| x == 0.0)));

        // with α = 1 nothing is clamped and gradients flow
        let open = build_plan(
            &index,
            &anchors,
            &cfg(2, 1.0, variant),
            Temperatures::of(&enc),
            0,
        )
        .unwrap();
        let (report, grads) = loss_and_grads(&enc, &ax, &open).unwrap();
        assert!(report.clamp_fraction < 1.0);
        assert!(grads.iter().any(|gm| gm.data().iter().any(|&x| x != 0.0)));
    }
}

#[test]
fn gradient_step_decreases_loss() {
    let g = common::small_featured_graph(14, 5, 21);
    for variant in [LossVariant::Pair, LossVariant::List] {
        let mut enc = encoder_for(&g, encoder_config(0.0), 21);
        let ax = enc.propagate_features(g.features().unwrap()).unwrap();
        let index = HopIndex::build(&g, 2, UnreachablePolicy::IncludeInBeyond).unwrap();
        let anchors: Vec<usize> = (0..14).collect();
        let plan = build_plan(
            &index,
            &anchors,
            &cfg(2, 1.0, variant),
            Temperatures::of(&enc),
            0,
        )
        .unwrap();
        let (before, grads) = loss_and_grads(&enc, &ax, &plan).unwrap();
        for (p, gm) in enc.params_mut().iter_mut().zip(&grads) {
            p.value.add_assign(&gm.scale(-1e-3));
        }
        let (after, _) = loss_and_grads(&enc, &ax, &plan).unwrap();
        assert!(
            after.loss < before.loss,
            "{variant:?}: {} -> {}",
            before.loss,
            after.loss
        );
    }
}

/// Uncached evaluation of one anchor's loss terms that only counts how often
/// a similarity is requested.
fn counted_evaluations(sizes: &[usize], listwise: bool) -> usize {
    let k = sizes.len() - 1;
    let mut calls = 0;
    let mut mass = |h: usize| calls += sizes[h - 1];
    for n in 1..=k {
        if sizes[n - 1] == 0 {
            continue;
        }
        if listwise {
            (n..=k + 1).for_each(&mut mass);
        } else {
            for m in 1..=k - n + 1 {
                if sizes[n + m - 1] > 0 {
                    mass(n);
                    mass(n + m);
                }
            }
        }
    }
    calls
}

#[test]
fn similarity_counts_on_layered_trees() {
    for (branching, pair_expected, list_expected) in [
        (vec![2, 2, 2], 28, 26),
        (vec![3, 3, 3], 2 * (3 + 9 + 27), 3 + 2 * 9 + 2 * 27),
        (vec![1, 1, 1], 6, 5),
    ] {
        let g = layered_tree(&branching);
        let x = Matrix::filled(g.num_nodes(), 2, 1.0);
        let g = g.with_features(x).unwrap();
        let enc = encoder_for(&g, encoder_config(0.0), 0);
        let hops = hop_sets(&g, 0, 2, UnreachablePolicy::IncludeInBeyond);
        let sizes = hops.sizes();
        let mut running = 1;
        let layered: Vec<usize> = branching
            .iter()
            .map(|b| {
                running *= b;
                running
            })
            .collect();
        assert_eq!(sizes, layered);
        let index = HopIndex::build(&g, 2, UnreachablePolicy::IncludeInBeyond).unwrap();
        for (variant, expected) in [
            (LossVariant::Pair, pair_expected),
            (LossVariant::List, list_expected),
        ] {
            let plan = build_plan(
                &index,
                &[0],
                &cfg(2, 1.0, variant),
                Temperatures::of(&enc),
                0,
            )
            .unwrap();
            let predicted = count_sim_ops(variant, &sizes).unwrap();
            let counted = counted_evaluations(&sizes, variant == LossVariant::List);
            assert_eq!(
                plan.sim_ops().uncached,
                predicted.uncached,
                "{branching:?} {variant:?}"
            );
            assert_eq!(counted, predicted.uncached);
            assert_eq!(predicted.uncached, expected);
            assert_eq!(plan.sim_ops().cached, sizes.iter().sum::<usize>());
        }
    }
}

#[test]
fn sampled_plans_are_capped_and_reproducible() {
    let g = common::small_featured_graph(15, 4, 31);
    let enc = encoder_for(&g, encoder_config(0.0), 31);
    let index = HopIndex::build(&g, 2, UnreachablePolicy::IncludeInBeyond).unwrap();
    let anchors: Vec<usize> = (0..15).collect();
    let c = LossConfig {
        beyond_sample: Some(2),
        seed: 4,
        ..cfg(2, 1.0, LossVariant::List)
    };
    let temps = Temperatures::of(&enc);
    let a = build_plan(&index, &anchors, &c, temps, 3).unwrap();
    let b = build_plan(&index, &anchors, &c, temps, 3).unwrap();
    assert!(a.sim_ops().cached <= 15 * 3 * 2);
    let ax = enc.propagate_features(g.features().unwrap()).unwrap();
    let la = loss_and_grads(&enc, &ax, &a).unwrap().0.loss;
    let lb = loss_and_grads(&enc, &ax, &b).unwrap().0.loss;
    assert_eq!(la.to_bits(), lb.to_bits());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn single_positive_in_equals_out(p in -1.0f64..1.0, negs in prop::collection::vec(-1.0f64..1.0, 0..6), tau in 0.05f64..2.0) {
        prop_assert_eq!(loss_in(&[p], &negs, tau).unwrap(), loss_out(&[p], &negs, tau).unwrap());
    }

    #[test]
    fn infonce_is_nonnegative(pos in prop::collection::vec(-1.0f64..1.0, 1..5), negs in prop::collection::vec(-1.0f64..1.0, 0..6), tau in 0.05f64..2.0) {
        prop_assert!(loss_in(&pos, &negs, tau).unwrap() >= 0.0);
        prop_assert!(loss_out(&pos, &negs, tau).unwrap() >= 0.0);
    }

    #[test]
    fn ratios_lie_in_unit_interval(seed in 0u64..1000, anchor in 0usize..9, n in 1usize..=2) {
        let g = common::small_featured_graph(9, 3, seed);
        let enc = encoder_for(&g, encoder_config(0.05), seed);
        let h = enc.forward(g.features().unwrap()).unwrap();
        let hops = hop_sets(&g, anchor, 2, UnreachablePolicy::IncludeInBeyond);
        if let Some(r) = listwise_ratio(&enc, &h, &hops, n).unwrap() {
            prop_assert!(r > 0.0 && r <= 1.0);
        }
        if let Some(r) = pairwise_ratio(&enc, &h, &hops, n, 1).unwrap() {
            prop_assert!(r > 0.0 && r < 1.0);
        }
    }
}

mod common;

use gnnexplain::classifier::{ClassifierArch, ClassifierModel};
use gnnexplain::datasets::{self, MUTAG_ATOMS};
use gnnexplain::explain::{explain, intermediate_reward, ExplainConfig, RolloutContext};
use gnnexplain::generator::GeneratorPolicy;
use gnnexplain::graph::{CandidateSet, FeatureSpec, LabeledGraph};
use gnnexplain::rules::{RuleSet, Validity};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mutag_model(seed: u64) -> ClassifierModel {
    let ds = datasets::mutag().unwrap();
    ClassifierModel::new(ClassifierArch::mutag(&ds), seed).unwrap()
}

fn acyclic_model(seed: u64) -> ClassifierModel {
    let ds = datasets::generate_is_acyclic(
        0,
        &datasets::IsAcyclicConfig {
            per_family: 1,
            ..Default::default()
        },
    )
    .unwrap();
    ClassifierModel::new(ClassifierArch::is_acyclic(&ds), seed).unwrap()
}

fn graph_strategy() -> impl Strategy<Value = (LabeledGraph, Vec<usize>)> {
    (2usize..9, any::<u64>()).prop_map(|(_, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = common::random_graph(&mut rng, 8, MUTAG_ATOMS.len());
        let mut perm: Vec<usize> = (0..g.node_count()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        (g, perm)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prediction_is_permutation_invariant((g, perm) in graph_strategy()) {
        let model = mutag_model(5);
        let a = model.predict(&g).unwrap();
        let b = model.predict(&g.permute(&perm).unwrap()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn two_disjoint_copies_pool_to_the_same_embedding((g, _) in graph_strategy()) {
        let model = mutag_model(6);
        let once = model.embedding(&g).unwrap();
        let twice = model.embedding(&g.disjoint_union(&g)).unwrap();
        for (x, y) in once.iter().zip(&twice) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn start_sampling_matches_policy_distribution() {
    let candidates = CandidateSet::new(MUTAG_ATOMS);
    let policy = GeneratorPolicy::new(FeatureSpec::one_hot(candidates.len()), 3);
    let g = LabeledGraph::from_edges(vec![0, 1, 2, 0], [(0, 1), (1, 2), (2, 3)]).unwrap();
    let p = policy.start_probabilities(&g, &candidates).unwrap();
    let mut counts = vec![0usize; p.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 10_000;
    for _ in 0..n {
        let (a, _) = policy.sample_action(&g, &candidates, &mut rng).unwrap();
        counts[a.start] += 1;
    }
    for (i, &pi) in p.iter().enumerate() {
        let sigma = (n as f64 * pi * (1.0 - pi)).sqrt();
        let diff = (counts[i] as f64 - n as f64 * pi).abs();
        assert!(
            diff <= 3.0 * sigma + 1e-9,
            "start {i}: {} vs expected {}",
            counts[i],
            n as f64 * pi
        );
        if i >= g.node_count() {
            assert_eq!(counts[i], 0);
        }
    }
}

#[test]
fn rollout_mean_is_the_mean_of_individual_rollouts() {
    let model = mutag_model(1);
    let candidates = model.arch.candidates.clone();
    let policy = GeneratorPolicy::new(model.arch.features, 4);
    let rules = RuleSet::new(8).unwrap();
    let ctx = RolloutContext {
        model: &model,
        policy: &policy,
        candidates: &candidates,
        rules: &rules,
        target_class: 1,
        max_steps: 12,
    };
    let g = LabeledGraph::from_edges(vec![0, 0, 2], [(0, 1), (1, 2)]).unwrap();
    let seeds: Vec<u64> = (0..10).map(|i| 1000 + i).collect();
    let values = ctx.rollouts(&g, &seeds).unwrap();
    assert_eq!(values.len(), 10);
    let mean = ctx.rollout_reward(&g, &seeds).unwrap();
    let recomputed = values.iter().sum::<f64>() / 10.0;
    assert!((mean - recomputed).abs() < 1e-12);
    for v in values {
        assert!((-0.5..=0.5).contains(&v));
    }
    assert_eq!(ctx.rollouts(&g, &seeds).unwrap(), ctx.rollouts(&g, &seeds).unwrap());
}

#[test]
fn rollout_from_a_full_graph_takes_no_steps() {
    let model = mutag_model(2);
    let candidates = model.arch.candidates.clone();
    let policy = GeneratorPolicy::new(model.arch.features, 4);
    let rules = RuleSet::new(3).unwrap();
    let ctx = RolloutContext {
        model: &model,
        policy: &policy,
        candidates: &candidates,
        rules: &rules,
        target_class: 0,
        max_steps: 30,
    };
    let g = LabeledGraph::from_edges(vec![0, 1, 2], [(0, 1), (1, 2)]).unwrap();
    let r = ctx.rollout_reward(&g, &[7]).unwrap();
    assert_eq!(r, intermediate_reward(&model, &g, 0).unwrap());
}

fn check_trace_contract(
    outcome: &gnnexplain::explain::ExplainOutcome,
    cfg: &ExplainConfig,
    rules: &RuleSet,
    classes: usize,
) {
    let bound = (1.0 + cfg.lambda1) * (1.0 - 1.0 / classes as f64) + cfg.lambda2;
    let mut previous = cfg.initial_graph.clone();
    assert_eq!(outcome.trace.len(), cfg.max_steps);
    for step in &outcome.trace {
        if let Some(r) = step.reward {
            assert_eq!(step.rolled_back, r.total < 0.0);
            if step.violation.is_none() {
                assert!(r.total.abs() <= bound + 1e-12);
            }
        }
        if step.rolled_back || !step.applied {
            assert_eq!(step.graph, previous);
        }
        assert_eq!(rules.audit(&step.graph), Validity::Valid);
        previous = step.graph.clone();
    }
    assert_eq!(outcome.graph, previous);
    assert!(outcome.graph.node_count() <= cfg.max_nodes);
}

#[test]
fn explain_honours_the_rollback_contract() {
    for seed in 0..4 {
        let model = acyclic_model(seed);
        let mut cfg = ExplainConfig::is_acyclic(seed as usize % 2, 4, seed);
        cfg.max_steps = 15;
        cfg.rollouts = 3;
        let out = explain(&model, &cfg).unwrap();
        check_trace_contract(&out, &cfg, &cfg.rule_set(&model.arch.candidates).unwrap(), 2);

        let model = mutag_model(seed);
        let mut cfg = ExplainConfig::mutag(1, 6, seed);
        cfg.max_steps = 15;
        cfg.rollouts = 3;
        let out = explain(&model, &cfg).unwrap();
        let rules = cfg.rule_set(&model.arch.candidates).unwrap();
        check_trace_contract(&out, &cfg, &rules, 2);
        for step in &out.trace {
            if step.violation.is_some() {
                assert_eq!(step.reward.unwrap().total, -1.0);
            }
        }
    }
}

#[test]
fn explain_is_deterministic() {
    let model = mutag_model(8);
    let mut cfg = ExplainConfig::mutag(1, 5, 21);
    cfg.max_steps = 10;
    cfg.rollouts = 4;
    let trace = |cfg: &ExplainConfig| {
        let mut buf = Vec::new();
        explain(&model, cfg).unwrap().write_trace(&mut buf).unwrap();
        buf
    };
    let a = trace(&cfg);
    assert_eq!(a, trace(&cfg));
    assert_eq!(a.iter().filter(|&&b| b == b'\n').count(), 10);
    cfg.seed = 22;
    assert_ne!(a, trace(&cfg));
}

#[test]
fn explain_rejects_bad_configs() {
    let model = mutag_model(0);
    let mut cfg = ExplainConfig::mutag(2, 5, 0);
    assert!(explain(&model, &cfg).is_err());
    cfg.target_class = 1;
    // F-F-F puts the middle fluorine over its valency.
    cfg.initial_graph = LabeledGraph::from_edges(vec![3, 3, 3], [(0, 1), (1, 2)]).unwrap();
    assert!(explain(&model, &cfg).is_err());
}

#[test]
fn policy_sign_property_holds_on_random_states() {
    let (agree, total) = common::sign_property(5, 40);
    assert!(agree as f64 >= 0.99 * total as f64, "{agree}/{total}");
}

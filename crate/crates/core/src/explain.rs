//! Training the generator against a fixed classifier.
//!
//! Each step samples an edge addition, scores the resulting graph with the
//! classifier (directly and through `m` rollouts of the frozen policy),
//! adds the rule term, takes one policy-gradient step, and keeps the new
//! graph only when the total reward is non-negative.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamConfig};
use crate::classifier::ClassifierModel;
use crate::datasets::{IS_ACYCLIC, MUTAG};
use crate::error::{Error, Result};
use crate::generator::{apply_action, Action, GeneratorPolicy};
use crate::graph::{CandidateSet, LabeledGraph};
use crate::nn::Parameterized;
use crate::rules::{default_mutag_valency, RuleSet, Validity, Violation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidRewardMode {
    /// `R = R_f + λ1·rollout + λ2·(-1)` on a violation.
    RuleComponent,
    /// `R = -1` on a violation.
    TotalOverride,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainConfig {
    pub target_class: usize,
    pub max_steps: usize,
    pub max_nodes: usize,
    pub rollouts: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub invalid_reward_mode: InvalidRewardMode,
    pub initial_graph: LabeledGraph,
    pub learning_rate: f64,
    pub seed: u64,
    /// Valency limits by type name, if any.
    #[serde(default)]
    pub valency: Option<BTreeMap<String, usize>>,
}

pub const DEFAULT_STEPS: usize = 30;
pub const DEFAULT_ROLLOUTS: usize = 10;

impl ExplainConfig {
    /// λ1 = 1, λ2 = 1, rule reward as a component, one generic starting node.
    pub fn is_acyclic(target_class: usize, max_nodes: usize, seed: u64) -> Self {
        Self {
            target_class,
            max_steps: DEFAULT_STEPS,
            max_nodes,
            rollouts: DEFAULT_ROLLOUTS,
            lambda1: 1.0,
            lambda2: 1.0,
            invalid_reward_mode: InvalidRewardMode::RuleComponent,
            initial_graph: LabeledGraph::single(0),
            learning_rate: 0.01,
            seed,
            valency: None,
        }
    }

    /// λ1 = 1, λ2 = 2, total reward -1 on violations, valency table, a single
    /// carbon as the initial graph.
    pub fn mutag(target_class: usize, max_nodes: usize, seed: u64) -> Self {
        Self {
            lambda2: 2.0,
            invalid_reward_mode: InvalidRewardMode::TotalOverride,
            valency: Some(default_mutag_valency()),
            ..Self::is_acyclic(target_class, max_nodes, seed)
        }
    }

    /// Defaults for the dataset a model was trained on.
    pub fn for_dataset(dataset: &str, target_class: usize, max_nodes: usize, seed: u64) -> Result<Self> {
        match dataset {
            IS_ACYCLIC => Ok(Self::is_acyclic(target_class, max_nodes, seed)),
            MUTAG => Ok(Self::mutag(target_class, max_nodes, seed)),
            other => Err(Error::Config(format!("no explain defaults for dataset {other:?}"))),
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.target_class >= classes {
            return fail(format!(
                "target class {} but model has {classes} classes",
                self.target_class
            ));
        }
        if self.rollouts < 1 {
            return fail("rollouts must be >= 1".into());
        }
        if self.max_steps < 1 {
            return fail("max_steps must be >= 1".into());
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || !self.lambda1.is_finite() || !self.lambda2.is_finite() {
            return fail("lambda1 and lambda2 must be finite and >= 0".into());
        }
        if self.initial_graph.is_empty() {
            return Err(Error::EmptyGraph);
        }
        if self.initial_graph.node_count() > self.max_nodes {
            return fail("initial graph exceeds max_nodes".into());
        }
        Ok(())
    }

    pub fn rule_set(&self, candidates: &CandidateSet) -> Result<RuleSet> {
        let rules = RuleSet::new(self.max_nodes)?;
        match &self.valency {
            Some(table) => rules.with_valency(table, candidates),
            None => Ok(rules),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub intermediate: f64,
    pub rollout_mean: f64,
    pub rule: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    /// `None` when no legal action existed and the step was skipped.
    pub action: Option<Action>,
    pub violation: Option<Violation>,
    pub reward: Option<RewardBreakdown>,
    pub rolled_back: bool,
    /// Whether the action's graph was kept. Invalid actions are never kept.
    pub applied: bool,
    /// Target-class probability of the retained graph.
    pub probability: f64,
    /// Retained graph after this step.
    pub graph: LabeledGraph,
}

/// Target-class probability minus chance level `1/ℓ`.
pub fn intermediate_reward(model: &ClassifierModel, g: &LabeledGraph, target_class: usize) -> Result<f64> {
    Ok(model.class_probability(g, target_class)? - 1.0 / model.classes() as f64)
}

/// Combines the reward terms. The rule term is `-1` on a violation, `0`
/// otherwise.
pub fn step_reward(
    intermediate: f64,
    rollout_mean: f64,
    violation: Option<Violation>,
    config: &ExplainConfig,
) -> RewardBreakdown {
    let rule = if violation.is_some() { -1.0 } else { 0.0 };
    let total = match (config.invalid_reward_mode, violation) {
        (InvalidRewardMode::TotalOverride, Some(_)) => -1.0,
        _ => intermediate + config.lambda1 * rollout_mean + config.lambda2 * rule,
    };
    RewardBreakdown {
        intermediate,
        rollout_mean,
        rule,
        total,
    }
}

/// Everything a rollout reads; shared immutably across rollout threads.
pub struct RolloutContext<'a> {
    pub model: &'a ClassifierModel,
    pub policy: &'a GeneratorPolicy,
    pub candidates: &'a CandidateSet,
    pub rules: &'a RuleSet,
    pub target_class: usize,
    pub max_steps: usize,
}

impl RolloutContext<'_> {
    /// Completes `g` with the frozen policy until the node budget is reached,
    /// `max_steps` actions have been drawn, or no action is legal. Invalid
    /// actions are dropped but still use up a step. Returns the
    /// intermediate reward of the completed graph.
    pub fn rollout<R: Rng + ?Sized>(&self, g: &LabeledGraph, rng: &mut R) -> Result<f64> {
        let mut current = g.clone();
        for _ in 0..self.max_steps {
            if current.node_count() >= self.rules.max_nodes {
                break;
            }
            let action = match self.policy.sample_action(&current, self.candidates, rng) {
                Ok((a, _)) => a,
                Err(Error::NoLegalAction) => break,
                Err(e) => return Err(e),
            };
            if self.rules.check(&current, &action).is_valid() {
                current = apply_action(&current, &action)?;
            }
        }
        intermediate_reward(self.model, &current, self.target_class)
    }

    /// Runs one rollout per seed (in parallel) and returns the individual
    /// rewards in seed order.
    pub fn rollouts(&self, g: &LabeledGraph, seeds: &[u64]) -> Result<Vec<f64>> {
        seeds
            .par_iter()
            .map(|&s| self.rollout(g, &mut ChaCha8Rng::seed_from_u64(s)))
            .collect()
    }

    pub fn rollout_reward(&self, g: &LabeledGraph, seeds: &[u64]) -> Result<f64> {
        let values = self.rollouts(g, seeds)?;
        Ok(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// One Adam step on the policy-gradient loss for `action` taken at `g`.
pub fn policy_update(
    policy: &mut GeneratorPolicy,
    adam: &mut Adam,
    g: &LabeledGraph,
    candidates: &CandidateSet,
    action: &Action,
    reward: f64,
) -> Result<()> {
    let (_, grads) = policy.loss_and_grads(g, candidates, action, reward)?;
    adam.step(&mut policy.parameters_mut(), &grads)
}

#[derive(Clone, Debug)]
pub struct ExplainOutcome {
    pub graph: LabeledGraph,
    pub probability: f64,
    pub trace: Vec<StepTrace>,
    pub policy: GeneratorPolicy,
}

impl ExplainOutcome {
    /// Writes one JSON object per step.
    pub fn write_trace<W: Write>(&self, mut w: W) -> Result<()> {
        for entry in &self.trace {
            serde_json::to_writer(&mut w, entry)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Retained graph with the highest target probability (earliest on ties).
    pub fn best_snapshot(&self) -> (&LabeledGraph, f64) {
        self.trace
            .iter()
            .map(|s| (&s.graph, s.probability))
            .fold(
                (&self.graph, self.probability),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            )
    }
}

/// Trains a fresh generator for `config.max_steps` steps and returns the
/// final graph with the full step trace.
pub fn explain(model: &ClassifierModel, config: &ExplainConfig) -> Result<ExplainOutcome> {
    config.validate(model.classes())?;
    let candidates = model.arch.candidates.clone();
    let rules = config.rule_set(&candidates)?;
    if let Validity::Invalid(v) = rules.audit(&config.initial_graph) {
        return Err(Error::Config(format!("initial graph breaks a rule: {v}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policy = GeneratorPolicy::new(model.arch.features, rng.gen());
    let mut adam = Adam::new(
        AdamConfig::with_learning_rate(config.learning_rate),
        &policy.parameters(),
    );

    let mut graph = config.initial_graph.clone();
    let mut probability = model.class_probability(&graph, config.target_class)?;
    let mut trace = Vec::with_capacity(config.max_steps);

    for step in 0..config.max_steps {
        let action = match policy.sample_action(&graph, &candidates, &mut rng) {
            Ok((a, _)) => a,
            Err(Error::NoLegalAction) => {
                trace.push(StepTrace {
                    step,
                    action: None,
                    violation: None,
                    reward: None,
                    rolled_back: false,
                    applied: false,
                    probability,
                    graph: graph.clone(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };

        let violation = rules.check(&graph, &action).violation();
        // A duplicate edge leaves the edge set unchanged.
        let next = match violation {
            Some(Violation::DuplicateEdge) => graph.clone(),
            _ => apply_action(&graph, &action)?,
        };
        let seeds: Vec<u64> = (0..config.rollouts).map(|_| rng.gen()).collect();

        let (intermediate, rollout_mean, next_probability) =
            if violation.is_some() && config.invalid_reward_mode == InvalidRewardMode::TotalOverride {
                (0.0, 0.0, None)
            } else {
                let p = model.class_probability(&next, config.target_class)?;
                let ctx = RolloutContext {
                    model,
                    policy: &policy,
                    candidates: &candidates,
                    rules: &rules,
                    target_class: config.target_class,
                    max_steps: config.max_steps,
                };
                let mean = ctx.rollout_reward(&next, &seeds)?;
                (p - 1.0 / model.classes() as f64, mean, Some(p))
            };
        let reward = step_reward(intermediate, rollout_mean, violation, config);

        policy_update(&mut policy, &mut adam, &graph, &candidates, &action, reward.total)?;

        let rolled_back = reward.total < 0.0;
        let applied = !rolled_back && violation.is_none();
        if applied {
            graph = next;
            probability = next_probability.expect("valid steps are evaluated");
        }
        trace.push(StepTrace {
            step,
            action: Some(action),
            violation,
            reward: Some(reward),
            rolled_back,
            applied,
            probability,
            graph: graph.clone(),
        });
    }

    Ok(ExplainOutcome {
        graph,
        probability,
        trace,
        policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{ClassifierArch, ClassifierModel};
    use crate::datasets;

    #[test]
    fn intermediate_reward_arithmetic() {
        // p - 1/ℓ
        assert!(((0.7544 - 1.0 / 2.0) - 0.2544f64).abs() < 1e-12);
        let ds = datasets::mutag().unwrap();
        let model = ClassifierModel::new(ClassifierArch::mutag(&ds), 1).unwrap();
        let g = LabeledGraph::single(0);
        let p = model.class_probability(&g, 1).unwrap();
        let r = intermediate_reward(&model, &g, 1).unwrap();
        assert_eq!(r, p - 0.5);
        assert!((-0.5..=0.5).contains(&r));
    }

    #[test]
    fn step_reward_cases() {
        let cfg = ExplainConfig::is_acyclic(0, 5, 0);
        let r = step_reward(0.2, 0.1, None, &cfg);
        assert!((r.total - 0.3).abs() < 1e-12);
        assert_eq!(r.rule, 0.0);

        let r = step_reward(0.4, 0.4, Some(Violation::NodeBudget), &cfg);
        assert!((r.total - -0.2).abs() < 1e-12);
        assert_eq!(r.rule, -1.0);

        let cfg = ExplainConfig::mutag(1, 5, 0);
        let r = step_reward(0.45, 0.45, Some(Violation::Valency), &cfg);
        assert_eq!(r.total, -1.0);
        let r = step_reward(0.2, 0.1, None, &cfg);
        assert!((r.total - 0.3).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExplainConfig::is_acyclic(0, 5, 0);
        assert!(cfg.validate(2).is_ok());
        assert!(cfg.validate(0).is_err());
        cfg.rollouts = 0;
        assert!(cfg.validate(2).is_err());
        let mut cfg = ExplainConfig::is_acyclic(0, 5, 0);
        cfg.lambda2 = -1.0;
        assert!(cfg.validate(2).is_err());
        let mut cfg = ExplainConfig::is_acyclic(0, 5, 0);
        cfg.initial_graph = LabeledGraph::default();
        assert!(matches!(cfg.validate(2), Err(Error::EmptyGraph)));
        let json = serde_json::to_string(&ExplainConfig::mutag(1, 5, 3)).unwrap();
        let back: ExplainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ExplainConfig::mutag(1, 5, 3));
    }
}

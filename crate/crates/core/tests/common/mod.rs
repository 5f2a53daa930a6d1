//! Finite-difference gradient oracle shared by the gradient tests and the
//! acceptance suite.
#![allow(dead_code)]

use gnnexplain::classifier::{ClassifierArch, ClassifierModel, GraphInput};
use gnnexplain::datasets;
use gnnexplain::generator::GeneratorPolicy;
use gnnexplain::graph::{CandidateSet, FeatureSpec, LabeledGraph};
use gnnexplain::nn::{Bound, GcnLayer, Linear, Parameterized};
use gnnexplain::tape::{Activation, Tape, Var};
use gnnexplain::tensor::Tensor;
use gnnexplain::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOL: f64 = 1e-4;
const H: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_err: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRAD_TOL
    }
}

/// `‖a − n‖ / (‖a‖ + ‖n‖)`, zero when both are negligible.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    if scale < 1e-10 {
        0.0
    } else {
        diff / scale
    }
}

/// Random values in [-2, 2] kept away from the kinks at 0 and 6.
pub fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..2.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Checks a tape computation against central differences. The output is
/// contracted with a fixed random tensor so every output entry contributes.
pub fn check_op<F>(name: &str, inputs: Vec<Tensor>, rng: &mut ChaCha8Rng, build: F) -> GradCheck
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let run = |inputs: &[Tensor]| -> (Tape, Vec<Var>, Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars).expect("op builds");
        (tape, vars, out)
    };
    let (tape, vars, out) = run(&inputs);
    let shape = tape.value(out).shape();
    let weights = rand_tensor(rng, shape.0, shape.1);
    let objective = |inputs: &[Tensor]| -> f64 {
        let (tape, _, out) = run(inputs);
        tape.value(out)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum()
    };
    let grads = tape.backward_with([(out, weights.clone())]);

    let mut worst: f64 = 0.0;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, inputs[k].shape());
        let mut numeric = vec![0.0; inputs[k].len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= H;
            *slot = (objective(&plus) - objective(&minus)) / (2.0 * H);
        }
        worst = worst.max(rel_err(analytic.data(), &numeric));
    }
    GradCheck {
        name: name.to_string(),
        max_rel_err: worst,
    }
}

/// Numeric gradient of `loss` with respect to every parameter of `model`.
fn numeric_param_grads<M: Parameterized + Clone>(model: &M, loss: impl Fn(&M) -> f64) -> Vec<Vec<f64>> {
    let shapes: Vec<usize> = model.parameters().iter().map(|t| t.len()).collect();
    shapes
        .iter()
        .enumerate()
        .map(|(k, &len)| {
            (0..len)
                .map(|i| {
                    let mut plus = model.clone();
                    plus.parameters_mut()[k].data_mut()[i] += H;
                    let mut minus = model.clone();
                    minus.parameters_mut()[k].data_mut()[i] -= H;
                    (loss(&plus) - loss(&minus)) / (2.0 * H)
                })
                .collect()
        })
        .collect()
}

fn compare_params(name: &str, analytic: &[Tensor], numeric: &[Vec<f64>]) -> GradCheck {
    let worst = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| rel_err(a.data(), n))
        .fold(0.0, f64::max);
    GradCheck {
        name: name.to_string(),
        max_rel_err: worst,
    }
}

/// One check per differentiable tape operation and per layer type.
pub fn op_checks(seed: u64) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut out = Vec::new();
    macro_rules! check {
        ($name:expr, [$(($r:expr, $c:expr)),*], $build:expr) => {{
            let inputs = vec![$(rand_tensor(r, $r, $c)),*];
            let mut sub = ChaCha8Rng::seed_from_u64(r.gen());
            out.push(check_op($name, inputs, &mut sub, $build));
        }};
    }
    check!("matmul", [(3, 4), (4, 2)], |t, v| t.matmul(v[0], v[1]));
    check!("add", [(3, 4), (3, 4)], |t, v| t.add(v[0], v[1]));
    check!("add_row", [(3, 4), (1, 4)], |t, v| t.add_row(v[0], v[1]));
    for act in [
        Activation::Sigmoid,
        Activation::Relu,
        Activation::Relu6,
        Activation::Identity,
    ] {
        check!(&format!("activation_{act:?}").to_lowercase(), [(3, 4)], move |t, v| Ok(
            t.activation(v[0], act)
        ));
    }
    // Shift a few entries above 6 so the upper ReLU6 kink is exercised.
    {
        let mut x = rand_tensor(r, 2, 3);
        x.data_mut()[0] = 7.5;
        x.data_mut()[4] = 6.4;
        let mut sub = ChaCha8Rng::seed_from_u64(r.gen());
        out.push(check_op("activation_relu6_saturated", vec![x], &mut sub, |t, v| {
            Ok(t.activation(v[0], Activation::Relu6))
        }));
    }
    check!("softmax_rows", [(3, 5)], |t, v| Ok(t.softmax_rows(v[0])));
    check!("masked_softmax", [(1, 6)], |t, v| t
        .masked_softmax(v[0], &[true, false, true, true, false, true]));
    check!("mean_pool_rows", [(5, 3)], |t, v| t.mean_pool_rows(v[0]));
    check!("transpose", [(3, 4)], |t, v| Ok(t.transpose(v[0])));
    check!("select_row", [(4, 3)], |t, v| t.select_row(v[0], 2));
    check!("concat_cols", [(3, 2), (3, 4)], |t, v| t.concat_cols(v[0], v[1]));
    check!("repeat_rows", [(1, 3)], |t, v| t.repeat_rows(v[0], 4));
    check!("cross_entropy", [(1, 4)], |t, v| {
        let p = t.softmax_rows(v[0]);
        t.cross_entropy(p, 1)
    });
    check!("scale", [(2, 3)], |t, v| Ok(t.scale(v[0], -1.7)));
    check!("sum", [(2, 3)], |t, v| Ok(t.sum(v[0])));

    let g = LabeledGraph::from_edges(vec![0; 5], [(0, 1), (1, 2), (2, 3), (3, 0), (3, 4)]).unwrap();
    let adj = g.normalized_adjacency();
    for act in [Activation::Sigmoid, Activation::Relu6] {
        let layer = GcnLayer::new(3, 4, act, r);
        let x = rand_tensor(r, 5, 3);
        let mut inputs = vec![x];
        inputs.extend(layer.parameters().into_iter().cloned());
        let adj = adj.clone();
        let mut sub = ChaCha8Rng::seed_from_u64(r.gen());
        out.push(check_op(
            &format!("gcn_layer_{act:?}").to_lowercase(),
            inputs,
            &mut sub,
            move |t, v| {
                let a = t.leaf(adj.clone());
                layer.forward(t, &mut Bound::new(&v[1..]), a, v[0])
            },
        ));
    }
    {
        let lin = Linear::new(3, 2, true, r);
        let x = rand_tensor(r, 4, 3);
        let mut inputs = vec![x];
        inputs.extend(lin.parameters().into_iter().cloned());
        let mut sub = ChaCha8Rng::seed_from_u64(r.gen());
        out.push(check_op("linear", inputs, &mut sub, move |t, v| {
            lin.forward(t, &mut Bound::new(&v[1..]), v[0])
        }));
    }
    out
}

/// Classifier cross-entropy on a three-graph micro-batch, for both
/// architectures.
pub fn classifier_checks(seed: u64) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mutag = datasets::mutag().unwrap();
    let acyclic_ds = datasets::generate_is_acyclic(
        seed,
        &datasets::IsAcyclicConfig {
            per_family: 1,
            ..Default::default()
        },
    )
    .unwrap();
    let mut out = Vec::new();
    for (name, arch, ds) in [
        ("classifier_mutag", ClassifierArch::mutag(&mutag), &mutag),
        (
            "classifier_is_acyclic",
            ClassifierArch::is_acyclic(&acyclic_ds),
            &acyclic_ds,
        ),
    ] {
        let model = ClassifierModel::new(arch.clone(), rng.gen()).unwrap();
        let batch: Vec<(GraphInput, usize)> = (0..3)
            .map(|_| {
                let i = rng.gen_range(0..ds.graphs.len());
                (GraphInput::new(&ds.graphs[i], &arch.features).unwrap(), ds.labels[i])
            })
            .collect();
        let (_, analytic, _) = model.loss_and_grads(&batch).unwrap();
        let numeric = numeric_param_grads(&model, |m| m.loss_and_grads(&batch).unwrap().0);
        out.push(compare_params(name, &analytic, &numeric));
    }
    out
}

/// Generator policy-gradient loss at a random state and action.
pub fn generator_check(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates = CandidateSet::new(datasets::MUTAG_ATOMS);
    let spec = FeatureSpec::one_hot(candidates.len());
    let policy = GeneratorPolicy::new(spec, rng.gen());
    let g = random_graph(&mut rng, 5, candidates.len());
    let (action, _) = policy.sample_action(&g, &candidates, &mut rng).unwrap();
    let reward: f64 = rng.gen_range(-1.0..1.0);
    let (_, analytic) = policy.loss_and_grads(&g, &candidates, &action, reward).unwrap();
    let numeric = numeric_param_grads(&policy, |p| {
        p.loss_and_grads(&g, &candidates, &action, reward).unwrap().0
    });
    compare_params("generator_policy_loss", &analytic, &numeric)
}

/// Random connected graph with `2..=max_nodes` nodes.
pub fn random_graph(rng: &mut ChaCha8Rng, max_nodes: usize, types: usize) -> LabeledGraph {
    let n = rng.gen_range(2..=max_nodes);
    let node_types: Vec<usize> = (0..n).map(|_| rng.gen_range(0..types)).collect();
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    for _ in 0..rng.gen_range(0..n) {
        let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if u != v {
            edges.push((u, v));
        }
    }
    LabeledGraph::from_edges(node_types, edges).unwrap()
}

pub fn all_gradient_checks(seed: u64) -> Vec<GradCheck> {
    let mut checks = op_checks(seed);
    checks.extend(classifier_checks(seed));
    checks.push(generator_check(seed));
    checks
}

/// Single-step updates at random states: counts how often the taken
/// action's joint probability moves in the direction of the reward's sign.
pub fn sign_property(seed: u64, cases: usize) -> (usize, usize) {
    use gnnexplain::adam::{Adam, AdamConfig};
    use gnnexplain::explain::policy_update;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates = CandidateSet::new(datasets::MUTAG_ATOMS);
    let spec = FeatureSpec::one_hot(candidates.len());
    let mut agree = 0;
    for _ in 0..cases {
        let mut policy = GeneratorPolicy::new(spec, rng.gen());
        let g = random_graph(&mut rng, 8, candidates.len());
        let (action, _) = policy.sample_action(&g, &candidates, &mut rng).unwrap();
        let magnitude: f64 = rng.gen_range(0.05..1.0);
        let reward = if rng.gen_bool(0.5) { magnitude } else { -magnitude };
        let before = policy.action_probability(&g, &candidates, &action).unwrap();
        let mut adam = Adam::new(AdamConfig::with_learning_rate(0.01), &policy.parameters());
        policy_update(&mut policy, &mut adam, &g, &candidates, &action, reward).unwrap();
        let after = policy.action_probability(&g, &candidates, &action).unwrap();
        if (after - before) * reward > 0.0 {
            agree += 1;
        }
    }
    (agree, cases)
}

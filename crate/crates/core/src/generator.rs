//! The graph generator policy.
//!
//! For a partial graph with `n` nodes and a candidate set of `k` node types,
//! the candidates are appended as `k` isolated nodes. A linear projection
//! and three graph convolutions embed all `n + k` nodes; one MLP scores each
//! node as the starting node (candidates masked out), and a second MLP scores
//! each node as the ending node given the chosen start's embedding (the start
//! itself masked out). An ending node inside the candidate block means
//! "append a node of that type".

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::GraphInput;
use crate::error::{Error, Result};
use crate::graph::{CandidateSet, FeatureSpec, LabeledGraph};
use crate::nn::{bind, collect_grads, Bound, GcnLayer, Linear, Parameterized};
use crate::tape::{Activation, Tape, Var};
use crate::tensor::Tensor;
use crate::weights;

pub const PROJECTION_DIM: usize = 8;
pub const GCN_DIMS: [usize; 3] = [16, 24, 32];
pub const START_HIDDEN: usize = 16;
pub const END_HIDDEN: usize = 24;

/// One edge addition. `end` indexes the merged node list: values below the
/// current node count are existing nodes, the rest are candidates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub start: usize,
    pub end: usize,
    pub start_prob: f64,
    pub end_prob: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionTarget {
    Existing(usize),
    /// Append a node of this type id.
    NewNode(usize),
}

impl Action {
    pub fn target(&self, node_count: usize) -> ActionTarget {
        if self.end < node_count {
            ActionTarget::Existing(self.end)
        } else {
            ActionTarget::NewNode(self.end - node_count)
        }
    }

    pub fn joint_prob(&self) -> f64 {
        self.start_prob * self.end_prob
    }
}

/// Masked, renormalized start and end distributions for one state.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub p_start: Vec<f64>,
    pub p_end: Vec<f64>,
    pub start_mask: Vec<bool>,
    pub end_mask: Vec<bool>,
}

/// Merges `candidates` into `g` as isolated nodes and returns features and
/// normalized adjacency for all `n + k` nodes.
pub fn assemble_input(g: &LabeledGraph, candidates: &CandidateSet, spec: &FeatureSpec) -> Result<GraphInput> {
    let isolated = LabeledGraph::with_nodes(candidates.ids().collect());
    GraphInput::new(&g.disjoint_union(&isolated), spec)
}

pub fn apply_action(g: &LabeledGraph, action: &Action) -> Result<LabeledGraph> {
    match action.target(g.node_count()) {
        ActionTarget::Existing(end) => g.add_edge(action.start, end),
        ActionTarget::NewNode(t) => g.add_node_with_edge(action.start, t),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorMeta {
    features: FeatureSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorPolicy {
    pub features: FeatureSpec,
    pub projection: Linear,
    pub gcn_layers: Vec<GcnLayer>,
    pub start_head: [Linear; 2],
    pub end_head: [Linear; 2],
}

impl GeneratorPolicy {
    pub fn new(features: FeatureSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = Linear::new(features.dim, PROJECTION_DIM, true, &mut rng);
        let mut width = PROJECTION_DIM;
        let gcn_layers = GCN_DIMS
            .iter()
            .map(|&d| {
                let layer = GcnLayer::new(width, d, Activation::Relu6, &mut rng);
                width = d;
                layer
            })
            .collect();
        let start_head = [
            Linear::new(width, START_HIDDEN, true, &mut rng),
            Linear::new(START_HIDDEN, 1, true, &mut rng),
        ];
        let end_head = [
            Linear::new(2 * width, END_HIDDEN, true, &mut rng),
            Linear::new(END_HIDDEN, 1, true, &mut rng),
        ];
        Self {
            features,
            projection,
            gcn_layers,
            start_head,
            end_head,
        }
    }

    /// Number of parameter tensors used before the end head.
    fn start_param_count(&self) -> usize {
        self.projection.parameters().len()
            + self.gcn_layers.len()
            + self.start_head.iter().map(|l| l.parameters().len()).sum::<usize>()
    }

    /// Node embeddings and the masked start distribution (`1 × (n+k)`).
    fn start_pass(&self, tape: &mut Tape, params: &[Var], input: &GraphInput, n: usize) -> Result<(Var, Var)> {
        let mut bound = Bound::new(&params[..self.start_param_count()]);
        let adjacency = tape.leaf(input.adjacency.clone());
        let x = tape.leaf(input.features.clone());
        let mut h = self.projection.forward(tape, &mut bound, x)?;
        for layer in &self.gcn_layers {
            h = layer.forward(tape, &mut bound, adjacency, h)?;
        }
        let hidden = self.start_head[0].forward(tape, &mut bound, h)?;
        let hidden = tape.activation(hidden, Activation::Relu6);
        let logits = self.start_head[1].forward(tape, &mut bound, hidden)?;
        let logits = tape.transpose(logits);
        let total = input.features.rows();
        let mask: Vec<bool> = (0..total).map(|i| i < n).collect();
        let p_start = tape.masked_softmax(logits, &mask)?;
        Ok((h, p_start))
    }

    /// Masked end distribution conditioned on `start`.
    fn end_pass(&self, tape: &mut Tape, params: &[Var], embedding: Var, start: usize) -> Result<Var> {
        let mut bound = Bound::new(&params[self.start_param_count()..]);
        let total = tape.value(embedding).rows();
        let chosen = tape.select_row(embedding, start)?;
        let broadcast = tape.repeat_rows(chosen, total)?;
        let joined = tape.concat_cols(embedding, broadcast)?;
        let hidden = self.end_head[0].forward(tape, &mut bound, joined)?;
        let hidden = tape.activation(hidden, Activation::Relu6);
        let logits = self.end_head[1].forward(tape, &mut bound, hidden)?;
        let logits = tape.transpose(logits);
        let mask: Vec<bool> = (0..total).map(|i| i != start).collect();
        tape.masked_softmax(logits, &mask)
    }

    fn prepare(&self, g: &LabeledGraph, candidates: &CandidateSet) -> Result<GraphInput> {
        if g.is_empty() {
            return Err(Error::EmptyGraph);
        }
        assemble_input(g, candidates, &self.features)
    }

    /// Masked start distribution over the `n + k` merged nodes.
    pub fn start_probabilities(&self, g: &LabeledGraph, candidates: &CandidateSet) -> Result<Vec<f64>> {
        let input = self.prepare(g, candidates)?;
        let mut tape = Tape::new();
        let params = bind(&mut tape, self);
        let (_, p_start) = self.start_pass(&mut tape, &params, &input, g.node_count())?;
        Ok(tape.value(p_start).data().to_vec())
    }

    /// Both distributions, the end one conditioned on `start`.
    pub fn policy_forward(&self, g: &LabeledGraph, candidates: &CandidateSet, start: usize) -> Result<PolicyOutput> {
        let input = self.prepare(g, candidates)?;
        let n = g.node_count();
        if start >= n {
            return Err(Error::Index { index: start, len: n });
        }
        let mut tape = Tape::new();
        let params = bind(&mut tape, self);
        let (embedding, p_start) = self.start_pass(&mut tape, &params, &input, n)?;
        let p_end = self.end_pass(&mut tape, &params, embedding, start)?;
        let total = input.features.rows();
        Ok(PolicyOutput {
            p_start: tape.value(p_start).data().to_vec(),
            p_end: tape.value(p_end).data().to_vec(),
            start_mask: (0..total).map(|i| i < n).collect(),
            end_mask: (0..total).map(|i| i != start).collect(),
        })
    }

    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        g: &LabeledGraph,
        candidates: &CandidateSet,
        rng: &mut R,
    ) -> Result<(Action, PolicyOutput)> {
        let input = self.prepare(g, candidates)?;
        let n = g.node_count();
        let total = input.features.rows();
        let mut tape = Tape::new();
        let params = bind(&mut tape, self);
        let (embedding, p_start) = self.start_pass(&mut tape, &params, &input, n)?;
        let p_start = tape.value(p_start).data().to_vec();
        let start = sample(&p_start, rng)?;
        let p_end = self.end_pass(&mut tape, &params, embedding, start)?;
        let p_end = tape.value(p_end).data().to_vec();
        let end = sample(&p_end, rng)?;
        let action = Action {
            start,
            end,
            start_prob: p_start[start],
            end_prob: p_end[end],
        };
        let output = PolicyOutput {
            p_start,
            p_end,
            start_mask: (0..total).map(|i| i < n).collect(),
            end_mask: (0..total).map(|i| i != start).collect(),
        };
        Ok((action, output))
    }

    /// Probability of taking `action` from `g`: `p_start[start] · p_end[end]`.
    pub fn action_probability(&self, g: &LabeledGraph, candidates: &CandidateSet, action: &Action) -> Result<f64> {
        let out = self.policy_forward(g, candidates, action.start)?;
        let p_end = *out.p_end.get(action.end).ok_or(Error::Index {
            index: action.end,
            len: out.p_end.len(),
        })?;
        Ok(out.p_start[action.start] * p_end)
    }

    /// Policy-gradient loss `R · (CE(p_start, start) + CE(p_end, end))` and
    /// its gradient for every parameter. Minimizing it raises the taken
    /// action's probability when `reward > 0` and lowers it when `reward < 0`.
    pub fn loss_and_grads(
        &self,
        g: &LabeledGraph,
        candidates: &CandidateSet,
        action: &Action,
        reward: f64,
    ) -> Result<(f64, Vec<Tensor>)> {
        let input = self.prepare(g, candidates)?;
        let mut tape = Tape::new();
        let params = bind(&mut tape, self);
        let (embedding, p_start) = self.start_pass(&mut tape, &params, &input, g.node_count())?;
        let p_end = self.end_pass(&mut tape, &params, embedding, action.start)?;
        let ce_start = tape.cross_entropy(p_start, action.start)?;
        let ce_end = tape.cross_entropy(p_end, action.end)?;
        let ce = tape.add(ce_start, ce_end)?;
        let loss = tape.scale(ce, reward);
        let grads = tape.backward(loss);
        Ok((tape.value(loss).get(0, 0), collect_grads(&grads, &tape, &params)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let meta = serde_json::to_string(&GeneratorMeta {
            features: self.features,
        })?;
        weights::write_weights(w, &meta, &self.parameters())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_from(BufReader::new(file))
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let (meta, tensors) = weights::read_weights(r)?;
        let meta: GeneratorMeta = serde_json::from_str(&meta)?;
        let mut policy = Self::new(meta.features, 0);
        let mut slots = policy.parameters_mut();
        if slots.len() != tensors.len() {
            return Err(Error::Weights(format!(
                "expected {} tensors, found {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (slot, t) in slots.iter_mut().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::Weights(format!("unexpected tensor shape {:?}", t.shape())));
            }
            **slot = t;
        }
        Ok(policy)
    }
}

impl Parameterized for GeneratorPolicy {
    fn parameters(&self) -> Vec<&Tensor> {
        let mut out = self.projection.parameters();
        out.extend(self.gcn_layers.iter().flat_map(|l| l.parameters()));
        out.extend(self.start_head.iter().flat_map(|l| l.parameters()));
        out.extend(self.end_head.iter().flat_map(|l| l.parameters()));
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.projection.parameters_mut();
        out.extend(self.gcn_layers.iter_mut().flat_map(|l| l.parameters_mut()));
        out.extend(self.start_head.iter_mut().flat_map(|l| l.parameters_mut()));
        out.extend(self.end_head.iter_mut().flat_map(|l| l.parameters_mut()));
        out
    }
}

fn sample<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    let dist = WeightedIndex::new(probs).map_err(|_| Error::NoLegalAction)?;
    Ok(dist.sample(rng))
}

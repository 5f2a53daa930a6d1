//! The graph classifier being explained: stacked graph convolutions, mean
//! pooling over nodes, and a fully-connected head ending in a softmax.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamConfig};
use crate::datasets::GraphDataset;
use crate::error::{Error, Result};
use crate::graph::{CandidateSet, FeatureSpec, LabeledGraph};
use crate::nn::{bind, collect_grads, Bound, GcnLayer, Linear, Parameterized};
use crate::tape::{Activation, Tape, Var};
use crate::tensor::Tensor;
use crate::weights;

/// Layer sizes, activations and dataset vocabulary. Stored as the metadata
/// blob of a model file so a model can be reloaded without other context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierArch {
    pub dataset: String,
    pub gcn_dims: Vec<usize>,
    pub gcn_activation: Activation,
    pub fc_hidden: Vec<usize>,
    pub fc_activation: Activation,
    pub classes: usize,
    pub features: FeatureSpec,
    pub candidates: CandidateSet,
    pub class_names: Vec<String>,
}

impl ClassifierArch {
    /// GCN(8) → GCN(16), sigmoid, mean pool, one linear layer.
    pub fn is_acyclic(dataset: &GraphDataset) -> Self {
        Self {
            dataset: dataset.name.clone(),
            gcn_dims: vec![8, 16],
            gcn_activation: Activation::Sigmoid,
            fc_hidden: vec![],
            fc_activation: Activation::Identity,
            classes: dataset.class_names.len(),
            features: dataset.feature_spec,
            candidates: dataset.candidates.clone(),
            class_names: dataset.class_names.clone(),
        }
    }

    /// GCN(32) → GCN(48) → GCN(64), relu, mean pool, FC(32) → FC(classes).
    pub fn mutag(dataset: &GraphDataset) -> Self {
        Self {
            dataset: dataset.name.clone(),
            gcn_dims: vec![32, 48, 64],
            gcn_activation: Activation::Relu,
            fc_hidden: vec![32],
            fc_activation: Activation::Relu,
            classes: dataset.class_names.len(),
            features: dataset.feature_spec,
            candidates: dataset.candidates.clone(),
            class_names: dataset.class_names.clone(),
        }
    }

    /// The architecture registered for a dataset name.
    pub fn for_dataset(dataset: &GraphDataset) -> Result<Self> {
        match dataset.name.as_str() {
            crate::datasets::IS_ACYCLIC => Ok(Self::is_acyclic(dataset)),
            crate::datasets::MUTAG => Ok(Self::mutag(dataset)),
            other => Err(Error::Config(format!(
                "no classifier architecture for dataset {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub arch: ClassifierArch,
    pub gcn_layers: Vec<GcnLayer>,
    pub fc_layers: Vec<Linear>,
}

/// Precomputed `(Â, X)` for one graph.
#[derive(Clone, Debug)]
pub struct GraphInput {
    pub adjacency: Tensor,
    pub features: Tensor,
}

impl GraphInput {
    pub fn new(g: &LabeledGraph, spec: &FeatureSpec) -> Result<Self> {
        Ok(Self {
            features: g.feature_matrix(spec)?,
            adjacency: g.normalized_adjacency(),
        })
    }
}

impl ClassifierModel {
    pub fn new(arch: ClassifierArch, seed: u64) -> Result<Self> {
        if arch.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", arch.classes)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut width = arch.features.dim;
        let mut gcn_layers = Vec::new();
        for &d in &arch.gcn_dims {
            gcn_layers.push(GcnLayer::new(width, d, arch.gcn_activation, &mut rng));
            width = d;
        }
        let mut fc_layers = Vec::new();
        for &d in arch.fc_hidden.iter().chain([&arch.classes]) {
            fc_layers.push(Linear::new(width, d, true, &mut rng));
            width = d;
        }
        Ok(Self {
            arch,
            gcn_layers,
            fc_layers,
        })
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    /// Records the forward pass; returns `(probabilities 1×ℓ, pooled embedding)`.
    pub fn forward_on_tape(&self, tape: &mut Tape, params: &[Var], input: &GraphInput) -> Result<(Var, Var)> {
        let mut bound = Bound::new(params);
        let adjacency = tape.leaf(input.adjacency.clone());
        let mut h = tape.leaf(input.features.clone());
        for layer in &self.gcn_layers {
            h = layer.forward(tape, &mut bound, adjacency, h)?;
        }
        let pooled = tape.mean_pool_rows(h)?;
        let mut z = pooled;
        let last = self.fc_layers.len() - 1;
        for (i, layer) in self.fc_layers.iter().enumerate() {
            z = layer.forward(tape, &mut bound, z)?;
            if i < last {
                z = tape.activation(z, self.arch.fc_activation);
            }
        }
        Ok((tape.softmax_rows(z), pooled))
    }

    /// Class probabilities for `g`.
    pub fn predict(&self, g: &LabeledGraph) -> Result<Vec<f64>> {
        let input = GraphInput::new(g, &self.arch.features)?;
        self.predict_input(&input)
    }

    pub fn predict_input(&self, input: &GraphInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let params = bind(&mut tape, self);
        let (probs, _) = self.forward_on_tape(&mut tape, &params, input)?;
        Ok(tape.value(probs).data().to_vec())
    }

    pub fn class_probability(&self, g: &LabeledGraph, class: usize) -> Result<f64> {
        if class >= self.classes() {
            return Err(Error::Index {
                index: class,
                len: self.classes(),
            });
        }
        Ok(self.predict(g)?[class])
    }

    /// Mean-pooled node embedding after the last graph convolution.
    pub fn embedding(&self, g: &LabeledGraph) -> Result<Vec<f64>> {
        let input = GraphInput::new(g, &self.arch.features)?;
        let mut tape = Tape::new();
        let params = bind(&mut tape, self);
        let (_, pooled) = self.forward_on_tape(&mut tape, &params, &input)?;
        Ok(tape.value(pooled).data().to_vec())
    }

    /// Mean cross-entropy over `batch` and its gradient for every parameter,
    /// plus the number of correctly classified graphs.
    pub fn loss_and_grads(&self, batch: &[(GraphInput, usize)]) -> Result<(f64, Vec<Tensor>, usize)> {
        if batch.is_empty() {
            return Err(Error::DegenerateDataset("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let per_graph: Vec<(f64, Vec<Tensor>, bool)> = batch
            .par_iter()
            .map(|(input, label)| {
                let mut tape = Tape::new();
                let params = bind(&mut tape, self);
                let (probs, _) = self.forward_on_tape(&mut tape, &params, input)?;
                let ce = tape.cross_entropy(probs, *label)?;
                let loss = tape.scale(ce, scale);
                let grads = tape.backward(loss);
                let p = tape.value(probs).data();
                let correct = argmax(p) == *label;
                Ok((
                    tape.value(loss).get(0, 0),
                    collect_grads(&grads, &tape, &params),
                    correct,
                ))
            })
            .collect::<Result<_>>()?;

        let mut total = 0.0;
        let mut correct = 0;
        let mut acc: Vec<Tensor> = self
            .parameters()
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        for (loss, grads, ok) in per_graph {
            total += loss;
            correct += usize::from(ok);
            for (a, g) in acc.iter_mut().zip(&grads) {
                a.add_assign(g);
            }
        }
        Ok((total, acc, correct))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let meta = serde_json::to_string(&self.arch)?;
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
        let arch: ClassifierArch = serde_json::from_str(&meta)?;
        let mut model = Self::new(arch, 0)?;
        let mut slots = model.parameters_mut();
        if slots.len() != tensors.len() {
            return Err(Error::Weights(format!(
                "expected {} tensors, found {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (slot, t) in slots.iter_mut().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::Weights(format!(
                    "shape {:?} does not match architecture {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            **slot = t;
        }
        Ok(model)
    }
}

impl Parameterized for ClassifierModel {
    fn parameters(&self) -> Vec<&Tensor> {
        self.gcn_layers
            .iter()
            .flat_map(|l| l.parameters())
            .chain(self.fc_layers.iter().flat_map(|l| l.parameters()))
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.gcn_layers
            .iter_mut()
            .flat_map(|l| l.parameters_mut())
            .chain(self.fc_layers.iter_mut().flat_map(|l| l.parameters_mut()))
            .collect()
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &v)| if v > best.1 { (i, v) } else { best },
        )
        .0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Stop as soon as every training graph is classified correctly.
    pub stop_at_full_accuracy: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3000,
            learning_rate: 0.01,
            seed: 0,
            stop_at_full_accuracy: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub accuracy: f64,
}

/// Full-batch Adam training on every graph of `dataset`.
pub fn train(dataset: &GraphDataset, config: &TrainConfig) -> Result<(ClassifierModel, TrainReport)> {
    let arch = ClassifierArch::for_dataset(dataset)?;
    train_with_arch(dataset, arch, config)
}

pub fn train_with_arch(
    dataset: &GraphDataset,
    arch: ClassifierArch,
    config: &TrainConfig,
) -> Result<(ClassifierModel, TrainReport)> {
    if dataset.graphs.is_empty() {
        return Err(Error::DegenerateDataset("no graphs".into()));
    }
    let mut present = dataset.labels.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::DegenerateDataset(format!(
            "only {} class present",
            present.len()
        )));
    }

    let batch: Vec<(GraphInput, usize)> = dataset
        .graphs
        .iter()
        .zip(&dataset.labels)
        .map(|(g, &y)| Ok((GraphInput::new(g, &arch.features)?, y)))
        .collect::<Result<_>>()?;

    let mut model = ClassifierModel::new(arch, config.seed)?;
    let mut adam = Adam::new(
        AdamConfig::with_learning_rate(config.learning_rate),
        &model.parameters(),
    );
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let (loss, grads, correct) = model.loss_and_grads(&batch)?;
        epoch_losses.push(loss);
        if config.stop_at_full_accuracy && correct == batch.len() {
            break;
        }
        adam.step(&mut model.parameters_mut(), &grads)?;
    }

    let (_, _, correct) = model.loss_and_grads(&batch)?;
    let report = TrainReport {
        epoch_losses,
        accuracy: correct as f64 / batch.len() as f64,
    };
    Ok((model, report))
}

//! Tape-based reverse-mode automatic differentiation over dense [`Tensor`]s.
//!
//! Every operation is appended to a [`Tape`] together with its forward
//! value. [`Tape::backward`] then walks the recorded nodes in exact reverse
//! order, accumulating upstream gradients into each input. The tape is
//! single-threaded; build one per forward/backward pass.
//!
//! ```
//! use gnnexplain::tape::Tape;
//! use gnnexplain::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let a = tape.leaf(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
//! let b = tape.leaf(Tensor::from_rows(&[[1.0], [1.0]]));
//! let c = tape.matmul(a, b).unwrap();
//! let loss = tape.sum(c);
//! let grads = tape.backward(loss);
//! assert_eq!(tape.value(loss).get(0, 0), 10.0);
//! assert_eq!(grads.get(b).unwrap().data(), &[4.0, 6.0]);
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probabilities are floored at this value before taking a logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Sigmoid,
    Relu,
    Relu6,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Relu => x.max(0.0),
            Activation::Relu6 => x.clamp(0.0, 6.0),
        }
    }

    /// Derivative given the pre-activation input `x` and output `y`.
    /// Kinks get a zero subgradient.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Relu6 => {
                if x > 0.0 && x < 6.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Row-wise softmax with row-max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let cols = x.cols();
    for r in 0..x.rows() {
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Softmax restricted to the positions where `legal` is true; masked
/// positions get probability zero. Equal to zeroing the masked entries of
/// a plain softmax and renormalizing, without the underflow.
pub fn masked_softmax(logits: &[f64], legal: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != legal.len() {
        return Err(Error::Dimension {
            op: "masked_softmax",
            lhs: (1, logits.len()),
            rhs: (1, legal.len()),
        });
    }
    let max = logits
        .iter()
        .zip(legal)
        .filter(|(_, &ok)| ok)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::NoLegalAction);
    }
    let mut out: Vec<f64> = logits
        .iter()
        .zip(legal)
        .map(|(&v, &ok)| if ok { (v - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// `-ln(max(probs[target], LOG_FLOOR))`.
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64> {
    let p = *probs.get(target).ok_or(Error::Index {
        index: target,
        len: probs.len(),
    })?;
    Ok(-p.max(LOG_FLOOR).ln())
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Activation(Var, Activation),
    SoftmaxRows(Var),
    MaskedSoftmax(Var),
    MeanPool(Var),
    Transpose(Var),
    SelectRow(Var, usize),
    ConcatCols(Var, Var),
    RepeatRows(Var),
    CrossEntropy(Var, usize),
    Scale(Var, f64),
    Sum(Var),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Recorded computation. Nodes are stored in creation order, so every
/// node's inputs precede it.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of `shape` if nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var, shape: (usize, usize)) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(Option::is_none)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        debug_assert!(value.is_finite(), "non-finite value from {op:?}");
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    /// Adds the `1 × cols` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, bias) = (self.value(a), self.value(b));
        if bias.rows() != 1 || bias.cols() != x.cols() {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: x.shape(),
                rhs: bias.shape(),
            });
        }
        let mut value = x.clone();
        let cols = x.cols();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += bias.data()[i % cols];
        }
        Ok(self.push(Op::AddRow(a, b), value))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        if kind == Activation::Identity {
            return x;
        }
        let value = self.value(x).map(|v| kind.apply(v));
        self.push(Op::Activation(x, kind), value)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let value = softmax_rows(self.value(x));
        self.push(Op::SoftmaxRows(x), value)
    }

    /// Masked softmax over a `1 × n` row of logits.
    pub fn masked_softmax(&mut self, x: Var, legal: &[bool]) -> Result<Var> {
        let logits = self.value(x);
        if logits.rows() != 1 {
            return Err(Error::Dimension {
                op: "masked_softmax",
                lhs: logits.shape(),
                rhs: (1, legal.len()),
            });
        }
        let probs = masked_softmax(logits.data(), legal)?;
        let value = Tensor::row_vector(&probs);
        Ok(self.push(Op::MaskedSoftmax(x), value))
    }

    /// Column means as a `1 × cols` tensor.
    pub fn mean_pool_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rows() == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut value = Tensor::zeros(1, t.cols());
        for r in 0..t.rows() {
            for (c, v) in t.row(r).iter().enumerate() {
                value.data_mut()[c] += v;
            }
        }
        let n = t.rows() as f64;
        for v in value.data_mut() {
            *v /= n;
        }
        Ok(self.push(Op::MeanPool(x), value))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose();
        self.push(Op::Transpose(x), value)
    }

    pub fn select_row(&mut self, x: Var, row: usize) -> Result<Var> {
        let t = self.value(x);
        if row >= t.rows() {
            return Err(Error::Index {
                index: row,
                len: t.rows(),
            });
        }
        let value = Tensor::row_vector(t.row(row));
        Ok(self.push(Op::SelectRow(x, row), value))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rows() != y.rows() {
            return Err(Error::Dimension {
                op: "concat_cols",
                lhs: x.shape(),
                rhs: y.shape(),
            });
        }
        let mut data = Vec::with_capacity(x.len() + y.len());
        for r in 0..x.rows() {
            data.extend_from_slice(x.row(r));
            data.extend_from_slice(y.row(r));
        }
        let value = Tensor::from_vec(x.rows(), x.cols() + y.cols(), data)?;
        Ok(self.push(Op::ConcatCols(a, b), value))
    }

    /// Stacks `n` copies of a `1 × cols` row.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rows() != 1 {
            return Err(Error::Dimension {
                op: "repeat_rows",
                lhs: t.shape(),
                rhs: (1, t.cols()),
            });
        }
        let data = t.data().repeat(n);
        let value = Tensor::from_vec(n, t.cols(), data)?;
        Ok(self.push(Op::RepeatRows(x), value))
    }

    /// Cross-entropy of a single probability row against `target`.
    pub fn cross_entropy(&mut self, probs: Var, target: usize) -> Result<Var> {
        let p = self.value(probs);
        if p.rows() != 1 {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: p.shape(),
                rhs: (1, p.cols()),
            });
        }
        let loss = cross_entropy(p.data(), target)?;
        Ok(self.push(Op::CrossEntropy(probs, target), Tensor::full(1, 1, loss)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(Op::Scale(x, factor), value)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::full(1, 1, self.value(x).sum());
        self.push(Op::Sum(x), value)
    }

    /// Backpropagates from `root`, seeded with ones.
    pub fn backward(&self, root: Var) -> Gradients {
        let (r, c) = self.value(root).shape();
        self.backward_with([(root, Tensor::full(r, c, 1.0))])
    }

    /// Backpropagates arbitrary upstream gradients. With no seeds this is a
    /// no-op and returns empty gradients.
    pub fn backward_with(&self, seeds: impl IntoIterator<Item = (Var, Tensor)>) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut last = None;
        for (var, g) in seeds {
            assert_eq!(g.shape(), self.value(var).shape(), "seed shape");
            accumulate(&mut grads, var, g);
            last = last.max(Some(var.0));
        }
        let Some(last) = last else {
            return Gradients { grads };
        };

        for idx in (0..=last).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(node, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, up: &Tensor, grads: &mut [Option<Tensor>]) {
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let da = up.matmul(&bv.transpose()).expect("matmul backward");
                let db = av.transpose().matmul(up).expect("matmul backward");
                accumulate(grads, a, da);
                accumulate(grads, b, db);
            }
            Op::Add(a, b) => {
                accumulate(grads, a, up.clone());
                accumulate(grads, b, up.clone());
            }
            Op::AddRow(a, b) => {
                let mut db = Tensor::zeros(1, up.cols());
                for r in 0..up.rows() {
                    for (c, v) in up.row(r).iter().enumerate() {
                        db.data_mut()[c] += v;
                    }
                }
                accumulate(grads, a, up.clone());
                accumulate(grads, b, db);
            }
            Op::Activation(x, kind) => {
                let input = self.value(x);
                let mut dx = up.clone();
                for ((d, &xi), &yi) in dx.data_mut().iter_mut().zip(input.data()).zip(node.value.data()) {
                    *d *= kind.derivative(xi, yi);
                }
                accumulate(grads, x, dx);
            }
            Op::SoftmaxRows(x) | Op::MaskedSoftmax(x) => {
                let y = &node.value;
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = y.row(r).iter().zip(up.row(r)).map(|(a, b)| a * b).sum();
                    for c in 0..y.cols() {
                        dx.set(r, c, y.get(r, c) * (up.get(r, c) - dot));
                    }
                }
                accumulate(grads, x, dx);
            }
            Op::MeanPool(x) => {
                let rows = self.value(x).rows();
                let scale = 1.0 / rows as f64;
                let row: Vec<f64> = up.data().iter().map(|v| v * scale).collect();
                let dx = Tensor::from_vec(rows, row.len(), row.repeat(rows)).expect("mean pool");
                accumulate(grads, x, dx);
            }
            Op::Transpose(x) => accumulate(grads, x, up.transpose()),
            Op::SelectRow(x, row) => {
                let (rows, cols) = self.value(x).shape();
                let mut dx = Tensor::zeros(rows, cols);
                dx.data_mut()[row * cols..(row + 1) * cols].copy_from_slice(up.data());
                accumulate(grads, x, dx);
            }
            Op::ConcatCols(a, b) => {
                let (ac, bc) = (self.value(a).cols(), self.value(b).cols());
                let rows = up.rows();
                let mut da = Vec::with_capacity(rows * ac);
                let mut db = Vec::with_capacity(rows * bc);
                for r in 0..rows {
                    let row = up.row(r);
                    da.extend_from_slice(&row[..ac]);
                    db.extend_from_slice(&row[ac..]);
                }
                accumulate(grads, a, Tensor::from_vec(rows, ac, da).expect("concat"));
                accumulate(grads, b, Tensor::from_vec(rows, bc, db).expect("concat"));
            }
            Op::RepeatRows(x) => {
                let mut dx = Tensor::zeros(1, up.cols());
                for r in 0..up.rows() {
                    for (c, v) in up.row(r).iter().enumerate() {
                        dx.data_mut()[c] += v;
                    }
                }
                accumulate(grads, x, dx);
            }
            Op::CrossEntropy(p, target) => {
                let probs = self.value(p);
                let mut dp = Tensor::zeros(1, probs.cols());
                let pt = probs.data()[target];
                if pt > LOG_FLOOR {
                    dp.data_mut()[target] = -up.get(0, 0) / pt;
                }
                accumulate(grads, p, dp);
            }
            Op::Scale(x, factor) => accumulate(grads, x, up.map(|v| v * factor)),
            Op::Sum(x) => {
                let (r, c) = self.value(x).shape();
                accumulate(grads, x, Tensor::full(r, c, up.get(0, 0)));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Relu6.apply(7.3), 6.0);
        assert_eq!(Activation::Relu.apply(-2.0), 0.0);

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row_vector(&[-2.0, 0.0, 3.0, 6.0, 7.0]));
        let y = tape.activation(x, Activation::Relu);
        let z = tape.activation(x, Activation::Relu6);
        let s = tape.add(y, z).unwrap();
        let loss = tape.sum(s);
        let g = tape.backward(loss);
        // relu: 0,0,1,1,1 ; relu6: 0,0,1,0,0
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&Tensor::row_vector(&[0.0, 0.0, 0.0]));
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let s = softmax_rows(&Tensor::row_vector(&[1000.0, 0.0, 0.0]));
        assert!(s.is_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-12);
        let s = softmax_rows(&Tensor::row_vector(&[1.0, 2.0, 3.0]));
        for (got, want) in s.data().iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[1.0, 0.0], 0).unwrap(), 0.0);
        assert!((cross_entropy(&[0.5, 0.5], 1).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((cross_entropy(&[0.2544, 0.7456], 1).unwrap() - 0.2936).abs() < 1e-4);
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() - 1e12f64.ln()).abs() < 1e-9);
        assert!(matches!(
            cross_entropy(&[0.5, 0.5], 2),
            Err(Error::Index { index: 2, len: 2 })
        ));
    }

    #[test]
    fn masked_softmax_matches_zero_and_renormalize() {
        let logits = [0.3, -1.2, 2.0, 0.7];
        let legal = [true, false, true, true];
        let plain = softmax_rows(&Tensor::row_vector(&logits));
        let kept: Vec<f64> = plain
            .data()
            .iter()
            .zip(legal)
            .map(|(p, ok)| if ok { *p } else { 0.0 })
            .collect();
        let total: f64 = kept.iter().sum();
        let masked = masked_softmax(&logits, &legal).unwrap();
        for (a, b) in masked.iter().zip(&kept) {
            assert!((a - b / total).abs() < 1e-12);
        }
        assert!(matches!(
            masked_softmax(&logits, &[false; 4]),
            Err(Error::NoLegalAction)
        ));
    }

    #[test]
    fn mean_pool_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[[0.0, 2.0], [2.0, 0.0]]));
        let p = tape.mean_pool_rows(x).unwrap();
        assert_eq!(tape.value(p), &Tensor::from_rows(&[[1.0, 1.0]]));
        let single = tape.leaf(Tensor::row_vector(&[4.0, -1.0]));
        let p = tape.mean_pool_rows(single).unwrap();
        assert_eq!(tape.value(p).data(), &[4.0, -1.0]);
        let empty = tape.leaf(Tensor::zeros(0, 2));
        assert!(matches!(tape.mean_pool_rows(empty), Err(Error::EmptyGraph)));
    }

    #[test]
    fn backward_without_seeds_is_noop() {
        let tape = Tape::new();
        let g = tape.backward_with(std::iter::empty());
        assert!(g.is_empty());
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row_vector(&[2.0]));
        let y = tape.add(x, x).unwrap();
        let loss = tape.sum(y);
        assert_eq!(tape.backward(loss).get(x).unwrap().data(), &[2.0]);
    }
}

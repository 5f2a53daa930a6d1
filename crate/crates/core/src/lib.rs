//! Model-level explanations for graph classifiers.
//!
//! A small graph-convolutional classifier is trained on a graph
//! classification dataset; a graph generator is then trained with policy
//! gradients so that the graphs it builds, one edge at a time, maximize the
//! classifier's probability for a chosen class while obeying validity rules.
//! The resulting graphs show which structures the classifier associates with
//! that class.
//!
//! Modules, bottom up:
//!
//! - [`tensor`], [`tape`], [`adam`], [`weights`]: dense tensors, reverse-mode
//!   differentiation, the optimizer and the weight file format.
//! - [`graph`]: node-typed undirected graphs.
//! - [`nn`], [`classifier`]: layers and the classifier being explained.
//! - [`generator`], [`rules`], [`explain`]: the policy, validity rules and
//!   the generation/training loop.
//! - [`datasets`]: the synthetic cyclic/acyclic benchmark and MUTAG.
//! - [`config`]: JSON experiment configuration.

pub mod adam;
pub mod classifier;
pub mod config;
pub mod datasets;
pub mod error;
pub mod explain;
pub mod generator;
pub mod graph;
pub mod nn;
pub mod rules;
pub mod tape;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};

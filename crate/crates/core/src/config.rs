//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "dataset": "mutag",
//!   "architecture": "mutag",
//!   "model": "runs/mutag/model.bin",
//!   "explain": { "target_class": 1, "max_nodes": 6, "lambda2": 2.0 },
//!   "output": { "dir": "runs/mutag/explain" }
//! }
//! ```
//!
//! Every `explain` field is optional and overrides the dataset defaults.
//! Unknown keys are rejected at every level.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{ExplainConfig, InvalidRewardMode};
use crate::graph::LabeledGraph;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset name (`is_acyclic`, `mutag`) or a path to a dataset directory
    /// or JSON export.
    #[serde(default)]
    pub dataset: Option<String>,
    /// Classifier architecture id; defaults to the dataset's own.
    #[serde(default)]
    pub architecture: Option<String>,
    /// Trained classifier weights.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub explain: ExplainOverrides,
    #[serde(default)]
    pub output: OutputPaths,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainOverrides {
    pub target_class: Option<usize>,
    pub max_steps: Option<usize>,
    pub max_nodes: Option<usize>,
    pub rollouts: Option<usize>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub invalid_reward_mode: Option<InvalidRewardMode>,
    pub initial_graph: Option<LabeledGraph>,
    pub learning_rate: Option<f64>,
    pub seed: Option<u64>,
    pub valency: Option<BTreeMap<String, usize>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub dir: Option<PathBuf>,
    pub trace: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

impl ExplainOverrides {
    pub fn apply(&self, cfg: &mut ExplainConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { cfg.$f = v.clone(); } )* };
        }
        set!(
            target_class,
            max_steps,
            max_nodes,
            rollouts,
            lambda1,
            lambda2,
            invalid_reward_mode,
            initial_graph,
            learning_rate,
            seed
        );
        if let Some(v) = &self.valency {
            cfg.valency = Some(v.clone());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example() {
        let cfg = ExperimentConfig::from_json(
            r#"{"dataset":"mutag","architecture":"mutag","model":"m.bin",
                "explain":{"target_class":1,"max_nodes":6,"lambda2":2.0,
                           "initial_graph":{"node_types":[0],"edges":[]}},
                "output":{"dir":"out"}}"#,
        )
        .unwrap();
        let mut ec = ExplainConfig::is_acyclic(0, 3, 0);
        cfg.explain.apply(&mut ec);
        assert_eq!(ec.target_class, 1);
        assert_eq!(ec.max_nodes, 6);
        assert_eq!(ec.lambda2, 2.0);
        assert_eq!(ec.lambda1, 1.0);
        assert_eq!(cfg.output.dir.as_deref(), Some(Path::new("out")));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"datset":"mutag"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"explain":{"lamda1":1}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"output":{"file":"x"}}"#).is_err());
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }
}

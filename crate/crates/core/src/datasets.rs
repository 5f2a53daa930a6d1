//! Graph classification datasets: the synthetic cyclic/acyclic benchmark and
//! MUTAG in the TU text layout.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CandidateSet, FeatureSpec, LabeledGraph};
use crate::rules::{default_mutag_valency, RuleSet};

pub const IS_ACYCLIC: &str = "is_acyclic";
pub const MUTAG: &str = "mutag";

pub const CYCLIC: usize = 0;
pub const ACYCLIC: usize = 1;
pub const NON_MUTAGENIC: usize = 0;
pub const MUTAGENIC: usize = 1;

pub const MUTAG_ATOMS: [&str; 7] = ["C", "N", "O", "F", "I", "Cl", "Br"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDataset {
    pub name: String,
    pub class_names: Vec<String>,
    pub candidates: CandidateSet,
    pub feature_spec: FeatureSpec,
    /// Per-type valency limits by type name; `None` for unlabeled data.
    pub valency: Option<BTreeMap<String, usize>>,
    pub graphs: Vec<LabeledGraph>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub graphs: usize,
    pub mean_nodes: f64,
    pub mean_edges: f64,
    pub class_counts: Vec<usize>,
}

impl GraphDataset {
    pub fn validate(&self) -> Result<()> {
        if self.graphs.len() != self.labels.len() {
            return Err(Error::Config(format!(
                "{} graphs but {} labels",
                self.graphs.len(),
                self.labels.len()
            )));
        }
        if let Some(&y) = self.labels.iter().find(|&&y| y >= self.class_names.len()) {
            return Err(Error::Index {
                index: y,
                len: self.class_names.len(),
            });
        }
        for g in &self.graphs {
            if let Some(&t) = g.node_types().iter().find(|&&t| t >= self.candidates.len()) {
                return Err(Error::Index {
                    index: t,
                    len: self.candidates.len(),
                });
            }
        }
        Ok(())
    }

    /// Rules for generation under a node budget, with this dataset's
    /// valency table when it has one.
    pub fn rule_set(&self, max_nodes: usize) -> Result<RuleSet> {
        let rules = RuleSet::new(max_nodes)?;
        match &self.valency {
            Some(table) => rules.with_valency(table, &self.candidates),
            None => Ok(rules),
        }
    }

    pub fn stats(&self) -> DatasetStats {
        let n = self.graphs.len().max(1) as f64;
        let mut class_counts = vec![0; self.class_names.len()];
        for &y in &self.labels {
            class_counts[y] += 1;
        }
        DatasetStats {
            graphs: self.graphs.len(),
            mean_nodes: self.graphs.iter().map(|g| g.node_count()).sum::<usize>() as f64 / n,
            mean_edges: self.graphs.iter().map(|g| g.edge_count()).sum::<usize>() as f64 / n,
            class_counts,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let ds: Self = serde_json::from_str(json)?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Writes `<PREFIX>_A.txt`, `_graph_indicator.txt`, `_graph_labels.txt`
    /// and `_node_labels.txt` with 1-based node ids; every undirected edge
    /// appears in both directions.
    pub fn write_tu(&self, dir: &Path, prefix: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let open = |suffix: &str| -> Result<std::io::BufWriter<fs::File>> {
            Ok(std::io::BufWriter::new(fs::File::create(
                dir.join(format!("{prefix}_{suffix}.txt")),
            )?))
        };
        let (mut a, mut ind, mut gl, mut nl) = (
            open("A")?,
            open("graph_indicator")?,
            open("graph_labels")?,
            open("node_labels")?,
        );
        let mut offset = 1;
        for (gi, (g, y)) in self.graphs.iter().zip(&self.labels).enumerate() {
            writeln!(gl, "{y}")?;
            for &t in g.node_types() {
                writeln!(ind, "{}", gi + 1)?;
                writeln!(nl, "{t}")?;
            }
            for (u, v) in g.edges() {
                writeln!(a, "{}, {}", u + offset, v + offset)?;
                writeln!(a, "{}, {}", v + offset, u + offset)?;
            }
            offset += g.node_count();
        }
        for w in [&mut a, &mut ind, &mut gl, &mut nl] {
            w.flush()?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Synthetic cyclic / acyclic graphs
// ---------------------------------------------------------------------------

pub fn grid_graph(rows: usize, cols: usize) -> LabeledGraph {
    let id = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push((id(r, c), id(r, c + 1)));
            }
            if r + 1 < rows {
                edges.push((id(r, c), id(r + 1, c)));
            }
        }
    }
    unlabeled(rows * cols, edges)
}

pub fn cycle_graph(n: usize) -> LabeledGraph {
    unlabeled(n, (0..n).map(|i| (i, (i + 1) % n)))
}

/// Hub (node 0) joined to every node of a rim cycle.
pub fn wheel_graph(rim: usize) -> LabeledGraph {
    let spokes = (1..=rim).map(|i| (0, i));
    let rim_edges = (0..rim).map(|i| (1 + i, 1 + (i + 1) % rim));
    unlabeled(rim + 1, spokes.chain(rim_edges))
}

/// Two `n`-cycles joined by rungs.
pub fn circular_ladder_graph(n: usize) -> LabeledGraph {
    let outer = (0..n).map(|i| (i, (i + 1) % n));
    let inner = (0..n).map(|i| (n + i, n + (i + 1) % n));
    let rungs = (0..n).map(|i| (i, n + i));
    unlabeled(2 * n, outer.chain(inner).chain(rungs))
}

pub fn star_graph(leaves: usize) -> LabeledGraph {
    unlabeled(leaves + 1, (1..=leaves).map(|i| (0, i)))
}

pub fn path_graph(n: usize) -> LabeledGraph {
    unlabeled(n, (1..n).map(|i| (i - 1, i)))
}

/// Perfect binary tree with `depth` levels below the root.
pub fn balanced_binary_tree(depth: u32) -> LabeledGraph {
    full_rary_tree(2, (1usize << (depth + 1)) - 1)
}

/// `n` nodes filled breadth-first, each parent taking up to `r` children.
pub fn full_rary_tree(r: usize, n: usize) -> LabeledGraph {
    unlabeled(n, (1..n).map(|i| ((i - 1) / r, i)))
}

fn unlabeled(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> LabeledGraph {
    LabeledGraph::from_edges(vec![0; n], edges).expect("builder produces a simple graph")
}

/// Size parameters per family; each generated graph draws one entry of its
/// family's list uniformly at random.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsAcyclicConfig {
    pub per_family: usize,
    pub grid: Vec<(usize, usize)>,
    pub cycle: Vec<usize>,
    pub wheel: Vec<usize>,
    pub circular_ladder: Vec<usize>,
    pub star: Vec<usize>,
    pub binary_tree: Vec<u32>,
    pub path: Vec<usize>,
    pub rary_tree: Vec<(usize, usize)>,
}

impl Default for IsAcyclicConfig {
    fn default() -> Self {
        let grid = (3..=6).flat_map(|r| (3..=8).map(move |c| (r, c))).collect();
        Self {
            per_family: 30,
            grid,
            cycle: (6..=50).collect(),
            wheel: (8..=40).collect(),
            circular_ladder: (6..=22).collect(),
            star: (8..=45).collect(),
            binary_tree: vec![3, 4],
            path: (6..=50).collect(),
            rary_tree: [3, 4]
                .into_iter()
                .flat_map(|r| (10..=50).map(move |n| (r, n)))
                .collect(),
        }
    }
}

pub fn generate_is_acyclic(seed: u64, config: &IsAcyclicConfig) -> Result<GraphDataset> {
    let families: [(&str, usize); 8] = [
        ("grid", config.grid.len()),
        ("cycle", config.cycle.len()),
        ("wheel", config.wheel.len()),
        ("circular_ladder", config.circular_ladder.len()),
        ("star", config.star.len()),
        ("binary_tree", config.binary_tree.len()),
        ("path", config.path.len()),
        ("rary_tree", config.rary_tree.len()),
    ];
    if let Some((name, _)) = families.iter().find(|(_, len)| *len == 0) {
        return Err(Error::Config(format!("family {name} has no size parameters")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graphs = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..config.per_family {
        let cyclic = [
            {
                let &(r, c) = config.grid.choose(&mut rng).unwrap();
                grid_graph(r, c)
            },
            cycle_graph(*config.cycle.choose(&mut rng).unwrap()),
            wheel_graph(*config.wheel.choose(&mut rng).unwrap()),
            circular_ladder_graph(*config.circular_ladder.choose(&mut rng).unwrap()),
        ];
        let acyclic = [
            star_graph(*config.star.choose(&mut rng).unwrap()),
            balanced_binary_tree(*config.binary_tree.choose(&mut rng).unwrap()),
            path_graph(*config.path.choose(&mut rng).unwrap()),
            {
                let &(r, n) = config.rary_tree.choose(&mut rng).unwrap();
                full_rary_tree(r, n)
            },
        ];
        for (g, label) in cyclic
            .into_iter()
            .map(|g| (g, CYCLIC))
            .chain(acyclic.into_iter().map(|g| (g, ACYCLIC)))
        {
            let actual = if g.has_cycle() { CYCLIC } else { ACYCLIC };
            if actual != label {
                return Err(Error::Config(format!(
                    "size parameters produced a mislabeled graph ({} nodes, {} edges)",
                    g.node_count(),
                    g.edge_count()
                )));
            }
            graphs.push(g);
            labels.push(label);
        }
    }

    Ok(GraphDataset {
        name: IS_ACYCLIC.into(),
        class_names: vec!["cyclic".into(), "acyclic".into()],
        candidates: CandidateSet::new(["node"]),
        feature_spec: FeatureSpec::degree(),
        valency: None,
        graphs,
        labels,
    })
}

// ---------------------------------------------------------------------------
// TU format
// ---------------------------------------------------------------------------

/// Raw contents of the four TU files of one dataset.
#[derive(Clone, Copy, Debug)]
pub struct TuFiles<'a> {
    pub name: &'a str,
    pub adjacency: &'a str,
    pub graph_indicator: &'a str,
    pub graph_labels: &'a str,
    pub node_labels: &'a str,
}

const TU_SUFFIXES: [&str; 4] = ["A", "graph_indicator", "graph_labels", "node_labels"];

/// Loads `<dir>/<PREFIX>_{A,graph_indicator,graph_labels,node_labels}.txt`,
/// where `PREFIX` is the directory name.
pub fn load_tu_dataset(dir: &Path) -> Result<GraphDataset> {
    let prefix = dir
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("cannot derive dataset prefix from {}", dir.display())))?;
    load_tu_with_prefix(dir, prefix)
}

pub fn load_tu_with_prefix(dir: &Path, prefix: &str) -> Result<GraphDataset> {
    let mut texts = Vec::with_capacity(4);
    for suffix in TU_SUFFIXES {
        let path = dir.join(format!("{prefix}_{suffix}.txt"));
        texts.push(fs::read_to_string(&path).map_err(|source| Error::Load { path, source })?);
    }
    parse_tu(TuFiles {
        name: prefix,
        adjacency: &texts[0],
        graph_indicator: &texts[1],
        graph_labels: &texts[2],
        node_labels: &texts[3],
    })
}

/// The vendored MUTAG dataset (188 graphs).
pub fn mutag() -> Result<GraphDataset> {
    parse_tu(TuFiles {
        name: "MUTAG",
        adjacency: include_str!("../data/MUTAG/MUTAG_A.txt"),
        graph_indicator: include_str!("../data/MUTAG/MUTAG_graph_indicator.txt"),
        graph_labels: include_str!("../data/MUTAG/MUTAG_graph_labels.txt"),
        node_labels: include_str!("../data/MUTAG/MUTAG_node_labels.txt"),
    })
}

fn parse_column(text: &str, file: &str) -> Result<Vec<i64>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<i64>().map_err(|e| Error::Format {
                file: file.into(),
                line: i + 1,
                msg: format!("{e}: {l:?}"),
            })
        })
        .collect()
}

/// Parses TU text. Node and graph labels are mapped to dense ids in sorted
/// order; MUTAG additionally gets its atom and class names. Edge labels are
/// not read.
pub fn parse_tu(files: TuFiles<'_>) -> Result<GraphDataset> {
    let name = files.name;
    let fname = |suffix: &str| format!("{name}_{suffix}.txt");
    let indicator = parse_column(files.graph_indicator, &fname("graph_indicator"))?;
    let node_labels = parse_column(files.node_labels, &fname("node_labels"))?;
    let graph_labels = parse_column(files.graph_labels, &fname("graph_labels"))?;

    if node_labels.len() != indicator.len() {
        return Err(Error::Format {
            file: fname("node_labels"),
            line: node_labels.len().min(indicator.len()) + 1,
            msg: format!("{} node labels for {} nodes", node_labels.len(), indicator.len()),
        });
    }
    let graph_count = graph_labels.len();

    // graph id (1-based) → first global node index; nodes must be grouped.
    let mut starts = vec![usize::MAX; graph_count];
    let mut counts = vec![0usize; graph_count];
    let mut prev = 0i64;
    for (i, &gid) in indicator.iter().enumerate() {
        if gid < 1 || gid as usize > graph_count {
            return Err(Error::Format {
                file: fname("graph_indicator"),
                line: i + 1,
                msg: format!("graph id {gid} outside 1..={graph_count}"),
            });
        }
        if gid < prev {
            return Err(Error::Format {
                file: fname("graph_indicator"),
                line: i + 1,
                msg: "graph ids are not grouped".into(),
            });
        }
        prev = gid;
        let g = gid as usize - 1;
        if starts[g] == usize::MAX {
            starts[g] = i;
        }
        counts[g] += 1;
    }

    let type_values: BTreeSet<i64> = node_labels.iter().copied().collect();
    let is_mutag = name.eq_ignore_ascii_case("mutag");
    let (type_index, candidates): (BTreeMap<i64, usize>, CandidateSet) = if is_mutag {
        if let Some(&bad) = type_values.iter().find(|&&v| !(0..7).contains(&v)) {
            return Err(Error::Format {
                file: fname("node_labels"),
                line: node_labels.iter().position(|&v| v == bad).unwrap() + 1,
                msg: format!("unknown MUTAG atom label {bad}"),
            });
        }
        (
            (0..7).map(|v| (v, v as usize)).collect(),
            CandidateSet::new(MUTAG_ATOMS),
        )
    } else {
        (
            type_values.iter().enumerate().map(|(i, &v)| (v, i)).collect(),
            CandidateSet::new(type_values.iter().map(|v| v.to_string())),
        )
    };

    let class_values: BTreeSet<i64> = graph_labels.iter().copied().collect();
    let class_index: BTreeMap<i64, usize> = class_values.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let class_names = if is_mutag && class_values.len() == 2 {
        vec!["non-mutagenic".to_string(), "mutagenic".to_string()]
    } else {
        class_values.iter().map(|v| v.to_string()).collect()
    };

    let mut edge_lists: Vec<Vec<(usize, usize)>> = vec![Vec::new(); graph_count];
    for (i, line) in files.adjacency.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Format {
            file: fname("A"),
            line: i + 1,
            msg,
        };
        let mut parts = line.split(',').map(|s| s.trim().parse::<usize>());
        let (u, v) = match (parts.next(), parts.next(), parts.next()) {
            (Some(Ok(u)), Some(Ok(v)), None) => (u, v),
            _ => return Err(err(format!("expected `row, col`: {line:?}"))),
        };
        for x in [u, v] {
            if x == 0 || x > indicator.len() {
                return Err(err(format!("node {x} does not exist (1..={})", indicator.len())));
            }
        }
        let (gu, gv) = (indicator[u - 1] as usize - 1, indicator[v - 1] as usize - 1);
        if gu != gv {
            return Err(err(format!("edge {u}-{v} joins graphs {} and {}", gu + 1, gv + 1)));
        }
        if u == v {
            return Err(err(format!("self-loop on node {u}")));
        }
        edge_lists[gu].push((u - 1 - starts[gu], v - 1 - starts[gu]));
    }

    let mut graphs = Vec::with_capacity(graph_count);
    for g in 0..graph_count {
        if counts[g] == 0 {
            return Err(Error::Format {
                file: fname("graph_indicator"),
                line: 0,
                msg: format!("graph {} has no nodes", g + 1),
            });
        }
        let types = node_labels[starts[g]..starts[g] + counts[g]]
            .iter()
            .map(|v| type_index[v])
            .collect();
        graphs.push(LabeledGraph::from_edges(types, std::mem::take(&mut edge_lists[g]))?);
    }

    let ds = GraphDataset {
        name: if is_mutag { MUTAG.into() } else { name.to_lowercase() },
        class_names,
        feature_spec: FeatureSpec::one_hot(candidates.len()),
        valency: is_mutag.then(default_mutag_valency),
        candidates,
        graphs,
        labels: graph_labels.iter().map(|v| class_index[v]).collect(),
    };
    ds.validate()?;
    Ok(ds)
}

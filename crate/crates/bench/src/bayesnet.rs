//! Discrete Bayesian networks with explicit conditional probability tables.
//!
//! Networks are read from JSON:
//!
//! ```json
//! {"name": "tiny", "nodes": [
//!   {"name": "a", "states": ["no", "yes"], "parents": [], "cpt": [[0.7, 0.3]]},
//!   {"name": "b", "states": ["no", "yes"], "parents": ["a"], "cpt": [[0.9, 0.1], [0.2, 0.8]]}
//! ]}
//! ```
//!
//! CPT rows are indexed by the parents' joint state with the first parent
//! varying slowest.

use std::path::Path;

use cgm_core::codec::sample_index;
use cgm_core::rng::CgmRng;
use cgm_core::{Column, Kind, Table, Value};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::parametric::{ParametricModel, Refit};

pub const LAPLACE_ALPHA: f64 = 1.0;
const CPT_TOLERANCE: f64 = 1e-12;

/// The network shipped with the benchmark.
pub const BUNDLED_NET: &str = include_str!("../data/bayesnet8.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    pub states: Vec<String>,
    pub parents: Vec<String>,
    pub cpt: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub name: String,
    pub nodes: Vec<NodeSpec>,
}

#[derive(Clone, Debug, PartialEq)]
struct Node {
    states: Vec<String>,
    parents: Vec<usize>,
    cpt: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteBayesNet {
    pub name: String,
    names: Vec<String>,
    nodes: Vec<Node>,
    topo: Vec<usize>,
}

impl DiscreteBayesNet {
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_NET).expect("bundled network is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_spec(serde_json::from_str(text)?)
    }

    pub fn from_spec(spec: NetSpec) -> Result<Self> {
        let names: Vec<String> = spec.nodes.iter().map(|n| n.name.clone()).collect();
        let index = |p: &str| {
            names
                .iter()
                .position(|n| n == p)
                .ok_or_else(|| BenchError::Model(format!("unknown parent {p:?}")))
        };
        let mut nodes = Vec::with_capacity(spec.nodes.len());
        for n in &spec.nodes {
            if names.iter().filter(|m| **m == n.name).count() > 1 {
                return Err(BenchError::Model(format!("duplicate node {:?}", n.name)));
            }
            if n.states.len() < 2 {
                return Err(BenchError::Model(format!("node {:?} needs two states", n.name)));
            }
            let parents = n.parents.iter().map(|p| index(p)).collect::<Result<Vec<_>>>()?;
            nodes.push(Node {
                states: n.states.clone(),
                parents,
                cpt: n.cpt.clone(),
            });
        }
        for (n, spec) in nodes.iter().zip(&spec.nodes) {
            let rows: usize = n.parents.iter().map(|&p| nodes[p].states.len()).product();
            if n.cpt.len() != rows {
                return Err(BenchError::Model(format!(
                    "node {:?}: {} CPT rows, expected {rows}",
                    spec.name,
                    n.cpt.len()
                )));
            }
            for row in &n.cpt {
                let sum: f64 = row.iter().sum();
                if row.len() != n.states.len()
                    || row.iter().any(|p| !(0.0..=1.0).contains(p))
                    || (sum - 1.0).abs() > CPT_TOLERANCE
                {
                    return Err(BenchError::Model(format!("node {:?}: bad CPT row {row:?}", spec.name)));
                }
            }
        }
        let topo = topological_order(&nodes)?;
        Ok(DiscreteBayesNet {
            name: spec.name,
            names,
            nodes,
            topo,
        })
    }

    pub fn to_spec(&self) -> NetSpec {
        NetSpec {
            name: self.name.clone(),
            nodes: self
                .nodes
                .iter()
                .zip(&self.names)
                .map(|(n, name)| NodeSpec {
                    name: name.clone(),
                    states: n.states.clone(),
                    parents: n.parents.iter().map(|&p| self.names[p].clone()).collect(),
                    cpt: n.cpt.clone(),
                })
                .collect(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn cpt(&self, node: usize) -> &[Vec<f64>] {
        &self.nodes[node].cpt
    }

    fn parent_row(&self, node: usize, states: &[usize]) -> usize {
        self.nodes[node]
            .parents
            .iter()
            .fold(0, |acc, &p| acc * self.nodes[p].states.len() + states[p])
    }

    /// `log P(states)` for a full assignment of state indices.
    pub fn log_prob_states(&self, states: &[usize]) -> f64 {
        (0..self.nodes.len())
            .map(|i| self.nodes[i].cpt[self.parent_row(i, states)][states[i]].ln())
            .sum()
    }

    /// Every joint assignment, in lexicographic order.
    pub fn assignments(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        for n in &self.nodes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (0..n.states.len()).map(move |s| {
                        let mut v = prefix.clone();
                        v.push(s);
                        v
                    })
                })
                .collect();
        }
        out
    }

    pub fn sample_states(&self, rng: &mut CgmRng) -> Vec<usize> {
        let mut states = vec![0; self.nodes.len()];
        for &i in &self.topo {
            let row = self.parent_row(i, &states);
            states[i] = sample_index(&self.nodes[i].cpt[row], rng);
        }
        states
    }

    fn encode(&self, row: &[Value]) -> Result<Vec<usize>> {
        if row.len() != self.nodes.len() {
            return Err(BenchError::Data(format!("row has {} values", row.len())));
        }
        row.iter()
            .zip(&self.nodes)
            .zip(&self.names)
            .map(|((v, n), name)| match v {
                Value::Cat(s) => n
                    .states
                    .iter()
                    .position(|t| t == s)
                    .ok_or_else(|| BenchError::Data(format!("{name}: unknown state {s:?}"))),
                other => Err(BenchError::Data(format!("{name}: expected a state, got {other:?}"))),
            })
            .collect()
    }

    /// CPTs estimated by counting with add-`alpha` smoothing.
    pub fn fit_counts(&self, data: &Table, alpha: f64) -> Result<Self> {
        let mut counts: Vec<Vec<Vec<f64>>> = self
            .nodes
            .iter()
            .map(|n| vec![vec![alpha; n.states.len()]; n.cpt.len()])
            .collect();
        for r in 0..data.n_rows() {
            let states = self.encode(&data.row(r))?;
            for i in 0..self.nodes.len() {
                counts[i][self.parent_row(i, &states)][states[i]] += 1.0;
            }
        }
        let mut fitted = self.clone();
        for (node, table) in fitted.nodes.iter_mut().zip(counts) {
            node.cpt = table
                .into_iter()
                .map(|row| {
                    let total: f64 = row.iter().sum();
                    row.into_iter().map(|c| c / total).collect()
                })
                .collect();
        }
        Ok(fitted)
    }
}

fn topological_order(nodes: &[Node]) -> Result<Vec<usize>> {
    let mut order = Vec::with_capacity(nodes.len());
    let mut placed = vec![false; nodes.len()];
    while order.len() < nodes.len() {
        let next = (0..nodes.len())
            .find(|&i| !placed[i] && nodes[i].parents.iter().all(|&p| placed[p]))
            .ok_or_else(|| BenchError::Model("network has a cycle".into()))?;
        placed[next] = true;
        order.push(next);
    }
    Ok(order)
}

impl ParametricModel for DiscreteBayesNet {
    fn header(&self) -> Vec<String> {
        self.names.clone()
    }

    fn kinds(&self) -> Vec<Kind> {
        vec![Kind::Categorical; self.nodes.len()]
    }

    fn sample(&self, n: usize, rng: &mut CgmRng) -> Table {
        let mut cols: Vec<Vec<Option<String>>> = vec![Vec::with_capacity(n); self.nodes.len()];
        for _ in 0..n {
            for (i, s) in self.sample_states(rng).into_iter().enumerate() {
                cols[i].push(Some(self.nodes[i].states[s].clone()));
            }
        }
        Table::new(self.header(), cols.into_iter().map(Column::Categorical).collect())
            .expect("equal columns")
    }

    fn log_prob(&self, row: &[Value]) -> Result<f64> {
        Ok(self.log_prob_states(&self.encode(row)?))
    }

    fn refit(&self, data: &Table, _seed: u64) -> Result<Refit> {
        Ok(Refit {
            model: Box::new(self.fit_counts(data, LAPLACE_ALPHA)?),
            converged: true,
        })
    }
}

//! Taxonomy (hypernym DAG) relations and path similarity between labels.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::path::Path;

use petgraph::algo::{has_path_connecting, is_cyclic_directed};
use petgraph::graph::{DiGraph, NodeIndex};
use petgraph::visit::Dfs;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabelMatrix, LabelSpace, RelationEdge, RelationGraph, RelationType};

/// Synset id for labels without a plausible taxonomy node.
pub const UNMAPPED: &str = "__unmapped__";

/// On-disk shape of `taxonomy.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyFile {
    pub synsets: Vec<String>,
    /// (parent, child) pairs.
    pub hypernym_edges: Vec<(String, String)>,
    /// `"dataset/label"` → synset id.
    pub label_map: BTreeMap<String, String>,
}

/// Immutable hypernym DAG plus the label → synset mapping.
#[derive(Debug, Clone)]
pub struct TaxonomyGraph {
    graph: DiGraph<String, ()>,
    nodes: HashMap<String, NodeIndex>,
    label_map: HashMap<(String, String), String>,
    allow_unmapped: bool,
}

impl TaxonomyGraph {
    pub fn from_file(file: TaxonomyFile) -> Result<Self> {
        let mut graph = DiGraph::new();
        let mut nodes = HashMap::new();
        for s in file.synsets {
            if s == UNMAPPED {
                return Err(Error::invalid(format!("`{UNMAPPED}` is reserved")));
            }
            if nodes.contains_key(&s) {
                return Err(Error::invalid(format!("duplicate synset `{s}`")));
            }
            let idx = graph.add_node(s.clone());
            nodes.insert(s, idx);
        }
        let node = |s: &str| {
            nodes
                .get(s)
                .copied()
                .ok_or_else(|| Error::invalid(format!("unknown synset `{s}` in hypernym edge")))
        };
        for (parent, child) in &file.hypernym_edges {
            graph.update_edge(node(parent)?, node(child)?, ());
        }
        if is_cyclic_directed(&graph) {
            return Err(Error::invalid("hypernym edges contain a directed cycle"));
        }
        let mut label_map = HashMap::new();
        for (key, synset) in file.label_map {
            let (dataset, label) = key.split_once('/').ok_or_else(|| {
                Error::invalid(format!("label_map key `{key}` is not `dataset/label`"))
            })?;
            if synset != UNMAPPED && !nodes.contains_key(&synset) {
                return Err(Error::invalid(format!(
                    "`{key}` maps to unknown synset `{synset}`"
                )));
            }
            label_map.insert((dataset.to_string(), label.to_string()), synset);
        }
        Ok(TaxonomyGraph {
            graph,
            nodes,
            label_map,
            allow_unmapped: false,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: TaxonomyFile = crate::io::read_json(path)?;
        Self::from_file(file)
    }

    /// Lets unmapped labels (missing or mapped to [`UNMAPPED`]) score 0 with
    /// relation `none` instead of failing.
    pub fn allow_unmapped(mut self, allow: bool) -> Self {
        self.allow_unmapped = allow;
        self
    }

    fn synset(&self, dataset: &str, label: &str) -> Result<Option<NodeIndex>> {
        match self
            .label_map
            .get(&(dataset.to_string(), label.to_string()))
        {
            Some(s) if s != UNMAPPED => Ok(Some(self.nodes[s])),
            _ if self.allow_unmapped => Ok(None),
            Some(_) => Err(Error::invalid(format!(
                "label `{dataset}/{label}` is unmapped"
            ))),
            None => Err(Error::UnknownLabel {
                space: format!("taxonomy label map ({dataset})"),
                label: label.to_string(),
            }),
        }
    }

    /// Shortest path length ignoring edge direction, from `from` to every
    /// reachable synset.
    fn undirected_distances(&self, from: NodeIndex) -> HashMap<NodeIndex, usize> {
        let mut dist = HashMap::from([(from, 0usize)]);
        let mut queue = VecDeque::from([from]);
        while let Some(n) = queue.pop_front() {
            let d = dist[&n];
            for m in self.graph.neighbors_undirected(n) {
                if let std::collections::hash_map::Entry::Vacant(slot) = dist.entry(m) {
                    slot.insert(d + 1);
                    queue.push_back(m);
                }
            }
        }
        dist
    }

    fn descendants(&self, from: NodeIndex) -> HashSet<NodeIndex> {
        let mut dfs = Dfs::new(&self.graph, from);
        let mut out = HashSet::new();
        while let Some(n) = dfs.next(&self.graph) {
            out.insert(n);
        }
        out
    }

    fn relation_between(&self, x: NodeIndex, y: NodeIndex) -> RelationType {
        if x == y {
            RelationType::Identity
        } else if has_path_connecting(&self.graph, x, y, None) {
            RelationType::Parent
        } else if has_path_connecting(&self.graph, y, x, None) {
            RelationType::Child
        } else if !self.descendants(x).is_disjoint(&self.descendants(y)) {
            RelationType::Overlap
        } else {
            RelationType::None
        }
    }

    /// Relation of label `a` (of dataset `space_a`) to label `b`.
    pub fn relation(&self, space_a: &str, a: &str, space_b: &str, b: &str) -> Result<RelationType> {
        match (self.synset(space_a, a)?, self.synset(space_b, b)?) {
            (Some(x), Some(y)) => Ok(self.relation_between(x, y)),
            _ => Ok(RelationType::None),
        }
    }

    /// 1 / (1 + d) for the shortest undirected hypernym path length d; 0 when
    /// disconnected.
    pub fn path_similarity(&self, space_a: &str, a: &str, space_b: &str, b: &str) -> Result<f64> {
        match (self.synset(space_a, a)?, self.synset(space_b, b)?) {
            (Some(x), Some(y)) => Ok(similarity(self.undirected_distances(x).get(&y).copied())),
            _ => Ok(0.0),
        }
    }

    /// Path similarity plus 1 when the taxonomy relates the two labels.
    pub fn strength(&self, space_a: &str, a: &str, space_b: &str, b: &str) -> Result<f64> {
        let bonus = if self.relation(space_a, a, space_b, b)?.is_related() {
            1.0
        } else {
            0.0
        };
        Ok(self.path_similarity(space_a, a, space_b, b)? + bonus)
    }

    /// Strengths and relation types for every pair of A × B. The graph holds
    /// one typed edge per pair, including `none`.
    pub fn relate_spaces(
        &self,
        space_a: &LabelSpace,
        space_b: &LabelSpace,
    ) -> Result<(LabelMatrix, RelationGraph)> {
        let cols: Vec<Option<NodeIndex>> = space_b
            .labels()
            .iter()
            .map(|b| self.synset(space_b.dataset(), b))
            .collect::<Result<_>>()?;
        let rows: Vec<Vec<(f64, RelationType)>> = space_a
            .labels()
            .par_iter()
            .map(|a| {
                let x = self.synset(space_a.dataset(), a)?;
                let dist = x.map(|x| self.undirected_distances(x));
                Ok(cols
                    .iter()
                    .map(|y| match (x, y) {
                        (Some(x), Some(y)) => {
                            let kind = self.relation_between(x, *y);
                            let bonus = if kind.is_related() { 1.0 } else { 0.0 };
                            let d = dist.as_ref().and_then(|d| d.get(y).copied());
                            (similarity(d) + bonus, kind)
                        }
                        _ => (0.0, RelationType::None),
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        let mut matrix = LabelMatrix::zeros(space_a.clone(), space_b.clone());
        let mut graph = RelationGraph::new(space_a.dataset(), space_b.dataset());
        for (i, row) in rows.into_iter().enumerate() {
            for (j, (strength, kind)) in row.into_iter().enumerate() {
                matrix.values[(i, j)] = strength;
                graph.insert(RelationEdge::typed(
                    space_a.labels()[i].clone(),
                    space_b.labels()[j].clone(),
                    strength,
                    kind,
                ))?;
            }
        }
        Ok((matrix, graph))
    }
}

fn similarity(distance: Option<usize>) -> f64 {
    distance.map_or(0.0, |d| 1.0 / (1.0 + d as f64))
}

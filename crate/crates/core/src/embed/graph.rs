use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::corpus::{AuxGraph, UserId};
use crate::enm::WeightedEdge;
use crate::error::{Error, Result};
use crate::senm::Sign;

/// Weighted graph over user ids. Nodes are indexed in sorted id order and
/// every adjacency list is sorted by neighbour index without duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    nodes: Vec<UserId>,
    index: HashMap<UserId, usize>,
    adjacency: Vec<Vec<(usize, f64)>>,
    directed: bool,
}

impl Graph {
    /// Builds a graph from `(from, to, weight)` triples. Repeated edges
    /// (including both directions of an undirected pair) add their weights.
    pub fn from_edges<I>(edges: I, directed: bool) -> Result<Graph>
    where
        I: IntoIterator<Item = (UserId, UserId, f64)>,
    {
        Self::with_nodes(std::iter::empty(), edges, directed)
    }

    /// Like [`Graph::from_edges`], also adding `nodes` (possibly isolated).
    pub fn with_nodes<N, I>(nodes: N, edges: I, directed: bool) -> Result<Graph>
    where
        N: IntoIterator<Item = UserId>,
        I: IntoIterator<Item = (UserId, UserId, f64)>,
    {
        let mut arcs: BTreeMap<(UserId, UserId), f64> = BTreeMap::new();
        for (a, b, w) in edges {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "edge {a} -> {b} has non-positive weight {w}"
                )));
            }
            if a == b {
                return Err(Error::InvalidInput(format!("self-loop on {a}")));
            }
            let key = if directed || a < b { (a, b) } else { (b, a) };
            *arcs.entry(key).or_insert(0.0) += w;
        }
        let mut names: BTreeSet<UserId> = nodes.into_iter().collect();
        names.extend(arcs.keys().flat_map(|(a, b)| [a.clone(), b.clone()]));
        let nodes: Vec<UserId> = names.into_iter().collect();
        let index: HashMap<UserId, usize> =
            nodes.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for ((a, b), w) in &arcs {
            let (ia, ib) = (index[a], index[b]);
            adjacency[ia].push((ib, *w));
            if !directed {
                adjacency[ib].push((ia, *w));
            }
        }
        for list in &mut adjacency {
            list.sort_by_key(|(n, _)| *n);
        }
        Ok(Graph {
            nodes,
            index,
            adjacency,
            directed,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Distinct edges; an undirected edge counts once.
    pub fn n_edges(&self) -> usize {
        let arcs: usize = self.adjacency.iter().map(Vec::len).sum();
        if self.directed {
            arcs
        } else {
            arcs / 2
        }
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn nodes(&self) -> &[UserId] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &str {
        &self.nodes[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.adjacency[from]
            .binary_search_by_key(&to, |(n, _)| *n)
            .is_ok()
    }
}

/// How signed relationships map onto graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphMode {
    Unsigned,
    /// One graph per polarity.
    SignedSplit,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureGraphs {
    Unsigned(Graph),
    Split { positive: Graph, negative: Graph },
}

pub type SignMap = HashMap<(UserId, UserId), Sign>;

/// Unsigned: one graph weighted by contact frequency. Signed-split: edges
/// partitioned by the sign of their relationship; unsigned edges are
/// dropped.
pub fn build_feature_graph(
    edges: &[WeightedEdge],
    signs: Option<&SignMap>,
    mode: GraphMode,
    directed: bool,
) -> Result<FeatureGraphs> {
    let triple = |e: &WeightedEdge| (e.ego.clone(), e.alter.clone(), e.weight);
    match mode {
        GraphMode::Unsigned => Ok(FeatureGraphs::Unsigned(Graph::from_edges(
            edges.iter().map(triple),
            directed,
        )?)),
        GraphMode::SignedSplit => {
            let signs = signs.ok_or_else(|| {
                Error::InvalidParam("signed-split graph requested without a sign map".into())
            })?;
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for e in edges {
                match signs.get(&(e.ego.clone(), e.alter.clone())) {
                    Some(Sign::Positive) => pos.push(triple(e)),
                    Some(Sign::Negative) => neg.push(triple(e)),
                    None => {}
                }
            }
            Ok(FeatureGraphs::Split {
                positive: Graph::from_edges(pos, directed)?,
                negative: Graph::from_edges(neg, directed)?,
            })
        }
    }
}

/// Aux-graph edges with unit weight.
pub fn aux_edges(graph: &AuxGraph) -> Vec<WeightedEdge> {
    graph
        .edges
        .iter()
        .map(|(a, b)| WeightedEdge {
            ego: a.clone(),
            alter: b.clone(),
            weight: 1.0,
        })
        .collect()
}

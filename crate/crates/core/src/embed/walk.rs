use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::alias::AliasTable;
use super::graph::Graph;
use crate::error::{Error, Result};
use crate::util::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkParams {
    /// Return parameter.
    pub p: f64,
    /// In-out parameter.
    pub q: f64,
    pub walk_length: usize,
    pub walks_per_node: usize,
    /// Use edge weights; unit weights otherwise.
    pub weighted: bool,
}

impl Default for WalkParams {
    fn default() -> Self {
        WalkParams {
            p: 1.0,
            q: 1.0,
            walk_length: 80,
            walks_per_node: 10,
            weighted: true,
        }
    }
}

impl WalkParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p.is_finite() && self.q > 0.0 && self.q.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "walk parameters p={} q={} must be positive",
                self.p, self.q
            )));
        }
        if self.walk_length < 2 || self.walks_per_node < 1 {
            return Err(Error::InvalidParam(format!(
                "walk_length {} must be >= 2 and walks_per_node {} >= 1",
                self.walk_length, self.walks_per_node
            )));
        }
        Ok(())
    }

    fn weight(&self, w: f64) -> f64 {
        if self.weighted {
            w
        } else {
            1.0
        }
    }

    /// Second-order bias of stepping to `next` from `current` after `prev`.
    fn bias(&self, graph: &Graph, prev: usize, next: usize) -> f64 {
        if next == prev {
            1.0 / self.p
        } else if graph.has_edge(prev, next) {
            1.0
        } else {
            1.0 / self.q
        }
    }
}

/// Exact next-step distribution at `current`, arriving from `prev` (or
/// starting there when `prev` is `None`), as `(neighbour, probability)`.
pub fn transition_distribution(
    graph: &Graph,
    prev: Option<usize>,
    current: usize,
    params: &WalkParams,
) -> Result<Vec<(usize, f64)>> {
    let neigh = graph.neighbors(current);
    if neigh.is_empty() {
        return Err(Error::DanglingNode(graph.node(current).to_string()));
    }
    let raw: Vec<(usize, f64)> = neigh
        .iter()
        .map(|&(n, w)| {
            let b = prev.map_or(1.0, |p| params.bias(graph, p, n));
            (n, params.weight(w) * b)
        })
        .collect();
    let total: f64 = raw.iter().map(|(_, w)| w).sum();
    Ok(raw.into_iter().map(|(n, w)| (n, w / total)).collect())
}

/// Neighbour sampler: a first-order alias table per node plus rejection
/// on the second-order bias, so each step is O(1) expected (with a
/// logarithmic adjacency lookup) and memory stays linear in the edges.
pub struct WalkSampler<'g> {
    graph: &'g Graph,
    params: WalkParams,
    tables: Vec<Option<AliasTable>>,
    max_bias: f64,
}

impl<'g> WalkSampler<'g> {
    pub fn new(graph: &'g Graph, params: &WalkParams) -> Result<Self> {
        params.validate()?;
        let tables = (0..graph.n_nodes())
            .map(|i| {
                let w: Vec<f64> = graph
                    .neighbors(i)
                    .iter()
                    .map(|&(_, w)| params.weight(w))
                    .collect();
                AliasTable::new(&w)
            })
            .collect();
        let max_bias = (1.0 / params.p).max(1.0).max(1.0 / params.q);
        Ok(WalkSampler {
            graph,
            params: params.clone(),
            tables,
            max_bias,
        })
    }

    /// Draws the next node, or `None` at a dangling node.
    pub fn step<R: Rng + ?Sized>(&self, prev: Option<usize>, current: usize, rng: &mut R) -> Option<usize> {
        let table = self.tables[current].as_ref()?;
        let neigh = self.graph.neighbors(current);
        let Some(prev) = prev else {
            return Some(neigh[table.sample(rng)].0);
        };
        loop {
            let cand = neigh[table.sample(rng)].0;
            let accept = self.params.bias(self.graph, prev, cand) / self.max_bias;
            if accept >= 1.0 || rng.random::<f64>() < accept {
                return Some(cand);
            }
        }
    }

    pub fn walk<R: Rng + ?Sized>(&self, start: usize, rng: &mut R) -> Vec<usize> {
        let mut walk = Vec::with_capacity(self.params.walk_length);
        walk.push(start);
        let mut prev = None;
        while walk.len() < self.params.walk_length {
            let cur = *walk.last().unwrap();
            match self.step(prev, cur, rng) {
                Some(next) => {
                    walk.push(next);
                    prev = Some(cur);
                }
                None => break,
            }
        }
        walk
    }
}

/// `walks_per_node` rounds, each starting one walk at every node in a
/// freshly shuffled order. Every walk draws from its own generator seeded
/// by `(seed, node, round)`, so the output does not depend on how rayon
/// schedules the work.
pub fn generate_walks(graph: &Graph, params: &WalkParams, seed: u64) -> Result<Vec<Vec<usize>>> {
    let sampler = WalkSampler::new(graph, params)?;
    let mut walks = Vec::with_capacity(graph.n_nodes() * params.walks_per_node);
    for round in 0..params.walks_per_node {
        let mut order: Vec<usize> = (0..graph.n_nodes()).collect();
        order.shuffle(&mut rng_for(seed, &[0x5741_4c4b, round as u64]));
        let batch: Vec<Vec<usize>> = order
            .par_iter()
            .map(|&start| {
                let mut rng = rng_for(seed, &[start as u64, round as u64]);
                sampler.walk(start, &mut rng)
            })
            .collect();
        walks.extend(batch);
    }
    Ok(walks)
}

//! Reply adjacency for the contextual layer and typed relational graphs for
//! the logical-relation and conversation-act layers.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kam::{ConversationAct, LogicalRelation, RelationAnnotations, RelationKind};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("pair {index} has no {kind:?} annotation")]
    MissingAnnotation { index: usize, kind: RelationKind },
}

/// Chain adjacency with self-loops: entry (i, j) is 1 iff |i - j| <= 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    pub n: usize,
    pub entries: Array2<f64>,
}

pub fn build_reply_graph(n: usize) -> AdjacencyMatrix {
    assert!(n >= 1, "reply graph needs at least one node");
    let entries = Array2::from_shape_fn((n, n), |(i, j)| if i.abs_diff(j) <= 1 { 1.0 } else { 0.0 });
    AdjacencyMatrix { n, entries }
}

impl AdjacencyMatrix {
    /// D^{-1/2} (A + I) D^{-1/2}.
    pub fn sym_normalized(&self) -> Array2<f64> {
        let deg: Vec<f64> = self.entries.rows().into_iter().map(|r| r.sum()).collect();
        Array2::from_shape_fn((self.n, self.n), |(i, j)| {
            self.entries[[i, j]] / (deg[i].sqrt() * deg[j].sqrt())
        })
    }

    /// The matrix the contextual layer propagates with.
    pub fn propagation(&self, normalize: bool) -> Array2<f64> {
        if normalize {
            self.sym_normalized()
        } else {
            self.entries.clone()
        }
    }

    pub fn nonzero_count(&self) -> usize {
        self.entries.iter().filter(|&&v| v != 0.0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub rel: usize,
}

/// Typed, symmetric graph over chain positions. `rel` indexes
/// [`RelationalGraph::relation_names`].
#[derive(Debug, Clone, PartialEq)]
pub struct RelationalGraph {
    pub n: usize,
    pub kind: RelationKind,
    pub relation_names: Vec<&'static str>,
    pub edges: BTreeSet<Edge>,
    /// `neighbor_sets[i][rel]`
    pub neighbor_sets: Vec<Vec<BTreeSet<usize>>>,
    /// `counts[i][rel] = |neighbor_sets[i][rel]|`
    pub counts: Vec<Vec<usize>>,
}

/// Relation vocabulary for a graph kind. With `keep_unknown` the logical
/// vocabulary gains a fifth `unknown` type.
pub fn relation_names(kind: RelationKind, keep_unknown: bool) -> Vec<&'static str> {
    match kind {
        RelationKind::Logical => {
            let mut v: Vec<&'static str> = LogicalRelation::LABELS.iter().map(|r| r.as_str()).collect();
            if keep_unknown {
                v.push(LogicalRelation::Unknown.as_str());
            }
            v
        }
        RelationKind::Act => ConversationAct::LABELS.iter().map(|a| a.as_str()).collect(),
    }
}

impl RelationalGraph {
    pub fn from_edges(n: usize, kind: RelationKind, relation_names: Vec<&'static str>, edges: BTreeSet<Edge>) -> Self {
        let r = relation_names.len();
        let mut neighbor_sets = vec![vec![BTreeSet::new(); r]; n];
        for e in &edges {
            assert!(e.src < n && e.dst < n && e.rel < r, "edge {e:?} out of range");
            neighbor_sets[e.dst][e.rel].insert(e.src);
        }
        let counts = neighbor_sets
            .iter()
            .map(|per_rel| per_rel.iter().map(BTreeSet::len).collect())
            .collect();
        RelationalGraph {
            n,
            kind,
            relation_names,
            edges,
            neighbor_sets,
            counts,
        }
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    /// Per-relation mean-aggregation matrices: `m[rel][(i, j)] = 1 / c_{i,rel}`
    /// for every `j` in `N_i^rel`.
    pub fn aggregation_matrices(&self) -> Vec<Array2<f64>> {
        (0..self.num_relations())
            .map(|rel| {
                let mut m = Array2::zeros((self.n, self.n));
                for i in 0..self.n {
                    let c = self.counts[i][rel];
                    for &j in &self.neighbor_sets[i][rel] {
                        m[[i, j]] = 1.0 / c as f64;
                    }
                }
                m
            })
            .collect()
    }

    /// Induced subgraph on `keep` (ascending node ids), renumbered 0..keep.len().
    pub fn restrict(&self, keep: &[usize]) -> RelationalGraph {
        let pos = |v: usize| keep.iter().position(|&k| k == v);
        let edges = self
            .edges
            .iter()
            .filter_map(|e| {
                Some(Edge {
                    src: pos(e.src)?,
                    dst: pos(e.dst)?,
                    rel: e.rel,
                })
            })
            .collect();
        RelationalGraph::from_edges(keep.len(), self.kind, self.relation_names.clone(), edges)
    }

    pub fn typed_degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|e| e.dst == i).count()
    }

    pub fn dump(&self) -> GraphDump {
        GraphDump {
            n: self.n,
            kind: self.kind,
            edges: self
                .edges
                .iter()
                .map(|e| (e.src, e.dst, self.relation_names[e.rel].to_string()))
                .collect(),
        }
    }
}

/// Debug dump: `{n, kind, edges: [[src, dst, "relation"], ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDump {
    pub n: usize,
    pub kind: RelationKind,
    pub edges: Vec<(usize, usize, String)>,
}

/// Mirrors every annotated adjacent pair into two directed edges of the same
/// type. `unknown` logical pairs are dropped unless `keep_unknown`.
pub fn build_relational_graph(
    annotations: &RelationAnnotations,
    kind: RelationKind,
    keep_unknown: bool,
) -> Result<RelationalGraph, GraphError> {
    let n = annotations.chain_len();
    let names = relation_names(kind, keep_unknown);
    let mut edges = BTreeSet::new();
    for pair in &annotations.pairs {
        let rel = match kind {
            RelationKind::Logical => match pair.logical {
                None => {
                    return Err(GraphError::MissingAnnotation {
                        index: pair.index,
                        kind,
                    })
                }
                Some(LogicalRelation::Unknown) if !keep_unknown => continue,
                Some(r) => r.index(),
            },
            RelationKind::Act => match pair.act {
                None => {
                    return Err(GraphError::MissingAnnotation {
                        index: pair.index,
                        kind,
                    })
                }
                Some(a) => a.index(),
            },
        };
        let (a, b) = (pair.index - 2, pair.index - 1);
        edges.insert(Edge { src: a, dst: b, rel });
        edges.insert(Edge { src: b, dst: a, rel });
    }
    Ok(RelationalGraph::from_edges(n, kind, names, edges))
}

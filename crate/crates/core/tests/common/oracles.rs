//! Independent reference implementations used by several test binaries.

use std::collections::BTreeSet;

use csd_core::conversation::Stance;
use csd_core::graph::{relation_names, Edge, RelationalGraph};
use csd_core::kam::RelationKind;
use csd_core::mkian::layers::{rgcn_layer_forward, Aggregation};
use csd_core::mkian::{Activation, RgcnLayerParams};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
}

/// A random typed graph over `n` nodes drawing from every relation type.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, kind: RelationKind) -> RelationalGraph {
    let names = relation_names(kind, true);
    let mut edges = BTreeSet::new();
    for src in 0..n {
        for dst in 0..n {
            if rng.gen_bool(0.4) {
                edges.insert(Edge {
                    src,
                    dst,
                    rel: rng.gen_range(0..names.len()),
                });
            }
        }
    }
    RelationalGraph::from_edges(n, kind, names, edges)
}

pub fn aggregations(g: &RelationalGraph) -> Vec<Aggregation> {
    g.aggregation_matrices()
        .into_iter()
        .enumerate()
        .filter(|(_, m)| m.iter().any(|&v| v != 0.0))
        .map(|(rel, matrix)| Aggregation { rel, matrix })
        .collect()
}

/// `σ(Σ_r Σ_{j ∈ N_i^r} x_j W_r / |N_i^r| + x_i W_self)`, one scalar at a time.
pub fn rgcn_oracle(g: &RelationalGraph, x: &Array2<f64>, layer: &RgcnLayerParams, act: Activation) -> Array2<f64> {
    let (n, d_in) = x.dim();
    let d_out = layer.self_loop.ncols();
    let mut out = Array2::zeros((n, d_out));
    for i in 0..n {
        for o in 0..d_out {
            let mut z = 0.0;
            for k in 0..d_in {
                z += x[[i, k]] * layer.self_loop[[k, o]];
            }
            for (rel, neighbors) in g.neighbor_sets[i].iter().enumerate() {
                let c = neighbors.len() as f64;
                for &j in neighbors {
                    for k in 0..d_in {
                        z += x[[j, k]] * layer.relation[rel][[k, o]] / c;
                    }
                }
            }
            out[[i, o]] = act.apply(z);
        }
    }
    out
}

pub fn rgcn_max_diff(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.gen_range(1..=5);
    let kind = if rng.gen_bool(0.5) {
        RelationKind::Logical
    } else {
        RelationKind::Act
    };
    let d = 4;
    let g = random_graph(rng, n, kind);
    let x = random_matrix(rng, n, d);
    let layer = RgcnLayerParams {
        relation: (0..g.num_relations()).map(|_| random_matrix(rng, d, d)).collect(),
        self_loop: random_matrix(rng, d, d),
    };
    let act = [Activation::Relu, Activation::Tanh, Activation::Sigmoid][rng.gen_range(0..3)];
    let (fast, _) = rgcn_layer_forward(&x, &aggregations(&g), &layer, act);
    let slow = rgcn_oracle(&g, &x, &layer, act);
    (&fast - &slow).iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `Ã (Ã H)` by explicit sums.
pub fn two_hop_oracle(adj: &Array2<f64>, h: &Array2<f64>) -> Array2<f64> {
    let (n, d) = h.dim();
    let mut once = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        for j in 0..n {
            for k in 0..d {
                once[[i, k]] += adj[[i, j]] * h[[j, k]];
            }
        }
    }
    let mut twice = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        for j in 0..n {
            for k in 0..d {
                twice[[i, k]] += adj[[i, j]] * once[[j, k]];
            }
        }
    }
    twice
}

/// F1 of `cls` from raw counts; 0 whenever a denominator is 0.
pub fn f_oracle(preds: &[Stance], golds: &[Stance], cls: Stance) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&p, &g) in preds.iter().zip(golds) {
        if p == cls && g == cls {
            tp += 1.0;
        } else if p == cls {
            fp += 1.0;
        } else if g == cls {
            fn_ += 1.0;
        }
    }
    let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
    let recall = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn f_avg_oracle(preds: &[Stance], golds: &[Stance]) -> f64 {
    (f_oracle(preds, golds, Stance::Favor) + f_oracle(preds, golds, Stance::Against)) / 2.0
}

pub fn random_labels(rng: &mut ChaCha8Rng, len: usize) -> Vec<Stance> {
    (0..len).map(|_| Stance::from_index(rng.gen_range(0..3))).collect()
}

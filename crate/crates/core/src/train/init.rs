//! Weight initialization: fresh He-style draws, or inheritance from
//! trained parents.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::genome::{BatchNorm, EdgeGene, EdgeWeights, Genome, NodeId};

/// How the He variance is computed from the fan-in `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeVariance {
    /// variance = 2 / n
    #[default]
    Standard,
    /// variance = sqrt(2 / n); much wider than `Standard` for large fan-in
    Literal,
}

impl HeVariance {
    pub fn variance(self, fan_in: usize) -> f64 {
        let r = 2.0 / fan_in.max(1) as f64;
        match self {
            HeVariance::Literal => r.sqrt(),
            HeVariance::Standard => r,
        }
    }

    pub fn std_dev(self, fan_in: usize) -> f64 {
        self.variance(fan_in).sqrt()
    }
}

/// Number of weights feeding `node` through enabled edges.
pub fn fan_in(genome: &Genome, node: NodeId) -> usize {
    genome
        .enabled_edges()
        .filter(|e| e.out_node == node)
        .map(|e| e.weights.len())
        .sum()
}

fn edge_std(genome: &Genome, edge: &EdgeGene, variance: HeVariance) -> f64 {
    let n = fan_in(genome, edge.out_node);
    let n = if n == 0 { edge.weights.len() } else { n };
    variance.std_dev(n)
}

fn fresh_weights<R: Rng + ?Sized>(weights: &mut EdgeWeights, std: f64, rng: &mut R) {
    match weights {
        EdgeWeights::Convolutional { filter, .. } => {
            let normal = Normal::new(0.0, std).expect("finite std");
            for w in filter.iter_mut() {
                *w = normal.sample(rng);
            }
        }
        EdgeWeights::Pooling { scale } => *scale = 1.0,
    }
}

/// Redraws every weight: Gaussian filters with the He variance of the
/// destination node's fan-in, unit pooling scales, identity batch norm.
pub fn he_initialize<R: Rng + ?Sized>(genome: &mut Genome, variance: HeVariance, rng: &mut R) {
    let stds: Vec<f64> = genome.edges.iter().map(|e| edge_std(genome, e, variance)).collect();
    for (edge, std) in genome.edges.iter_mut().zip(stds) {
        fresh_weights(&mut edge.weights, std, rng);
    }
    for node in genome.nodes.iter_mut() {
        node.bn = BatchNorm::default();
    }
}

/// Copies weights and batch-norm state from the first parent that has the
/// same gene. Filters whose shape changed keep the overlapping top-left
/// block; every weight without a parent counterpart is freshly drawn.
pub fn epigenetic_initialize<R: Rng + ?Sized>(
    child: &mut Genome,
    parents: &[&Genome],
    variance: HeVariance,
    rng: &mut R,
) {
    let stds: Vec<f64> = child.edges.iter().map(|e| edge_std(child, e, variance)).collect();
    for (edge, std) in child.edges.iter_mut().zip(stds) {
        let source = parents
            .iter()
            .find_map(|p| p.edge(edge.id))
            .filter(|src| src.kind() == edge.kind());
        match (source.map(|s| &s.weights), &mut edge.weights) {
            (
                Some(EdgeWeights::Convolutional {
                    filter_x: px,
                    filter_y: py,
                    filter: pf,
                }),
                EdgeWeights::Convolutional {
                    filter_x,
                    filter_y,
                    filter,
                },
            ) => {
                let normal = Normal::new(0.0, std).expect("finite std");
                for y in 0..*filter_y {
                    for x in 0..*filter_x {
                        filter[y * *filter_x + x] = if x < *px && y < *py {
                            pf[y * px + x]
                        } else {
                            normal.sample(rng)
                        };
                    }
                }
            }
            (Some(EdgeWeights::Pooling { scale: ps }), EdgeWeights::Pooling { scale }) => *scale = *ps,
            (_, weights) => fresh_weights(weights, std, rng),
        }
    }
    for node in child.nodes.iter_mut() {
        node.bn = parents
            .iter()
            .find_map(|p| p.node(node.id))
            .map_or_else(BatchNorm::default, |n| n.bn);
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::Operator;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{name} must lie in [0, 1], got {value}")]
    Rate { name: &'static str, value: f64 },
    #[error("operator weight for {0} is negative or not finite")]
    Weight(Operator),
    #[error("no mutation operator has positive weight")]
    NoOperators,
    #[error("size delta list must be nonempty and contain no zero")]
    SizeDeltas,
}

/// Relative selection weights for each mutation operator. Only operators
/// allowed by the enabled feature set take part in selection; weights are
/// normalized over those.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorWeights {
    pub disable_edge: f64,
    pub enable_edge: f64,
    pub split_edge: f64,
    pub add_edge: f64,
    pub change_size: f64,
    pub change_size_x: f64,
    pub change_size_y: f64,
    pub add_node: f64,
    pub split_node: f64,
    pub merge_node: f64,
    pub disable_node: f64,
    pub enable_node: f64,
    pub alter_edge_type: f64,
}

impl Default for OperatorWeights {
    fn default() -> Self {
        OperatorWeights {
            disable_edge: 2.5,
            enable_edge: 2.5,
            split_edge: 3.0,
            add_edge: 3.0,
            change_size: 2.0,
            change_size_x: 1.0,
            change_size_y: 1.0,
            add_node: 3.0,
            split_node: 2.0,
            merge_node: 2.0,
            disable_node: 1.5,
            enable_node: 1.5,
            alter_edge_type: 1.0,
        }
    }
}

impl OperatorWeights {
    fn entries(&self) -> [(Operator, f64); 13] {
        [
            (Operator::DisableEdge, self.disable_edge),
            (Operator::EnableEdge, self.enable_edge),
            (Operator::SplitEdge, self.split_edge),
            (Operator::AddEdge, self.add_edge),
            (Operator::ChangeSize, self.change_size),
            (Operator::ChangeSizeX, self.change_size_x),
            (Operator::ChangeSizeY, self.change_size_y),
            (Operator::AddNode, self.add_node),
            (Operator::SplitNode, self.split_node),
            (Operator::MergeNode, self.merge_node),
            (Operator::DisableNode, self.disable_node),
            (Operator::EnableNode, self.enable_node),
            (Operator::AlterEdgeType, self.alter_edge_type),
        ]
    }
}

fn is_node_op(op: Operator) -> bool {
    matches!(
        op,
        Operator::AddNode | Operator::SplitNode | Operator::MergeNode | Operator::DisableNode | Operator::EnableNode
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorConfig {
    pub weights: OperatorWeights,
    pub crossover_rate: f64,
    /// Chance of keeping an edge present only in the fitter parent.
    pub more_fit_rate: f64,
    /// Chance of keeping an edge present only in the less fit parent.
    pub less_fit_rate: f64,
    pub node_ops_enabled: bool,
    pub pooling_enabled: bool,
    pub size_deltas: Vec<i64>,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        OperatorConfig::new(true, false)
    }
}

impl OperatorConfig {
    pub fn new(node_ops_enabled: bool, pooling_enabled: bool) -> Self {
        OperatorConfig {
            weights: OperatorWeights::default(),
            crossover_rate: 0.2,
            more_fit_rate: 0.8,
            less_fit_rate: 0.4,
            node_ops_enabled,
            pooling_enabled,
            size_deltas: vec![-2, -1, 1, 2],
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, value) in [
            ("crossover_rate", self.crossover_rate),
            ("more_fit_rate", self.more_fit_rate),
            ("less_fit_rate", self.less_fit_rate),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConfigError::Rate { name, value });
            }
        }
        for (op, w) in self.weights.entries() {
            if !w.is_finite() || w < 0.0 {
                return Err(ConfigError::Weight(op));
            }
        }
        if self.size_deltas.is_empty() || self.size_deltas.contains(&0) {
            return Err(ConfigError::SizeDeltas);
        }
        let probs = self.selection_probabilities();
        let total: f64 = probs.iter().map(|(_, p)| p).sum();
        if probs.is_empty() || (total - 1.0).abs() > 1e-12 {
            return Err(ConfigError::NoOperators);
        }
        Ok(())
    }

    /// Normalized selection probability of every active mutation operator.
    pub fn selection_probabilities(&self) -> Vec<(Operator, f64)> {
        let active: Vec<(Operator, f64)> = self
            .weights
            .entries()
            .into_iter()
            .filter(|&(op, w)| {
                w > 0.0
                    && (self.node_ops_enabled || !is_node_op(op))
                    && (self.pooling_enabled || op != Operator::AlterEdgeType)
            })
            .collect();
        let total: f64 = active.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            return Vec::new();
        }
        active.into_iter().map(|(op, w)| (op, w / total)).collect()
    }

    pub fn sample_operator<R: Rng + ?Sized>(&self, rng: &mut R) -> Operator {
        let probs = self.selection_probabilities();
        let mut u: f64 = rng.random();
        for &(op, p) in &probs {
            if u < p {
                return op;
            }
            u -= p;
        }
        probs.last().expect("validated config has operators").0
    }
}

//! CNN genome data model.
//!
//! A genome is a set of feature-map nodes connected by convolutional or
//! pooling edges. Every node carries a depth in `[0, 1]`; edges always go
//! from a shallower to a deeper node, so sorting nodes by depth yields an
//! evaluation order without any graph traversal.

mod archive;
mod dot;

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use archive::{deserialize, serialize, ArchiveError, GENOME_FORMAT, GENOME_VERSION};
pub use dot::export_dot;

/// Innovation number of a node gene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

/// Innovation number of an edge gene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub u64);

/// Identifier assigned by the master to every genome it issues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GenerationId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for GenerationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Input,
    Hidden,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Convolutional,
    Pooling,
}

/// The operator that produced a genome. The string tags are stable and
/// appear in stats files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Initial,
    DisableEdge,
    EnableEdge,
    SplitEdge,
    AddEdge,
    AlterEdgeType,
    AddNode,
    SplitNode,
    MergeNode,
    DisableNode,
    EnableNode,
    ChangeSize,
    ChangeSizeX,
    ChangeSizeY,
    Crossover,
}

impl Operator {
    pub const ALL: [Operator; 15] = [
        Operator::Initial,
        Operator::DisableEdge,
        Operator::EnableEdge,
        Operator::SplitEdge,
        Operator::AddEdge,
        Operator::AlterEdgeType,
        Operator::AddNode,
        Operator::SplitNode,
        Operator::MergeNode,
        Operator::DisableNode,
        Operator::EnableNode,
        Operator::ChangeSize,
        Operator::ChangeSizeX,
        Operator::ChangeSizeY,
        Operator::Crossover,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Operator::Initial => "initial",
            Operator::DisableEdge => "disable_edge",
            Operator::EnableEdge => "enable_edge",
            Operator::SplitEdge => "split_edge",
            Operator::AddEdge => "add_edge",
            Operator::AlterEdgeType => "alter_edge_type",
            Operator::AddNode => "add_node",
            Operator::SplitNode => "split_node",
            Operator::MergeNode => "merge_node",
            Operator::DisableNode => "disable_node",
            Operator::EnableNode => "enable_node",
            Operator::ChangeSize => "change_size",
            Operator::ChangeSizeX => "change_size_x",
            Operator::ChangeSizeY => "change_size_y",
            Operator::Crossover => "crossover",
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Validation cross-entropy, or the "not yet evaluated" sentinel which
/// orders after every real value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fitness {
    #[default]
    Unevaluated,
    Value(f64),
}

impl Fitness {
    pub fn value(self) -> Option<f64> {
        match self {
            Fitness::Value(v) => Some(v),
            Fitness::Unevaluated => None,
        }
    }

    pub fn is_evaluated(self) -> bool {
        matches!(self, Fitness::Value(_))
    }

    /// Total order: lower values are fitter, `Unevaluated` is last.
    pub fn cmp_fitness(self, other: Fitness) -> Ordering {
        match (self, other) {
            (Fitness::Value(a), Fitness::Value(b)) => a.total_cmp(&b),
            (Fitness::Value(_), Fitness::Unevaluated) => Ordering::Less,
            (Fitness::Unevaluated, Fitness::Value(_)) => Ordering::Greater,
            (Fitness::Unevaluated, Fitness::Unevaluated) => Ordering::Equal,
        }
    }
}

impl fmt::Display for Fitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fitness::Value(v) => write!(f, "{v}"),
            Fitness::Unevaluated => f.write_str("unevaluated"),
        }
    }
}

/// Per-feature-map batch normalization state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: f64,
    pub beta: f64,
    pub running_mean: f64,
    pub running_var: f64,
}

impl Default for BatchNorm {
    fn default() -> Self {
        BatchNorm {
            gamma: 1.0,
            beta: 0.0,
            running_mean: 0.0,
            running_var: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeGene {
    pub id: NodeId,
    pub kind: NodeKind,
    pub depth: f64,
    pub size_x: usize,
    pub size_y: usize,
    pub enabled: bool,
    pub bn: BatchNorm,
}

impl NodeGene {
    pub fn hidden(id: NodeId, depth: f64, size_x: usize, size_y: usize) -> Self {
        NodeGene {
            id,
            kind: NodeKind::Hidden,
            depth,
            size_x,
            size_y,
            enabled: true,
            bn: BatchNorm::default(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.size_x, self.size_y)
    }

    pub fn is_hidden(&self) -> bool {
        self.kind == NodeKind::Hidden
    }
}

/// Trainable parameters of an edge. Filters are stored row-major with
/// `x` varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EdgeWeights {
    Convolutional {
        filter_x: usize,
        filter_y: usize,
        filter: Vec<f64>,
    },
    Pooling {
        scale: f64,
    },
}

impl EdgeWeights {
    /// A zero filter of the given shape.
    pub fn zero_filter((filter_x, filter_y): (usize, usize)) -> Self {
        EdgeWeights::Convolutional {
            filter_x,
            filter_y,
            filter: vec![0.0; filter_x * filter_y],
        }
    }

    pub fn kind(&self) -> EdgeKind {
        match self {
            EdgeWeights::Convolutional { .. } => EdgeKind::Convolutional,
            EdgeWeights::Pooling { .. } => EdgeKind::Pooling,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            EdgeWeights::Convolutional { filter, .. } => filter.len(),
            EdgeWeights::Pooling { .. } => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeGene {
    pub id: EdgeId,
    pub in_node: NodeId,
    pub out_node: NodeId,
    pub enabled: bool,
    pub weights: EdgeWeights,
}

impl EdgeGene {
    pub fn kind(&self) -> EdgeKind {
        self.weights.kind()
    }
}

/// Filter size connecting two feature maps: `|out - in| + 1` per dimension.
pub fn conv_filter_dims(in_dims: (usize, usize), out_dims: (usize, usize)) -> (usize, usize) {
    (in_dims.0.abs_diff(out_dims.0) + 1, in_dims.1.abs_diff(out_dims.1) + 1)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenomeError {
    #[error("genome has {0} input nodes, expected exactly one")]
    InputCount(usize),
    #[error("genome has no output nodes")]
    NoOutputs,
    #[error("duplicate node innovation {0}")]
    DuplicateNode(NodeId),
    #[error("duplicate edge innovation {0}")]
    DuplicateEdge(EdgeId),
    #[error("node {id} has invalid depth {depth} for its kind")]
    BadDepth { id: NodeId, depth: f64 },
    #[error("node {0} has a zero-sized feature map")]
    ZeroSize(NodeId),
    #[error("output node {0} must be 1x1")]
    OutputSize(NodeId),
    #[error("input or output node {0} is disabled")]
    DisabledTerminal(NodeId),
    #[error("edge {edge} references missing node {node}")]
    MissingNode { edge: EdgeId, node: NodeId },
    #[error("enabled edge {0} touches a disabled node")]
    EnabledEdgeDisabledNode(EdgeId),
    #[error("edge {0} does not feed forward")]
    NotFeedForward(EdgeId),
    #[error("more than one edge between {0} and {1}")]
    DuplicatePair(NodeId, NodeId),
    #[error("edge {0} filter shape does not match its endpoint sizes")]
    FilterShape(EdgeId),
    #[error("pooling edge {0} maps a smaller feature map onto a larger one")]
    PoolingUpsample(EdgeId),
    #[error("edge {0} carries a non-finite weight")]
    NonFiniteWeight(EdgeId),
    #[error("output node {0} is unreachable from the input")]
    Unreachable(NodeId),
}

/// A CNN blueprint plus its fitness and lineage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub generation_id: GenerationId,
    pub generated_by: Operator,
    #[serde(default)]
    pub parents: Vec<GenerationId>,
    pub fitness: Fitness,
    /// Sorted by innovation id.
    pub nodes: Vec<NodeGene>,
    /// Sorted by innovation id.
    pub edges: Vec<EdgeGene>,
}

impl Genome {
    /// The starting network: the input map connected straight to one 1x1
    /// output per class. Node ids are `0` (input) and `1..=classes`; edge
    /// `c` connects the input to output `c + 1`.
    pub fn minimal(input_dims: (usize, usize), num_classes: usize) -> Genome {
        assert!(num_classes >= 2, "need at least two classes");
        assert!(input_dims.0 >= 1 && input_dims.1 >= 1);
        let mut nodes = vec![NodeGene {
            id: NodeId(0),
            kind: NodeKind::Input,
            depth: 0.0,
            size_x: input_dims.0,
            size_y: input_dims.1,
            enabled: true,
            bn: BatchNorm::default(),
        }];
        let mut edges = Vec::with_capacity(num_classes);
        for c in 0..num_classes {
            let out = NodeId(c as u64 + 1);
            nodes.push(NodeGene {
                id: out,
                kind: NodeKind::Output,
                depth: 1.0,
                size_x: 1,
                size_y: 1,
                enabled: true,
                bn: BatchNorm::default(),
            });
            edges.push(EdgeGene {
                id: EdgeId(c as u64),
                in_node: NodeId(0),
                out_node: out,
                enabled: true,
                weights: EdgeWeights::zero_filter(conv_filter_dims(input_dims, (1, 1))),
            });
        }
        Genome {
            generation_id: GenerationId(0),
            generated_by: Operator::Initial,
            parents: Vec::new(),
            fitness: Fitness::Unevaluated,
            nodes,
            edges,
        }
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeGene> {
        self.nodes
            .binary_search_by_key(&id, |n| n.id)
            .ok()
            .map(|i| &self.nodes[i])
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut NodeGene> {
        self.nodes
            .binary_search_by_key(&id, |n| n.id)
            .ok()
            .map(move |i| &mut self.nodes[i])
    }

    pub fn edge(&self, id: EdgeId) -> Option<&EdgeGene> {
        self.edges
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|i| &self.edges[i])
    }

    pub fn edge_mut(&mut self, id: EdgeId) -> Option<&mut EdgeGene> {
        self.edges
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(move |i| &mut self.edges[i])
    }

    /// Inserts a node, keeping the id order. Replaces any node with the same id.
    pub fn insert_node(&mut self, node: NodeGene) {
        match self.nodes.binary_search_by_key(&node.id, |n| n.id) {
            Ok(i) => self.nodes[i] = node,
            Err(i) => self.nodes.insert(i, node),
        }
    }

    pub fn insert_edge(&mut self, edge: EdgeGene) {
        match self.edges.binary_search_by_key(&edge.id, |e| e.id) {
            Ok(i) => self.edges[i] = edge,
            Err(i) => self.edges.insert(i, edge),
        }
    }

    pub fn input_node(&self) -> &NodeGene {
        self.nodes
            .iter()
            .find(|n| n.kind == NodeKind::Input)
            .expect("genome without input node")
    }

    pub fn input_dims(&self) -> (usize, usize) {
        self.input_node().dims()
    }

    /// Output nodes in class order (ascending innovation id).
    pub fn output_nodes(&self) -> impl Iterator<Item = &NodeGene> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Output)
    }

    pub fn num_classes(&self) -> usize {
        self.output_nodes().count()
    }

    pub fn has_edge_between(&self, from: NodeId, to: NodeId) -> bool {
        self.edges
            .iter()
            .any(|e| (e.in_node == from && e.out_node == to) || (e.in_node == to && e.out_node == from))
    }

    pub fn enabled_edges(&self) -> impl Iterator<Item = &EdgeGene> {
        self.edges.iter().filter(|e| e.enabled)
    }

    /// Resets the filter of every edge touching `node` to the shape implied
    /// by the current node sizes. Entries in the overlapping top-left block
    /// are kept; new entries are zero.
    pub fn reshape_incident_filters(&mut self, node: NodeId) {
        let sizes: Vec<(NodeId, (usize, usize))> = self.nodes.iter().map(|n| (n.id, n.dims())).collect();
        let dims_of = |id: NodeId| sizes.binary_search_by_key(&id, |(i, _)| *i).map(|i| sizes[i].1).ok();
        for edge in self.edges.iter_mut() {
            if edge.in_node != node && edge.out_node != node {
                continue;
            }
            let (Some(a), Some(b)) = (dims_of(edge.in_node), dims_of(edge.out_node)) else {
                continue;
            };
            if let EdgeWeights::Convolutional {
                filter_x,
                filter_y,
                filter,
            } = &mut edge.weights
            {
                let (nx, ny) = conv_filter_dims(a, b);
                if (nx, ny) != (*filter_x, *filter_y) {
                    *filter = resize_filter(filter, (*filter_x, *filter_y), (nx, ny));
                    *filter_x = nx;
                    *filter_y = ny;
                }
            }
        }
    }

    /// True iff every output node is reachable from the input through
    /// enabled nodes and edges.
    pub fn reachable(&self) -> bool {
        self.first_unreachable_output().is_none()
    }

    fn first_unreachable_output(&self) -> Option<NodeId> {
        let reached = self.forward_reach();
        self.output_nodes()
            .filter(|n| n.enabled)
            .find(|n| !reached[self.node_index(n.id)])
            .map(|n| n.id)
    }

    fn node_index(&self, id: NodeId) -> usize {
        self.nodes.binary_search_by_key(&id, |n| n.id).expect("node id present")
    }

    /// Marks nodes reachable from the input via enabled elements.
    pub(crate) fn forward_reach(&self) -> Vec<bool> {
        let mut reached = vec![false; self.nodes.len()];
        let Some(start) = self.nodes.iter().position(|n| n.kind == NodeKind::Input && n.enabled) else {
            return reached;
        };
        let adj = self.enabled_adjacency(false);
        reached[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !reached[j] {
                    reached[j] = true;
                    queue.push_back(j);
                }
            }
        }
        reached
    }

    /// Marks nodes from which some enabled output can be reached.
    pub(crate) fn backward_reach(&self) -> Vec<bool> {
        let mut reached = vec![false; self.nodes.len()];
        let adj = self.enabled_adjacency(true);
        let mut queue = VecDeque::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.kind == NodeKind::Output && n.enabled {
                reached[i] = true;
                queue.push_back(i);
            }
        }
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !reached[j] {
                    reached[j] = true;
                    queue.push_back(j);
                }
            }
        }
        reached
    }

    fn enabled_adjacency(&self, reverse: bool) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in self.edges.iter().filter(|e| e.enabled) {
            let (Ok(a), Ok(b)) = (
                self.nodes.binary_search_by_key(&e.in_node, |n| n.id),
                self.nodes.binary_search_by_key(&e.out_node, |n| n.id),
            ) else {
                continue;
            };
            if !self.nodes[a].enabled || !self.nodes[b].enabled {
                continue;
            }
            if reverse {
                adj[b].push(a);
            } else {
                adj[a].push(b);
            }
        }
        adj
    }

    /// Enabled node ids sorted by depth, ties broken by innovation id.
    pub fn evaluation_order(&self) -> Result<Vec<NodeId>, GenomeError> {
        let mut order: Vec<&NodeGene> = self.nodes.iter().filter(|n| n.enabled).collect();
        order.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.id.cmp(&b.id)));
        for e in self.enabled_edges() {
            let (Some(a), Some(b)) = (self.node(e.in_node), self.node(e.out_node)) else {
                return Err(GenomeError::MissingNode {
                    edge: e.id,
                    node: e.in_node,
                });
            };
            if a.depth >= b.depth {
                return Err(GenomeError::NotFeedForward(e.id));
            }
        }
        Ok(order.into_iter().map(|n| n.id).collect())
    }

    /// Checks every structural invariant, including output reachability.
    pub fn validate(&self) -> Result<(), GenomeError> {
        self.validate_structure()?;
        match self.first_unreachable_output() {
            Some(id) => Err(GenomeError::Unreachable(id)),
            None => Ok(()),
        }
    }

    /// Checks every invariant except reachability.
    pub fn validate_structure(&self) -> Result<(), GenomeError> {
        let inputs = self.nodes.iter().filter(|n| n.kind == NodeKind::Input).count();
        if inputs != 1 {
            return Err(GenomeError::InputCount(inputs));
        }
        if self.num_classes() == 0 {
            return Err(GenomeError::NoOutputs);
        }
        for w in self.nodes.windows(2) {
            if w[0].id >= w[1].id {
                return Err(GenomeError::DuplicateNode(w[1].id));
            }
        }
        for w in self.edges.windows(2) {
            if w[0].id >= w[1].id {
                return Err(GenomeError::DuplicateEdge(w[1].id));
            }
        }
        for n in &self.nodes {
            let depth_ok = match n.kind {
                NodeKind::Input => n.depth == 0.0,
                NodeKind::Output => n.depth == 1.0,
                NodeKind::Hidden => n.depth > 0.0 && n.depth < 1.0,
            };
            if !depth_ok {
                return Err(GenomeError::BadDepth {
                    id: n.id,
                    depth: n.depth,
                });
            }
            if n.size_x == 0 || n.size_y == 0 {
                return Err(GenomeError::ZeroSize(n.id));
            }
            if n.kind == NodeKind::Output && (n.size_x, n.size_y) != (1, 1) {
                return Err(GenomeError::OutputSize(n.id));
            }
            if n.kind != NodeKind::Hidden && !n.enabled {
                return Err(GenomeError::DisabledTerminal(n.id));
            }
        }
        let mut pairs = std::collections::HashSet::with_capacity(self.edges.len());
        for e in &self.edges {
            let a = self.node(e.in_node).ok_or(GenomeError::MissingNode {
                edge: e.id,
                node: e.in_node,
            })?;
            let b = self.node(e.out_node).ok_or(GenomeError::MissingNode {
                edge: e.id,
                node: e.out_node,
            })?;
            if a.depth >= b.depth {
                return Err(GenomeError::NotFeedForward(e.id));
            }
            if !pairs.insert((e.in_node, e.out_node)) {
                return Err(GenomeError::DuplicatePair(e.in_node, e.out_node));
            }
            if e.enabled && (!a.enabled || !b.enabled) {
                return Err(GenomeError::EnabledEdgeDisabledNode(e.id));
            }
            match &e.weights {
                EdgeWeights::Convolutional {
                    filter_x,
                    filter_y,
                    filter,
                } => {
                    if (*filter_x, *filter_y) != conv_filter_dims(a.dims(), b.dims())
                        || filter.len() != filter_x * filter_y
                    {
                        return Err(GenomeError::FilterShape(e.id));
                    }
                    if filter.iter().any(|w| !w.is_finite()) {
                        return Err(GenomeError::NonFiniteWeight(e.id));
                    }
                }
                EdgeWeights::Pooling { scale } => {
                    if e.enabled && (b.size_x > a.size_x || b.size_y > a.size_y) {
                        return Err(GenomeError::PoolingUpsample(e.id));
                    }
                    if !scale.is_finite() {
                        return Err(GenomeError::NonFiniteWeight(e.id));
                    }
                }
            }
        }
        Ok(())
    }

    /// Number of trainable reals in the expressed network: filter entries
    /// and pooling scales of enabled edges plus `gamma`/`beta` of enabled
    /// hidden nodes.
    pub fn weight_count(&self) -> usize {
        let edges: usize = self.enabled_edges().map(|e| e.weights.len()).sum();
        let bn = self.nodes.iter().filter(|n| n.enabled && n.is_hidden()).count() * 2;
        edges + bn
    }

    pub fn enabled_node_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.enabled).count()
    }

    pub fn enabled_edge_count(&self, kind: EdgeKind) -> usize {
        self.enabled_edges().filter(|e| e.kind() == kind).count()
    }
}

/// Copies the overlapping top-left block of a filter into a new shape.
pub fn resize_filter(old: &[f64], old_dims: (usize, usize), new_dims: (usize, usize)) -> Vec<f64> {
    let mut out = vec![0.0; new_dims.0 * new_dims.1];
    let cx = old_dims.0.min(new_dims.0);
    let cy = old_dims.1.min(new_dims.1);
    for y in 0..cy {
        out[y * new_dims.0..y * new_dims.0 + cx].copy_from_slice(&old[y * old_dims.0..y * old_dims.0 + cx]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_dims_examples() {
        assert_eq!(conv_filter_dims((28, 28), (1, 1)), (28, 28));
        assert_eq!(conv_filter_dims((5, 5), (5, 5)), (1, 1));
        assert_eq!(conv_filter_dims((15, 15), (10, 12)), (6, 4));
    }

    #[test]
    fn minimal_genome_shape() {
        let g = Genome::minimal((28, 28), 10);
        assert_eq!(g.nodes.len(), 11);
        assert_eq!(g.edges.len(), 10);
        for e in &g.edges {
            match &e.weights {
                EdgeWeights::Convolutional { filter_x, filter_y, .. } => assert_eq!((*filter_x, *filter_y), (28, 28)),
                _ => panic!("minimal edges are convolutional"),
            }
        }
        assert_eq!(g.fitness, Fitness::Unevaluated);
        g.validate().unwrap();

        let g2 = Genome::minimal((28, 28), 2);
        assert_eq!((g2.nodes.len(), g2.edges.len()), (3, 2));
        g2.validate().unwrap();
    }

    #[test]
    fn disabling_single_path_breaks_reachability() {
        let mut g = Genome::minimal((28, 28), 10);
        assert!(g.reachable());
        g.edges[3].enabled = false;
        assert!(!g.reachable());
        assert_eq!(g.validate(), Err(GenomeError::Unreachable(NodeId(4))));
    }

    #[test]
    fn minimal_evaluation_order() {
        let g = Genome::minimal((28, 28), 10);
        let order: Vec<u64> = g.evaluation_order().unwrap().iter().map(|n| n.0).collect();
        assert_eq!(order, (0..=10).collect::<Vec<_>>());
    }

    #[test]
    fn evaluation_order_rejects_backward_edge() {
        let mut g = Genome::minimal((4, 4), 2);
        g.insert_node(NodeGene::hidden(NodeId(3), 0.5, 2, 2));
        g.insert_edge(EdgeGene {
            id: EdgeId(9),
            in_node: NodeId(1),
            out_node: NodeId(3),
            enabled: true,
            weights: EdgeWeights::Pooling { scale: 1.0 },
        });
        assert_eq!(g.evaluation_order(), Err(GenomeError::NotFeedForward(EdgeId(9))));
    }

    #[test]
    fn fitness_ordering_puts_unevaluated_last() {
        assert_eq!(Fitness::Value(1e300).cmp_fitness(Fitness::Unevaluated), Ordering::Less);
        assert_eq!(Fitness::Value(1.0).cmp_fitness(Fitness::Value(2.0)), Ordering::Less);
    }

    #[test]
    fn resize_keeps_top_left_block() {
        let old: Vec<f64> = (0..6).map(f64::from).collect(); // 3 wide, 2 tall
        let grown = resize_filter(&old, (3, 2), (4, 3));
        assert_eq!(grown, vec![0., 1., 2., 0., 3., 4., 5., 0., 0., 0., 0., 0.]);
        let shrunk = resize_filter(&old, (3, 2), (2, 1));
        assert_eq!(shrunk, vec![0., 1.]);
    }

    #[test]
    fn pooling_edge_cannot_upsample() {
        let mut g = Genome::minimal((4, 4), 2);
        g.insert_node(NodeGene::hidden(NodeId(3), 0.5, 6, 6));
        g.insert_edge(EdgeGene {
            id: EdgeId(5),
            in_node: NodeId(0),
            out_node: NodeId(3),
            enabled: true,
            weights: EdgeWeights::Pooling { scale: 1.0 },
        });
        assert_eq!(g.validate_structure(), Err(GenomeError::PoolingUpsample(EdgeId(5))));
    }
}

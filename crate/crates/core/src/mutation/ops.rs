//! Structural mutation operators.
//!
//! Every operator clones its parent and returns a new candidate. New edges
//! carry placeholder weights (zero filters, unit pooling scales); the
//! candidate driver fills them in afterwards. Candidates are not validated
//! here.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::config::OperatorConfig;
use super::registry::InnovationRegistry;
use super::MutationError;
use crate::genome::{
    conv_filter_dims, EdgeGene, EdgeId, EdgeKind, EdgeWeights, Fitness, Genome, NodeGene, NodeId, Operator,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeAxis {
    Both,
    X,
    Y,
}

/// Applies mutation operator `op` to `parent`.
pub fn apply<R: Rng + ?Sized>(
    op: Operator,
    parent: &Genome,
    registry: &mut InnovationRegistry,
    config: &OperatorConfig,
    rng: &mut R,
) -> Result<Genome, MutationError> {
    let pooling = config.pooling_enabled;
    let mut child = match op {
        Operator::DisableEdge => disable_edge(parent, rng),
        Operator::EnableEdge => enable_edge(parent, rng),
        Operator::SplitEdge => split_edge(parent, registry, pooling, rng),
        Operator::AddEdge => add_edge(parent, registry, pooling, rng),
        Operator::AlterEdgeType => {
            if pooling {
                alter_edge_type(parent, rng)
            } else {
                Err(MutationError::Inapplicable)
            }
        }
        Operator::AddNode => add_node(parent, registry, pooling, rng),
        Operator::SplitNode => split_node(parent, registry, rng),
        Operator::MergeNode => merge_node(parent, registry, rng),
        Operator::DisableNode => disable_node(parent, rng),
        Operator::EnableNode => enable_node(parent, rng),
        Operator::ChangeSize => change_node_size(parent, SizeAxis::Both, &config.size_deltas, rng),
        Operator::ChangeSizeX => change_node_size(parent, SizeAxis::X, &config.size_deltas, rng),
        Operator::ChangeSizeY => change_node_size(parent, SizeAxis::Y, &config.size_deltas, rng),
        Operator::Initial | Operator::Crossover => Err(MutationError::Inapplicable),
    }?;
    child.generated_by = op;
    Ok(child)
}

fn offspring(parent: &Genome) -> Genome {
    let mut child = parent.clone();
    child.fitness = Fitness::Unevaluated;
    child.parents = vec![parent.generation_id];
    child
}

fn random_kind<R: Rng + ?Sized>(pooling: bool, rng: &mut R) -> EdgeKind {
    if pooling && rng.random_bool(0.5) {
        EdgeKind::Pooling
    } else {
        EdgeKind::Convolutional
    }
}

fn placeholder_weights(kind: EdgeKind, from: (usize, usize), to: (usize, usize)) -> EdgeWeights {
    match kind {
        EdgeKind::Convolutional => EdgeWeights::zero_filter(conv_filter_dims(from, to)),
        EdgeKind::Pooling => EdgeWeights::Pooling { scale: 1.0 },
    }
}

/// Adds an enabled edge `from -> to` with placeholder weights.
fn connect(g: &mut Genome, registry: &mut InnovationRegistry, from: NodeId, to: NodeId, kind: EdgeKind) -> EdgeId {
    let a = g.node(from).expect("edge source exists").dims();
    let b = g.node(to).expect("edge target exists").dims();
    let id = registry.edge_id(from, to);
    g.insert_edge(EdgeGene {
        id,
        in_node: from,
        out_node: to,
        enabled: true,
        weights: placeholder_weights(kind, a, b),
    });
    id
}

fn enabled_hidden(g: &Genome) -> Vec<NodeId> {
    g.nodes
        .iter()
        .filter(|n| n.enabled && n.is_hidden())
        .map(|n| n.id)
        .collect()
}

fn set_node_enabled(g: &mut Genome, id: NodeId, enabled: bool) {
    g.node_mut(id).expect("node exists").enabled = enabled;
}

fn disable_with_edges(g: &mut Genome, id: NodeId) {
    set_node_enabled(g, id, false);
    for e in g.edges.iter_mut() {
        if e.in_node == id || e.out_node == id {
            e.enabled = false;
        }
    }
}

pub fn disable_edge<R: Rng + ?Sized>(parent: &Genome, rng: &mut R) -> Result<Genome, MutationError> {
    let candidates: Vec<EdgeId> = parent.enabled_edges().map(|e| e.id).collect();
    let &id = candidates.choose(rng).ok_or(MutationError::Inapplicable)?;
    let mut child = offspring(parent);
    child.edge_mut(id).expect("chosen edge").enabled = false;
    Ok(child)
}

/// Enables a random disabled edge whose endpoints are both enabled.
pub fn enable_edge<R: Rng + ?Sized>(parent: &Genome, rng: &mut R) -> Result<Genome, MutationError> {
    let candidates: Vec<EdgeId> = parent
        .edges
        .iter()
        .filter(|e| {
            !e.enabled
                && parent.node(e.in_node).is_some_and(|n| n.enabled)
                && parent.node(e.out_node).is_some_and(|n| n.enabled)
        })
        .map(|e| e.id)
        .collect();
    let &id = candidates.choose(rng).ok_or(MutationError::Inapplicable)?;
    let mut child = offspring(parent);
    child.edge_mut(id).expect("chosen edge").enabled = true;
    Ok(child)
}

pub fn split_edge<R: Rng + ?Sized>(
    parent: &Genome,
    registry: &mut InnovationRegistry,
    pooling: bool,
    rng: &mut R,
) -> Result<Genome, MutationError> {
    let candidates: Vec<&EdgeGene> = parent.enabled_edges().collect();
    let edge = (*candidates.choose(rng).ok_or(MutationError::Inapplicable)?).clone();
    let from = parent.node(edge.in_node).expect("edge source");
    let to = parent.node(edge.out_node).expect("edge target");

    let mut node_id = registry.split_node_id(edge.id);
    if parent.node(node_id).is_some() {
        // this genome already split this edge once; the new node is a new structure
        node_id = registry.fresh_node();
    }
    let node = NodeGene::hidden(
        node_id,
        (from.depth + to.depth) / 2.0,
        (from.size_x + to.size_x).div_ceil(2),
        (from.size_y + to.size_y).div_ceil(2),
    );
    let (a, b) = (from.id, to.id);

    let mut child = offspring(parent);
    child.edge_mut(edge.id).expect("split edge").enabled = false;
    child.insert_node(node);
    let k1 = random_kind(pooling, rng);
    let k2 = random_kind(pooling, rng);
    connect(&mut child, registry, a, node_id, k1);
    connect(&mut child, registry, node_id, b, k2);
    Ok(child)
}

/// All `(shallower, deeper)` enabled node pairs with no edge between them.
pub fn addable_pairs(g: &Genome) -> Vec<(NodeId, NodeId)> {
    let existing: std::collections::HashSet<(NodeId, NodeId)> =
        g.edges.iter().map(|e| (e.in_node, e.out_node)).collect();
    let mut pairs = Vec::new();
    for a in g.nodes.iter().filter(|n| n.enabled) {
        for b in g.nodes.iter().filter(|n| n.enabled) {
            if a.depth < b.depth && !existing.contains(&(a.id, b.id)) {
                pairs.push((a.id, b.id));
            }
        }
    }
    pairs
}

pub fn add_edge<R: Rng + ?Sized>(
    parent: &Genome,
    registry: &mut InnovationRegistry,
    pooling: bool,
    rng: &mut R,
) -> Result<Genome, MutationError> {
    let pairs = addable_pairs(parent);
    let &(a, b) = pairs.choose(rng).ok_or(MutationError::Inapplicable)?;
    let mut child = offspring(parent);
    let kind = random_kind(pooling, rng);
    connect(&mut child, registry, a, b, kind);
    Ok(child)
}

/// Flips one enabled edge between convolution and pooling. The new
/// weights are placeholders: a unit scale, or a zero filter.
pub fn alter_edge_type<R: Rng + ?Sized>(parent: &Genome, rng: &mut R) -> Result<Genome, MutationError> {
    let candidates: Vec<EdgeId> = parent.enabled_edges().map(|e| e.id).collect();
    let &id = candidates.choose(rng).ok_or(MutationError::Inapplicable)?;
    let mut child = offspring(parent);
    let e = child.edge(id).expect("chosen edge");
    let from = child.node(e.in_node).expect("source").dims();
    let to = child.node(e.out_node).expect("target").dims();
    let flipped = match e.kind() {
        EdgeKind::Convolutional => EdgeKind::Pooling,
        EdgeKind::Pooling => EdgeKind::Convolutional,
    };
    child.edge_mut(id).expect("chosen edge").weights = placeholder_weights(flipped, from, to);
    Ok(child)
}

pub fn add_node<R: Rng + ?Sized>(
    parent: &Genome,
    registry: &mut InnovationRegistry,
    pooling: bool,
    rng: &mut R,
) -> Result<Genome, MutationError> {
    let depth = loop {
        let d: f64 = rng.random();
        if d > 0.0 {
            break d;
        }
    };
    add_node_at(parent, registry, pooling, depth, rng)
}

/// `add_node` with a fixed depth in `(0, 1)`.
pub fn add_node_at<R: Rng + ?Sized>(
    parent: &Genome,
    registry: &mut InnovationRegistry,
    pooling: bool,
    depth: f64,
    rng: &mut R,
) -> Result<Genome, MutationError> {
    let shallower: Vec<&NodeGene> = parent.nodes.iter().filter(|n| n.enabled && n.depth < depth).collect();
    let deeper: Vec<&NodeGene> = parent.nodes.iter().filter(|n| n.enabled && n.depth > depth).collect();
    if shallower.is_empty() || deeper.is_empty() {
        return Err(MutationError::Inapplicable);
    }
    let k_in = rng.random_range(1..=5usize).min(shallower.len());
    let k_out = rng.random_range(1..=5usize).min(deeper.len());
    let inputs: Vec<&NodeGene> = shallower.choose_multiple(rng, k_in).copied().collect();
    let outputs: Vec<&NodeGene> = deeper.choose_multiple(rng, k_out).copied().collect();
    let (size_x, size_y) = add_node_size(&inputs, &outputs);
    let input_ids: Vec<NodeId> = inputs.iter().map(|n| n.id).collect();
    let output_ids: Vec<NodeId> = outputs.iter().map(|n| n.id).collect();

    let mut child = offspring(parent);
    let id = registry.fresh_node();
    child.insert_node(NodeGene::hidden(id, depth, size_x, size_y));
    for a in input_ids {
        let kind = random_kind(pooling, rng);
        connect(&mut child, registry, a, id, kind);
    }
    for b in output_ids {
        let kind = random_kind(pooling, rng);
        connect(&mut child, registry, id, b, kind);
    }
    Ok(child)
}

/// Per dimension, the rounded-up mean of the largest input map and the
/// smallest output map.
pub fn add_node_size(inputs: &[&NodeGene], outputs: &[&NodeGene]) -> (usize, usize) {
    let max_in_x = inputs.iter().map(|n| n.size_x).max().unwrap_or(1);
    let max_in_y = inputs.iter().map(|n| n.size_y).max().unwrap_or(1);
    let min_out_x = outputs.iter().map(|n| n.size_x).min().unwrap_or(1);
    let min_out_y = outputs.iter().map(|n| n.size_y).min().unwrap_or(1);
    ((max_in_x + min_out_x).div_ceil(2), (max_in_y + min_out_y).div_ceil(2))
}

/// Splits `items` between two children: each gets at least one, a single
/// item is shared by both.
fn distribute<T: Copy, R: Rng + ?Sized>(items: &[T], rng: &mut R) -> (Vec<T>, Vec<T>) {
    if items.len() == 1 {
        return (vec![items[0]], vec![items[0]]);
    }
    let mut shuffled = items.to_vec();
    shuffled.shuffle(rng);
    let mut a = vec![shuffled[0]];
    let mut b = vec![shuffled[1]];
    for &item in &shuffled[2..] {
        if rng.random_bool(0.5) {
            a.push(item);
        } else {
            b.push(item);
        }
    }
    (a, b)
}

pub fn split_node<R: Rng + ?Sized>(
    parent: &Genome,
    registry: &mut InnovationRegistry,
    rng: &mut R,
) -> Result<Genome, MutationError> {
    let candidates: Vec<NodeId> = enabled_hidden(parent)
        .into_iter()
        .filter(|&id| {
            parent.enabled_edges().any(|e| e.out_node == id) && parent.enabled_edges().any(|e| e.in_node == id)
        })
        .collect();
    let &target = candidates.choose(rng).ok_or(MutationError::Inapplicable)?;
    let node = parent.node(target).expect("chosen node").clone();
    let ins: Vec<(NodeId, EdgeKind)> = parent
        .enabled_edges()
        .filter(|e| e.out_node == target)
        .map(|e| (e.in_node, e.kind()))
        .collect();
    let outs: Vec<(NodeId, EdgeKind)> = parent
        .enabled_edges()
        .filter(|e| e.in_node == target)
        .map(|e| (e.out_node, e.kind()))
        .collect();
    let (ins_a, ins_b) = distribute(&ins, rng);
    let (outs_a, outs_b) = distribute(&outs, rng);

    let mut child = offspring(parent);
    disable_with_edges(&mut child, target);
    for (ins, outs) in [(ins_a, outs_a), (ins_b, outs_b)] {
        let id = registry.fresh_node();
        child.insert_node(NodeGene::hidden(id, node.depth, node.size_x, node.size_y));
        for (from, kind) in ins {
            connect(&mut child, registry, from, id, kind);
        }
        for (to, kind) in outs {
            connect(&mut child, registry, id, to, kind);
        }
    }
    Ok(child)
}

pub fn merge_node<R: Rng + ?Sized>(
    parent: &Genome,
    registry: &mut InnovationRegistry,
    rng: &mut R,
) -> Result<Genome, MutationError> {
    let hidden = enabled_hidden(parent);
    if hidden.len() < 2 {
        return Err(MutationError::Inapplicable);
    }
    let picked: Vec<NodeId> = hidden.choose_multiple(rng, 2).copied().collect();
    merge_nodes(parent, registry, picked[0], picked[1])
}

/// Merges two specific hidden nodes into a fresh node at their mean depth.
pub fn merge_nodes(
    parent: &Genome,
    registry: &mut InnovationRegistry,
    first: NodeId,
    second: NodeId,
) -> Result<Genome, MutationError> {
    let a = parent.node(first).ok_or(MutationError::Inapplicable)?;
    let b = parent.node(second).ok_or(MutationError::Inapplicable)?;
    let depth = (a.depth + b.depth) / 2.0;
    let size = ((a.size_x + b.size_x).div_ceil(2), (a.size_y + b.size_y).div_ceil(2));

    // neighbor -> kind of the first replaced edge seen (first node's edges first)
    let mut neighbors: Vec<(NodeId, EdgeKind)> = Vec::new();
    for merged in [first, second] {
        for e in parent.enabled_edges() {
            let other = if e.in_node == merged {
                e.out_node
            } else if e.out_node == merged {
                e.in_node
            } else {
                continue;
            };
            if other == first || other == second || neighbors.iter().any(|(n, _)| *n == other) {
                continue;
            }
            neighbors.push((other, e.kind()));
        }
    }

    let mut child = offspring(parent);
    disable_with_edges(&mut child, first);
    disable_with_edges(&mut child, second);
    let id = registry.fresh_node();
    child.insert_node(NodeGene::hidden(id, depth, size.0, size.1));
    for (other, kind) in neighbors {
        let other_depth = parent.node(other).expect("neighbor").depth;
        if other_depth < depth {
            connect(&mut child, registry, other, id, kind);
        } else if other_depth > depth {
            connect(&mut child, registry, id, other, kind);
        }
    }
    Ok(child)
}

pub fn disable_node<R: Rng + ?Sized>(parent: &Genome, rng: &mut R) -> Result<Genome, MutationError> {
    let &id = enabled_hidden(parent).choose(rng).ok_or(MutationError::Inapplicable)?;
    let mut child = offspring(parent);
    disable_with_edges(&mut child, id);
    Ok(child)
}

/// Enables a random disabled hidden node and every incident edge whose
/// other endpoint is enabled.
pub fn enable_node<R: Rng + ?Sized>(parent: &Genome, rng: &mut R) -> Result<Genome, MutationError> {
    let candidates: Vec<NodeId> = parent
        .nodes
        .iter()
        .filter(|n| !n.enabled && n.is_hidden())
        .map(|n| n.id)
        .collect();
    let &id = candidates.choose(rng).ok_or(MutationError::Inapplicable)?;
    let mut child = offspring(parent);
    set_node_enabled(&mut child, id, true);
    let enabled: std::collections::HashSet<NodeId> = child.nodes.iter().filter(|n| n.enabled).map(|n| n.id).collect();
    for e in child.edges.iter_mut() {
        if (e.in_node == id && enabled.contains(&e.out_node)) || (e.out_node == id && enabled.contains(&e.in_node)) {
            e.enabled = true;
        }
    }
    Ok(child)
}

pub fn change_node_size<R: Rng + ?Sized>(
    parent: &Genome,
    axis: SizeAxis,
    deltas: &[i64],
    rng: &mut R,
) -> Result<Genome, MutationError> {
    let &id = enabled_hidden(parent).choose(rng).ok_or(MutationError::Inapplicable)?;
    let &delta = deltas.choose(rng).ok_or(MutationError::Inapplicable)?;
    resize_node(parent, id, axis, delta)
}

/// Shifts one node's size by `delta` along `axis` and reshapes every
/// incident filter.
pub fn resize_node(parent: &Genome, id: NodeId, axis: SizeAxis, delta: i64) -> Result<Genome, MutationError> {
    let node = parent.node(id).ok_or(MutationError::Inapplicable)?;
    let shift = |v: usize| -> Result<usize, MutationError> {
        let r = v as i64 + delta;
        if r < 1 {
            Err(MutationError::Discard("feature map would shrink below 1x1"))
        } else {
            Ok(r as usize)
        }
    };
    let (mut x, mut y) = node.dims();
    if matches!(axis, SizeAxis::Both | SizeAxis::X) {
        x = shift(x)?;
    }
    if matches!(axis, SizeAxis::Both | SizeAxis::Y) {
        y = shift(y)?;
    }
    let mut child = offspring(parent);
    {
        let n = child.node_mut(id).expect("chosen node");
        n.size_x = x;
        n.size_y = y;
    }
    child.reshape_incident_filters(id);
    Ok(child)
}

use std::collections::BTreeMap;

use rand::Rng;

use super::MutationError;
use crate::genome::{EdgeId, Fitness, Genome, NodeId, Operator};

/// Where a child edge came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneOrigin {
    Shared,
    MoreFitOnly,
    LessFitOnly,
}

/// Recombines two evaluated parents.
///
/// Edges in both parents are copied from the fitter parent. Edges in only
/// one parent are kept with that parent's rate; otherwise they are carried
/// over disabled. One uniform draw is consumed per parent-exclusive edge,
/// in ascending innovation order. Nodes come from the fitter parent when
/// it has them. Filters are reshaped to the child's node sizes, and
/// enabled edges that end up touching a disabled node are disabled.
pub fn crossover<R: Rng + ?Sized>(
    more_fit: &Genome,
    less_fit: &Genome,
    more_fit_rate: f64,
    less_fit_rate: f64,
    rng: &mut R,
) -> Result<Genome, MutationError> {
    if !more_fit.fitness.is_evaluated() || !less_fit.fitness.is_evaluated() {
        return Err(MutationError::Inapplicable);
    }
    let mut edges = BTreeMap::new();
    for e in &more_fit.edges {
        let origin = if less_fit.edge(e.id).is_some() {
            GeneOrigin::Shared
        } else {
            GeneOrigin::MoreFitOnly
        };
        edges.insert(e.id, (e, origin));
    }
    for e in &less_fit.edges {
        edges.entry(e.id).or_insert((e, GeneOrigin::LessFitOnly));
    }

    let mut child = Genome {
        generation_id: more_fit.generation_id,
        generated_by: Operator::Crossover,
        parents: vec![more_fit.generation_id, less_fit.generation_id],
        fitness: Fitness::Unevaluated,
        nodes: Vec::new(),
        edges: Vec::with_capacity(edges.len()),
    };
    let mut node_ids: Vec<NodeId> = more_fit.nodes.iter().filter(|n| !n.is_hidden()).map(|n| n.id).collect();
    for (_, (edge, origin)) in edges {
        let keep = match origin {
            GeneOrigin::Shared => true,
            GeneOrigin::MoreFitOnly => rng.random::<f64>() < more_fit_rate,
            GeneOrigin::LessFitOnly => rng.random::<f64>() < less_fit_rate,
        };
        let mut e = edge.clone();
        if !keep {
            e.enabled = false;
        }
        node_ids.push(e.in_node);
        node_ids.push(e.out_node);
        child.edges.push(e);
    }
    node_ids.sort_unstable();
    node_ids.dedup();
    for id in node_ids {
        let node = more_fit
            .node(id)
            .or_else(|| less_fit.node(id))
            .expect("edge endpoint exists in its parent");
        child.nodes.push(node.clone());
    }

    for id in child.nodes.iter().map(|n| n.id).collect::<Vec<_>>() {
        child.reshape_incident_filters(id);
    }
    let disabled: Vec<NodeId> = child.nodes.iter().filter(|n| !n.enabled).map(|n| n.id).collect();
    for e in child.edges.iter_mut() {
        if disabled.contains(&e.in_node) || disabled.contains(&e.out_node) {
            e.enabled = false;
        }
    }
    Ok(child)
}

/// Origin of every edge id a child of these parents could carry.
pub fn gene_origins(more_fit: &Genome, less_fit: &Genome) -> BTreeMap<EdgeId, GeneOrigin> {
    let mut out = BTreeMap::new();
    for e in &more_fit.edges {
        let o = if less_fit.edge(e.id).is_some() {
            GeneOrigin::Shared
        } else {
            GeneOrigin::MoreFitOnly
        };
        out.insert(e.id, o);
    }
    for e in &less_fit.edges {
        out.entry(e.id).or_insert(GeneOrigin::LessFitOnly);
    }
    out
}

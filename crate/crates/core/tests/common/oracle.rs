//! Reference checks written independently of the library's own validators.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use evocnn::genome::{EdgeId, EdgeWeights, Fitness, Genome, NodeId, NodeKind};
use evocnn::mutation::{crossover, ops, InnovationRegistry, OperatorConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every structural rule a genome must satisfy, checked from scratch.
/// Returns the first violation found.
pub fn genome_violation(g: &Genome, input_dims: (usize, usize)) -> Option<String> {
    let mut nodes = HashMap::new();
    for n in &g.nodes {
        if nodes.insert(n.id, n).is_some() {
            return Some(format!("node id {:?} repeated", n.id));
        }
    }
    let inputs: Vec<_> = g.nodes.iter().filter(|n| n.kind == NodeKind::Input).collect();
    if inputs.len() != 1 {
        return Some(format!("{} input nodes", inputs.len()));
    }
    let input = inputs[0];
    if (input.size_x, input.size_y) != input_dims {
        return Some("input size differs from the images".into());
    }
    if !g.nodes.iter().any(|n| n.kind == NodeKind::Output) {
        return Some("no output nodes".into());
    }
    for n in &g.nodes {
        let ok = match n.kind {
            NodeKind::Input => n.depth == 0.0 && n.enabled,
            NodeKind::Output => n.depth == 1.0 && n.enabled && n.size_x == 1 && n.size_y == 1,
            NodeKind::Hidden => n.depth > 0.0 && n.depth < 1.0,
        };
        if !ok || n.size_x == 0 || n.size_y == 0 {
            return Some(format!("node {:?} has bad depth, size or state", n.id));
        }
    }
    let mut edge_ids = BTreeSet::new();
    let mut pairs = BTreeSet::new();
    for e in &g.edges {
        if !edge_ids.insert(e.id) {
            return Some(format!("edge id {:?} repeated", e.id));
        }
        if !pairs.insert((e.in_node, e.out_node)) {
            return Some(format!("second edge between {:?} and {:?}", e.in_node, e.out_node));
        }
        let (Some(a), Some(b)) = (nodes.get(&e.in_node), nodes.get(&e.out_node)) else {
            return Some(format!("edge {:?} references a missing node", e.id));
        };
        if a.depth >= b.depth {
            return Some(format!("edge {:?} is not feed-forward", e.id));
        }
        if e.enabled && !(a.enabled && b.enabled) {
            return Some(format!("enabled edge {:?} touches a disabled node", e.id));
        }
        match &e.weights {
            EdgeWeights::Convolutional {
                filter_x,
                filter_y,
                filter,
            } => {
                let want = (a.size_x.abs_diff(b.size_x) + 1, a.size_y.abs_diff(b.size_y) + 1);
                if (*filter_x, *filter_y) != want || filter.len() != want.0 * want.1 {
                    return Some(format!("edge {:?} filter shape", e.id));
                }
                if filter.iter().any(|w| !w.is_finite()) {
                    return Some(format!("edge {:?} has a non-finite weight", e.id));
                }
            }
            EdgeWeights::Pooling { scale } => {
                if !scale.is_finite() {
                    return Some(format!("edge {:?} has a non-finite scale", e.id));
                }
                if e.enabled && (b.size_x > a.size_x || b.size_y > a.size_y) {
                    return Some(format!("pooling edge {:?} would upsample", e.id));
                }
            }
        }
    }
    let mut seen = BTreeSet::from([input.id]);
    let mut queue = VecDeque::from([input.id]);
    while let Some(n) = queue.pop_front() {
        for e in g.edges.iter().filter(|e| e.enabled && e.in_node == n) {
            if seen.insert(e.out_node) {
                queue.push_back(e.out_node);
            }
        }
    }
    if let Some(o) = g
        .nodes
        .iter()
        .find(|n| n.kind == NodeKind::Output && !seen.contains(&n.id))
    {
        return Some(format!("output {:?} unreachable", o.id));
    }
    None
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FuzzReport {
    pub applications: usize,
    pub inapplicable: usize,
    pub discarded: usize,
    pub admitted: usize,
    pub crossovers: usize,
    /// Admitted genomes that broke a rule.
    pub violations: usize,
    /// Candidates where the library validator and the reference disagree.
    pub disagreements: usize,
}

/// Applies `applications` random operators (a fifth of them crossovers)
/// to a small evolving population seeded with the minimal genome. Every
/// candidate is judged by both the library validator and the reference
/// checker; only candidates the library accepts are admitted.
pub fn structural_fuzz(applications: usize, pooling: bool, seed: u64) -> (FuzzReport, Option<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = (12, 10);
    let classes = 4;
    let config = OperatorConfig::new(true, pooling);
    let mut registry = InnovationRegistry::for_minimal(classes);
    let mut minimal = Genome::minimal(dims, classes);
    minimal.fitness = Fitness::Value(rng.random_range(0.0..100.0));
    let mut population = vec![minimal];
    let mut report = FuzzReport::default();
    let mut first_problem = None;
    for _ in 0..applications {
        report.applications += 1;
        let use_crossover = population.len() >= 2 && rng.random::<f64>() < 0.2;
        let candidate = if use_crossover {
            report.crossovers += 1;
            let i = rng.random_range(0..population.len());
            let mut j = rng.random_range(0..population.len() - 1);
            if j >= i {
                j += 1;
            }
            let (a, b) = (&population[i], &population[j]);
            let (more, less) = if a.fitness.cmp_fitness(b.fitness).is_le() {
                (a, b)
            } else {
                (b, a)
            };
            crossover(more, less, config.more_fit_rate, config.less_fit_rate, &mut rng)
        } else {
            let parent = &population[rng.random_range(0..population.len())];
            let op = config.sample_operator(&mut rng);
            ops::apply(op, parent, &mut registry, &config, &mut rng)
        };
        let Ok(mut child) = candidate else {
            report.inapplicable += 1;
            continue;
        };
        let library_ok = child.validate().is_ok();
        let reference = genome_violation(&child, dims);
        if library_ok != reference.is_none() {
            report.disagreements += 1;
            first_problem.get_or_insert_with(|| format!("validator disagrees with reference: {reference:?}"));
        }
        if !library_ok {
            report.discarded += 1;
            continue;
        }
        report.admitted += 1;
        if let Some(v) = reference {
            report.violations += 1;
            first_problem.get_or_insert(v);
        }
        child.fitness = Fitness::Value(rng.random_range(0.0..100.0));
        if population.len() < 12 {
            population.push(child);
        } else {
            let k = rng.random_range(0..population.len());
            population[k] = child;
        }
    }
    (report, first_problem)
}

/// Grows `steps` successful random mutations on top of `start`.
pub fn grow(start: &Genome, steps: usize, registry: &mut InnovationRegistry, rng: &mut ChaCha8Rng) -> Genome {
    let config = OperatorConfig::new(true, true);
    let mut g = start.clone();
    let mut done = 0;
    let mut attempts = 0;
    while done < steps && attempts < 50 * steps.max(1) {
        attempts += 1;
        let op = config.sample_operator(rng);
        if let Ok(c) = ops::apply(op, &g, registry, &config, rng) {
            if c.validate().is_ok() {
                g = c;
                done += 1;
            }
        }
    }
    g
}

/// Two evaluated relatives with a common ancestor, fitter one first.
pub fn parent_pair(seed: u64) -> (Genome, Genome) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = rng.random_range(2..=5);
    let dims = (rng.random_range(6..=14), rng.random_range(6..=14));
    let mut registry = InnovationRegistry::for_minimal(classes);
    let ancestor = grow(
        &Genome::minimal(dims, classes),
        rng.random_range(0..6),
        &mut registry,
        &mut rng,
    );
    let mut a = grow(&ancestor, rng.random_range(0..8), &mut registry, &mut rng);
    let mut b = grow(&ancestor, rng.random_range(0..8), &mut registry, &mut rng);
    let (fa, fb): (f64, f64) = (rng.random_range(1.0..10.0), rng.random_range(1.0..10.0));
    a.fitness = Fitness::Value(fa.min(fb));
    b.fitness = Fitness::Value(fa.max(fb));
    (a, b)
}

/// Child edges grouped the way recombination is described.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct Partition {
    pub shared: BTreeSet<EdgeId>,
    pub more_fit_only: BTreeSet<EdgeId>,
    pub less_fit_only: BTreeSet<EdgeId>,
    /// Parent-exclusive edges that would be live in the child but were
    /// carried over switched off.
    pub disabled: BTreeSet<EdgeId>,
}

fn live_in_child(edge: EdgeId, more: &Genome, less: &Genome) -> bool {
    let e = more.edge(edge).or_else(|| less.edge(edge)).expect("edge from a parent");
    let node_on = |id| more.node(id).or_else(|| less.node(id)).is_some_and(|n| n.enabled);
    e.enabled && node_on(e.in_node) && node_on(e.out_node)
}

/// Predicts the gene partition of `crossover(more, less, ..)` with set
/// algebra, replaying one uniform draw per parent-exclusive edge in
/// ascending id order from a copy of the generator. Also returns the ids
/// the draw switched off.
pub fn expected_partition(
    more: &Genome,
    less: &Genome,
    more_rate: f64,
    less_rate: f64,
    rng: &mut ChaCha8Rng,
) -> (Partition, BTreeSet<EdgeId>) {
    let a: BTreeSet<EdgeId> = more.edges.iter().map(|e| e.id).collect();
    let b: BTreeSet<EdgeId> = less.edges.iter().map(|e| e.id).collect();
    let mut p = Partition {
        shared: a.intersection(&b).copied().collect(),
        ..Partition::default()
    };
    let mut dropped = BTreeSet::new();
    for id in a.symmetric_difference(&b).copied().collect::<BTreeSet<_>>() {
        let (rate, bucket) = if a.contains(&id) {
            (more_rate, &mut p.more_fit_only)
        } else {
            (less_rate, &mut p.less_fit_only)
        };
        if rng.random::<f64>() < rate {
            bucket.insert(id);
        } else {
            dropped.insert(id);
            if live_in_child(id, more, less) {
                p.disabled.insert(id);
            } else {
                bucket.insert(id);
            }
        }
    }
    (p, dropped)
}

/// Partition of an actual child relative to its parents.
pub fn observed_partition(child: &Genome, more: &Genome, less: &Genome) -> Partition {
    let mut p = Partition::default();
    for e in &child.edges {
        match (more.edge(e.id).is_some(), less.edge(e.id).is_some()) {
            (true, true) => {
                p.shared.insert(e.id);
            }
            _ if !e.enabled && live_in_child(e.id, more, less) => {
                p.disabled.insert(e.id);
            }
            (true, false) => {
                p.more_fit_only.insert(e.id);
            }
            (false, true) => {
                p.less_fit_only.insert(e.id);
            }
            (false, false) => {}
        }
    }
    p
}

/// Everything besides the partition that a child must satisfy; returns the
/// first mismatch.
pub fn crossover_mismatch(child: &Genome, more: &Genome, less: &Genome, dropped: &BTreeSet<EdgeId>) -> Option<String> {
    let parents: BTreeSet<EdgeId> = more.edges.iter().chain(&less.edges).map(|e| e.id).collect();
    let ids: BTreeSet<EdgeId> = child.edges.iter().map(|e| e.id).collect();
    if ids != parents {
        return Some("child edge ids differ from the union of the parents".into());
    }
    let mut endpoints: BTreeSet<NodeId> = more.nodes.iter().filter(|n| !n.is_hidden()).map(|n| n.id).collect();
    for e in &child.edges {
        endpoints.insert(e.in_node);
        endpoints.insert(e.out_node);
    }
    let node_ids: BTreeSet<NodeId> = child.nodes.iter().map(|n| n.id).collect();
    if node_ids != endpoints {
        return Some("child nodes differ from the edge endpoints".into());
    }
    let mut child_nodes = BTreeMap::new();
    for n in &child.nodes {
        let source = more.node(n.id).or_else(|| less.node(n.id)).expect("node from a parent");
        if n != source {
            return Some(format!("node {:?} not copied from the preferred parent", n.id));
        }
        child_nodes.insert(n.id, n);
    }
    for e in &child.edges {
        let source = more.edge(e.id).or_else(|| less.edge(e.id)).expect("edge from a parent");
        if (e.in_node, e.out_node, e.kind()) != (source.in_node, source.out_node, source.kind()) {
            return Some(format!("edge {:?} endpoints or kind changed", e.id));
        }
        let endpoints_on = child_nodes[&e.in_node].enabled && child_nodes[&e.out_node].enabled;
        let drawn_on = !dropped.contains(&e.id);
        if e.enabled != (source.enabled && drawn_on && endpoints_on) {
            return Some(format!("edge {:?} enabled state", e.id));
        }
        let same_shape = match (&e.weights, &source.weights) {
            (
                EdgeWeights::Convolutional {
                    filter_x: a,
                    filter_y: b,
                    ..
                },
                EdgeWeights::Convolutional {
                    filter_x: c,
                    filter_y: d,
                    ..
                },
            ) => (a, b) == (c, d),
            _ => true,
        };
        if same_shape && e.weights != source.weights {
            return Some(format!("edge {:?} weights not copied from its parent", e.id));
        }
    }
    None
}

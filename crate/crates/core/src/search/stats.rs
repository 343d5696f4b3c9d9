use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::genome::{EdgeKind, Genome, Operator};

pub const OPERATOR_HEADER: &str = "operator,generated,inserted,insertion_rate";

pub const PROGRESS_HEADER: &str = "evaluations,generation_id,operator,fitness,inserted,\
best_fitness,avg_fitness,worst_fitness,\
min_nodes,avg_nodes,max_nodes,\
min_conv_edges,avg_conv_edges,max_conv_edges,\
min_pool_edges,avg_pool_edges,max_pool_edges,\
min_weights,avg_weights,max_weights";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorCount {
    pub generated: u64,
    pub inserted: u64,
}

impl OperatorCount {
    pub fn insertion_rate(&self) -> f64 {
        if self.generated == 0 {
            0.0
        } else {
            self.inserted as f64 / self.generated as f64
        }
    }
}

/// Results received and results inserted, per producing operator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OperatorStats {
    counts: BTreeMap<Operator, OperatorCount>,
}

impl OperatorStats {
    pub fn record(&mut self, op: Operator, inserted: bool) {
        let c = self.counts.entry(op).or_default();
        c.generated += 1;
        if inserted {
            c.inserted += 1;
        }
    }

    pub fn get(&self, op: Operator) -> OperatorCount {
        self.counts.get(&op).copied().unwrap_or_default()
    }

    pub fn total_generated(&self) -> u64 {
        self.counts.values().map(|c| c.generated).sum()
    }

    pub fn total_inserted(&self) -> u64 {
        self.counts.values().map(|c| c.inserted).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{OPERATOR_HEADER}\n");
        for op in Operator::ALL {
            let c = self.get(op);
            let _ = writeln!(s, "{op},{},{},{}", c.generated, c.inserted, c.insertion_rate());
        }
        s
    }
}

/// Minimum, mean and maximum of one population quantity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub min: f64,
    pub avg: f64,
    pub max: f64,
}

impl Spread {
    fn of(values: impl Iterator<Item = f64>) -> Spread {
        let (mut min, mut max, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
        for v in values {
            min = min.min(v);
            max = max.max(v);
            sum += v;
            n += 1;
        }
        if n == 0 {
            return Spread::default();
        }
        Spread {
            min,
            avg: sum / n as f64,
            max,
        }
    }
}

/// Summary of the evaluated members of a population.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PopulationSummary {
    pub fitness: Spread,
    pub nodes: Spread,
    pub conv_edges: Spread,
    pub pool_edges: Spread,
    pub weights: Spread,
}

impl PopulationSummary {
    pub fn of(members: &[Genome]) -> Self {
        let evaluated: Vec<&Genome> = members.iter().filter(|g| g.fitness.is_evaluated()).collect();
        let spread = |f: &dyn Fn(&Genome) -> f64| Spread::of(evaluated.iter().map(|g| f(g)));
        PopulationSummary {
            fitness: spread(&|g| g.fitness.value().unwrap_or(f64::NAN)),
            nodes: spread(&|g| g.enabled_node_count() as f64),
            conv_edges: spread(&|g| g.enabled_edge_count(EdgeKind::Convolutional) as f64),
            pool_edges: spread(&|g| g.enabled_edge_count(EdgeKind::Pooling) as f64),
            weights: spread(&|g| g.weight_count() as f64),
        }
    }
}

/// One line of the progress log, written after every received result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressRow {
    pub evaluations: u64,
    pub generation_id: u64,
    pub operator: Operator,
    pub fitness: f64,
    pub inserted: bool,
    pub population: PopulationSummary,
}

pub fn progress_csv(rows: &[ProgressRow]) -> String {
    let mut s = format!("{PROGRESS_HEADER}\n");
    for r in rows {
        let _ = write!(
            s,
            "{},{},{},{},{}",
            r.evaluations, r.generation_id, r.operator, r.fitness, r.inserted
        );
        let p = &r.population;
        for sp in [p.fitness, p.nodes, p.conv_edges, p.pool_edges, p.weights] {
            let _ = write!(s, ",{},{},{}", sp.min, sp.avg, sp.max);
        }
        s.push('\n');
    }
    s
}

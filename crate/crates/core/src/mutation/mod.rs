//! Structural operators, innovation tracking and candidate generation.

mod config;
mod crossover;
pub mod ops;
mod registry;

use rand::seq::IndexedRandom;
use rand::Rng;
use thiserror::Error;

pub use config::{ConfigError, OperatorConfig, OperatorWeights};
pub use crossover::{crossover, gene_origins, GeneOrigin};
pub use registry::InnovationRegistry;

use crate::genome::Genome;
use crate::train::init::{epigenetic_initialize, HeVariance};

/// Retry budget for producing one valid candidate.
pub const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MutationError {
    #[error("operator not applicable to this genome")]
    Inapplicable,
    #[error("candidate discarded: {0}")]
    Discard(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerateError {
    #[error("population is empty")]
    EmptyPopulation,
    #[error("no valid candidate after {0} attempts; population is degenerate")]
    Exhausted(usize),
}

/// Picks the fitter of two genomes first (lower fitness, then older).
fn order_parents<'a>(a: &'a Genome, b: &'a Genome) -> (&'a Genome, &'a Genome) {
    match a
        .fitness
        .cmp_fitness(b.fitness)
        .then(a.generation_id.cmp(&b.generation_id))
    {
        std::cmp::Ordering::Greater => (b, a),
        _ => (a, b),
    }
}

/// One mutation of a uniformly chosen member, retried until the result is
/// valid. The child's new genes are initialized from its parent.
pub fn generate_mutation<R: Rng + ?Sized>(
    members: &[Genome],
    config: &OperatorConfig,
    variance: HeVariance,
    registry: &mut InnovationRegistry,
    rng: &mut R,
) -> Result<Genome, GenerateError> {
    if members.is_empty() {
        return Err(GenerateError::EmptyPopulation);
    }
    for _ in 0..MAX_ATTEMPTS {
        let parent = members.choose(rng).expect("nonempty");
        let op = config.sample_operator(rng);
        let Ok(mut child) = ops::apply(op, parent, registry, config, rng) else {
            continue;
        };
        if child.validate().is_err() {
            continue;
        }
        epigenetic_initialize(&mut child, &[parent], variance, rng);
        return Ok(child);
    }
    Err(GenerateError::Exhausted(MAX_ATTEMPTS))
}

/// Crossover of two distinct evaluated members, retried until valid.
pub fn generate_crossover<R: Rng + ?Sized>(
    members: &[Genome],
    config: &OperatorConfig,
    variance: HeVariance,
    rng: &mut R,
) -> Result<Genome, GenerateError> {
    let evaluated: Vec<&Genome> = members.iter().filter(|g| g.fitness.is_evaluated()).collect();
    if evaluated.len() < 2 {
        return Err(GenerateError::EmptyPopulation);
    }
    for _ in 0..MAX_ATTEMPTS {
        let pair: Vec<&&Genome> = evaluated.choose_multiple(rng, 2).collect();
        let (more, less) = order_parents(pair[0], pair[1]);
        let Ok(mut child) = crossover(more, less, config.more_fit_rate, config.less_fit_rate, rng) else {
            continue;
        };
        if child.validate().is_err() {
            continue;
        }
        epigenetic_initialize(&mut child, &[more, less], variance, rng);
        return Ok(child);
    }
    Err(GenerateError::Exhausted(MAX_ATTEMPTS))
}

/// Produces the next candidate: crossover with probability
/// `crossover_rate` when at least two members are evaluated, otherwise one
/// mutation.
pub fn generate_candidate<R: Rng + ?Sized>(
    members: &[Genome],
    config: &OperatorConfig,
    variance: HeVariance,
    registry: &mut InnovationRegistry,
    rng: &mut R,
) -> Result<Genome, GenerateError> {
    let evaluated = members.iter().filter(|g| g.fitness.is_evaluated()).count();
    let do_crossover = evaluated >= 2 && rng.random::<f64>() < config.crossover_rate;
    if do_crossover {
        generate_crossover(members, config, variance, rng)
    } else {
        generate_mutation(members, config, variance, registry, rng)
    }
}

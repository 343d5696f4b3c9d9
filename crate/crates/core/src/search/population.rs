use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::genome::{Fitness, GenerationId, Genome};

/// Fitness order: lower loss first, unevaluated last, older first on ties.
pub fn rank(a: &Genome, b: &Genome) -> Ordering {
    a.fitness
        .cmp_fitness(b.fitness)
        .then(a.generation_id.cmp(&b.generation_id))
}

/// What happened to a genome offered to the population.
#[derive(Debug, Clone, PartialEq)]
pub enum Admission {
    /// Took a free slot or replaced its own placeholder.
    Added,
    /// Displaced the returned member.
    Ejected(Box<Genome>),
    Rejected,
}

/// Bounded set of genomes kept sorted by [`rank`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    capacity: usize,
    members: Vec<Genome>,
}

impl Population {
    pub fn new(capacity: usize) -> Self {
        Population {
            capacity,
            members: Vec::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.members.len() >= self.capacity
    }

    pub fn members(&self) -> &[Genome] {
        &self.members
    }

    /// Fittest evaluated member.
    pub fn best(&self) -> Option<&Genome> {
        self.members.first().filter(|g| g.fitness.is_evaluated())
    }

    pub fn worst(&self) -> Option<&Genome> {
        self.members.last()
    }

    pub fn contains(&self, id: GenerationId) -> bool {
        self.members.iter().any(|g| g.generation_id == id)
    }

    fn place(&mut self, genome: Genome) {
        let at = self.members.partition_point(|m| rank(m, &genome) == Ordering::Less);
        self.members.insert(at, genome);
    }

    /// Adds an unevaluated copy that holds a slot until its result arrives.
    pub fn insert_placeholder(&mut self, mut genome: Genome) -> bool {
        if self.is_full() || self.contains(genome.generation_id) {
            return false;
        }
        genome.fitness = Fitness::Unevaluated;
        self.place(genome);
        true
    }

    /// Removes a member by generation id.
    pub fn remove(&mut self, id: GenerationId) -> Option<Genome> {
        let at = self.members.iter().position(|g| g.generation_id == id)?;
        Some(self.members.remove(at))
    }

    /// Offers an evaluated genome. Its own placeholder is replaced if
    /// present; otherwise it fills a free slot or displaces the worst member
    /// when it ranks strictly better.
    pub fn offer(&mut self, genome: Genome) -> Admission {
        if self.remove(genome.generation_id).is_some() || !self.is_full() {
            self.place(genome);
            return Admission::Added;
        }
        match self.members.last() {
            Some(worst) if rank(&genome, worst) == Ordering::Less => {
                let ejected = self.members.pop().expect("nonempty");
                self.place(genome);
                Admission::Ejected(Box::new(ejected))
            }
            _ => Admission::Rejected,
        }
    }

    pub fn is_sorted(&self) -> bool {
        self.members.windows(2).all(|w| rank(&w[0], &w[1]) != Ordering::Greater)
    }
}

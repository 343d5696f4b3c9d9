//! The asynchronous master: population, work issuing and result insertion.

mod population;
mod stats;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use population::{rank, Admission, Population};
pub use stats::{
    progress_csv, OperatorCount, OperatorStats, PopulationSummary, ProgressRow, Spread, OPERATOR_HEADER,
    PROGRESS_HEADER,
};

use crate::dataset::DataSplit;
use crate::genome::{self, Fitness, GenerationId, Genome, Operator};
use crate::mutation::{
    generate_candidate, generate_mutation, ConfigError, GenerateError, InnovationRegistry, OperatorConfig,
};
use crate::protocol::{run_local, ProtocolError};
use crate::train::{InitStrategy, TrainConfig, TrainConfigError};

pub const CHECKPOINT_FORMAT: &str = "evocnn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub population_size: usize,
    pub max_evaluations: u64,
    pub seed: u64,
    /// How issued children get their starting weights.
    pub init: InitStrategy,
    /// Checkpoint after this many results; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// Reissue outstanding work after `reissue_factor` times the median
    /// recent training time (never sooner than `reissue_floor_secs`).
    pub reissue: bool,
    pub reissue_factor: f64,
    pub reissue_floor_secs: f64,
    pub operators: OperatorConfig,
    pub train: TrainConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            population_size: 50,
            max_evaluations: 1000,
            seed: 0,
            init: InitStrategy::Epigenetic,
            checkpoint_every: 50,
            reissue: true,
            reissue_factor: 10.0,
            reissue_floor_secs: 30.0,
            operators: OperatorConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("population_size must be at least 2")]
    PopulationSize,
    #[error("max_evaluations must be positive")]
    MaxEvaluations,
    #[error(transparent)]
    Operators(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainConfigError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.population_size < 2 {
            return Err(SearchError::PopulationSize);
        }
        if self.max_evaluations == 0 {
            return Err(SearchError::MaxEvaluations);
        }
        self.operators.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

/// A genome handed to a worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkItem {
    pub generation_id: GenerationId,
    pub genome: Genome,
    pub init: InitStrategy,
    pub train_seed: u64,
    pub epochs: usize,
}

/// A trained genome coming back from a worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkResult {
    pub generation_id: GenerationId,
    pub worker_id: String,
    /// Trained genome; its fitness field carries the validation loss.
    pub genome: Genome,
    pub diverged: bool,
    /// Hex SHA-256 of the epoch log CSV.
    pub log_digest: String,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WorkResponse {
    Work(Box<WorkItem>),
    /// Nothing to hand out right now; ask again later.
    Wait,
    /// The search has finished.
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome", content = "detail")]
pub enum InsertOutcome {
    Inserted,
    Rejected,
    /// This generation id was already resolved; nothing changed.
    Duplicate,
    /// This generation id was never issued.
    Unknown,
    /// The result does not match what was issued.
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Outstanding {
    item: WorkItem,
    #[serde(skip)]
    issued_at: Option<Instant>,
}

/// SplitMix64 finalizer, used to derive per-genome training seeds.
pub fn mix_seed(seed: u64, generation: u64) -> u64 {
    let mut z = seed ^ generation.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Master {
    config: SearchConfig,
    input_dims: (usize, usize),
    classes: usize,
    population: Population,
    registry: InnovationRegistry,
    rng: ChaCha8Rng,
    next_generation: u64,
    issued: u64,
    filled: bool,
    outstanding: BTreeMap<GenerationId, Outstanding>,
    requeue: VecDeque<GenerationId>,
    completed: BTreeSet<GenerationId>,
    evaluations: u64,
    stats: OperatorStats,
    progress: Vec<ProgressRow>,
    recent_seconds: VecDeque<f64>,
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    format: &'a str,
    version: u32,
    master: &'a Master,
}

#[derive(Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
}

#[derive(Deserialize)]
struct CheckpointDoc {
    master: Master,
}

impl Master {
    pub fn new(config: SearchConfig, input_dims: (usize, usize), classes: usize) -> Result<Self, SearchError> {
        config.validate()?;
        Ok(Master {
            population: Population::new(config.population_size),
            registry: InnovationRegistry::for_minimal(classes),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            input_dims,
            classes,
            next_generation: 0,
            issued: 0,
            filled: false,
            outstanding: BTreeMap::new(),
            requeue: VecDeque::new(),
            completed: BTreeSet::new(),
            evaluations: 0,
            stats: OperatorStats::default(),
            progress: Vec::new(),
            recent_seconds: VecDeque::new(),
        })
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn set_reissue(&mut self, enabled: bool) {
        self.config.reissue = enabled;
    }

    pub fn input_dims(&self) -> (usize, usize) {
        self.input_dims
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    pub fn registry(&self) -> &InnovationRegistry {
        &self.registry
    }

    pub fn best(&self) -> Option<&Genome> {
        self.population.best()
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding.len()
    }

    pub fn is_filled(&self) -> bool {
        self.filled
    }

    pub fn is_done(&self) -> bool {
        self.issued >= self.config.max_evaluations && self.outstanding.is_empty()
    }

    pub fn stats(&self) -> &OperatorStats {
        &self.stats
    }

    pub fn progress(&self) -> &[ProgressRow] {
        &self.progress
    }

    pub fn summary(&self) -> PopulationSummary {
        PopulationSummary::of(self.population.members())
    }

    /// Operator table and progress log as CSV documents.
    pub fn snapshot_stats(&self) -> (String, String) {
        (self.stats.to_csv(), progress_csv(&self.progress))
    }

    fn next_id(&mut self) -> GenerationId {
        let id = GenerationId(self.next_generation);
        self.next_generation += 1;
        id
    }

    fn issue(&mut self, mut genome: Genome) -> WorkResponse {
        let id = self.next_id();
        genome.generation_id = id;
        genome.fitness = Fitness::Unevaluated;
        let init = if genome.generated_by == Operator::Initial {
            InitStrategy::He
        } else {
            self.config.init
        };
        let item = WorkItem {
            generation_id: id,
            init,
            train_seed: mix_seed(self.config.seed, id.0),
            epochs: self.config.train.epochs,
            genome,
        };
        self.issued += 1;
        self.outstanding.insert(
            id,
            Outstanding {
                item: item.clone(),
                issued_at: Some(Instant::now()),
            },
        );
        WorkResponse::Work(Box::new(item))
    }

    fn reissue(&mut self, id: GenerationId) -> Option<WorkResponse> {
        let entry = self.outstanding.get_mut(&id)?;
        entry.issued_at = Some(Instant::now());
        log::info!("reissuing generation {id}");
        Some(WorkResponse::Work(Box::new(entry.item.clone())))
    }

    fn reissue_timeout(&self) -> Duration {
        let mut times: Vec<f64> = self.recent_seconds.iter().copied().collect();
        times.sort_by(f64::total_cmp);
        let median = times.get(times.len() / 2).copied().unwrap_or(0.0);
        Duration::from_secs_f64((median * self.config.reissue_factor).max(self.config.reissue_floor_secs))
    }

    /// Hands out the next genome to evaluate. Never waits on outstanding
    /// results while new work can still be generated.
    pub fn fulfill_work_request(&mut self) -> Result<WorkResponse, SearchError> {
        while let Some(id) = self.requeue.pop_front() {
            if let Some(r) = self.reissue(id) {
                return Ok(r);
            }
        }
        if self.issued < self.config.max_evaluations {
            if self.population.is_empty() {
                let minimal = Genome::minimal(self.input_dims, self.classes);
                let response = self.issue(minimal);
                if let WorkResponse::Work(item) = &response {
                    self.population.insert_placeholder(item.genome.clone());
                }
                return Ok(response);
            }
            let variance = self.config.train.he_variance;
            let members = self.population.members();
            if !self.filled {
                let child = generate_mutation(
                    members,
                    &self.config.operators,
                    variance,
                    &mut self.registry,
                    &mut self.rng,
                )?;
                let response = self.issue(child);
                if let WorkResponse::Work(item) = &response {
                    self.population.insert_placeholder(item.genome.clone());
                }
                if self.population.is_full() {
                    self.filled = true;
                }
                return Ok(response);
            }
            let child = generate_candidate(
                members,
                &self.config.operators,
                variance,
                &mut self.registry,
                &mut self.rng,
            )?;
            return Ok(self.issue(child));
        }
        if self.outstanding.is_empty() {
            return Ok(WorkResponse::Done);
        }
        if self.config.reissue {
            let timeout = self.reissue_timeout();
            let stale = self
                .outstanding
                .iter()
                .find(|(_, o)| o.issued_at.is_none_or(|t| t.elapsed() >= timeout))
                .map(|(id, _)| *id);
            if let Some(id) = stale {
                return Ok(self.reissue(id).expect("outstanding"));
            }
        }
        Ok(WorkResponse::Wait)
    }

    /// Puts an outstanding genome at the front of the queue so the next
    /// request receives it again.
    pub fn abandon(&mut self, id: GenerationId) {
        if self.outstanding.contains_key(&id) && !self.requeue.contains(&id) {
            self.requeue.push_back(id);
        }
    }

    fn matches_issued(issued: &Genome, trained: &Genome) -> bool {
        issued.nodes.len() == trained.nodes.len()
            && issued.edges.len() == trained.edges.len()
            && issued
                .nodes
                .iter()
                .zip(&trained.nodes)
                .all(|(a, b)| a.id == b.id && a.enabled == b.enabled && a.dims() == b.dims() && a.depth == b.depth)
            && issued
                .edges
                .iter()
                .zip(&trained.edges)
                .all(|(a, b)| a.id == b.id && a.enabled == b.enabled && a.kind() == b.kind())
    }

    /// Records a worker's result, inserting it if it improves the
    /// population. Each generation id is resolved at most once.
    pub fn insert_result(&mut self, result: WorkResult) -> InsertOutcome {
        let id = result.generation_id;
        if self.completed.contains(&id) {
            return InsertOutcome::Duplicate;
        }
        let Some(entry) = self.outstanding.get(&id) else {
            log::warn!("result for unknown generation {id} from {}", result.worker_id);
            return InsertOutcome::Unknown;
        };
        let mut genome = result.genome;
        if genome.generation_id != id || !Self::matches_issued(&entry.item.genome, &genome) {
            return InsertOutcome::Invalid("genome structure differs from the issued genome".into());
        }
        if let Err(e) = genome.validate() {
            return InsertOutcome::Invalid(e.to_string());
        }
        let fitness = genome.fitness.value().unwrap_or(f64::NAN);
        let diverged = result.diverged || !fitness.is_finite() || fitness == f64::MAX;
        if !diverged && !genome.fitness.is_evaluated() {
            return InsertOutcome::Invalid("result carries no fitness".into());
        }
        let operator = entry.item.genome.generated_by;
        genome.generated_by = operator;
        genome.parents = entry.item.genome.parents.clone();
        self.outstanding.remove(&id);
        self.completed.insert(id);
        self.evaluations += 1;
        self.recent_seconds.push_back(result.wall_seconds);
        if self.recent_seconds.len() > 32 {
            self.recent_seconds.pop_front();
        }
        let inserted = if diverged {
            self.population.remove(id);
            false
        } else {
            genome.fitness = Fitness::Value(fitness);
            !matches!(self.population.offer(genome), Admission::Rejected)
        };
        self.stats.record(operator, inserted);
        self.progress.push(ProgressRow {
            evaluations: self.evaluations,
            generation_id: id.0,
            operator,
            fitness,
            inserted,
            population: self.summary(),
        });
        log::info!("{id},{operator},{fitness},{inserted}");
        if inserted {
            InsertOutcome::Inserted
        } else {
            InsertOutcome::Rejected
        }
    }

    /// Serializes the full master state.
    pub fn checkpoint(&self) -> Vec<u8> {
        serde_json::to_vec(&CheckpointRef {
            format: CHECKPOINT_FORMAT,
            version: CHECKPOINT_VERSION,
            master: self,
        })
        .expect("master state serializes")
    }

    /// Restores a master; work that was outstanding is queued for
    /// reissue.
    pub fn resume(bytes: &[u8]) -> Result<Self, SearchError> {
        let header: CheckpointHeader =
            serde_json::from_slice(bytes).map_err(|e| SearchError::Checkpoint(e.to_string()))?;
        if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
            return Err(SearchError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                header.format, header.version
            )));
        }
        let doc: CheckpointDoc = serde_json::from_slice(bytes).map_err(|e| SearchError::Checkpoint(e.to_string()))?;
        let mut master = doc.master;
        master.requeue = master.outstanding.keys().copied().collect();
        Ok(master)
    }

    /// Writes `state.json`, `best.genome.json`, `operators.csv` and
    /// `progress.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), SearchError> {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join("state.json"), &self.checkpoint())?;
        if let Some(best) = self.best() {
            write_atomic(&dir.join("best.genome.json"), &genome::serialize(best))?;
        }
        let (ops, progress) = self.snapshot_stats();
        write_atomic(&dir.join("operators.csv"), ops.as_bytes())?;
        write_atomic(&dir.join("progress.csv"), progress.as_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, SearchError> {
        Self::resume(&fs::read(dir.join("state.json"))?)
    }
}

/// Runs a complete search with `workers` in-process training threads and
/// returns the final master state.
pub fn run_search(
    config: SearchConfig,
    data: &DataSplit,
    workers: usize,
    checkpoint: Option<&Path>,
) -> Result<Master, ProtocolError> {
    let master = Mutex::new(Master::new(config, data.train.dims(), data.train.classes)?);
    run_local(&master, data, workers, checkpoint)?;
    Ok(master.into_inner().expect("master lock"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

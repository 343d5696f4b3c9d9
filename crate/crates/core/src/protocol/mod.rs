//! Master/worker message exchange: an in-process worker pool and a TCP
//! server/client speaking the same messages.

pub mod frame;
mod local;
mod server;
mod worker;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use frame::{decode, encode, read_frame, write_frame, FrameError, MAX_FRAME, PROTOCOL_VERSION};
pub use local::run_local;
pub use server::{serve, ServerOptions};
pub use worker::{run_worker, WorkerOptions, WorkerSummary};

use crate::dataset::{DataSplit, SplitSpec};
use crate::genome::GenerationId;
use crate::search::{InsertOutcome, SearchError, WorkItem, WorkResult};
use crate::train::{epoch_log_csv, train, PhenotypeError, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Capabilities {
    /// Largest genome (in weights) the worker is willing to train.
    pub max_weights: Option<u64>,
}

/// Worker to master.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WorkerMessage {
    Hello {
        worker_id: String,
        protocol_version: u8,
        /// Hex SHA-256 of the worker's full training image set.
        dataset_fingerprint: String,
        capabilities: Capabilities,
    },
    RequestWork,
    SubmitResult {
        result: Box<WorkResult>,
    },
    Bye,
}

/// Master to worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MasterMessage {
    Welcome {
        train: Box<TrainConfig>,
        split: SplitSpec,
    },
    Work {
        item: Box<WorkItem>,
    },
    Wait {
        retry_ms: u64,
    },
    Done,
    ResultAck {
        generation_id: GenerationId,
        outcome: InsertOutcome,
    },
    Error {
        message: String,
    },
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("master rejected the handshake: {0}")]
    Rejected(String),
    #[error("unexpected message: {0}")]
    Unexpected(String),
    #[error("master unreachable after {0} attempts")]
    Unreachable(usize),
    #[error(transparent)]
    Train(#[from] PhenotypeError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Data(#[from] crate::dataset::DatasetError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Trains one work item and packages the result.
pub fn execute(
    item: &WorkItem,
    data: &DataSplit,
    config: &TrainConfig,
    worker_id: &str,
) -> Result<WorkResult, PhenotypeError> {
    let config = TrainConfig {
        epochs: item.epochs,
        ..config.clone()
    };
    let start = Instant::now();
    let outcome = train(
        &item.genome,
        &data.train,
        &data.validation,
        &config,
        item.init,
        item.train_seed,
    )?;
    let digest = hex::encode(Sha256::digest(epoch_log_csv(&outcome.log).as_bytes()));
    Ok(WorkResult {
        generation_id: item.generation_id,
        worker_id: worker_id.to_string(),
        genome: outcome.genome,
        diverged: outcome.diverged,
        log_digest: digest,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{EdgeWeights, Fitness, Genome};
    use crate::train::InitStrategy;

    fn big_result() -> WorkResult {
        // 300x300 input to one output: 90,000 filter weights
        let mut g = Genome::minimal((300, 300), 2);
        g.edges.truncate(1);
        g.nodes.truncate(2);
        if let EdgeWeights::Convolutional { filter, .. } = &mut g.edges[0].weights {
            for (i, w) in filter.iter_mut().enumerate() {
                *w = (i as f64).sin() * 1e-3;
            }
        }
        g.fitness = Fitness::Value(123.456);
        WorkResult {
            generation_id: GenerationId(7),
            worker_id: "w".into(),
            genome: g,
            diverged: false,
            log_digest: "ab".into(),
            wall_seconds: 1.5,
        }
    }

    #[test]
    fn large_result_round_trips() {
        let msg = WorkerMessage::SubmitResult {
            result: Box::new(big_result()),
        };
        let bytes = encode(&msg).unwrap();
        let (back, used): (WorkerMessage, usize) = decode(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, msg);
    }

    #[test]
    fn master_messages_round_trip() {
        let msgs = vec![
            MasterMessage::Welcome {
                train: Box::default(),
                split: SplitSpec::default(),
            },
            MasterMessage::Work {
                item: Box::new(WorkItem {
                    generation_id: GenerationId(1),
                    genome: Genome::minimal((4, 4), 2),
                    init: InitStrategy::He,
                    train_seed: 9,
                    epochs: 2,
                }),
            },
            MasterMessage::Wait { retry_ms: 5 },
            MasterMessage::Done,
            MasterMessage::ResultAck {
                generation_id: GenerationId(3),
                outcome: InsertOutcome::Invalid("x".into()),
            },
            MasterMessage::Error { message: "no".into() },
        ];
        for m in msgs {
            let (back, _): (MasterMessage, usize) = decode(&encode(&m).unwrap()).unwrap();
            assert_eq!(back, m);
        }
    }
}

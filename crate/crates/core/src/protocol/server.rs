use std::collections::BTreeSet;
use std::io::{BufReader, BufWriter};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::{read_frame, write_frame, FrameError, MasterMessage, ProtocolError, WorkerMessage, PROTOCOL_VERSION};
use crate::dataset::SplitSpec;
use crate::genome::GenerationId;
use crate::search::{InsertOutcome, Master, WorkResponse};

#[derive(Debug, Clone)]
pub struct ServerOptions {
    /// Hex SHA-256 of the master's full training set.
    pub fingerprint: String,
    pub split: SplitSpec,
    pub checkpoint: Option<PathBuf>,
    /// How long idle workers are told to wait before asking again.
    pub retry_ms: u64,
}

struct Shared {
    master: Arc<Mutex<Master>>,
    options: ServerOptions,
}

fn checkpoint_if_due(master: &Master, options: &ServerOptions) {
    let every = master.config().checkpoint_every;
    if let Some(dir) = &options.checkpoint {
        if every > 0 && master.evaluations().is_multiple_of(every) {
            if let Err(e) = master.save(dir) {
                log::error!("checkpoint failed: {e}");
            }
        }
    }
}

fn handle(stream: TcpStream, shared: &Shared) -> Result<(), ProtocolError> {
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let hello: WorkerMessage = read_frame(&mut reader)?;
    let WorkerMessage::Hello {
        worker_id,
        protocol_version,
        dataset_fingerprint,
        ..
    } = hello
    else {
        write_frame(
            &mut writer,
            &MasterMessage::Error {
                message: "expected hello".into(),
            },
        )?;
        return Err(ProtocolError::Unexpected(format!("{hello:?}")));
    };
    let refusal = if protocol_version != PROTOCOL_VERSION {
        Some(format!("protocol version {protocol_version} unsupported"))
    } else if dataset_fingerprint != shared.options.fingerprint {
        Some("dataset fingerprint mismatch".to_string())
    } else {
        None
    };
    if let Some(message) = refusal {
        log::warn!("refusing worker {worker_id} at {peer}: {message}");
        write_frame(
            &mut writer,
            &MasterMessage::Error {
                message: message.clone(),
            },
        )?;
        return Err(ProtocolError::Rejected(message));
    }
    let train = shared.master.lock().expect("master lock").config().train.clone();
    write_frame(
        &mut writer,
        &MasterMessage::Welcome {
            train: Box::new(train),
            split: shared.options.split.clone(),
        },
    )?;
    log::info!("worker {worker_id} connected from {peer}");
    let mut held = BTreeSet::new();
    let outcome = session(&mut reader, &mut writer, shared, &mut held);
    if !held.is_empty() {
        // the worker left without reporting; hand its genomes to the next
        // requester instead of waiting for them to go stale
        let mut master = shared.master.lock().expect("master lock");
        for id in held {
            log::warn!("worker {worker_id} dropped generation {id}; requeueing");
            master.abandon(id);
        }
    }
    outcome
}

fn session(
    reader: &mut BufReader<TcpStream>,
    writer: &mut BufWriter<TcpStream>,
    shared: &Shared,
    held: &mut BTreeSet<GenerationId>,
) -> Result<(), ProtocolError> {
    loop {
        let msg: WorkerMessage = match read_frame(reader) {
            Ok(m) => m,
            Err(FrameError::Closed) => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        let reply = match msg {
            WorkerMessage::RequestWork => {
                let response = shared.master.lock().expect("master lock").fulfill_work_request();
                match response {
                    Ok(WorkResponse::Work(item)) => {
                        held.insert(item.generation_id);
                        MasterMessage::Work { item }
                    }
                    Ok(WorkResponse::Wait) => MasterMessage::Wait {
                        retry_ms: shared.options.retry_ms,
                    },
                    Ok(WorkResponse::Done) => MasterMessage::Done,
                    Err(e) => MasterMessage::Error { message: e.to_string() },
                }
            }
            WorkerMessage::SubmitResult { result } => {
                let generation_id = result.generation_id;
                held.remove(&generation_id);
                let mut master = shared.master.lock().expect("master lock");
                let outcome = master.insert_result(*result);
                if matches!(outcome, InsertOutcome::Inserted | InsertOutcome::Rejected) {
                    checkpoint_if_due(&master, &shared.options);
                }
                MasterMessage::ResultAck { generation_id, outcome }
            }
            WorkerMessage::Bye => return Ok(()),
            WorkerMessage::Hello { .. } => MasterMessage::Error {
                message: "duplicate hello".into(),
            },
        };
        write_frame(writer, &reply)?;
    }
}

/// Accepts workers on `listener` until the master has resolved its whole
/// evaluation budget. Each connection is served on its own thread; every
/// request or result is one short critical section on the master.
pub fn serve(listener: TcpListener, master: Arc<Mutex<Master>>, options: ServerOptions) -> Result<(), ProtocolError> {
    listener.set_nonblocking(true)?;
    let linger = Duration::from_millis((3 * options.retry_ms).max(1000));
    let shared = Arc::new(Shared { master, options });
    let mut done_at: Option<Instant> = None;
    loop {
        // keep answering for a moment after the budget is spent so that
        // waiting workers hear `Done` instead of a dropped connection
        if done_at.is_none() && shared.master.lock().expect("master lock").is_done() {
            done_at = Some(Instant::now());
        }
        if done_at.is_some_and(|t| t.elapsed() >= linger) {
            break;
        }
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                let _ = stream.set_nodelay(true);
                let shared = Arc::clone(&shared);
                thread::spawn(move || {
                    if let Err(e) = handle(stream, &shared) {
                        log::warn!("connection ended: {e}");
                    }
                });
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(20)),
            Err(e) => return Err(e.into()),
        }
    }
    if let Some(dir) = &shared.options.checkpoint {
        shared.master.lock().expect("master lock").save(dir)?;
    }
    Ok(())
}

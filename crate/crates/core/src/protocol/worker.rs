use std::io::{BufReader, BufWriter};
use std::net::TcpStream;
use std::thread;
use std::time::Duration;

use super::{
    execute, read_frame, write_frame, Capabilities, FrameError, MasterMessage, ProtocolError, WorkerMessage,
    PROTOCOL_VERSION,
};
use crate::dataset::{DataSplit, ImageSet, SplitSpec};
use crate::search::WorkResult;

#[derive(Debug, Clone)]
pub struct WorkerOptions {
    pub worker_id: String,
    /// Consecutive failed connection attempts before giving up.
    pub max_retries: usize,
    /// First reconnect delay; doubles per failure up to five seconds.
    pub backoff_ms: u64,
    /// Overrides the epoch count the master asks for.
    pub epochs: Option<usize>,
    pub capabilities: Capabilities,
}

impl Default for WorkerOptions {
    fn default() -> Self {
        WorkerOptions {
            worker_id: format!("worker-{}", std::process::id()),
            max_retries: 8,
            backoff_ms: 200,
            epochs: None,
            capabilities: Capabilities::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorkerSummary {
    pub evaluated: usize,
    pub reconnects: usize,
}

struct State<'a> {
    full: &'a ImageSet,
    fingerprint: String,
    options: &'a WorkerOptions,
    data: Option<(SplitSpec, DataSplit)>,
    pending: Option<WorkResult>,
    summary: WorkerSummary,
}

enum SessionEnd {
    Done,
}

fn is_transport(e: &ProtocolError) -> bool {
    matches!(
        e,
        ProtocolError::Io(_) | ProtocolError::Frame(FrameError::Io(_) | FrameError::Closed | FrameError::Truncated)
    )
}

fn session(stream: TcpStream, st: &mut State) -> Result<SessionEnd, ProtocolError> {
    let _ = stream.set_nodelay(true);
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    write_frame(
        &mut writer,
        &WorkerMessage::Hello {
            worker_id: st.options.worker_id.clone(),
            protocol_version: PROTOCOL_VERSION,
            dataset_fingerprint: st.fingerprint.clone(),
            capabilities: st.options.capabilities.clone(),
        },
    )?;
    let (train, split) = match read_frame(&mut reader)? {
        MasterMessage::Welcome { train, split } => (*train, split),
        MasterMessage::Error { message } => return Err(ProtocolError::Rejected(message)),
        other => return Err(ProtocolError::Unexpected(format!("{other:?}"))),
    };
    if st.data.as_ref().is_none_or(|(s, _)| *s != split) {
        let data = split.apply(st.full)?;
        st.data = Some((split, data));
    }
    loop {
        if let Some(result) = st.pending.clone() {
            write_frame(
                &mut writer,
                &WorkerMessage::SubmitResult {
                    result: Box::new(result),
                },
            )?;
            match read_frame(&mut reader)? {
                MasterMessage::ResultAck { generation_id, outcome } => {
                    log::info!("generation {generation_id}: {outcome:?}");
                    st.pending = None;
                    st.summary.evaluated += 1;
                }
                other => return Err(ProtocolError::Unexpected(format!("{other:?}"))),
            }
        }
        write_frame(&mut writer, &WorkerMessage::RequestWork)?;
        match read_frame(&mut reader)? {
            MasterMessage::Work { mut item } => {
                if let Some(e) = st.options.epochs {
                    item.epochs = e;
                }
                let (_, data) = st.data.as_ref().expect("split built above");
                st.pending = Some(execute(&item, data, &train, &st.options.worker_id)?);
            }
            MasterMessage::Wait { retry_ms } => thread::sleep(Duration::from_millis(retry_ms)),
            MasterMessage::Done => {
                let _ = write_frame(&mut writer, &WorkerMessage::Bye);
                return Ok(SessionEnd::Done);
            }
            MasterMessage::Error { message } => return Err(ProtocolError::Rejected(message)),
            other => return Err(ProtocolError::Unexpected(format!("{other:?}"))),
        }
    }
}

/// Requests, trains and reports genomes until the master says it is done.
/// Lost connections are retried with exponential backoff; a result that
/// could not be acknowledged is sent again after reconnecting.
pub fn run_worker(addr: &str, full: &ImageSet, options: &WorkerOptions) -> Result<WorkerSummary, ProtocolError> {
    let mut st = State {
        full,
        fingerprint: full.fingerprint(),
        options,
        data: None,
        pending: None,
        summary: WorkerSummary::default(),
    };
    let mut failures = 0usize;
    let mut connected_before = false;
    loop {
        let outcome = TcpStream::connect(addr)
            .map_err(ProtocolError::from)
            .and_then(|stream| {
                if connected_before {
                    st.summary.reconnects += 1;
                }
                connected_before = true;
                failures = 0;
                session(stream, &mut st)
            });
        match outcome {
            Ok(SessionEnd::Done) => return Ok(st.summary),
            Err(e) if is_transport(&e) => {
                failures += 1;
                if failures > options.max_retries {
                    return Err(ProtocolError::Unreachable(failures));
                }
                let delay = options.backoff_ms.saturating_mul(1 << (failures - 1).min(16)).min(5000);
                log::warn!("connection to {addr} failed ({e}); retrying in {delay} ms");
                thread::sleep(Duration::from_millis(delay));
            }
            Err(e) => return Err(e),
        }
    }
}

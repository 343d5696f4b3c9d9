//! TCP fault scenarios shared by the protocol tests and the acceptance run.

use std::collections::BTreeSet;
use std::io::{BufReader, BufWriter};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use evocnn::dataset::{ImageSet, SplitSpec};
use evocnn::mutation::OperatorConfig;
use evocnn::protocol::{
    execute, read_frame, run_worker, serve, write_frame, Capabilities, MasterMessage, ProtocolError, ServerOptions,
    WorkerMessage, WorkerOptions, PROTOCOL_VERSION,
};
use evocnn::search::{InsertOutcome, Master, SearchConfig, WorkItem, WorkResult};
use evocnn::train::TrainConfig;

use super::toy_set;

pub fn toy_config(max_evaluations: u64, seed: u64) -> SearchConfig {
    SearchConfig {
        population_size: 4,
        max_evaluations,
        seed,
        checkpoint_every: 0,
        reissue: false,
        operators: OperatorConfig::new(true, true),
        train: TrainConfig {
            epochs: 1,
            batch_size: 20,
            eval_batch_size: 100,
            ..TrainConfig::default()
        },
        ..SearchConfig::default()
    }
}

pub fn toy_split() -> SplitSpec {
    SplitSpec {
        train_count: 200,
        split_seed: 1,
        ..SplitSpec::default()
    }
}

pub fn toy_full() -> ImageSet {
    toy_set(300, 42)
}

pub fn worker_options(id: &str) -> WorkerOptions {
    WorkerOptions {
        worker_id: id.into(),
        max_retries: 3,
        backoff_ms: 50,
        ..WorkerOptions::default()
    }
}

/// A master served over loopback TCP on its own thread.
pub struct Harness {
    pub master: Arc<Mutex<Master>>,
    pub addr: String,
    pub full: ImageSet,
    server: JoinHandle<Result<(), ProtocolError>>,
}

impl Harness {
    pub fn start(config: SearchConfig) -> Harness {
        let full = toy_full();
        let split = toy_split();
        let data = split.apply(&full).unwrap();
        let master = Arc::new(Mutex::new(
            Master::new(config, data.train.dims(), data.train.classes).unwrap(),
        ));
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let options = ServerOptions {
            fingerprint: full.fingerprint(),
            split,
            checkpoint: None,
            retry_ms: 20,
        };
        let m = Arc::clone(&master);
        let server = thread::spawn(move || serve(listener, m, options));
        Harness {
            master,
            addr,
            full,
            server,
        }
    }

    /// Waits for the server to wind down and returns the final state.
    pub fn finish(self) -> Master {
        self.server.join().expect("server thread").expect("server result");
        let m = self.master.lock().unwrap();
        m.clone()
    }
}

/// A hand-driven worker connection.
pub struct RawClient {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    pub train: TrainConfig,
}

impl RawClient {
    pub fn hello(addr: &str, id: &str, version: u8, fingerprint: &str) -> Result<RawClient, String> {
        let stream = TcpStream::connect(addr).map_err(|e| e.to_string())?;
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut writer = BufWriter::new(stream);
        write_frame(
            &mut writer,
            &WorkerMessage::Hello {
                worker_id: id.into(),
                protocol_version: version,
                dataset_fingerprint: fingerprint.into(),
                capabilities: Capabilities::default(),
            },
        )
        .map_err(|e| e.to_string())?;
        match read_frame(&mut reader).map_err(|e| e.to_string())? {
            MasterMessage::Welcome { train, .. } => Ok(RawClient {
                reader,
                writer,
                train: *train,
            }),
            MasterMessage::Error { message } => Err(message),
            other => Err(format!("{other:?}")),
        }
    }

    pub fn send(&mut self, msg: &WorkerMessage) -> MasterMessage {
        write_frame(&mut self.writer, msg).unwrap();
        read_frame(&mut self.reader).unwrap()
    }

    pub fn take_work(&mut self) -> WorkItem {
        loop {
            match self.send(&WorkerMessage::RequestWork) {
                MasterMessage::Work { item } => return *item,
                MasterMessage::Wait { retry_ms } => thread::sleep(std::time::Duration::from_millis(retry_ms)),
                other => panic!("expected work, got {other:?}"),
            }
        }
    }

    pub fn submit(&mut self, result: &WorkResult) -> InsertOutcome {
        match self.send(&WorkerMessage::SubmitResult {
            result: Box::new(result.clone()),
        }) {
            MasterMessage::ResultAck { outcome, .. } => outcome,
            other => panic!("expected an ack, got {other:?}"),
        }
    }
}

pub fn train_item(item: &WorkItem, train: &TrainConfig) -> WorkResult {
    let data = toy_split().apply(&toy_full()).unwrap();
    execute(item, &data, train, "raw").unwrap()
}

/// Every issued generation resolved exactly once, and the budget spent.
pub fn exactly_once(master: &Master) -> Result<(), String> {
    let rows: Vec<u64> = master.progress().iter().map(|r| r.generation_id).collect();
    let unique: BTreeSet<u64> = rows.iter().copied().collect();
    if unique.len() != rows.len() {
        return Err(format!("a generation was recorded twice: {rows:?}"));
    }
    let issued: BTreeSet<u64> = (0..master.issued()).collect();
    if unique != issued {
        return Err(format!("recorded {unique:?} but issued {issued:?}"));
    }
    if master.evaluations() != master.config().max_evaluations || master.outstanding() != 0 {
        return Err(format!(
            "{} evaluations, {} outstanding",
            master.evaluations(),
            master.outstanding()
        ));
    }
    Ok(())
}

/// A worker takes a genome and dies; a replacement with the same id
/// finishes the run, including the orphaned genome.
pub fn kill_and_restart() -> Result<String, String> {
    let h = Harness::start(toy_config(10, 5));
    let fingerprint = h.full.fingerprint();
    let orphan = {
        let mut c = RawClient::hello(&h.addr, "w1", PROTOCOL_VERSION, &fingerprint)?;
        c.take_work().generation_id
    };
    let summary = run_worker(&h.addr, &h.full, &worker_options("w1")).map_err(|e| e.to_string())?;
    let master = h.finish();
    exactly_once(&master)?;
    if !master.progress().iter().any(|r| r.generation_id == orphan.0) {
        return Err("orphaned genome never resolved".into());
    }
    if summary.evaluated != 10 {
        return Err(format!("replacement evaluated {}", summary.evaluated));
    }
    Ok(format!("orphan {orphan} requeued; 10/10 generations resolved once"))
}

/// The same result is submitted three times over two connections; only
/// the first counts.
pub fn duplicate_replay() -> Result<String, String> {
    let h = Harness::start(toy_config(8, 6));
    let fingerprint = h.full.fingerprint();
    let mut a = RawClient::hello(&h.addr, "a", PROTOCOL_VERSION, &fingerprint)?;
    let item = a.take_work();
    let result = train_item(&item, &a.train);
    let first = a.submit(&result);
    if !matches!(first, InsertOutcome::Inserted | InsertOutcome::Rejected) {
        return Err(format!("first submission answered {first:?}"));
    }
    let again = a.submit(&result);
    let mut b = RawClient::hello(&h.addr, "b", PROTOCOL_VERSION, &fingerprint)?;
    let replay = b.submit(&result);
    if again != InsertOutcome::Duplicate || replay != InsertOutcome::Duplicate {
        return Err(format!("replays answered {again:?} and {replay:?}"));
    }
    drop((a, b));
    run_worker(&h.addr, &h.full, &worker_options("c")).map_err(|e| e.to_string())?;
    let master = h.finish();
    exactly_once(&master)?;
    Ok("replays acknowledged as duplicates; 8/8 generations resolved once".into())
}

/// One worker holds a genome without answering; another keeps getting
/// work, the held genome is reissued after it goes stale, and the late
/// answer is ignored.
pub fn stalled_worker() -> Result<String, String> {
    let mut config = toy_config(12, 7);
    config.reissue = true;
    config.reissue_factor = 1.0;
    config.reissue_floor_secs = 0.3;
    let h = Harness::start(config);
    let fingerprint = h.full.fingerprint();
    let mut staller = RawClient::hello(&h.addr, "stall", PROTOCOL_VERSION, &fingerprint)?;
    let held = staller.take_work();
    let summary = run_worker(&h.addr, &h.full, &worker_options("busy")).map_err(|e| e.to_string())?;
    let late = train_item(&held, &staller.train);
    let late_outcome = staller.submit(&late);
    drop(staller);
    let master = h.finish();
    exactly_once(&master)?;
    if summary.evaluated != 12 {
        return Err(format!("active worker evaluated {} of 12", summary.evaluated));
    }
    if late_outcome != InsertOutcome::Duplicate {
        return Err(format!("late result answered {late_outcome:?}"));
    }
    Ok("active worker served 12/12 while one genome was held; late answer ignored".into())
}

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use super::{execute, ProtocolError};
use crate::dataset::DataSplit;
use crate::search::{Master, WorkResponse};

/// Drives `master` to completion with `workers` training threads in this
/// process. With a checkpoint directory, state is saved every
/// `checkpoint_every` results and once at the end.
pub fn run_local(
    master: &Mutex<Master>,
    data: &DataSplit,
    workers: usize,
    checkpoint: Option<&Path>,
) -> Result<(), ProtocolError> {
    let train = {
        let mut m = master.lock().expect("master lock");
        // every worker lives in this process, so nothing can be lost in transit
        m.set_reissue(false);
        m.config().train.clone()
    };
    let failed = AtomicBool::new(false);
    let first_error: Mutex<Option<ProtocolError>> = Mutex::new(None);
    let wake = Condvar::new();
    let fail = |e: ProtocolError| {
        failed.store(true, Ordering::SeqCst);
        first_error.lock().expect("error slot").get_or_insert(e);
        wake.notify_all();
    };

    thread::scope(|s| {
        for w in 0..workers.max(1) {
            let (train, fail, failed, wake) = (&train, &fail, &failed, &wake);
            s.spawn(move || {
                let worker_id = format!("local-{w}");
                while !failed.load(Ordering::SeqCst) {
                    let mut guard = master.lock().expect("master lock");
                    let response = match guard.fulfill_work_request() {
                        Ok(r) => r,
                        Err(e) => return fail(e.into()),
                    };
                    let item = match response {
                        WorkResponse::Work(item) => item,
                        WorkResponse::Wait => {
                            let _ = wake.wait_timeout(guard, Duration::from_millis(50));
                            continue;
                        }
                        WorkResponse::Done => {
                            wake.notify_all();
                            return;
                        }
                    };
                    drop(guard);
                    let result = match execute(&item, data, train, &worker_id) {
                        Ok(r) => r,
                        Err(e) => {
                            master.lock().expect("master lock").abandon(item.generation_id);
                            return fail(e.into());
                        }
                    };
                    let mut guard = master.lock().expect("master lock");
                    guard.insert_result(result);
                    let every = guard.config().checkpoint_every;
                    if let Some(dir) = checkpoint {
                        if every > 0 && guard.evaluations().is_multiple_of(every) {
                            if let Err(e) = guard.save(dir) {
                                drop(guard);
                                return fail(e.into());
                            }
                        }
                    }
                    drop(guard);
                    wake.notify_all();
                }
            });
        }
    });

    if let Some(dir) = checkpoint {
        master.lock().expect("master lock").save(dir)?;
    }
    match first_error.into_inner().expect("error slot") {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

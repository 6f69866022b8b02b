//! Analysis job queue.
//!
//! Jobs run on a small worker pool. Two jobs over the same product set never
//! run at once; the later one stays queued until the earlier finishes.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::error::{QueryError, StoreError};
use crate::ingest::CorpusQuery;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub query: CorpusQuery,
    pub state: JobState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub queued_at: DateTime<Utc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub started_at: Option<DateTime<Utc>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
}

/// Runs one analysis and publishes it, returning the snapshot id.
pub trait JobRunner: Send + Sync {
    fn run(&self, query: &CorpusQuery) -> Result<String, String>;
}

impl<F> JobRunner for F
where
    F: Fn(&CorpusQuery) -> Result<String, String> + Send + Sync,
{
    fn run(&self, query: &CorpusQuery) -> Result<String, String> {
        self(query)
    }
}

/// Anything that accepts analysis jobs.
pub trait JobSink: Send + Sync {
    fn submit(&self, query: CorpusQuery) -> Result<String, QueryError>;
}

#[derive(Default)]
struct QueueState {
    next_id: u64,
    records: HashMap<String, JobRecord>,
    queue: VecDeque<String>,
    running: HashSet<BTreeSet<String>>,
    shutdown: bool,
}

struct Shared {
    state: Mutex<QueueState>,
    changed: Condvar,
    runner: Arc<dyn JobRunner>,
    clock: Arc<dyn Clock>,
}

impl Shared {
    /// Next queued job whose product set is idle, marked RUNNING.
    fn claim(&self) -> Option<(String, CorpusQuery)> {
        let mut state = self.state.lock().expect("job lock");
        loop {
            if state.shutdown {
                return None;
            }
            let pick = state.queue.iter().position(|id| {
                let products = &state.records[id].query.product_ids;
                !state.running.contains(products)
            });
            if let Some(pos) = pick {
                let id = state.queue.remove(pos).expect("position in range");
                let now = self.clock.now();
                let record = state.records.get_mut(&id).expect("queued job has a record");
                record.state = JobState::Running;
                record.started_at = Some(now);
                let query = record.query.clone();
                state.running.insert(query.product_ids.clone());
                self.changed.notify_all();
                return Some((id, query));
            }
            state = self.changed.wait(state).expect("job lock");
        }
    }

    fn finish(&self, id: &str, outcome: Result<String, String>) {
        let mut state = self.state.lock().expect("job lock");
        let now = self.clock.now();
        let record = state.records.get_mut(id).expect("running job has a record");
        match outcome {
            Ok(snapshot_id) => {
                record.state = JobState::Done;
                record.snapshot_id = Some(snapshot_id);
            }
            Err(error) => {
                record.state = JobState::Failed;
                record.error = Some(error);
            }
        }
        record.finished_at = Some(now);
        let products = record.query.product_ids.clone();
        state.running.remove(&products);
        self.changed.notify_all();
    }

    fn work(self: Arc<Self>) {
        while let Some((id, query)) = self.claim() {
            let outcome =
                std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| self.runner.run(&query)))
                    .unwrap_or_else(|_| Err("analysis panicked".to_string()));
            self.finish(&id, outcome);
        }
    }
}

pub struct JobManager {
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
}

impl JobManager {
    pub fn new(runner: Arc<dyn JobRunner>, clock: Arc<dyn Clock>, workers: usize) -> Self {
        let shared = Arc::new(Shared {
            state: Mutex::new(QueueState::default()),
            changed: Condvar::new(),
            runner,
            clock,
        });
        let workers = (0..workers.max(1))
            .map(|i| {
                let shared = shared.clone();
                std::thread::Builder::new()
                    .name(format!("analysis-{i}"))
                    .spawn(move || shared.work())
                    .expect("spawn worker")
            })
            .collect();
        JobManager { shared, workers }
    }

    pub fn submit_job(&self, query: CorpusQuery) -> String {
        let mut state = self.shared.state.lock().expect("job lock");
        state.next_id += 1;
        let id = format!("job-{:06}", state.next_id);
        state.records.insert(
            id.clone(),
            JobRecord {
                job_id: id.clone(),
                query,
                state: JobState::Queued,
                snapshot_id: None,
                error: None,
                queued_at: self.shared.clock.now(),
                started_at: None,
                finished_at: None,
            },
        );
        state.queue.push_back(id.clone());
        self.shared.changed.notify_all();
        id
    }

    pub fn get(&self, job_id: &str) -> Result<JobRecord, StoreError> {
        self.shared
            .state
            .lock()
            .expect("job lock")
            .records
            .get(job_id)
            .cloned()
            .ok_or_else(|| StoreError::JobNotFound(job_id.to_string()))
    }

    /// Blocks until the job is DONE or FAILED, or `timeout` passes.
    pub fn wait(&self, job_id: &str, timeout: Duration) -> Result<JobRecord, StoreError> {
        let deadline = Instant::now() + timeout;
        let mut state = self.shared.state.lock().expect("job lock");
        loop {
            let record = state
                .records
                .get(job_id)
                .ok_or_else(|| StoreError::JobNotFound(job_id.to_string()))?;
            if record.state.is_terminal() {
                return Ok(record.clone());
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(record.clone());
            }
            state = self
                .shared
                .changed
                .wait_timeout(state, left)
                .expect("job lock")
                .0;
        }
    }
}

impl JobSink for JobManager {
    fn submit(&self, query: CorpusQuery) -> Result<String, QueryError> {
        Ok(self.submit_job(query))
    }
}

impl Drop for JobManager {
    fn drop(&mut self) {
        self.shared.state.lock().expect("job lock").shutdown = true;
        self.shared.changed.notify_all();
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }
}

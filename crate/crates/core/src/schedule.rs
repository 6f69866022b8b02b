//! Recurring analysis. Ticks fall on a fixed grid `first + k * interval`;
//! any number of ticks missed while the process was down collapse into one
//! catch-up job.

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::error::QueryError;
use crate::ingest::CorpusQuery;
use crate::jobs::JobSink;
use crate::store::write_atomic;

pub const DEFAULT_INTERVAL_HOURS: i64 = 12;

/// Product set plus a look-back window ending at the tick. Without a
/// look-back the window starts at the Unix epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTemplate {
    pub product_ids: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lookback_secs: Option<i64>,
}

impl QueryTemplate {
    pub fn at(&self, tick: DateTime<Utc>) -> Result<CorpusQuery, QueryError> {
        let from = match self.lookback_secs {
            Some(secs) => tick - Duration::seconds(secs),
            None => DateTime::<Utc>::UNIX_EPOCH,
        };
        CorpusQuery::new(self.product_ids.iter().cloned(), from, tick)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct ScheduleState {
    last_tick: DateTime<Utc>,
}

pub struct RecurringSchedule {
    interval: Duration,
    template: QueryTemplate,
    clock: Arc<dyn Clock>,
    state_file: Option<PathBuf>,
    last_tick: Option<DateTime<Utc>>,
}

impl RecurringSchedule {
    pub fn new(
        interval: Duration,
        template: QueryTemplate,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, QueryError> {
        if interval <= Duration::zero() {
            return Err(QueryError::NonPositiveInterval);
        }
        Ok(RecurringSchedule {
            interval,
            template,
            clock,
            state_file: None,
            last_tick: None,
        })
    }

    /// Remembers the last tick in `path` across restarts, picking up the
    /// stored value if the file exists.
    pub fn persist_to(mut self, path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        if let Ok(text) = fs::read_to_string(&path) {
            match serde_json::from_str::<ScheduleState>(&text) {
                Ok(state) => self.last_tick = Some(state.last_tick),
                Err(e) => log::warn!("ignoring unreadable schedule state {}: {e}", path.display()),
            }
        }
        self.state_file = Some(path);
        self
    }

    pub fn last_tick(&self) -> Option<DateTime<Utc>> {
        self.last_tick
    }

    /// Tick due at `now`, if any: the first call always fires; afterwards
    /// the latest grid point not after `now`, once.
    fn due(&self, now: DateTime<Utc>) -> Option<DateTime<Utc>> {
        match self.last_tick {
            None => Some(now),
            Some(last) if now >= last + self.interval => {
                let elapsed = (now - last).num_milliseconds();
                let steps = elapsed / self.interval.num_milliseconds();
                Some(last + Duration::milliseconds(steps * self.interval.num_milliseconds()))
            }
            Some(_) => None,
        }
    }

    /// Submits at most one job. Returns its id when one was submitted.
    pub fn poll(&mut self, sink: &dyn JobSink) -> Option<String> {
        let now = self.clock.now();
        let tick = self.due(now)?;
        self.last_tick = Some(tick);
        if let Some(path) = &self.state_file {
            let state =
                serde_json::to_vec(&ScheduleState { last_tick: tick }).expect("state serializes");
            if let Err(e) = write_atomic(path, &state) {
                log::warn!("failed to persist schedule state: {e}");
            }
        }
        match self.template.at(now).and_then(|q| sink.submit(q)) {
            Ok(id) => Some(id),
            Err(e) => {
                log::error!("scheduled job rejected: {e}");
                None
            }
        }
    }

    /// Polls on a background thread every `every` until the handle drops.
    pub fn spawn(mut self, sink: Arc<dyn JobSink>, every: std::time::Duration) -> ScheduleHandle {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = std::thread::spawn(move || {
            while !flag.load(Ordering::Relaxed) {
                if let Some(id) = self.poll(sink.as_ref()) {
                    log::info!("scheduled analysis submitted as {id}");
                }
                std::thread::park_timeout(every);
            }
        });
        ScheduleHandle {
            stop,
            thread: Some(thread),
        }
    }
}

pub struct ScheduleHandle {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ScheduleHandle {
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            t.thread().unpark();
            let _ = t.join();
        }
    }
}

impl Drop for ScheduleHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

//! Background community jobs with an ordered, replayable event log.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use tokio::sync::watch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
    Cancelled,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            JobState::Done | JobState::Failed | JobState::Cancelled
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Progress,
    Done,
    Failed,
    Cancelled,
}

/// One entry of a job's stream. `seq` counts from 1 without gaps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobEvent {
    pub seq: u64,
    pub kind: EventKind,
    /// Last completed chunk (1-based; 0 before the first).
    pub chunk_index: usize,
    pub chunk_total: usize,
    pub cumulative_count: usize,
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub community: String,
    pub state: JobState,
    pub events: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
}

pub struct Job {
    pub id: String,
    pub community: String,
    inner: Mutex<Inner>,
    cancel: Arc<AtomicBool>,
    /// Carries the number of events; bumped on every append.
    tx: watch::Sender<u64>,
}

struct Inner {
    state: JobState,
    events: Vec<JobEvent>,
}

impl Job {
    fn new(id: String, community: String) -> Self {
        Job {
            id,
            community,
            inner: Mutex::new(Inner {
                state: JobState::Queued,
                events: Vec::new(),
            }),
            cancel: Arc::new(AtomicBool::new(false)),
            tx: watch::channel(0).0,
        }
    }

    pub fn state(&self) -> JobState {
        self.inner.lock().expect("job lock").state
    }

    pub fn set_running(&self) {
        let mut g = self.inner.lock().expect("job lock");
        if g.state == JobState::Queued {
            g.state = JobState::Running;
        }
    }

    pub fn cancel_flag(&self) -> Arc<AtomicBool> {
        self.cancel.clone()
    }

    pub fn request_cancel(&self) {
        self.cancel.store(true, Ordering::SeqCst);
    }

    /// Appends a progress event; ignored once the job is terminal.
    pub fn progress(
        &self,
        chunk_index: usize,
        chunk_total: usize,
        cumulative_count: usize,
        timestamp: String,
    ) {
        self.push(
            EventKind::Progress,
            chunk_index,
            chunk_total,
            cumulative_count,
            timestamp,
            None,
            None,
        );
    }

    /// Appends the terminal event and sets the matching state. Only the
    /// first call has an effect.
    pub fn finish(
        &self,
        kind: EventKind,
        timestamp: String,
        run_id: Option<String>,
        error: Option<String>,
    ) {
        let (ci, ct, cc) = {
            let g = self.inner.lock().expect("job lock");
            g.events
                .last()
                .map(|e| (e.chunk_index, e.chunk_total, e.cumulative_count))
                .unwrap_or((0, 0, 0))
        };
        self.push(kind, ci, ct, cc, timestamp, run_id, error);
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &self,
        kind: EventKind,
        chunk_index: usize,
        chunk_total: usize,
        cumulative_count: usize,
        timestamp: String,
        run_id: Option<String>,
        error: Option<String>,
    ) {
        let n = {
            let mut g = self.inner.lock().expect("job lock");
            if g.state.is_terminal() {
                return;
            }
            g.state = match kind {
                EventKind::Progress => JobState::Running,
                EventKind::Done => JobState::Done,
                EventKind::Failed => JobState::Failed,
                EventKind::Cancelled => JobState::Cancelled,
            };
            let seq = g.events.len() as u64 + 1;
            g.events.push(JobEvent {
                seq,
                kind,
                chunk_index,
                chunk_total,
                cumulative_count,
                timestamp,
                run_id,
                error,
            });
            seq
        };
        self.tx.send_replace(n);
    }

    /// Events with `seq > after`, and whether the job has finished.
    pub fn events_after(&self, after: u64) -> (Vec<JobEvent>, bool) {
        let g = self.inner.lock().expect("job lock");
        let start = (after as usize).min(g.events.len());
        (g.events[start..].to_vec(), g.state.is_terminal())
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.tx.subscribe()
    }

    pub fn status(&self) -> JobStatus {
        let g = self.inner.lock().expect("job lock");
        JobStatus {
            job_id: self.id.clone(),
            community: self.community.clone(),
            state: g.state,
            events: g.events.len(),
            run_id: g.events.last().and_then(|e| e.run_id.clone()),
        }
    }
}

#[derive(Default)]
pub struct JobManager {
    jobs: RwLock<HashMap<String, Arc<Job>>>,
    next: AtomicU64,
}

impl JobManager {
    pub fn create(&self, community: &str) -> Arc<Job> {
        let n = self.next.fetch_add(1, Ordering::SeqCst) + 1;
        let job = Arc::new(Job::new(format!("job-{n:06}"), community.to_string()));
        self.jobs
            .write()
            .expect("jobs lock")
            .insert(job.id.clone(), job.clone());
        job
    }

    pub fn get(&self, id: &str) -> Option<Arc<Job>> {
        self.jobs.read().expect("jobs lock").get(id).cloned()
    }
}

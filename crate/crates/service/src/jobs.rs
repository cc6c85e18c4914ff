//! Consolidation jobs: lifecycle, journal, bounded worker pool, results.
//!
//! Every state change is appended to `<data_dir>/jobs.journal` as a full
//! job snapshot, one JSON object per line. On startup the journal is
//! replayed: pending jobs are queued again and jobs caught running are
//! failed, since their work did not finish.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use carbon_tables::{ConsolidationOptions, KnowledgeGraph, MaterialBase, PipelineOutput};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use uuid::Uuid;

use crate::store::DocumentStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Pending,
    Running,
    Succeeded,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Succeeded | JobState::Failed)
    }

    pub fn can_become(self, next: JobState) -> bool {
        matches!(
            (self, next),
            (JobState::Pending, JobState::Running)
                | (JobState::Running, JobState::Succeeded)
                | (JobState::Running, JobState::Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: Uuid,
    pub state: JobState,
    pub submitted_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    pub document_ids: Vec<String>,
    pub options: ConsolidationOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum JobError {
    #[error("unknown job {0}")]
    UnknownJob(Uuid),
    #[error("job {0} is {1:?}, not succeeded")]
    NotFinished(Uuid, JobState),
    #[error("illegal transition {from:?} -> {to:?} for job {job}")]
    IllegalTransition { job: Uuid, from: JobState, to: JobState },
    #[error("journal error: {0}")]
    Journal(#[from] std::io::Error),
    #[error("corrupt journal line {line}: {message}")]
    CorruptJournal { line: usize, message: String },
}

/// Called on the worker thread right before a job's consolidation starts.
pub type BeforeRunHook = Arc<dyn Fn(Uuid) + Send + Sync>;

#[derive(Clone, Default)]
pub struct JobHooks {
    pub before_run: Option<BeforeRunHook>,
}

impl std::fmt::Debug for JobHooks {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JobHooks")
            .field("before_run", &self.before_run.is_some())
            .finish()
    }
}

pub struct JobManager {
    jobs: RwLock<HashMap<Uuid, JobRecord>>,
    order: RwLock<Vec<Uuid>>,
    journal: Mutex<File>,
    results_dir: PathBuf,
    store: Arc<DocumentStore>,
    permits: Arc<Semaphore>,
    graphs: RwLock<HashMap<Uuid, Arc<KnowledgeGraph>>>,
    running: AtomicUsize,
    peak_running: AtomicUsize,
    hooks: JobHooks,
}

impl JobManager {
    /// Opens the journal under `data_dir`, replaying earlier jobs. Pending
    /// jobs found there are returned so the caller can queue them again.
    pub fn open(
        data_dir: &Path,
        store: Arc<DocumentStore>,
        max_concurrent_jobs: usize,
        hooks: JobHooks,
    ) -> Result<(Arc<Self>, Vec<Uuid>), JobError> {
        let results_dir = data_dir.join("results");
        std::fs::create_dir_all(&results_dir)?;
        let journal_path = data_dir.join("jobs.journal");
        let (jobs, order) = replay(&journal_path)?;
        let mut journal = OpenOptions::new().create(true).append(true).open(&journal_path)?;
        let existing = std::fs::read(&journal_path)?;
        if existing.last().is_some_and(|&b| b != b'\n') {
            journal.write_all(b"\n")?;
        }
        let manager = Arc::new(Self {
            jobs: RwLock::new(jobs),
            order: RwLock::new(order),
            journal: Mutex::new(journal),
            results_dir,
            store,
            permits: Arc::new(Semaphore::new(max_concurrent_jobs.max(1))),
            graphs: RwLock::new(HashMap::new()),
            running: AtomicUsize::new(0),
            peak_running: AtomicUsize::new(0),
            hooks,
        });

        let mut requeue = Vec::new();
        let snapshot: Vec<JobRecord> = manager.list();
        for job in snapshot {
            match job.state {
                JobState::Running => {
                    manager.transition(job.job_id, JobState::Failed, |j| {
                        j.error = Some("interrupted by service restart".into());
                    })?;
                }
                JobState::Pending => requeue.push(job.job_id),
                JobState::Succeeded => {
                    if let Some(graph) = manager.read_graph(job.job_id) {
                        manager.graphs.write().unwrap().insert(job.job_id, Arc::new(graph));
                    }
                }
                JobState::Failed => {}
            }
        }
        Ok((manager, requeue))
    }

    pub fn get(&self, id: Uuid) -> Option<JobRecord> {
        self.jobs.read().unwrap().get(&id).cloned()
    }

    /// All jobs in submission order.
    pub fn list(&self) -> Vec<JobRecord> {
        let jobs = self.jobs.read().unwrap();
        self.order
            .read()
            .unwrap()
            .iter()
            .filter_map(|id| jobs.get(id).cloned())
            .collect()
    }

    pub fn peak_running(&self) -> usize {
        self.peak_running.load(Ordering::SeqCst)
    }

    fn append_journal(&self, record: &JobRecord) -> Result<(), JobError> {
        let mut line = serde_json::to_vec(record).expect("job records serialize");
        line.push(b'\n');
        let mut journal = self.journal.lock().unwrap();
        journal.write_all(&line)?;
        journal.flush()?;
        Ok(())
    }

    /// Records a new pending job.
    pub fn create(&self, document_ids: Vec<String>, options: ConsolidationOptions) -> Result<JobRecord, JobError> {
        let record = JobRecord {
            job_id: Uuid::new_v4(),
            state: JobState::Pending,
            submitted_at: Utc::now(),
            started_at: None,
            finished_at: None,
            document_ids,
            options,
            result_ref: None,
            error: None,
        };
        let mut jobs = self.jobs.write().unwrap();
        self.append_journal(&record)?;
        jobs.insert(record.job_id, record.clone());
        self.order.write().unwrap().push(record.job_id);
        Ok(record)
    }

    fn transition(&self, id: Uuid, next: JobState, update: impl FnOnce(&mut JobRecord)) -> Result<JobRecord, JobError> {
        let mut jobs = self.jobs.write().unwrap();
        let job = jobs.get_mut(&id).ok_or(JobError::UnknownJob(id))?;
        if !job.state.can_become(next) {
            return Err(JobError::IllegalTransition {
                job: id,
                from: job.state,
                to: next,
            });
        }
        let mut updated = job.clone();
        updated.state = next;
        let now = Utc::now();
        match next {
            JobState::Running => updated.started_at = Some(now),
            JobState::Succeeded | JobState::Failed => updated.finished_at = Some(now),
            JobState::Pending => {}
        }
        update(&mut updated);
        self.append_journal(&updated)?;
        *job = updated.clone();
        Ok(updated)
    }

    fn job_dir(&self, id: Uuid) -> PathBuf {
        self.results_dir.join(id.to_string())
    }

    /// Bytes of a finished job's artifact (`graph.json`, `features.csv`, ...).
    pub fn artifact(&self, id: Uuid, name: &str) -> Result<Vec<u8>, JobError> {
        let job = self.get(id).ok_or(JobError::UnknownJob(id))?;
        if job.state != JobState::Succeeded {
            return Err(JobError::NotFinished(id, job.state));
        }
        Ok(std::fs::read(self.job_dir(id).join(name))?)
    }

    fn read_graph(&self, id: Uuid) -> Option<KnowledgeGraph> {
        let bytes = std::fs::read(self.job_dir(id).join("graph.json")).ok()?;
        KnowledgeGraph::from_json_slice(&bytes).ok()
    }

    /// Graphs of all succeeded jobs, in submission order.
    pub fn succeeded_graphs(&self) -> Vec<Arc<KnowledgeGraph>> {
        let graphs = self.graphs.read().unwrap();
        self.order
            .read()
            .unwrap()
            .iter()
            .filter_map(|id| graphs.get(id).cloned())
            .collect()
    }

    /// Queues a pending job on the worker pool. Returns at once.
    pub fn enqueue(self: &Arc<Self>, id: Uuid, mb: Arc<MaterialBase>) {
        let manager = Arc::clone(self);
        tokio::spawn(async move {
            let permit = manager.permits.clone().acquire_owned().await.expect("semaphore open");
            let worker = Arc::clone(&manager);
            let outcome = tokio::task::spawn_blocking(move || worker.run(id, &mb)).await;
            drop(permit);
            if let Err(err) = outcome {
                tracing::error!(job_id = %id, error = %err, "worker panicked");
                let _ = manager.transition(id, JobState::Failed, |j| {
                    j.error = Some(format!("worker panicked: {err}"))
                });
            }
        });
    }

    fn run(&self, id: Uuid, mb: &MaterialBase) {
        let job = match self.transition(id, JobState::Running, |_| {}) {
            Ok(job) => job,
            Err(err) => {
                tracing::error!(job_id = %id, error = %err, "cannot start job");
                return;
            }
        };
        let slot = RunningSlot::take(&self.running, &self.peak_running);
        tracing::info!(job_id = %id, documents = job.document_ids.len(), "job running");

        if let Some(hook) = &self.hooks.before_run {
            hook(id);
        }
        let result = self.execute(&job, mb);

        // Leave the running count before the terminal state is visible, so an
        // observer never sees more running jobs than the pool allows.
        drop(slot);
        let finished = match result {
            Ok((dir, graph)) => {
                // Holding the cache lock across the transition means a reader
                // that sees the job succeeded also sees its graph.
                let mut graphs = self.graphs.write().unwrap();
                let done = self.transition(id, JobState::Succeeded, |j| j.result_ref = Some(dir));
                if done.is_ok() {
                    graphs.insert(id, Arc::new(graph));
                }
                done
            }
            Err(message) => self.transition(id, JobState::Failed, |j| j.error = Some(message)),
        };
        match finished {
            Ok(job) => tracing::info!(job_id = %id, state = ?job.state, error = job.error.as_deref(), "job finished"),
            Err(err) => tracing::error!(job_id = %id, error = %err, "cannot finish job"),
        }
    }

    fn execute(&self, job: &JobRecord, mb: &MaterialBase) -> Result<(String, KnowledgeGraph), String> {
        let documents = job
            .document_ids
            .iter()
            .map(|id| self.store.load(id))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let output = PipelineOutput::build(&documents, mb, job.options);
        let dir = self.job_dir(job.job_id);
        let staging = self.results_dir.join(format!(".{}.partial", job.job_id));
        output
            .write_to(&staging)
            .and_then(|_| std::fs::rename(&staging, &dir))
            .map_err(|e| format!("cannot write results: {e}"))?;
        Ok((format!("results/{}", job.job_id), output.graph))
    }
}

struct RunningSlot<'a>(&'a AtomicUsize);

impl<'a> RunningSlot<'a> {
    fn take(running: &'a AtomicUsize, peak: &AtomicUsize) -> Self {
        let now = running.fetch_add(1, Ordering::SeqCst) + 1;
        peak.fetch_max(now, Ordering::SeqCst);
        Self(running)
    }
}

impl Drop for RunningSlot<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

fn replay(path: &Path) -> Result<(HashMap<Uuid, JobRecord>, Vec<Uuid>), JobError> {
    let mut jobs = HashMap::new();
    let mut order = Vec::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((jobs, order)),
        Err(e) => return Err(e.into()),
    };
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JobRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            // A torn final line from a crash mid-write is dropped.
            Err(e) if e.is_eof() => continue,
            Err(e) => {
                return Err(JobError::CorruptJournal {
                    line: n + 1,
                    message: e.to_string(),
                })
            }
        };
        if !jobs.contains_key(&record.job_id) {
            order.push(record.job_id);
        }
        jobs.insert(record.job_id, record);
    }
    Ok((jobs, order))
}

//! REST front end for table consolidation.
//!
//! Uploads land in a [`store::DocumentStore`]; `POST /jobs` queues work on a
//! bounded pool managed by [`jobs::JobManager`], and results are served back
//! as the same bytes the offline pipeline writes.

pub mod api;
pub mod config;
pub mod jobs;
pub mod store;

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use carbon_tables::{CatalogError, MaterialBase};

pub use config::ServiceConfig;
pub use jobs::{JobHooks, JobManager, JobRecord, JobState};
pub use store::DocumentStore;

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error(transparent)]
    MaterialBase(#[from] CatalogError),
    #[error(transparent)]
    Store(#[from] store::StoreError),
    #[error(transparent)]
    Jobs(#[from] jobs::JobError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
}

/// Shared handler state.
#[derive(Clone)]
pub struct AppState {
    pub config: Arc<ServiceConfig>,
    pub store: Arc<DocumentStore>,
    pub jobs: Arc<JobManager>,
    /// Swapped whole on reload; each job keeps the snapshot it started with.
    pub mb: Arc<RwLock<Arc<MaterialBase>>>,
}

impl AppState {
    pub fn load_material_base(&self) -> Result<MaterialBase, CatalogError> {
        read_material_base(&self.config)
    }
}

fn read_material_base(config: &ServiceConfig) -> Result<MaterialBase, CatalogError> {
    match &config.mb_path {
        Some(path) => MaterialBase::load(path),
        None => Ok(MaterialBase::shipped()),
    }
}

/// Opens storage and the job journal and queues any jobs left pending.
/// Must be called inside a tokio runtime.
pub fn start(config: ServiceConfig, hooks: JobHooks) -> Result<AppState, StartError> {
    let mb = Arc::new(read_material_base(&config)?);
    std::fs::create_dir_all(&config.data_dir).map_err(|source| {
        StartError::Store(store::StoreError::Io {
            path: config.data_dir.clone(),
            source,
        })
    })?;
    let store = Arc::new(DocumentStore::open(config.data_dir.join("documents"))?);
    let (jobs, requeue) = JobManager::open(&config.data_dir, store.clone(), config.max_concurrent_jobs, hooks)?;
    for id in requeue {
        tracing::info!(job_id = %id, "requeueing pending job");
        jobs.enqueue(id, mb.clone());
    }
    Ok(AppState {
        config: Arc::new(config),
        store,
        jobs,
        mb: Arc::new(RwLock::new(mb)),
    })
}

/// Binds the configured address and serves in the background. Returns the
/// bound address (useful with port 0) and the state.
pub async fn spawn_server(config: ServiceConfig, hooks: JobHooks) -> Result<(SocketAddr, AppState), StartError> {
    let addr = config.listen_addr;
    let state = start(config, hooks)?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| StartError::Bind { addr, source })?;
    let bound = listener
        .local_addr()
        .map_err(|source| StartError::Bind { addr, source })?;
    let app = api::router(state.clone());
    tokio::spawn(async move {
        if let Err(err) = axum::serve(listener, app).await {
            tracing::error!(error = %err, "server stopped");
        }
    });
    Ok((bound, state))
}

//! HTTP/WebSocket gateway and command-line front end for the cadence
//! pipeline.

pub mod api;
pub mod cli;
pub mod error;
pub mod sessions;
pub mod traces;

use std::sync::Arc;

use cadence_render::{Clients, JobStore, Orchestrator, ServiceConfig, SessionArchive};

/// Builds the orchestrator described by `config`, creating its directories.
pub fn build_orchestrator(config: ServiceConfig) -> anyhow::Result<Orchestrator> {
    let clients = Clients::from_config(&config)?;
    let store = JobStore::open(&config.paths.jobs_dir)?;
    let archive = SessionArchive::open(&config.paths.sessions_dir)?;
    std::fs::create_dir_all(&config.paths.traces_dir)?;
    Ok(Orchestrator::new(Arc::new(config), store, archive, clients)?)
}

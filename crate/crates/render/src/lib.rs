//! Render-job orchestration for the cadence pipeline: service clients and
//! their offline mocks, the on-disk job store, the CHARCHA session archive
//! that backs the consent gate, and the evaluation runner.

pub mod archive;
pub mod clients;
pub mod config;
pub mod evaluate;
pub mod image;
pub mod job;
pub mod orchestrator;
pub mod store;

pub use archive::{SessionArchive, CONSENT_REQUIRED};
pub use clients::Clients;
pub use config::ServiceConfig;
pub use job::{FrameManifest, JobProgress, JobRequest, JobStatus, RenderJob};
pub use orchestrator::{Orchestrator, RunError, SubmitError};
pub use store::JobStore;

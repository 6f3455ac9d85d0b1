//! Deployment layer: area detection pipeline, run store with tree
//! identities, community jobs, the HTTP service and the CLI plumbing.

pub mod area;
pub mod config;
pub mod error;
pub mod http;
pub mod jobs;
pub mod pipeline;
pub mod service;
pub mod store;
pub mod trees;
pub mod world;

pub use area::AreaSpec;
pub use error::{AppError, Result};
pub use service::{App, DetectSettings};
pub use store::{DetectionRun, Report, Store};

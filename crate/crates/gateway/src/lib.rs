//! HTTP gateway, offline pipeline and evaluation harness for the stylechat
//! conversational design assistant.
//!
//! - [`config`]: TOML service configuration with env overrides
//! - [`pipeline`]: data generation, training, artifact loading
//! - [`service`]: sessions, chat, design edit and commit, search
//! - [`http`]: axum routes and the `serve` loop
//! - [`eval`]: acceptance metrics with their oracles

pub mod config;
pub mod eval;
pub mod http;
pub mod pipeline;
pub mod service;

pub use config::ServiceConfig;
pub use service::{ApiError, AppState};

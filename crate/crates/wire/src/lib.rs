//! HTTP transport for measurement tools.
//!
//! [`HttpBackend`] implements the core `ToolBackend` trait over the JSON
//! protocol in [`protocol`]; [`FixtureServer`] serves the same protocol from
//! an annotation store so the pipeline can be exercised end to end.

pub mod client;
pub mod protocol;
pub mod server;

pub use client::{EndpointConfig, HttpBackend};
pub use server::{FixtureServer, RunningServer, ServeError};

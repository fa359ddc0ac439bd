//! Detection providers behind the measurement API.
//!
//! Every provider implements [`ToolBackend`]. The executor never talks to a
//! provider directly; it goes through [`Normalized`], which enforces the
//! coordinate, confidence and exists/find consistency rules for all of them.

mod adapter;
mod fixture;
mod routing;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CxrObject, CxrSegmentation, StudyRecord};

pub use adapter::{to_original_frame, Normalized};
pub use fixture::{AnnotatedBox, FixtureAnnotation, FixtureBackend, FixtureStore, IngestError};
pub use routing::{route, RoutedBackend, RoutingRule, RoutingTable};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("request rejected ({code}): {message}")]
    Rejected { code: String, message: String },
    #[error("no backend registered under id '{0}'")]
    UnknownBackend(String),
}

/// Answer to an existence question.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Existence {
    pub exists: bool,
    pub confidence: f64,
}

pub trait ToolBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Id of the provider that answers for `object_name`. Routing backends
    /// override this.
    fn tool_for(&self, _object_name: &str) -> String {
        self.id().to_string()
    }

    fn exists(&self, study: &StudyRecord, object_name: &str) -> Result<Existence, BackendError>;

    fn find(&self, study: &StudyRecord, object_name: &str) -> Result<Vec<CxrObject>, BackendError>;

    fn segment(&self, study: &StudyRecord, object_name: &str) -> Result<CxrSegmentation, BackendError>;
}

pub type SharedBackend = Arc<dyn ToolBackend>;

impl<T: ToolBackend + ?Sized> ToolBackend for Arc<T> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn tool_for(&self, object_name: &str) -> String {
        (**self).tool_for(object_name)
    }

    fn exists(&self, study: &StudyRecord, object_name: &str) -> Result<Existence, BackendError> {
        (**self).exists(study, object_name)
    }

    fn find(&self, study: &StudyRecord, object_name: &str) -> Result<Vec<CxrObject>, BackendError> {
        (**self).find(study, object_name)
    }

    fn segment(&self, study: &StudyRecord, object_name: &str) -> Result<CxrSegmentation, BackendError> {
        (**self).segment(study, object_name)
    }
}

/// Lookup key for object names: trimmed and lowercased.
pub fn object_key(name: &str) -> String {
    name.trim().to_lowercase()
}

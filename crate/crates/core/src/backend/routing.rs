//! Per-object assignment of backends.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BackendError, Existence, SharedBackend, ToolBackend};
use crate::model::{CxrObject, CxrSegmentation, StudyRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingRule {
    /// Case-insensitive substring of the object name.
    pub pattern: String,
    pub backend: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingTable {
    #[serde(default)]
    pub rules: Vec<RoutingRule>,
    pub default: String,
}

impl RoutingTable {
    pub fn single(backend: impl Into<String>) -> Self {
        Self {
            rules: Vec::new(),
            default: backend.into(),
        }
    }

    pub fn with_rule(mut self, pattern: impl Into<String>, backend: impl Into<String>) -> Self {
        self.rules.push(RoutingRule {
            pattern: pattern.into().to_lowercase(),
            backend: backend.into(),
        });
        self
    }

    /// Every backend id the table can resolve to, default first.
    pub fn backend_ids(&self) -> Vec<&str> {
        let mut ids = vec![self.default.as_str()];
        for rule in &self.rules {
            if !ids.contains(&rule.backend.as_str()) {
                ids.push(&rule.backend);
            }
        }
        ids
    }
}

/// Backend id for `object_name`: the longest matching pattern wins, ties go
/// to the earlier rule, and unmatched names use the default.
pub fn route<'a>(table: &'a RoutingTable, object_name: &str) -> &'a str {
    let name = object_name.trim().to_lowercase();
    let mut best: Option<&RoutingRule> = None;
    for rule in &table.rules {
        let pattern = rule.pattern.to_lowercase();
        if pattern.is_empty() || !name.contains(&pattern) {
            continue;
        }
        if best.is_none_or(|b| pattern.len() > b.pattern.len()) {
            best = Some(rule);
        }
    }
    best.map_or(table.default.as_str(), |r| r.backend.as_str())
}

/// Dispatches each call to the backend chosen by a routing table.
pub struct RoutedBackend {
    table: RoutingTable,
    backends: BTreeMap<String, SharedBackend>,
}

impl RoutedBackend {
    /// Fails if the table names a backend that is not registered.
    pub fn new(table: RoutingTable, backends: BTreeMap<String, SharedBackend>) -> Result<Self, BackendError> {
        for id in table.backend_ids() {
            if !backends.contains_key(id) {
                return Err(BackendError::UnknownBackend(id.to_string()));
            }
        }
        Ok(Self { table, backends })
    }

    pub fn table(&self) -> &RoutingTable {
        &self.table
    }

    fn pick(&self, object_name: &str) -> &SharedBackend {
        let id = route(&self.table, object_name);
        // presence checked in `new`
        &self.backends[id]
    }
}

impl ToolBackend for RoutedBackend {
    fn id(&self) -> &str {
        "router"
    }

    fn tool_for(&self, object_name: &str) -> String {
        self.pick(object_name).tool_for(object_name)
    }

    fn exists(&self, study: &StudyRecord, object_name: &str) -> Result<Existence, BackendError> {
        self.pick(object_name).exists(study, object_name)
    }

    fn find(&self, study: &StudyRecord, object_name: &str) -> Result<Vec<CxrObject>, BackendError> {
        self.pick(object_name).find(study, object_name)
    }

    fn segment(&self, study: &StudyRecord, object_name: &str) -> Result<CxrSegmentation, BackendError> {
        self.pick(object_name).segment(study, object_name)
    }
}

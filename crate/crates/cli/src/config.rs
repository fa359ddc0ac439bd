//! TOML pipeline configuration.
//!
//! ```toml
//! query_gate = "ett-only"      # or "all"
//! min_confidence = 0.0
//! lexicon = "lexicon.tsv"      # category<TAB>phrase per line
//!
//! [guidelines]
//! correct_range_cm = [3.0, 7.0]
//!
//! [backends.carinanet]
//! url = "http://localhost:8000"
//! [backends.annotations]
//! fixtures = "fixtures.tsv"
//!
//! [routing]
//! default = "annotations"
//! rules = [{ pattern = "endotracheal tube", backend = "carinanet" }]
//!
//! [outputs]
//! corpus = "updated.jsonl"
//! audit = "audit.jsonl"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chexfix_core::backend::RoutingTable;
use chexfix_core::extractor::{CategoryLexicon, DEFAULT_KEYWORDS};
use chexfix_core::query::QueryGate;
use chexfix_core::updater::Guidelines;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONFIG_ENV: &str = "CHEXFIX_CONFIG";
pub const DEFAULT_BACKEND_ID: &str = "default";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("invalid backend spec '{0}' (expected [id=]fixtures:<path> or [id=]http:<url>)")]
    BackendSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BackendSpec {
    Fixtures {
        fixtures: PathBuf,
    },
    Http {
        url: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_ms: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_in_flight: Option<usize>,
    },
}

/// A backend given on the command line, e.g. `carinanet=http:http://host:8000`.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedBackend {
    pub id: String,
    pub spec: BackendSpec,
}

impl FromStr for NamedBackend {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (id, rest) = match s.split_once('=') {
            Some((id, rest)) if !id.contains(':') && !id.is_empty() => (id.to_string(), rest),
            _ => (DEFAULT_BACKEND_ID.to_string(), s),
        };
        let spec = if let Some(path) = rest.strip_prefix("fixtures:") {
            BackendSpec::Fixtures {
                fixtures: PathBuf::from(path),
            }
        } else if let Some(url) = rest.strip_prefix("http:") {
            let url = if url.starts_with("//") { format!("http:{url}") } else { url.to_string() };
            BackendSpec::Http {
                url,
                timeout_ms: None,
                max_in_flight: None,
            }
        } else {
            return Err(ConfigError::BackendSpec(s.to_string()));
        };
        if matches!(&spec, BackendSpec::Fixtures { fixtures } if fixtures.as_os_str().is_empty())
            || matches!(&spec, BackendSpec::Http { url, .. } if url.is_empty())
        {
            return Err(ConfigError::BackendSpec(s.to_string()));
        }
        Ok(Self { id, spec })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidelinesConfig {
    pub correct_range_cm: [f64; 2],
}

impl Default for GuidelinesConfig {
    fn default() -> Self {
        let (lo, hi) = Guidelines::default().ett_correct_range_cm;
        Self {
            correct_range_cm: [lo, hi],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    pub corpus: Option<PathBuf>,
    pub audit: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub guidelines: GuidelinesConfig,
    pub keywords: Vec<String>,
    pub lexicon: Option<PathBuf>,
    pub query_gate: QueryGate,
    pub min_confidence: f64,
    pub backends: BTreeMap<String, BackendSpec>,
    pub routing: Option<RoutingTable>,
    pub outputs: OutputsConfig,
    pub jobs: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            guidelines: GuidelinesConfig::default(),
            keywords: DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            lexicon: None,
            query_gate: QueryGate::default(),
            min_confidence: 0.0,
            backends: BTreeMap::new(),
            routing: None,
            outputs: OutputsConfig::default(),
            jobs: None,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = config.lexicon.as_mut() {
            resolve(base, p);
        }
        for spec in config.backends.values_mut() {
            if let BackendSpec::Fixtures { fixtures } = spec {
                resolve(base, fixtures);
            }
        }
        for p in [config.outputs.corpus.as_mut(), config.outputs.audit.as_mut()].into_iter().flatten() {
            resolve(base, p);
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config = Self::parse(&text, path)?;
        config.validate()?;
        Ok(config)
    }

    /// Replaces the configured backends with one given on the command line,
    /// routed for every object.
    pub fn with_backend(mut self, backend: NamedBackend) -> Self {
        self.routing = Some(RoutingTable::single(backend.id.clone()));
        self.backends = BTreeMap::from([(backend.id, backend.spec)]);
        self
    }

    pub fn guidelines(&self) -> Result<Guidelines, ConfigError> {
        let [lo, hi] = self.guidelines.correct_range_cm;
        Guidelines::new(lo, hi).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn lexicon(&self) -> Result<CategoryLexicon, ConfigError> {
        match &self.lexicon {
            None => Ok(CategoryLexicon::default()),
            Some(p) => CategoryLexicon::load(p).map_err(|e| ConfigError::Parse {
                path: p.clone(),
                message: e.to_string(),
            }),
        }
    }

    /// The routing table, defaulting to the only backend when just one is
    /// configured.
    pub fn routing_table(&self) -> Result<RoutingTable, ConfigError> {
        match (&self.routing, self.backends.len()) {
            (Some(r), _) => Ok(r.clone()),
            (None, 1) => Ok(RoutingTable::single(self.backends.keys().next().expect("one backend").clone())),
            (None, 0) => Err(ConfigError::Invalid("no backends configured".into())),
            (None, _) => Err(ConfigError::Invalid("several backends need a [routing] table".into())),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.guidelines()?;
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(ConfigError::Invalid(format!(
                "min_confidence {} outside [0, 1]",
                self.min_confidence
            )));
        }
        if self.jobs == Some(0) {
            return Err(ConfigError::Invalid("jobs must be at least 1".into()));
        }
        if self.keywords.iter().any(|k| k.trim().is_empty()) {
            return Err(ConfigError::Invalid("keywords must be non-empty".into()));
        }
        if let Some(p) = &self.lexicon {
            if !p.is_file() {
                return Err(ConfigError::Invalid(format!("lexicon {} does not exist", p.display())));
            }
        }
        for (id, spec) in &self.backends {
            match spec {
                BackendSpec::Fixtures { fixtures } if !fixtures.is_file() => {
                    return Err(ConfigError::Invalid(format!(
                        "backend '{id}': fixtures {} does not exist",
                        fixtures.display()
                    )));
                }
                BackendSpec::Http {
                    max_in_flight: Some(0), ..
                } => return Err(ConfigError::Invalid(format!("backend '{id}': max_in_flight must be at least 1"))),
                _ => {}
            }
        }
        if !self.backends.is_empty() {
            let table = self.routing_table()?;
            for id in table.backend_ids() {
                if !self.backends.contains_key(id) {
                    return Err(ConfigError::Invalid(format!("routing names unknown backend '{id}'")));
                }
            }
        }
        Ok(())
    }
}

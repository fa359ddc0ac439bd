//! Blocking HTTP client speaking the tool-server protocol.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use chexfix_core::backend::{object_key, to_original_frame, BackendError, Existence, ToolBackend};
use chexfix_core::mask::Rle;
use chexfix_core::model::{BBox, CxrObject, CxrSegmentation, StudyRecord};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::protocol::{
    ErrorBody, ExistsResponse, FindResponse, ObjectRequest, SegmentResponse, EXISTS_PATH, FIND_PATH, SEGMENT_PATH,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub id: String,
    pub url: String,
    #[serde(default = "EndpointConfig::default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "EndpointConfig::default_max_in_flight")]
    pub max_in_flight: usize,
}

impl EndpointConfig {
    fn default_timeout_ms() -> u64 {
        30_000
    }

    fn default_max_in_flight() -> usize {
        8
    }

    pub fn new(id: impl Into<String>, url: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            url: url.into(),
            timeout_ms: Self::default_timeout_ms(),
            max_in_flight: Self::default_max_in_flight(),
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    config: EndpointConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl HttpBackend {
    pub fn new(config: EndpointConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Gate::new(config.max_in_flight);
        Self { config, agent, gate }
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn post<T: DeserializeOwned>(&self, path: &str, study: &StudyRecord, object_name: &str) -> Result<T, BackendError> {
        let _permit = self.gate.acquire();
        let url = format!("{}{}", self.config.url.trim_end_matches('/'), path);
        let request = ObjectRequest {
            image_id: study.study_id.clone(),
            object_name: object_name.to_string(),
        };
        let mut response = self
            .agent
            .post(&url)
            .send_json(&request)
            .map_err(|e| BackendError::Unavailable(format!("{url}: {e}")))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Unavailable(format!("{url}: {e}")))?;
        if status >= 500 {
            return Err(BackendError::Unavailable(format!("{url}: HTTP {status}: {body}")));
        }
        if status >= 400 {
            return Err(match serde_json::from_str::<ErrorBody>(&body) {
                Ok(e) => BackendError::Rejected {
                    code: e.error.code,
                    message: e.error.message,
                },
                Err(_) => BackendError::ProtocolViolation(format!("{url}: HTTP {status} without error body")),
            });
        }
        if status != 200 {
            return Err(BackendError::ProtocolViolation(format!("{url}: unexpected HTTP {status}")));
        }
        serde_json::from_str(&body).map_err(|e| BackendError::ProtocolViolation(format!("{url}: {e}")))
    }
}

fn check_confidence(c: f64, what: &str) -> Result<(), BackendError> {
    if (0.0..=1.0).contains(&c) {
        Ok(())
    } else {
        Err(BackendError::ProtocolViolation(format!("{what}: confidence {c} outside [0, 1]")))
    }
}

impl ToolBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.config.id
    }

    fn exists(&self, study: &StudyRecord, object_name: &str) -> Result<Existence, BackendError> {
        let r: ExistsResponse = self.post(EXISTS_PATH, study, object_name)?;
        check_confidence(r.confidence, object_name)?;
        Ok(Existence {
            exists: r.exists,
            confidence: r.confidence,
        })
    }

    fn find(&self, study: &StudyRecord, object_name: &str) -> Result<Vec<CxrObject>, BackendError> {
        let r: FindResponse = self.post(FIND_PATH, study, object_name)?;
        r.detections
            .iter()
            .map(|d| {
                check_confidence(d.confidence, object_name)?;
                let [l, lo, rt, u] = d.bbox;
                let bbox = BBox::new(l, lo, rt, u).map_err(|e| BackendError::ProtocolViolation(e.to_string()))?;
                let bbox = to_original_frame(study, &self.config.id, r.image_size, bbox)?;
                Ok(CxrObject {
                    object_name: object_key(object_name),
                    bbox,
                    confidence: d.confidence,
                })
            })
            .collect()
    }

    fn segment(&self, study: &StudyRecord, object_name: &str) -> Result<CxrSegmentation, BackendError> {
        let r: SegmentResponse = self.post(SEGMENT_PATH, study, object_name)?;
        let mask = Rle::from_runs(r.image_size, r.starts_with, &r.rle)
            .map_err(|e| BackendError::ProtocolViolation(format!("{object_name}: {e}")))?;
        Ok(CxrSegmentation::new(object_key(object_name), mask.resample(study.original_size)))
    }
}

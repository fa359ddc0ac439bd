//! JSON bodies exchanged with a tool server.
//!
//! ```text
//! POST /v1/exists  {image_id, object_name} -> {exists, confidence}
//! POST /v1/find    {image_id, object_name} -> {image_size?, detections: [{bbox, confidence}]}
//! POST /v1/segment {image_id, object_name} -> {image_size, rle, starts_with}
//! errors: {error: {code, message}} with a 4xx/5xx status
//! ```

use chexfix_core::model::ImageSize;
use serde::{Deserialize, Serialize};

pub const EXISTS_PATH: &str = "/v1/exists";
pub const FIND_PATH: &str = "/v1/find";
pub const SEGMENT_PATH: &str = "/v1/segment";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRequest {
    pub image_id: String,
    pub object_name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExistsResponse {
    pub exists: bool,
    pub confidence: f64,
}

/// A box as sent on the wire; validated on receipt, not on parse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: [f64; 4],
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindResponse {
    /// Frame of the coordinates; absent means the tool's configured frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_size: Option<ImageSize>,
    pub detections: Vec<Detection>,
}

/// Row-major runs; the first run has the value `starts_with`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub image_size: ImageSize,
    pub rle: Vec<u32>,
    pub starts_with: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

impl ErrorBody {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            error: ErrorDetail {
                code: code.into(),
                message: message.into(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn find_response_shapes() {
        let framed: FindResponse =
            serde_json::from_str(r#"{"image_size":[512,512],"detections":[{"bbox":[1,2,1,2],"confidence":0.5}]}"#)
                .unwrap();
        assert_eq!(framed.image_size, Some(ImageSize::new(512, 512).unwrap()));
        let frameless: FindResponse = serde_json::from_str(r#"{"detections":[]}"#).unwrap();
        assert!(frameless.image_size.is_none());
        assert_eq!(serde_json::to_string(&frameless).unwrap(), r#"{"detections":[]}"#);
    }

    #[test]
    fn request_rejects_unknown_fields() {
        assert!(serde_json::from_str::<ObjectRequest>(r#"{"image_id":"a","object_name":"b","x":1}"#).is_err());
        assert!(serde_json::from_str::<ObjectRequest>(r#"{"image_id":"a"}"#).is_err());
    }

    #[test]
    fn error_body_shape() {
        let body = serde_json::to_value(ErrorBody::new("unknown_image", "no such image")).unwrap();
        assert_eq!(body["error"]["code"], "unknown_image");
    }
}

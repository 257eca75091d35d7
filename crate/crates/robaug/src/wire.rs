//! JSON-over-HTTP wire schemas for external model servers.
//!
//! All images travel as base64-encoded PNG. Servers answer 200 with the
//! documented response body, or any other status with `{"error": msg}`.
//!
//! Routes: POST /segment, /segment_batch, /generate, /proposals.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::dataset::Frame;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image_b64: String,
    pub prompt: String,
    pub mode: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub mask_b64: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentBatchRequest {
    pub images_b64: Vec<String>,
    pub prompts: Vec<String>,
    pub mode: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentBatchResponse {
    pub masks_b64: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateRequest {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_b64: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_b64: Option<String>,
    pub prompt: String,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub kind: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub image_b64: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProposalsRequest {
    pub image_b64: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProposalsResponse {
    pub masks_b64: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

pub fn encode_frame(frame: &Frame) -> Result<String> {
    Ok(BASE64.encode(frame.to_png_bytes()?))
}

pub fn encode_mask(mask: &BinaryMask) -> Result<String> {
    Ok(BASE64.encode(mask.to_png_bytes()?))
}

/// Decode a frame sent by a server; failures are protocol errors.
pub fn decode_frame(b64: &str, endpoint: &str) -> Result<Frame> {
    let bytes = BASE64
        .decode(b64)
        .map_err(|e| Error::protocol(endpoint, format!("invalid base64 image: {e}")))?;
    Frame::from_png_bytes(&bytes)
        .map_err(|e| Error::protocol(endpoint, format!("invalid image payload: {e}")))
}

/// Decode a mask sent by a server; failures are protocol errors.
pub fn decode_mask(b64: &str, endpoint: &str) -> Result<BinaryMask> {
    let bytes = BASE64
        .decode(b64)
        .map_err(|e| Error::protocol(endpoint, format!("invalid base64 mask: {e}")))?;
    BinaryMask::from_png_bytes(&bytes)
        .map_err(|e| Error::protocol(endpoint, format!("invalid mask payload: {e}")))
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

/// Blocking JSON client for one endpoint base URI.
pub struct HttpClient {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<HttpClient> {
        let endpoint = endpoint.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::backend(&endpoint, format!("client setup: {e}")))?;
        Ok(HttpClient { endpoint, client })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// POST `route` with a JSON body. Transport failures and non-200
    /// statuses are backend errors; undecodable 200 bodies are protocol
    /// errors.
    pub fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        route: &str,
        req: &Req,
    ) -> Result<Resp> {
        let url = format!("{}{}", self.endpoint.trim_end_matches('/'), route);
        let resp = self
            .client
            .post(&url)
            .json(req)
            .send()
            .map_err(|e| Error::backend(&self.endpoint, format!("{route}: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            let message = match resp.json::<ErrorResponse>() {
                Ok(body) => body.error,
                Err(_) => format!("HTTP {status}"),
            };
            return Err(Error::backend(
                &self.endpoint,
                format!("{route}: {message}"),
            ));
        }
        let bytes = resp
            .bytes()
            .map_err(|e| Error::backend(&self.endpoint, format!("{route}: {e}")))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::protocol(&self.endpoint, format!("{route}: bad response: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_and_mask_survive_base64() {
        let frame = Frame::from_fn(5, 4, |x, y| [x as u8, y as u8, 7]);
        let b64 = encode_frame(&frame).unwrap();
        assert_eq!(decode_frame(&b64, "test").unwrap(), frame);

        let mask = BinaryMask::from_fn(5, 4, |x, y| x == y);
        let b64 = encode_mask(&mask).unwrap();
        assert_eq!(decode_mask(&b64, "test").unwrap(), mask);
    }

    #[test]
    fn garbage_payloads_are_protocol_errors() {
        let err = decode_mask("not base64!!!", "http://x").unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let err = decode_frame(&BASE64.encode(b"not a png"), "http://x").unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn generate_request_omits_absent_fields() {
        let req = GenerateRequest {
            image_b64: None,
            mask_b64: None,
            prompt: "lab".into(),
            width: 4,
            height: 4,
            seed: 9,
            kind: "scene".into(),
        };
        let json = serde_json::to_string(&req).unwrap();
        assert!(!json.contains("image_b64"));
        assert!(!json.contains("mask_b64"));
        assert!(json.contains("\"kind\":\"scene\""));
    }
}

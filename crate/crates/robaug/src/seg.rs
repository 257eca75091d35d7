//! Segmentation backends: a uniform (image, prompt) -> mask contract
//! with test oracles (stored ground truth, chroma key) and clients for
//! external model servers.
//!
//! Batching is transport only: results are always identical to calling
//! `segment` frame by frame.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use crate::dataset::{load_roboseg, AnnotatedFrame, Frame};
use crate::error::{Error, Result};
use crate::mask::{union, BinaryMask};
use crate::wire;

/// The fixed prompt used to query the robot region.
pub const ROBOT_PROMPT: &str = "robot";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Semantic,
}

impl Mode {
    pub fn as_wire(&self) -> &'static str {
        match self {
            Mode::Semantic => "semantic",
        }
    }
}

pub struct SegRequest<'a> {
    pub image: &'a Frame,
    pub prompt: &'a str,
    pub mode: Mode,
}

fn check_prompt(prompt: &str) -> Result<()> {
    if prompt.is_empty() {
        return Err(Error::validation("segmentation prompt must be non-empty"));
    }
    Ok(())
}

pub trait SegBackend: Send + Sync {
    fn segment(&self, req: &SegRequest<'_>) -> Result<BinaryMask>;

    /// One round trip for several frames sharing a prompt. Semantics are
    /// defined to equal per-frame `segment` calls.
    fn segment_batch(&self, images: &[&Frame], prompt: &str) -> Result<Vec<BinaryMask>> {
        images
            .iter()
            .map(|image| {
                self.segment(&SegRequest {
                    image,
                    prompt,
                    mode: Mode::Semantic,
                })
            })
            .collect()
    }

    fn kind(&self) -> &'static str;
}

/// Chunked video segmentation. Per-frame results are independent of
/// `batch_size`; errors carry the frame range they occurred in.
pub fn segment_video(
    backend: &dyn SegBackend,
    frames: &[&Frame],
    prompt: &str,
    batch_size: usize,
) -> Result<Vec<BinaryMask>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be >= 1"));
    }
    check_prompt(prompt)?;
    let mut out = Vec::with_capacity(frames.len());
    for (chunk_idx, chunk) in frames.chunks(batch_size).enumerate() {
        let lo = chunk_idx * batch_size;
        let masks = backend
            .segment_batch(chunk, prompt)
            .map_err(|e| with_frame_context(e, lo, lo + chunk.len()))?;
        if masks.len() != chunk.len() {
            return Err(Error::protocol(
                backend.kind(),
                format!("batch returned {} masks for {} frames", masks.len(), chunk.len()),
            ));
        }
        out.extend(masks);
    }
    Ok(out)
}

fn with_frame_context(err: Error, lo: usize, hi: usize) -> Error {
    let range = if hi == lo + 1 {
        format!("frame {lo}")
    } else {
        format!("frames {lo}..{}", hi - 1)
    };
    match err {
        Error::Backend { endpoint, message } => Error::Backend {
            endpoint,
            message: format!("{range}: {message}"),
        },
        Error::Protocol { endpoint, message } => Error::Protocol {
            endpoint,
            message: format!("{range}: {message}"),
        },
        other => other,
    }
}

/// Foreground F: robot region unioned with one object mask per name.
pub fn robot_foreground(
    frame: &Frame,
    robo: &dyn SegBackend,
    obj: &dyn SegBackend,
    object_names: &[String],
) -> Result<BinaryMask> {
    let robot = robo.segment(&SegRequest {
        image: frame,
        prompt: ROBOT_PROMPT,
        mode: Mode::Semantic,
    })?;
    let mut masks = vec![robot];
    for name in object_names {
        masks.push(obj.segment(&SegRequest {
            image: frame,
            prompt: name,
            mode: Mode::Semantic,
        })?);
    }
    let refs: Vec<&BinaryMask> = masks.iter().collect();
    union(&refs)
}

/// Pixel is background iff its max-channel distance to `key_color` is
/// within `tolerance`; the returned mask is the foreground complement.
pub fn chroma_key_segment(frame: &Frame, key_color: [u8; 3], tolerance: u8) -> BinaryMask {
    BinaryMask::from_fn(frame.width(), frame.height(), |x, y| {
        let p = frame.get(x, y);
        let dist = p
            .iter()
            .zip(key_color.iter())
            .map(|(&a, &b)| a.abs_diff(b))
            .max()
            .unwrap();
        dist > tolerance
    })
}

struct StoredMasks {
    robot: BinaryMask,
    object: BinaryMask,
}

/// Test oracle returning stored ground-truth masks, addressed by frame
/// content digest. Prompt "robot" answers the full robot region; any
/// other prompt answers the object mask.
pub struct PassthroughBackend {
    by_digest: HashMap<[u8; 32], StoredMasks>,
}

impl PassthroughBackend {
    pub fn from_annotated(frames: &[AnnotatedFrame]) -> Result<PassthroughBackend> {
        let mut by_digest = HashMap::with_capacity(frames.len());
        for af in frames {
            by_digest.insert(
                af.image.digest(),
                StoredMasks {
                    robot: af.robot_mask()?,
                    object: af.object.clone(),
                },
            );
        }
        Ok(PassthroughBackend { by_digest })
    }

    /// Load ground truth from an annotated corpus directory.
    pub fn from_dir(root: impl AsRef<Path>) -> Result<PassthroughBackend> {
        Self::from_annotated(&load_roboseg(root)?)
    }
}

impl SegBackend for PassthroughBackend {
    fn segment(&self, req: &SegRequest<'_>) -> Result<BinaryMask> {
        check_prompt(req.prompt)?;
        let stored = self.by_digest.get(&req.image.digest()).ok_or_else(|| {
            Error::backend(
                "passthrough",
                format!(
                    "no stored masks for frame {}",
                    &req.image.digest_hex()[..16]
                ),
            )
        })?;
        Ok(if req.prompt == ROBOT_PROMPT {
            stored.robot.clone()
        } else {
            stored.object.clone()
        })
    }

    fn kind(&self) -> &'static str {
        "passthrough"
    }
}

pub const DEFAULT_CHROMA_KEY: [u8; 3] = [0, 255, 0];

pub struct ChromaKeyBackend {
    pub key_color: [u8; 3],
    pub tolerance: u8,
}

impl Default for ChromaKeyBackend {
    fn default() -> Self {
        ChromaKeyBackend {
            key_color: DEFAULT_CHROMA_KEY,
            tolerance: 0,
        }
    }
}

impl SegBackend for ChromaKeyBackend {
    fn segment(&self, req: &SegRequest<'_>) -> Result<BinaryMask> {
        check_prompt(req.prompt)?;
        Ok(chroma_key_segment(req.image, self.key_color, self.tolerance))
    }

    fn kind(&self) -> &'static str {
        "chroma_key"
    }
}

/// Client for a segmentation model server speaking the wire protocol.
/// Requests are serialized unless the descriptor says `concurrent=true`.
pub struct ExternalSegBackend {
    http: wire::HttpClient,
    lock: Option<Mutex<()>>,
}

impl ExternalSegBackend {
    pub fn new(endpoint: &str, concurrent: bool, timeout: Duration) -> Result<ExternalSegBackend> {
        Ok(ExternalSegBackend {
            http: wire::HttpClient::new(endpoint, timeout)?,
            lock: (!concurrent).then(|| Mutex::new(())),
        })
    }

    fn check_dims(&self, mask: &BinaryMask, image: &Frame) -> Result<()> {
        if mask.dims() != image.dims() {
            return Err(Error::protocol(
                self.http.endpoint(),
                format!(
                    "mask is {}x{}, image is {}x{}",
                    mask.width(),
                    mask.height(),
                    image.width(),
                    image.height()
                ),
            ));
        }
        Ok(())
    }
}

impl SegBackend for ExternalSegBackend {
    fn segment(&self, req: &SegRequest<'_>) -> Result<BinaryMask> {
        check_prompt(req.prompt)?;
        let body = wire::SegmentRequest {
            image_b64: wire::encode_frame(req.image)?,
            prompt: req.prompt.to_string(),
            mode: req.mode.as_wire().to_string(),
        };
        let _guard = self.lock.as_ref().map(|l| l.lock().unwrap());
        let resp: wire::SegmentResponse = self.http.post("/segment", &body)?;
        let mask = wire::decode_mask(&resp.mask_b64, self.http.endpoint())?;
        self.check_dims(&mask, req.image)?;
        Ok(mask)
    }

    fn segment_batch(&self, images: &[&Frame], prompt: &str) -> Result<Vec<BinaryMask>> {
        check_prompt(prompt)?;
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let body = wire::SegmentBatchRequest {
            images_b64: images
                .iter()
                .map(|f| wire::encode_frame(f))
                .collect::<Result<_>>()?,
            prompts: vec![prompt.to_string(); images.len()],
            mode: Mode::Semantic.as_wire().to_string(),
        };
        let _guard = self.lock.as_ref().map(|l| l.lock().unwrap());
        let resp: wire::SegmentBatchResponse = self.http.post("/segment_batch", &body)?;
        if resp.masks_b64.len() != images.len() {
            return Err(Error::protocol(
                self.http.endpoint(),
                format!(
                    "batch returned {} masks for {} images",
                    resp.masks_b64.len(),
                    images.len()
                ),
            ));
        }
        let mut masks = Vec::with_capacity(images.len());
        for (b64, image) in resp.masks_b64.iter().zip(images) {
            let mask = wire::decode_mask(b64, self.http.endpoint())?;
            self.check_dims(&mask, image)?;
            masks.push(mask);
        }
        Ok(masks)
    }

    fn kind(&self) -> &'static str {
        "external"
    }
}

/// File-exchange transport for a co-located model process: request JSON
/// is dropped into a shared directory as `<nonce>.req.json`, the answer
/// is polled at `<nonce>.resp.json`. Bodies match the HTTP schemas.
/// Both sides must write to a `.tmp` name and rename into place so a
/// partially written file is never picked up.
pub struct FileExchangeSegBackend {
    dir: PathBuf,
    timeout: Duration,
    counter: Mutex<u64>,
}

impl FileExchangeSegBackend {
    pub fn new(dir: impl Into<PathBuf>, timeout: Duration) -> FileExchangeSegBackend {
        FileExchangeSegBackend {
            dir: dir.into(),
            timeout,
            counter: Mutex::new(0),
        }
    }

    fn exchange(&self, body: &impl serde::Serialize) -> Result<Vec<u8>> {
        let nonce = {
            let mut c = self.counter.lock().unwrap();
            *c += 1;
            format!("{}-{}", std::process::id(), *c)
        };
        let endpoint = self.dir.display().to_string();
        let req_path = self.dir.join(format!("{nonce}.req.json"));
        let resp_path = self.dir.join(format!("{nonce}.resp.json"));
        let tmp_path = self.dir.join(format!("{nonce}.req.tmp"));
        let bytes = serde_json::to_vec(body)
            .map_err(|e| Error::backend(&endpoint, format!("request encoding: {e}")))?;
        // Write-then-rename so the peer never sees a half-written request.
        std::fs::write(&tmp_path, bytes).map_err(|e| Error::io(&tmp_path, e))?;
        std::fs::rename(&tmp_path, &req_path).map_err(|e| Error::io(&req_path, e))?;

        let deadline = std::time::Instant::now() + self.timeout;
        loop {
            if resp_path.is_file() {
                let data = std::fs::read(&resp_path).map_err(|e| Error::io(&resp_path, e))?;
                let _ = std::fs::remove_file(&resp_path);
                let _ = std::fs::remove_file(&req_path);
                return Ok(data);
            }
            if std::time::Instant::now() > deadline {
                let _ = std::fs::remove_file(&req_path);
                return Err(Error::backend(
                    &endpoint,
                    format!("no response after {:?}", self.timeout),
                ));
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    fn parse_response<T: serde::de::DeserializeOwned>(&self, data: &[u8]) -> Result<T> {
        let endpoint = self.dir.display().to_string();
        if let Ok(err) = serde_json::from_slice::<wire::ErrorResponse>(data) {
            return Err(Error::backend(&endpoint, err.error));
        }
        serde_json::from_slice(data)
            .map_err(|e| Error::protocol(&endpoint, format!("bad response: {e}")))
    }
}

impl SegBackend for FileExchangeSegBackend {
    fn segment(&self, req: &SegRequest<'_>) -> Result<BinaryMask> {
        check_prompt(req.prompt)?;
        let body = wire::SegmentRequest {
            image_b64: wire::encode_frame(req.image)?,
            prompt: req.prompt.to_string(),
            mode: req.mode.as_wire().to_string(),
        };
        let data = self.exchange(&body)?;
        let resp: wire::SegmentResponse = self.parse_response(&data)?;
        let mask = wire::decode_mask(&resp.mask_b64, &self.dir.display().to_string())?;
        if mask.dims() != req.image.dims() {
            return Err(Error::protocol(
                self.dir.display().to_string(),
                "mask dimensions do not match image",
            ));
        }
        Ok(mask)
    }

    fn kind(&self) -> &'static str {
        "external"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    External,
    Passthrough,
    ChromaKey,
}

/// Parsed backend selection, e.g. `external:http://host:9000`,
/// `passthrough:fixtures/seg`, or `chroma:key=00ff00,tolerance=8`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub params: BTreeMap<String, String>,
}

impl BackendDescriptor {
    pub fn parse(spec: &str) -> Result<BackendDescriptor> {
        let (head, rest) = match spec.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (spec, None),
        };
        match head {
            "external" => {
                let endpoint = rest
                    .filter(|r| !r.is_empty())
                    .ok_or_else(|| Error::config("external backend needs an endpoint: external:URI"))?;
                Ok(BackendDescriptor {
                    kind: BackendKind::External,
                    endpoint: Some(endpoint.to_string()),
                    params: BTreeMap::new(),
                })
            }
            "passthrough" => {
                let mut params = BTreeMap::new();
                if let Some(dir) = rest.filter(|r| !r.is_empty()) {
                    params.insert("dir".to_string(), dir.to_string());
                }
                Ok(BackendDescriptor {
                    kind: BackendKind::Passthrough,
                    endpoint: None,
                    params,
                })
            }
            "chroma" | "chroma_key" => {
                let mut params = BTreeMap::new();
                if let Some(kvs) = rest.filter(|r| !r.is_empty()) {
                    for kv in kvs.split(',') {
                        let (k, v) = kv.split_once('=').ok_or_else(|| {
                            Error::config(format!("chroma parameter {kv:?} is not key=value"))
                        })?;
                        params.insert(k.to_string(), v.to_string());
                    }
                }
                Ok(BackendDescriptor {
                    kind: BackendKind::ChromaKey,
                    endpoint: None,
                    params,
                })
            }
            other => Err(Error::config(format!(
                "unknown backend kind {other:?} (expected external, passthrough, or chroma)"
            ))),
        }
    }

    pub fn timeout(&self) -> Result<Duration> {
        match self.params.get("timeout_ms") {
            Some(v) => v
                .parse::<u64>()
                .map(Duration::from_millis)
                .map_err(|_| Error::config(format!("invalid timeout_ms {v:?}"))),
            None => Ok(wire::DEFAULT_TIMEOUT),
        }
    }

    /// Instantiate the backend this descriptor names.
    pub fn connect(&self) -> Result<Box<dyn SegBackend>> {
        match self.kind {
            BackendKind::Passthrough => {
                let dir = self.params.get("dir").ok_or_else(|| {
                    Error::config(
                        "passthrough backend needs a ground-truth dir: passthrough:DIR",
                    )
                })?;
                Ok(Box::new(PassthroughBackend::from_dir(dir)?))
            }
            BackendKind::ChromaKey => {
                let key_color = match self.params.get("key") {
                    Some(hex) => parse_hex_color(hex)?,
                    None => DEFAULT_CHROMA_KEY,
                };
                let tolerance = match self.params.get("tolerance") {
                    Some(v) => v
                        .parse::<u8>()
                        .map_err(|_| Error::config(format!("invalid tolerance {v:?}")))?,
                    None => 0,
                };
                Ok(Box::new(ChromaKeyBackend {
                    key_color,
                    tolerance,
                }))
            }
            BackendKind::External => {
                let endpoint = self.endpoint.as_deref().unwrap();
                let timeout = self.timeout()?;
                if endpoint.starts_with("http://") || endpoint.starts_with("https://") {
                    let concurrent =
                        self.params.get("concurrent").map(String::as_str) == Some("true");
                    Ok(Box::new(ExternalSegBackend::new(
                        endpoint, concurrent, timeout,
                    )?))
                } else {
                    // Non-URI endpoints are exchange directories for a
                    // co-located process.
                    Ok(Box::new(FileExchangeSegBackend::new(endpoint, timeout)))
                }
            }
        }
    }
}

fn parse_hex_color(hex: &str) -> Result<[u8; 3]> {
    let hex = hex.trim_start_matches('#');
    if hex.len() != 6 || !hex.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(Error::config(format!(
            "invalid key color {hex:?}, expected RRGGBB"
        )));
    }
    let channel = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).unwrap();
    Ok([channel(0), channel(2), channel(4)])
}

//! Background-synthesis strategies and their inputs: prompt pools,
//! asset pools, generative backends, region proposals, and inpainting.
//!
//! Six methods are supported: `engine` (foreground-conditioned
//! background generation), `background` (unconditioned scene
//! generation), `imagenet` (random image pool), `texture` (random
//! texture pool), `inpainting` (regenerate task-irrelevant objects),
//! and `none`.

pub mod procedural;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotatedFrame, Frame};
use crate::error::{Error, Result};
use crate::mask::{union, BinaryMask};
use crate::seg::{BackendDescriptor, BackendKind};
use crate::wire;

pub use procedural::{procedural_image, ProceduralGen, DEFAULT_HORIZON};

/// Scene descriptions sampled to condition background generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPool {
    prompts: Vec<String>,
}

impl PromptPool {
    pub fn new(prompts: Vec<String>) -> Result<PromptPool> {
        if prompts.is_empty() {
            return Err(Error::config("prompt pool is empty"));
        }
        Ok(PromptPool { prompts })
    }

    /// Pool built from every distinct description in an annotated
    /// corpus, in corpus order.
    pub fn from_descriptions(frames: &[AnnotatedFrame]) -> Result<PromptPool> {
        let mut seen = std::collections::BTreeSet::new();
        let mut prompts = Vec::new();
        for frame in frames {
            for d in &frame.descriptions {
                if seen.insert(d.clone()) {
                    prompts.push(d.clone());
                }
            }
        }
        PromptPool::new(prompts)
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }
}

/// One prompt per nonempty line; blank lines are skipped.
pub fn load_prompt_pool(path: impl AsRef<Path>) -> Result<PromptPool> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let prompts: Vec<String> = text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect();
    if prompts.is_empty() {
        return Err(Error::config(format!(
            "prompt pool {} has no prompts",
            path.display()
        )));
    }
    PromptPool::new(prompts)
}

pub fn save_prompt_pool(pool: &PromptPool, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = pool.prompts.join("\n");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Uniform draw; consumes only the given stream, so a fixed seed gives
/// a fixed sequence.
pub fn sample_prompt<'a>(pool: &'a PromptPool, rng: &mut impl Rng) -> &'a str {
    &pool.prompts[rng.random_range(0..pool.prompts.len())]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssetKind {
    Texture,
    Image,
}

/// Directory of texture or photo assets used as ready-made backgrounds.
#[derive(Debug, Clone)]
pub struct AssetPool {
    kind: AssetKind,
    entries: Vec<PathBuf>,
}

const ASSET_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

impl AssetPool {
    /// Collect decodable images under `dir`, sorted by file name.
    pub fn load(dir: impl AsRef<Path>, kind: AssetKind) -> Result<AssetPool> {
        let dir = dir.as_ref();
        let read = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::new();
        for entry in read {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let ext = path
                .extension()
                .map(|e| e.to_string_lossy().to_lowercase())
                .unwrap_or_default();
            if path.is_file() && ASSET_EXTENSIONS.contains(&ext.as_str()) {
                entries.push(path);
            }
        }
        entries.sort();
        if entries.is_empty() {
            return Err(Error::config(format!(
                "asset pool {} has no images",
                dir.display()
            )));
        }
        for path in &entries {
            image::image_dimensions(path).map_err(|e| Error::image(path, e))?;
        }
        Ok(AssetPool { kind, entries })
    }

    pub fn from_entries(kind: AssetKind, entries: Vec<PathBuf>) -> Result<AssetPool> {
        if entries.is_empty() {
            return Err(Error::config("asset pool has no images"));
        }
        Ok(AssetPool { kind, entries })
    }

    pub fn kind(&self) -> AssetKind {
        self.kind
    }

    pub fn entries(&self) -> &[PathBuf] {
        &self.entries
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    Nearest,
    Bilinear,
}

impl std::str::FromStr for Resample {
    type Err = Error;
    fn from_str(s: &str) -> Result<Resample> {
        match s {
            "nearest" => Ok(Resample::Nearest),
            "bilinear" => Ok(Resample::Bilinear),
            other => Err(Error::config(format!("unknown resample mode {other:?}"))),
        }
    }
}

/// Uniformly scale `src` up just enough to cover the output rect, then
/// take the centered crop. Sampling positions use pixel centers;
/// rounding is half-up.
pub fn cover_scale_crop(src: &Frame, out_w: u32, out_h: u32, resample: Resample) -> Frame {
    let (iw, ih) = src.dims();
    let scale = f64::max(out_w as f64 / iw as f64, out_h as f64 / ih as f64);
    let scaled_w = out_w.max((iw as f64 * scale + 0.5).floor() as u32);
    let scaled_h = out_h.max((ih as f64 * scale + 0.5).floor() as u32);
    let ox = (scaled_w - out_w) / 2;
    let oy = (scaled_h - out_h) / 2;

    Frame::from_fn(out_w, out_h, |x, y| {
        let sx = (x + ox) as f64;
        let sy = (y + oy) as f64;
        match resample {
            Resample::Nearest => {
                let src_x = (((sx + 0.5) * iw as f64 / scaled_w as f64).floor() as i64)
                    .clamp(0, iw as i64 - 1) as u32;
                let src_y = (((sy + 0.5) * ih as f64 / scaled_h as f64).floor() as i64)
                    .clamp(0, ih as i64 - 1) as u32;
                src.get(src_x, src_y)
            }
            Resample::Bilinear => {
                let px = (sx + 0.5) * iw as f64 / scaled_w as f64 - 0.5;
                let py = (sy + 0.5) * ih as f64 / scaled_h as f64 - 0.5;
                let x0 = px.floor();
                let y0 = py.floor();
                let fx = px - x0;
                let fy = py - y0;
                let cl = |v: f64, hi: u32| (v as i64).clamp(0, hi as i64 - 1) as u32;
                let (x0i, x1i) = (cl(x0, iw), cl(x0 + 1.0, iw));
                let (y0i, y1i) = (cl(y0, ih), cl(y0 + 1.0, ih));
                let mut out = [0u8; 3];
                for (c, chan) in out.iter_mut().enumerate() {
                    let tl = src.get(x0i, y0i)[c] as f64;
                    let tr = src.get(x1i, y0i)[c] as f64;
                    let bl = src.get(x0i, y1i)[c] as f64;
                    let br = src.get(x1i, y1i)[c] as f64;
                    let top = tl + (tr - tl) * fx;
                    let bottom = bl + (br - bl) * fx;
                    let v = top + (bottom - top) * fy;
                    *chan = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
                }
                out
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenKind {
    Background,
    Scene,
    Inpaint,
}

impl GenKind {
    pub fn as_wire(&self) -> &'static str {
        match self {
            GenKind::Background => "background",
            GenKind::Scene => "scene",
            GenKind::Inpaint => "inpaint",
        }
    }
}

pub struct GenRequest<'a> {
    pub image: Option<&'a Frame>,
    pub mask: Option<&'a BinaryMask>,
    pub prompt: &'a str,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub kind: GenKind,
}

pub trait GenBackend: Send + Sync {
    fn generate(&self, req: &GenRequest<'_>) -> Result<Frame>;
    fn kind(&self) -> &'static str;
}

/// Client for a diffusion-style image server speaking the wire
/// protocol; one endpoint serves background, scene, and inpaint kinds.
pub struct RemoteGen {
    http: wire::HttpClient,
    lock: Option<Mutex<()>>,
}

impl RemoteGen {
    pub fn new(endpoint: &str, concurrent: bool, timeout: Duration) -> Result<RemoteGen> {
        Ok(RemoteGen {
            http: wire::HttpClient::new(endpoint, timeout)?,
            lock: (!concurrent).then(|| Mutex::new(())),
        })
    }
}

impl GenBackend for RemoteGen {
    fn generate(&self, req: &GenRequest<'_>) -> Result<Frame> {
        let body = wire::GenerateRequest {
            image_b64: req.image.map(wire::encode_frame).transpose()?,
            mask_b64: req.mask.map(wire::encode_mask).transpose()?,
            prompt: req.prompt.to_string(),
            width: req.width,
            height: req.height,
            seed: req.seed,
            kind: req.kind.as_wire().to_string(),
        };
        let _guard = self.lock.as_ref().map(|l| l.lock().unwrap());
        let resp: wire::GenerateResponse = self.http.post("/generate", &body)?;
        let image = wire::decode_frame(&resp.image_b64, self.http.endpoint())?;
        if image.dims() != (req.width, req.height) {
            return Err(Error::protocol(
                self.http.endpoint(),
                format!(
                    "generated image is {}x{}, requested {}x{}",
                    image.width(),
                    image.height(),
                    req.width,
                    req.height
                ),
            ));
        }
        Ok(image)
    }

    fn kind(&self) -> &'static str {
        "external"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenBackendKind {
    Procedural,
    Remote,
}

/// Generative backend selection: `procedural` or `external:URI`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenBackendDescriptor {
    pub kind: GenBackendKind,
    pub endpoint: Option<String>,
    pub params: BTreeMap<String, String>,
}

impl GenBackendDescriptor {
    pub fn procedural() -> GenBackendDescriptor {
        GenBackendDescriptor {
            kind: GenBackendKind::Procedural,
            endpoint: None,
            params: BTreeMap::new(),
        }
    }

    pub fn parse(spec: &str) -> Result<GenBackendDescriptor> {
        if spec == "procedural" {
            return Ok(GenBackendDescriptor::procedural());
        }
        if let Some(endpoint) = spec.strip_prefix("external:") {
            if endpoint.is_empty() {
                return Err(Error::config("external generative backend needs an endpoint"));
            }
            return Ok(GenBackendDescriptor {
                kind: GenBackendKind::Remote,
                endpoint: Some(endpoint.to_string()),
                params: BTreeMap::new(),
            });
        }
        Err(Error::config(format!(
            "unknown generative backend {spec:?} (expected procedural or external:URI)"
        )))
    }

    pub fn connect(&self) -> Result<Box<dyn GenBackend>> {
        match self.kind {
            GenBackendKind::Procedural => Ok(Box::new(ProceduralGen)),
            GenBackendKind::Remote => {
                let endpoint = self.endpoint.as_deref().unwrap();
                if !endpoint.starts_with("http://") && !endpoint.starts_with("https://") {
                    return Err(Error::config(format!(
                        "generative backend endpoint {endpoint:?} must be http(s)"
                    )));
                }
                let concurrent = self.params.get("concurrent").map(String::as_str) == Some("true");
                let timeout = match self.params.get("timeout_ms") {
                    Some(v) => Duration::from_millis(
                        v.parse()
                            .map_err(|_| Error::config(format!("invalid timeout_ms {v:?}")))?,
                    ),
                    None => wire::DEFAULT_TIMEOUT,
                };
                Ok(Box::new(RemoteGen::new(endpoint, concurrent, timeout)?))
            }
        }
    }
}

fn with_prompt_context(err: Error, prompt: &str) -> Error {
    match err {
        Error::Backend { endpoint, message } => Error::Backend {
            endpoint,
            message: format!("prompt {prompt:?}: {message}"),
        },
        Error::Protocol { endpoint, message } => Error::Protocol {
            endpoint,
            message: format!("prompt {prompt:?}: {message}"),
        },
        other => other,
    }
}

/// Foreground-conditioned background ("engine" method): the backend
/// sees the frame, the foreground mask, and the prompt.
pub fn gen_background_engine(
    frame: &Frame,
    foreground: &BinaryMask,
    prompt: &str,
    backend: &dyn GenBackend,
    rng: &mut impl RngCore,
) -> Result<Frame> {
    if foreground.dims() != frame.dims() {
        return Err(Error::validation(
            "foreground mask dims do not match frame dims",
        ));
    }
    let req = GenRequest {
        image: Some(frame),
        mask: Some(foreground),
        prompt,
        width: frame.width(),
        height: frame.height(),
        seed: rng.next_u64(),
        kind: GenKind::Background,
    };
    backend
        .generate(&req)
        .map_err(|e| with_prompt_context(e, prompt))
}

/// Unconditioned scene generation ("background" method): prompt only,
/// no physics-aware foreground conditioning.
pub fn gen_background_scene(
    prompt: &str,
    dims: (u32, u32),
    backend: &dyn GenBackend,
    rng: &mut impl RngCore,
) -> Result<Frame> {
    let req = GenRequest {
        image: None,
        mask: None,
        prompt,
        width: dims.0,
        height: dims.1,
        seed: rng.next_u64(),
        kind: GenKind::Scene,
    };
    backend
        .generate(&req)
        .map_err(|e| with_prompt_context(e, prompt))
}

fn pick_asset(pool: &AssetPool, rng: &mut impl Rng) -> Result<Frame> {
    let path = &pool.entries[rng.random_range(0..pool.entries.len())];
    Frame::load(path)
}

/// Random texture background.
pub fn gen_background_texture(
    pool: &AssetPool,
    dims: (u32, u32),
    rng: &mut impl Rng,
    resample: Resample,
) -> Result<Frame> {
    if pool.kind != AssetKind::Texture {
        return Err(Error::validation("asset pool kind is not texture"));
    }
    Ok(cover_scale_crop(&pick_asset(pool, rng)?, dims.0, dims.1, resample))
}

/// Random photo background (ImageNet-style pool).
pub fn gen_background_image(
    pool: &AssetPool,
    dims: (u32, u32),
    rng: &mut impl Rng,
    resample: Resample,
) -> Result<Frame> {
    if pool.kind != AssetKind::Image {
        return Err(Error::validation("asset pool kind is not image"));
    }
    Ok(cover_scale_crop(&pick_asset(pool, rng)?, dims.0, dims.1, resample))
}

pub trait ProposalBackend: Send + Sync {
    /// Candidate object masks for one frame.
    fn proposals(&self, frame: &Frame) -> Result<Vec<BinaryMask>>;
    fn kind(&self) -> &'static str;
}

/// Test oracle serving stored proposal sets addressed by frame digest.
/// Unknown frames get an empty set with a warning.
pub struct FixtureProposals {
    by_digest: HashMap<[u8; 32], Vec<BinaryMask>>,
}

impl FixtureProposals {
    pub fn new(by_digest: HashMap<[u8; 32], Vec<BinaryMask>>) -> FixtureProposals {
        FixtureProposals { by_digest }
    }

    /// Layout: `dir/<frame-digest-hex>/<nn>.png`, one mask per file.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<FixtureProposals> {
        let dir = dir.as_ref();
        let mut by_digest = HashMap::new();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let sub = entry.map_err(|e| Error::io(dir, e))?.path();
            if !sub.is_dir() {
                continue;
            }
            let hex_name = sub.file_name().unwrap().to_string_lossy().into_owned();
            let digest = parse_digest(&hex_name).ok_or_else(|| {
                Error::schema(format!(
                    "proposal dir {hex_name:?} is not a 64-char hex frame digest"
                ))
            })?;
            let mut files: Vec<PathBuf> = std::fs::read_dir(&sub)
                .map_err(|e| Error::io(&sub, e))?
                .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(&sub, e)))
                .collect::<Result<_>>()?;
            files.sort();
            let masks = files
                .iter()
                .map(BinaryMask::load_png)
                .collect::<Result<Vec<_>>>()?;
            by_digest.insert(digest, masks);
        }
        Ok(FixtureProposals { by_digest })
    }
}

fn parse_digest(hex: &str) -> Option<[u8; 32]> {
    if hex.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, byte) in out.iter_mut().enumerate() {
        *byte = u8::from_str_radix(&hex[i * 2..i * 2 + 2], 16).ok()?;
    }
    Some(out)
}

impl ProposalBackend for FixtureProposals {
    fn proposals(&self, frame: &Frame) -> Result<Vec<BinaryMask>> {
        match self.by_digest.get(&frame.digest()) {
            Some(masks) => {
                for m in masks {
                    if m.dims() != frame.dims() {
                        return Err(Error::validation(
                            "stored proposal dims do not match frame",
                        ));
                    }
                }
                Ok(masks.clone())
            }
            None => {
                log::warn!(
                    "no stored proposals for frame {}, returning none",
                    &frame.digest_hex()[..16]
                );
                Ok(Vec::new())
            }
        }
    }

    fn kind(&self) -> &'static str {
        "fixture"
    }
}

/// Client for a proposal model server (SAM-style "segment everything").
pub struct ExternalProposals {
    http: wire::HttpClient,
    lock: Option<Mutex<()>>,
}

impl ExternalProposals {
    pub fn new(endpoint: &str, concurrent: bool, timeout: Duration) -> Result<ExternalProposals> {
        Ok(ExternalProposals {
            http: wire::HttpClient::new(endpoint, timeout)?,
            lock: (!concurrent).then(|| Mutex::new(())),
        })
    }
}

impl ProposalBackend for ExternalProposals {
    fn proposals(&self, frame: &Frame) -> Result<Vec<BinaryMask>> {
        let body = wire::ProposalsRequest {
            image_b64: wire::encode_frame(frame)?,
        };
        let _guard = self.lock.as_ref().map(|l| l.lock().unwrap());
        let resp: wire::ProposalsResponse = self.http.post("/proposals", &body)?;
        let mut masks = Vec::with_capacity(resp.masks_b64.len());
        for b64 in &resp.masks_b64 {
            let mask = wire::decode_mask(b64, self.http.endpoint())?;
            if mask.dims() != frame.dims() {
                return Err(Error::protocol(
                    self.http.endpoint(),
                    "proposal mask dims do not match frame",
                ));
            }
            masks.push(mask);
        }
        Ok(masks)
    }

    fn kind(&self) -> &'static str {
        "external"
    }
}

/// Proposal source from a backend descriptor: `external:URI` for a
/// model server, `passthrough:DIR` for a stored fixture set.
pub fn connect_proposals(desc: &BackendDescriptor) -> Result<Box<dyn ProposalBackend>> {
    match desc.kind {
        BackendKind::External => {
            let endpoint = desc.endpoint.as_deref().unwrap();
            if !endpoint.starts_with("http://") && !endpoint.starts_with("https://") {
                return Err(Error::config(format!(
                    "proposal backend endpoint {endpoint:?} must be http(s)"
                )));
            }
            let concurrent = desc.params.get("concurrent").map(String::as_str) == Some("true");
            Ok(Box::new(ExternalProposals::new(
                endpoint,
                concurrent,
                desc.timeout()?,
            )?))
        }
        BackendKind::Passthrough => {
            let dir = desc.params.get("dir").ok_or_else(|| {
                Error::config("proposal fixture needs a directory: passthrough:DIR")
            })?;
            Ok(Box::new(FixtureProposals::from_dir(dir)?))
        }
        BackendKind::ChromaKey => Err(Error::config(
            "chroma backend cannot serve region proposals",
        )),
    }
}

/// Stable proposal order: area descending, ties broken by the
/// top-left-most bounding box. Empty masks are dropped.
fn sort_proposals(mut proposals: Vec<BinaryMask>) -> Vec<BinaryMask> {
    let mut keyed: Vec<(u64, u32, u32, BinaryMask)> = proposals
        .drain(..)
        .filter_map(|m| m.bbox().map(|b| (m.count_set(), b.y0, b.x0, m)))
        .collect();
    keyed.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    keyed.into_iter().map(|(_, _, _, m)| m).collect()
}

/// Fetch and canonically order candidate object masks for a frame.
pub fn region_proposals(frame: &Frame, backend: &dyn ProposalBackend) -> Result<Vec<BinaryMask>> {
    Ok(sort_proposals(backend.proposals(frame)?))
}

pub const DEFAULT_IRRELEVANCE_THRESHOLD: f64 = 0.05;
pub const DEFAULT_INPAINT_COUNT: usize = 5;

/// Regenerate up to `count` task-irrelevant object regions. A proposal
/// is task-irrelevant when at most `threshold` of its area overlaps the
/// foreground F. Pixels outside the selected regions are untouched.
pub fn inpaint_augment(
    frame: &Frame,
    foreground: &BinaryMask,
    proposals: &[BinaryMask],
    backend: &dyn GenBackend,
    count: usize,
    threshold: f64,
    rng: &mut impl RngCore,
) -> Result<Frame> {
    if foreground.dims() != frame.dims() {
        return Err(Error::validation(
            "foreground mask dims do not match frame dims",
        ));
    }
    for p in proposals {
        if p.dims() != frame.dims() {
            return Err(Error::validation("proposal dims do not match frame dims"));
        }
    }

    let irrelevant: Vec<BinaryMask> = proposals
        .iter()
        .filter(|p| {
            let area = p.count_set();
            if area == 0 {
                return false;
            }
            let overlap = p.intersection(foreground).unwrap().count_set();
            overlap as f64 <= threshold * area as f64
        })
        .cloned()
        .collect();
    let selected = sort_proposals(irrelevant);
    let selected = &selected[..count.min(selected.len())];
    if selected.is_empty() {
        log::warn!("no task-irrelevant regions to inpaint, frame unchanged");
        return Ok(frame.clone());
    }

    let refs: Vec<&BinaryMask> = selected.iter().collect();
    let region = union(&refs)?;
    let req = GenRequest {
        image: Some(frame),
        mask: Some(&region),
        prompt: "",
        width: frame.width(),
        height: frame.height(),
        seed: rng.next_u64(),
        kind: GenKind::Inpaint,
    };
    let generated = backend.generate(&req)?;

    // Locality is enforced here regardless of what the backend returned.
    Ok(Frame::from_fn(frame.width(), frame.height(), |x, y| {
        if region.get(x, y) {
            generated.get(x, y)
        } else {
            frame.get(x, y)
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugMethod {
    Engine,
    Background,
    Imagenet,
    Texture,
    Inpainting,
    None,
}

pub const ALL_METHODS: [AugMethod; 6] = [
    AugMethod::Engine,
    AugMethod::Background,
    AugMethod::Imagenet,
    AugMethod::Texture,
    AugMethod::Inpainting,
    AugMethod::None,
];

impl AugMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            AugMethod::Engine => "engine",
            AugMethod::Background => "background",
            AugMethod::Imagenet => "imagenet",
            AugMethod::Texture => "texture",
            AugMethod::Inpainting => "inpainting",
            AugMethod::None => "none",
        }
    }

    pub fn needs_assets(&self) -> bool {
        matches!(self, AugMethod::Texture | AugMethod::Imagenet)
    }

    pub fn needs_prompts(&self) -> bool {
        matches!(self, AugMethod::Engine | AugMethod::Background)
    }
}

impl std::fmt::Display for AugMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AugMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<AugMethod> {
        ALL_METHODS
            .iter()
            .find(|m| m.as_str() == s)
            .copied()
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown augmentation method {s:?} (expected engine, background, imagenet, texture, inpainting, or none)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundScope {
    PerFrame,
    PerEpisode,
}

impl std::str::FromStr for BackgroundScope {
    type Err = Error;
    fn from_str(s: &str) -> Result<BackgroundScope> {
        match s {
            "per-frame" | "per_frame" => Ok(BackgroundScope::PerFrame),
            "per-episode" | "per_episode" => Ok(BackgroundScope::PerEpisode),
            other => Err(Error::config(format!(
                "unknown background scope {other:?} (expected per-frame or per-episode)"
            ))),
        }
    }
}

/// Backends the strategies call out to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugBackends {
    pub gen: GenBackendDescriptor,
    pub proposals: Option<BackendDescriptor>,
}

impl Default for AugBackends {
    fn default() -> Self {
        AugBackends {
            gen: GenBackendDescriptor::procedural(),
            proposals: None,
        }
    }
}

/// Full augmentation configuration for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct AugConfig {
    pub method: AugMethod,
    pub seed: u64,
    pub background_scope: BackgroundScope,
    pub dilate_radius: u32,
    pub feather_radius: u32,
    pub inpaint_count: usize,
    pub irrelevance_threshold: f64,
    pub resample: Resample,
    pub backends: AugBackends,
}

impl AugConfig {
    pub fn new(method: AugMethod) -> AugConfig {
        AugConfig {
            method,
            seed: 0,
            background_scope: BackgroundScope::PerFrame,
            dilate_radius: 0,
            feather_radius: 0,
            inpaint_count: DEFAULT_INPAINT_COUNT,
            irrelevance_threshold: DEFAULT_IRRELEVANCE_THRESHOLD,
            resample: Resample::Bilinear,
            backends: AugBackends::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::Rect;
    use crate::stream::frame_stream;

    #[test]
    fn prompt_pool_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prompts.txt");
        std::fs::write(&path, "a lab bench\n\n  \na wooden desk\r\na meeting room\n").unwrap();
        let pool = load_prompt_pool(&path).unwrap();
        assert_eq!(
            pool.prompts(),
            &["a lab bench", "a wooden desk", "a meeting room"]
        );

        let out = dir.path().join("saved.txt");
        save_prompt_pool(&pool, &out).unwrap();
        assert_eq!(load_prompt_pool(&out).unwrap(), pool);

        std::fs::write(&path, "\n\n").unwrap();
        assert_eq!(load_prompt_pool(&path).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn sample_prompt_is_seeded_and_uniform() {
        let pool = PromptPool::new(vec!["only".to_string()]).unwrap();
        let mut rng = frame_stream(1, "e", 0);
        assert_eq!(sample_prompt(&pool, &mut rng), "only");

        let pool = PromptPool::new(vec![
            "a".to_string(),
            "b".to_string(),
            "c".to_string(),
            "d".to_string(),
        ])
        .unwrap();
        let mut r1 = frame_stream(5, "e", 1);
        let mut r2 = frame_stream(5, "e", 1);
        for _ in 0..32 {
            assert_eq!(sample_prompt(&pool, &mut r1), sample_prompt(&pool, &mut r2));
        }

        // 10k draws: every prompt within 5% (relative) of uniform.
        let mut rng = frame_stream(99, "freq", 0);
        let mut counts = [0u32; 4];
        for _ in 0..10_000 {
            let p = sample_prompt(&pool, &mut rng);
            counts[(p.as_bytes()[0] - b'a') as usize] += 1;
        }
        for c in counts {
            let freq = c as f64 / 10_000.0;
            assert!(
                (freq - 0.25).abs() <= 0.0125,
                "frequency {freq} outside 0.25 +/- 0.0125"
            );
        }
    }

    #[test]
    fn cover_scale_crop_checker_to_quadrants() {
        let checker = Frame::from_fn(2, 2, |x, y| {
            if (x + y) % 2 == 0 {
                [255, 0, 0]
            } else {
                [0, 0, 255]
            }
        });
        let out = cover_scale_crop(&checker, 4, 4, Resample::Nearest);
        for y in 0..4u32 {
            for x in 0..4u32 {
                assert_eq!(out.get(x, y), checker.get(x / 2, y / 2));
            }
        }
    }

    #[test]
    fn cover_scale_crop_exact_downscale() {
        let src = Frame::from_fn(640, 480, |x, y| [(x % 251) as u8, (y % 241) as u8, 3]);
        let out = cover_scale_crop(&src, 320, 240, Resample::Nearest);
        assert_eq!(out.dims(), (320, 240));
        for y in (0..240).step_by(17) {
            for x in (0..320).step_by(13) {
                assert_eq!(out.get(x, y), src.get(2 * x + 1, 2 * y + 1));
            }
        }
    }

    #[test]
    fn cover_scale_crop_covers_mismatched_aspect() {
        let src = Frame::from_fn(10, 4, |x, _| [x as u8 * 20, 0, 0]);
        let out = cover_scale_crop(&src, 4, 4, Resample::Bilinear);
        assert_eq!(out.dims(), (4, 4));
    }

    fn texture_pool(dir: &Path) -> AssetPool {
        let checker = Frame::from_fn(2, 2, |x, y| {
            if (x + y) % 2 == 0 {
                [255, 255, 255]
            } else {
                [0, 0, 0]
            }
        });
        checker.save_png(dir.join("checker.png")).unwrap();
        AssetPool::load(dir, AssetKind::Texture).unwrap()
    }

    #[test]
    fn texture_strategy_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let pool = texture_pool(dir.path());
        let a = gen_background_texture(&pool, (6, 6), &mut frame_stream(3, "e", 0), Resample::Nearest).unwrap();
        let b = gen_background_texture(&pool, (6, 6), &mut frame_stream(3, "e", 0), Resample::Nearest).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dims(), (6, 6));

        let err = gen_background_image(&pool, (6, 6), &mut frame_stream(3, "e", 0), Resample::Nearest)
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn asset_pool_rejects_empty_and_undecodable() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(
            AssetPool::load(dir.path(), AssetKind::Texture).unwrap_err().exit_code(),
            2
        );
        std::fs::write(dir.path().join("broken.png"), b"not an image").unwrap();
        let err = AssetPool::load(dir.path(), AssetKind::Texture).unwrap_err();
        assert!(err.to_string().contains("broken.png"));
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn scene_and_engine_strategies_draw_from_stream() {
        let frame = Frame::from_fn(16, 16, |x, y| [x as u8, y as u8, 0]);
        let f = BinaryMask::from_rect(16, 16, Rect { x0: 4, y0: 8, x1: 12, y1: 16 });
        let backend = ProceduralGen;

        let a = gen_background_engine(&frame, &f, "desk", &backend, &mut frame_stream(1, "e", 0)).unwrap();
        let b = gen_background_engine(&frame, &f, "desk", &backend, &mut frame_stream(1, "e", 0)).unwrap();
        assert_eq!(a, b);

        let scene =
            gen_background_scene("desk", (16, 16), &backend, &mut frame_stream(1, "e", 0)).unwrap();
        assert_ne!(a, scene);

        let wrong = BinaryMask::new(4, 4);
        assert!(gen_background_engine(&frame, &wrong, "desk", &backend, &mut frame_stream(1, "e", 0)).is_err());
    }

    fn rect_mask(r: Rect) -> BinaryMask {
        BinaryMask::from_rect(32, 32, r)
    }

    #[test]
    fn inpaint_selects_largest_irrelevant_regions() {
        let frame = Frame::from_fn(32, 32, |x, y| [x as u8 * 3, y as u8 * 3, 50]);
        let foreground = rect_mask(Rect { x0: 0, y0: 0, x1: 8, y1: 8 });

        // Seven disjoint task-irrelevant proposals of strictly
        // decreasing area (7x1 down to 1x1), plus one overlapping F.
        let mut proposals: Vec<BinaryMask> = (0..7u32)
            .map(|i| {
                rect_mask(Rect {
                    x0: 2,
                    y0: 8 + 3 * i,
                    x1: 2 + (7 - i),
                    y1: 9 + 3 * i,
                })
            })
            .collect();
        proposals.push(rect_mask(Rect { x0: 0, y0: 0, x1: 6, y1: 6 }));

        let out = inpaint_augment(
            &frame,
            &foreground,
            &proposals,
            &ProceduralGen,
            5,
            DEFAULT_IRRELEVANCE_THRESHOLD,
            &mut frame_stream(2, "e", 0),
        )
        .unwrap();

        // The five largest irrelevant proposals changed; the two
        // smallest and the F-overlapping one did not.
        for (i, p) in proposals.iter().enumerate() {
            let changed = (0..32u32).any(|y| {
                (0..32u32).any(|x| p.get(x, y) && out.get(x, y) != frame.get(x, y))
            });
            let expect_changed = i < 5;
            assert_eq!(changed, expect_changed, "proposal {i}");
        }
    }

    #[test]
    fn inpaint_with_no_candidates_returns_frame() {
        let frame = Frame::from_fn(16, 16, |x, y| [x as u8, y as u8, 9]);
        let foreground = BinaryMask::filled(16, 16);
        let proposals = vec![BinaryMask::from_rect(16, 16, Rect { x0: 1, y0: 1, x1: 5, y1: 5 })];
        let out = inpaint_augment(
            &frame,
            &foreground,
            &proposals,
            &ProceduralGen,
            5,
            DEFAULT_IRRELEVANCE_THRESHOLD,
            &mut frame_stream(2, "e", 0),
        )
        .unwrap();
        assert_eq!(out, frame);
    }

    #[test]
    fn inpaint_tie_break_prefers_top_left() {
        let frame = Frame::from_fn(32, 32, |x, y| [x as u8, y as u8, 1]);
        let foreground = BinaryMask::new(32, 32);
        // Same area; the bottom-right one listed first.
        let bottom_right = rect_mask(Rect { x0: 20, y0: 20, x1: 24, y1: 24 });
        let top_left = rect_mask(Rect { x0: 2, y0: 2, x1: 6, y1: 6 });
        let out = inpaint_augment(
            &frame,
            &foreground,
            &[bottom_right.clone(), top_left.clone()],
            &ProceduralGen,
            1,
            DEFAULT_IRRELEVANCE_THRESHOLD,
            &mut frame_stream(2, "e", 0),
        )
        .unwrap();
        let changed_tl = (2..6u32).any(|y| (2..6u32).any(|x| out.get(x, y) != frame.get(x, y)));
        let changed_br =
            (20..24u32).any(|y| (20..24u32).any(|x| out.get(x, y) != frame.get(x, y)));
        assert!(changed_tl && !changed_br);
    }

    #[test]
    fn fixture_proposals_round_trip_and_ordering() {
        let dir = tempfile::tempdir().unwrap();
        let frame = Frame::from_fn(16, 16, |x, y| [x as u8, y as u8, 77]);
        let small = BinaryMask::from_rect(16, 16, Rect { x0: 0, y0: 0, x1: 2, y1: 2 });
        let large = BinaryMask::from_rect(16, 16, Rect { x0: 4, y0: 4, x1: 12, y1: 12 });

        let sub = dir.path().join(frame.digest_hex());
        std::fs::create_dir_all(&sub).unwrap();
        small.save_png(sub.join("00.png")).unwrap();
        large.save_png(sub.join("01.png")).unwrap();

        let backend = FixtureProposals::from_dir(dir.path()).unwrap();
        let sorted = region_proposals(&frame, &backend).unwrap();
        assert_eq!(sorted, vec![large, small]);

        let unknown = Frame::solid(16, 16, [1, 1, 1]);
        assert!(region_proposals(&unknown, &backend).unwrap().is_empty());
    }

    #[test]
    fn method_and_scope_parsing() {
        assert_eq!("engine".parse::<AugMethod>().unwrap(), AugMethod::Engine);
        assert_eq!("none".parse::<AugMethod>().unwrap(), AugMethod::None);
        assert!("robo".parse::<AugMethod>().is_err());
        assert_eq!(AugMethod::Inpainting.to_string(), "inpainting");
        assert_eq!(
            serde_json::to_string(&AugMethod::Engine).unwrap(),
            "\"engine\""
        );

        assert_eq!(
            "per-episode".parse::<BackgroundScope>().unwrap(),
            BackgroundScope::PerEpisode
        );
        assert!("sometimes".parse::<BackgroundScope>().is_err());

        assert!(GenBackendDescriptor::parse("procedural").is_ok());
        assert!(GenBackendDescriptor::parse("external:http://h:1").is_ok());
        assert!(GenBackendDescriptor::parse("diffusion").is_err());
    }
}

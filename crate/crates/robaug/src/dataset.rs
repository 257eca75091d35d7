//! Demonstration datasets and the annotated segmentation corpus.
//!
//! Demo layout on disk:
//!
//! ```text
//! root/episodes/<id>/frames/000000.png …
//! root/episodes/<id>/meta.json
//! ```
//!
//! Annotated corpus layout:
//!
//! ```text
//! root/images/<name>.png
//! root/masks/{robot_main,robot_aux,object}/<name>.png
//! root/annotations.json        name -> {instruction, descriptions[]}
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use once_cell::sync::OnceCell;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mask::{union, BinaryMask};

/// RGB 8-bit raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    img: image::RgbImage,
}

impl Frame {
    pub fn new(img: image::RgbImage) -> Result<Frame> {
        if img.width() == 0 || img.height() == 0 {
            return Err(Error::validation("frame dimensions must be nonzero"));
        }
        Ok(Frame { img })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Frame {
        let img = image::RgbImage::from_fn(width, height, |x, y| image::Rgb(f(x, y)));
        Frame { img }
    }

    pub fn solid(width: u32, height: u32, rgb: [u8; 3]) -> Frame {
        Frame {
            img: image::RgbImage::from_pixel(width, height, image::Rgb(rgb)),
        }
    }

    pub fn width(&self) -> u32 {
        self.img.width()
    }

    pub fn height(&self) -> u32 {
        self.img.height()
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.img.width(), self.img.height())
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.img.get_pixel(x, y).0
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        self.img.put_pixel(x, y, image::Rgb(rgb));
    }

    /// Raw RGB bytes, row-major.
    pub fn as_raw(&self) -> &[u8] {
        self.img.as_raw()
    }

    pub fn as_image(&self) -> &image::RgbImage {
        &self.img
    }

    /// SHA-256 over dimensions and raw pixels; the content address used
    /// by fixture-backed oracles.
    pub fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(b"robaug.frame.v1");
        hasher.update(self.width().to_le_bytes());
        hasher.update(self.height().to_le_bytes());
        hasher.update(self.img.as_raw());
        hasher.finalize().into()
    }

    pub fn digest_hex(&self) -> String {
        crate::mask::hex(&self.digest())
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.img
            .write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| Error::image("<memory>", e))?;
        Ok(out.into_inner())
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Frame> {
        let img = image::load_from_memory(bytes).map_err(|e| Error::image("<memory>", e))?;
        Frame::new(img.to_rgb8())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_png_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Load any decodable image and convert to RGB.
    pub fn load(path: impl AsRef<Path>) -> Result<Frame> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let img = image::load_from_memory(&bytes).map_err(|e| Error::image(path, e))?;
        Frame::new(img.to_rgb8())
    }
}

/// Per-episode metadata. `extra` is an opaque pass-through map
/// (proprioception, actions, whatever the recorder stored); key order
/// and number formatting survive a round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub instruction: String,
    pub object_names: Vec<String>,
    #[serde(default)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Metadata {
    pub fn new(instruction: impl Into<String>, object_names: Vec<String>) -> Metadata {
        Metadata {
            instruction: instruction.into(),
            object_names,
            extra: serde_json::Map::new(),
        }
    }

    /// Canonical serialization: pretty JSON plus a trailing newline.
    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)
            .map_err(|e| Error::schema(format!("metadata serialization: {e}")))?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_json_bytes(bytes: &[u8], context: &str) -> Result<Metadata> {
        serde_json::from_slice(bytes)
            .map_err(|e| Error::schema(format!("{context}: invalid metadata: {e}")))
    }
}

#[derive(Debug)]
enum FrameStore {
    Memory(Vec<Frame>),
    Disk {
        frames_dir: PathBuf,
        count: usize,
        cache: Vec<OnceCell<Frame>>,
    },
}

/// One demonstration: an ordered frame sequence plus metadata.
/// Disk-backed episodes decode frames lazily and cache them.
#[derive(Debug)]
pub struct Episode {
    id: String,
    meta: Metadata,
    dims: (u32, u32),
    store: FrameStore,
    source_dir: Option<PathBuf>,
}

impl Episode {
    pub fn new(id: impl Into<String>, frames: Vec<Frame>, meta: Metadata) -> Result<Episode> {
        let id = id.into();
        let first = frames
            .first()
            .ok_or_else(|| Error::validation(format!("episode {id}: no frames")))?;
        let dims = first.dims();
        for (i, f) in frames.iter().enumerate() {
            if f.dims() != dims {
                return Err(Error::validation(format!(
                    "episode {id}: frame {i} is {}x{}, expected {}x{}",
                    f.width(),
                    f.height(),
                    dims.0,
                    dims.1
                )));
            }
        }
        Ok(Episode {
            id,
            meta,
            dims,
            store: FrameStore::Memory(frames),
            source_dir: None,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn meta(&self) -> &Metadata {
        &self.meta
    }

    pub fn len(&self) -> usize {
        match &self.store {
            FrameStore::Memory(v) => v.len(),
            FrameStore::Disk { count, .. } => *count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> (u32, u32) {
        self.dims
    }

    /// Directory this episode was loaded from, if disk-backed.
    pub fn source_dir(&self) -> Option<&Path> {
        self.source_dir.as_deref()
    }

    pub fn frame(&self, index: usize) -> Result<&Frame> {
        match &self.store {
            FrameStore::Memory(v) => v
                .get(index)
                .ok_or_else(|| Error::validation(format!("frame index {index} out of range"))),
            FrameStore::Disk {
                frames_dir,
                count,
                cache,
            } => {
                if index >= *count {
                    return Err(Error::validation(format!(
                        "frame index {index} out of range"
                    )));
                }
                cache[index].get_or_try_init(|| Frame::load(frame_path(frames_dir, index)))
            }
        }
    }

    /// All frames, decoded.
    pub fn frames(&self) -> Result<Vec<&Frame>> {
        (0..self.len()).map(|i| self.frame(i)).collect()
    }
}

/// A set of demonstrations with unique episode ids.
#[derive(Debug)]
pub struct DemoDataset {
    root: Option<PathBuf>,
    episodes: Vec<Episode>,
}

impl DemoDataset {
    pub fn new(episodes: Vec<Episode>) -> Result<DemoDataset> {
        let mut seen = std::collections::BTreeSet::new();
        for ep in &episodes {
            if !seen.insert(ep.id.clone()) {
                return Err(Error::schema(format!("duplicate episode id {}", ep.id)));
            }
        }
        Ok(DemoDataset {
            root: None,
            episodes,
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }
}

fn frame_path(frames_dir: &Path, index: usize) -> PathBuf {
    frames_dir.join(format!("{index:06}.png"))
}

/// Load a demo dataset. Frames stay on disk until first access; frame
/// counts, naming, and dimensions are verified up front via headers.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<DemoDataset> {
    let root = root.as_ref();
    let episodes_dir = root.join("episodes");
    let entries = std::fs::read_dir(&episodes_dir).map_err(|e| Error::io(&episodes_dir, e))?;
    let mut ids: Vec<String> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&episodes_dir, e))?;
        if entry.path().is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::schema(format!(
            "no episodes found under {}",
            episodes_dir.display()
        )));
    }

    let mut episodes = Vec::with_capacity(ids.len());
    for id in ids {
        let ep_dir = episodes_dir.join(&id);
        let meta_path = ep_dir.join("meta.json");
        if !meta_path.is_file() {
            return Err(Error::schema(format!("episode {id}: missing meta.json")));
        }
        let meta_bytes = std::fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta = Metadata::from_json_bytes(&meta_bytes, &format!("episode {id}"))?;

        let frames_dir = ep_dir.join("frames");
        let count = count_frames(&id, &frames_dir)?;
        let mut dims = None;
        for i in 0..count {
            let p = frame_path(&frames_dir, i);
            let d = image::image_dimensions(&p).map_err(|e| Error::image(&p, e))?;
            match dims {
                None => dims = Some(d),
                Some(expected) if expected != d => {
                    return Err(Error::validation(format!(
                        "episode {id}: frame {i} is {}x{}, expected {}x{}",
                        d.0, d.1, expected.0, expected.1
                    )))
                }
                Some(_) => {}
            }
        }
        episodes.push(Episode {
            id,
            meta,
            dims: dims.unwrap(),
            store: FrameStore::Disk {
                frames_dir,
                count,
                cache: (0..count).map(|_| OnceCell::new()).collect(),
            },
            source_dir: Some(ep_dir),
        });
    }
    Ok(DemoDataset {
        root: Some(root.to_path_buf()),
        episodes,
    })
}

/// Frames must be 000000.png … consecutively from zero.
fn count_frames(id: &str, frames_dir: &Path) -> Result<usize> {
    let entries = std::fs::read_dir(frames_dir).map_err(|e| Error::io(frames_dir, e))?;
    let mut names: Vec<String> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(frames_dir, e))?;
        names.push(entry.file_name().to_string_lossy().into_owned());
    }
    names.sort();
    if names.is_empty() {
        return Err(Error::schema(format!("episode {id}: no frames")));
    }
    for (i, name) in names.iter().enumerate() {
        let expected = format!("{i:06}.png");
        if *name != expected {
            return Err(Error::schema(format!(
                "episode {id}: expected frame file {expected}, found {name}"
            )));
        }
    }
    Ok(names.len())
}

/// Write a demo dataset. Refuses to touch an existing root unless
/// `force` is set, in which case the root is replaced wholesale.
pub fn save_dataset(ds: &DemoDataset, root: impl AsRef<Path>, force: bool) -> Result<PathBuf> {
    let root = root.as_ref();
    if root.exists() {
        if !force {
            return Err(Error::config(format!(
                "output root {} already exists (pass force to overwrite)",
                root.display()
            )));
        }
        std::fs::remove_dir_all(root).map_err(|e| Error::io(root, e))?;
    }
    for ep in &ds.episodes {
        let ep_dir = root.join("episodes").join(&ep.id);
        let frames_dir = ep_dir.join("frames");
        std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
        for i in 0..ep.len() {
            ep.frame(i)?.save_png(frame_path(&frames_dir, i))?;
        }
        let meta_path = ep_dir.join("meta.json");
        std::fs::write(&meta_path, ep.meta.to_json_bytes()?)
            .map_err(|e| Error::io(&meta_path, e))?;
    }
    Ok(root.to_path_buf())
}

/// One annotated image: robot masks split into the main arm and
/// auxiliary parts (base, cables), plus the task-object mask and the
/// scene descriptions feeding the prompt pool.
#[derive(Debug, Clone)]
pub struct AnnotatedFrame {
    pub name: String,
    pub image: Frame,
    pub robot_main: BinaryMask,
    pub robot_aux: BinaryMask,
    pub object: BinaryMask,
    pub instruction: String,
    pub descriptions: Vec<String>,
}

impl AnnotatedFrame {
    /// Full robot region: main arm plus auxiliary parts.
    pub fn robot_mask(&self) -> Result<BinaryMask> {
        union(&[&self.robot_main, &self.robot_aux])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationEntry {
    instruction: String,
    descriptions: Vec<String>,
}

const MASK_CLASSES: [&str; 3] = ["robot_main", "robot_aux", "object"];

/// Load an annotated corpus. A missing robot_aux mask is an all-zero
/// mask with a warning; missing robot_main or object is an error.
pub fn load_roboseg(root: impl AsRef<Path>) -> Result<Vec<AnnotatedFrame>> {
    let root = root.as_ref();
    let ann_path = root.join("annotations.json");
    let ann_bytes = std::fs::read(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let annotations: BTreeMap<String, AnnotationEntry> = serde_json::from_slice(&ann_bytes)
        .map_err(|e| Error::schema(format!("annotations.json: {e}")))?;

    let images_dir = root.join("images");
    let entries = std::fs::read_dir(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let mut names: Vec<String> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&images_dir, e))?;
        let file = entry.file_name().to_string_lossy().into_owned();
        match file.strip_suffix(".png") {
            Some(stem) => names.push(stem.to_string()),
            None => {
                return Err(Error::schema(format!(
                    "unexpected non-png file in images/: {file}"
                )))
            }
        }
    }
    names.sort();

    let mut frames = Vec::with_capacity(names.len());
    for name in names {
        let entry = annotations
            .get(&name)
            .ok_or_else(|| Error::schema(format!("image {name} has no annotations.json entry")))?;
        let image = Frame::load(images_dir.join(format!("{name}.png")))?;
        let dims = image.dims();

        let mut masks = Vec::with_capacity(3);
        for class in MASK_CLASSES {
            let path = root.join("masks").join(class).join(format!("{name}.png"));
            if path.is_file() {
                let mask = BinaryMask::load_png(&path)?;
                if mask.dims() != dims {
                    return Err(Error::validation(format!(
                        "image {name}: {class} mask is {}x{}, image is {}x{}",
                        mask.width(),
                        mask.height(),
                        dims.0,
                        dims.1
                    )));
                }
                masks.push(mask);
            } else if class == "robot_aux" {
                log::warn!("image {name}: no robot_aux mask, treating as empty");
                masks.push(BinaryMask::new(dims.0, dims.1));
            } else {
                return Err(Error::validation(format!(
                    "image {name}: missing {class} mask"
                )));
            }
        }
        let object = masks.pop().unwrap();
        let robot_aux = masks.pop().unwrap();
        let robot_main = masks.pop().unwrap();
        frames.push(AnnotatedFrame {
            name,
            image,
            robot_main,
            robot_aux,
            object,
            instruction: entry.instruction.clone(),
            descriptions: entry.descriptions.clone(),
        });
    }
    for name in annotations.keys() {
        if !frames.iter().any(|f| f.name == *name) {
            log::warn!("annotations.json entry {name} has no image file");
        }
    }
    Ok(frames)
}

/// Write an annotated corpus in the canonical layout. All three mask
/// classes are written for every frame, robot_aux included.
pub fn save_roboseg(frames: &[AnnotatedFrame], root: impl AsRef<Path>) -> Result<PathBuf> {
    let root = root.as_ref();
    let images_dir = root.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    for class in MASK_CLASSES {
        let dir = root.join("masks").join(class);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let mut annotations: BTreeMap<String, AnnotationEntry> = BTreeMap::new();
    for frame in frames {
        if annotations
            .insert(
                frame.name.clone(),
                AnnotationEntry {
                    instruction: frame.instruction.clone(),
                    descriptions: frame.descriptions.clone(),
                },
            )
            .is_some()
        {
            return Err(Error::schema(format!("duplicate frame name {}", frame.name)));
        }
        frame
            .image
            .save_png(images_dir.join(format!("{}.png", frame.name)))?;
        for (class, mask) in MASK_CLASSES
            .iter()
            .zip([&frame.robot_main, &frame.robot_aux, &frame.object])
        {
            mask.save_png(root.join("masks").join(class).join(format!("{}.png", frame.name)))?;
        }
    }
    let ann_path = root.join("annotations.json");
    let mut bytes = serde_json::to_vec_pretty(&annotations)
        .map_err(|e| Error::schema(format!("annotations serialization: {e}")))?;
    bytes.push(b'\n');
    std::fs::write(&ann_path, bytes).map_err(|e| Error::io(&ann_path, e))?;
    Ok(root.to_path_buf())
}

pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// A mask's dimensions disagree with the image.
    DimMismatch {
        what: String,
        expected: (u32, u32),
        got: (u32, u32),
    },
    /// robot_main and object overlap more than the threshold fraction
    /// of robot_main; fine-grained annotations should be disjoint.
    ForegroundOverlap { fraction: f64, threshold: f64 },
    MissingInstruction,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::DimMismatch {
                what,
                expected,
                got,
            } => write!(
                f,
                "{what} is {}x{}, expected {}x{}",
                got.0, got.1, expected.0, expected.1
            ),
            Violation::ForegroundOverlap {
                fraction,
                threshold,
            } => write!(
                f,
                "robot_main/object overlap {:.2}% exceeds {:.2}%",
                fraction * 100.0,
                threshold * 100.0
            ),
            Violation::MissingInstruction => write!(f, "missing instruction"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_annotation(rec: &AnnotatedFrame) -> ValidationReport {
    validate_annotation_with(rec, DEFAULT_OVERLAP_THRESHOLD)
}

pub fn validate_annotation_with(rec: &AnnotatedFrame, threshold: f64) -> ValidationReport {
    let mut report = ValidationReport::default();
    let dims = rec.image.dims();
    for (what, mask) in [
        ("robot_main", &rec.robot_main),
        ("robot_aux", &rec.robot_aux),
        ("object", &rec.object),
    ] {
        if mask.dims() != dims {
            report.violations.push(Violation::DimMismatch {
                what: what.to_string(),
                expected: dims,
                got: mask.dims(),
            });
        }
    }
    if rec.robot_main.dims() == dims && rec.object.dims() == dims {
        let main_count = rec.robot_main.count_set();
        if main_count > 0 {
            let overlap = rec.robot_main.intersection(&rec.object).unwrap().count_set();
            let fraction = overlap as f64 / main_count as f64;
            if fraction > threshold {
                report.violations.push(Violation::ForegroundOverlap {
                    fraction,
                    threshold,
                });
            }
        }
    }
    if rec.instruction.is_empty() {
        report.violations.push(Violation::MissingInstruction);
    }
    report
}

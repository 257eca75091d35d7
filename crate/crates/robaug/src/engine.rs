//! Pipeline orchestration: wires segmentation, background synthesis,
//! and compositing into single-frame, video, and whole-dataset entry
//! points, plus the scaling planner, throughput benchmark, and
//! segmentation evaluation.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aug::{
    connect_proposals, gen_background_engine, gen_background_image, gen_background_scene,
    gen_background_texture, inpaint_augment, load_prompt_pool, region_proposals, sample_prompt,
    AssetKind, AssetPool, AugConfig, AugMethod, BackgroundScope, GenBackend, PromptPool,
    ProposalBackend,
};
use crate::compositor::{composite, prepare_foreground, AugFrame, Provenance};
use crate::dataset::{
    load_dataset, load_roboseg, DemoDataset, Frame,
};
use crate::error::{Error, Result};
use crate::mask::{union, BinaryMask};
use crate::metrics::{mean_giou_labeled, GIoUReport};
use crate::seg::{
    segment_video, BackendDescriptor, BackendKind, Mode, PassthroughBackend, SegBackend,
    SegRequest, ROBOT_PROMPT,
};
use crate::stream::{derive_u64, frame_stream};

/// Everything a run needs: segmentation backends for robot and object,
/// the augmentation settings, and input resources.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub robo_seg: BackendDescriptor,
    pub obj_seg: BackendDescriptor,
    pub aug: AugConfig,
    pub batch_size: usize,
    pub prompt_pool: Option<PathBuf>,
    pub asset_pool: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl EngineConfig {
    pub fn new(robo_seg: BackendDescriptor, obj_seg: BackendDescriptor, aug: AugConfig) -> Self {
        EngineConfig {
            robo_seg,
            obj_seg,
            aug,
            batch_size: 1,
            prompt_pool: None,
            asset_pool: None,
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        let method = self.aug.method;
        if method.needs_prompts() && self.prompt_pool.is_none() {
            return Err(Error::config(format!(
                "method {method} needs a prompt pool (--prompt-pool)"
            )));
        }
        if method.needs_assets() && self.asset_pool.is_none() {
            return Err(Error::config(format!(
                "method {method} needs an asset pool (--asset-pool)"
            )));
        }
        if method == AugMethod::Inpainting && self.aug.backends.proposals.is_none() {
            return Err(Error::config(
                "method inpainting needs a region-proposal backend (--proposals)",
            ));
        }
        if self.asset_pool.is_some() && !method.needs_assets() {
            log::warn!("asset pool is set but method {method} does not use it");
        }
        if self.prompt_pool.is_some() && !method.needs_prompts() {
            log::warn!("prompt pool is set but method {method} does not use it");
        }
        Ok(())
    }
}

/// A connected pipeline. Construction resolves every backend the
/// configured method needs; methods that need nothing connect nothing.
pub struct Engine {
    cfg: EngineConfig,
    robo: Option<Box<dyn SegBackend>>,
    obj: Option<Box<dyn SegBackend>>,
    gen: Option<Box<dyn GenBackend>>,
    proposals: Option<Box<dyn ProposalBackend>>,
    prompts: Option<PromptPool>,
    assets: Option<AssetPool>,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Result<Engine> {
        cfg.validate()?;
        let method = cfg.aug.method;

        let needs_seg = method != AugMethod::None;
        let needs_gen = matches!(
            method,
            AugMethod::Engine | AugMethod::Background | AugMethod::Inpainting
        );

        let robo = needs_seg.then(|| cfg.robo_seg.connect()).transpose()?;
        let obj = needs_seg.then(|| cfg.obj_seg.connect()).transpose()?;
        let gen = needs_gen.then(|| cfg.aug.backends.gen.connect()).transpose()?;
        let proposals = (method == AugMethod::Inpainting)
            .then(|| connect_proposals(cfg.aug.backends.proposals.as_ref().unwrap()))
            .transpose()?;
        let prompts = method
            .needs_prompts()
            .then(|| load_prompt_pool(cfg.prompt_pool.as_ref().unwrap()))
            .transpose()?;
        let assets = method
            .needs_assets()
            .then(|| {
                let kind = if method == AugMethod::Texture {
                    AssetKind::Texture
                } else {
                    AssetKind::Image
                };
                AssetPool::load(cfg.asset_pool.as_ref().unwrap(), kind)
            })
            .transpose()?;

        Ok(Engine {
            cfg,
            robo,
            obj,
            gen,
            proposals,
            prompts,
            assets,
        })
    }

    /// Test constructor: inject backends directly instead of connecting
    /// descriptors. Pools still load from the config paths.
    pub fn with_backends(
        cfg: EngineConfig,
        robo: Box<dyn SegBackend>,
        obj: Box<dyn SegBackend>,
        gen: Option<Box<dyn GenBackend>>,
        proposals: Option<Box<dyn ProposalBackend>>,
    ) -> Result<Engine> {
        cfg.validate()?;
        let method = cfg.aug.method;
        let prompts = method
            .needs_prompts()
            .then(|| load_prompt_pool(cfg.prompt_pool.as_ref().unwrap()))
            .transpose()?;
        let assets = method
            .needs_assets()
            .then(|| {
                let kind = if method == AugMethod::Texture {
                    AssetKind::Texture
                } else {
                    AssetKind::Image
                };
                AssetPool::load(cfg.asset_pool.as_ref().unwrap(), kind)
            })
            .transpose()?;
        Ok(Engine {
            cfg,
            robo: Some(robo),
            obj: Some(obj),
            gen,
            proposals,
            prompts,
            assets,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    fn backend_name(&self) -> String {
        match self.cfg.aug.method {
            AugMethod::None => "none".to_string(),
            AugMethod::Texture | AugMethod::Imagenet => "assets".to_string(),
            _ => self.gen.as_ref().map(|g| g.kind()).unwrap_or("none").to_string(),
        }
    }

    fn provenance(&self, prompt: Option<String>) -> Provenance {
        Provenance {
            method: self.cfg.aug.method,
            seed: self.cfg.aug.seed,
            prompt,
            backend: self.backend_name(),
        }
    }

    /// Synthesize B* for one frame. Consumes the frame's rng stream in
    /// a fixed order (prompt draw, then generator seed or asset pick).
    fn background(
        &self,
        frame: &Frame,
        foreground: &BinaryMask,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<(Frame, Option<String>)> {
        match self.cfg.aug.method {
            AugMethod::Engine => {
                let prompt = sample_prompt(self.prompts.as_ref().unwrap(), rng).to_string();
                let bg = gen_background_engine(
                    frame,
                    foreground,
                    &prompt,
                    self.gen.as_deref().unwrap(),
                    rng,
                )?;
                Ok((bg, Some(prompt)))
            }
            AugMethod::Background => {
                let prompt = sample_prompt(self.prompts.as_ref().unwrap(), rng).to_string();
                let bg = gen_background_scene(
                    &prompt,
                    frame.dims(),
                    self.gen.as_deref().unwrap(),
                    rng,
                )?;
                Ok((bg, Some(prompt)))
            }
            AugMethod::Texture => Ok((
                gen_background_texture(
                    self.assets.as_ref().unwrap(),
                    frame.dims(),
                    rng,
                    self.cfg.aug.resample,
                )?,
                None,
            )),
            AugMethod::Imagenet => Ok((
                gen_background_image(
                    self.assets.as_ref().unwrap(),
                    frame.dims(),
                    rng,
                    self.cfg.aug.resample,
                )?,
                None,
            )),
            AugMethod::Inpainting | AugMethod::None => {
                unreachable!("no standalone background for this method")
            }
        }
    }

    fn foreground(&self, frame: &Frame, object_names: &[String]) -> Result<BinaryMask> {
        crate::seg::robot_foreground(
            frame,
            self.robo.as_deref().unwrap(),
            self.obj.as_deref().unwrap(),
            object_names,
        )
    }

    /// Augment a single frame with the default stream (episode "",
    /// index 0).
    pub fn gen_image(&self, frame: &Frame, object_names: &[String]) -> Result<AugFrame> {
        self.gen_image_ctx(frame, object_names, "", 0)
    }

    /// Augment one frame of a named episode. All randomness comes from
    /// the (seed, episode, index) stream, so any execution order or
    /// batching produces identical bytes.
    pub fn gen_image_ctx(
        &self,
        frame: &Frame,
        object_names: &[String],
        episode_id: &str,
        frame_index: u64,
    ) -> Result<AugFrame> {
        let mut rng = frame_stream(self.cfg.aug.seed, episode_id, frame_index);
        let aug = &self.cfg.aug;
        match aug.method {
            AugMethod::None => Ok(AugFrame {
                frame: frame.clone(),
                provenance: self.provenance(None),
            }),
            AugMethod::Inpainting => {
                let f = self.foreground(frame, object_names)?;
                let props = region_proposals(frame, self.proposals.as_deref().unwrap())?;
                let out = inpaint_augment(
                    frame,
                    &f,
                    &props,
                    self.gen.as_deref().unwrap(),
                    aug.inpaint_count,
                    aug.irrelevance_threshold,
                    &mut rng,
                )?;
                Ok(AugFrame {
                    frame: out,
                    provenance: self.provenance(None),
                })
            }
            _ => {
                let f = self.foreground(frame, object_names)?;
                let layer = prepare_foreground(&f, aug.dilate_radius, aug.feather_radius);
                let (bg, prompt) = self.background(frame, &f, &mut rng)?;
                Ok(AugFrame {
                    frame: composite(frame, &layer, &bg)?,
                    provenance: self.provenance(prompt),
                })
            }
        }
    }

    /// Augment an episode's frames with per-frame streams (episode "").
    pub fn gen_video(&self, frames: &[&Frame], object_names: &[String]) -> Result<Vec<AugFrame>> {
        self.gen_video_ctx(frames, object_names, "")
    }

    /// Augment a frame sequence. Segmentation runs in transport batches
    /// of `batch_size`; outputs are elementwise identical to
    /// `gen_image_ctx` on each frame. With per-episode background
    /// scope, frame 0's stream synthesizes one B* reused everywhere.
    pub fn gen_video_ctx(
        &self,
        frames: &[&Frame],
        object_names: &[String],
        episode_id: &str,
    ) -> Result<Vec<AugFrame>> {
        if frames.is_empty() {
            return Ok(Vec::new());
        }
        let dims = frames[0].dims();
        for (i, f) in frames.iter().enumerate() {
            if f.dims() != dims {
                return Err(Error::validation(format!(
                    "frame {i} is {}x{}, expected {}x{}",
                    f.width(),
                    f.height(),
                    dims.0,
                    dims.1
                )));
            }
        }
        let aug = &self.cfg.aug;

        if aug.method == AugMethod::None {
            return Ok(frames
                .iter()
                .map(|f| AugFrame {
                    frame: (*f).clone(),
                    provenance: self.provenance(None),
                })
                .collect());
        }

        let foregrounds = self.batched_foregrounds(frames, object_names)?;

        if aug.method == AugMethod::Inpainting {
            let mut out = Vec::with_capacity(frames.len());
            for (i, (frame, f)) in frames.iter().zip(&foregrounds).enumerate() {
                let mut rng = frame_stream(aug.seed, episode_id, i as u64);
                let props = region_proposals(frame, self.proposals.as_deref().unwrap())
                    .map_err(|e| with_frame_index(e, i))?;
                let inpainted = inpaint_augment(
                    frame,
                    f,
                    &props,
                    self.gen.as_deref().unwrap(),
                    aug.inpaint_count,
                    aug.irrelevance_threshold,
                    &mut rng,
                )
                .map_err(|e| with_frame_index(e, i))?;
                out.push(AugFrame {
                    frame: inpainted,
                    provenance: self.provenance(None),
                });
            }
            return Ok(out);
        }

        // One background per episode, or one per frame.
        let shared_bg = match aug.background_scope {
            BackgroundScope::PerEpisode => {
                let mut rng = frame_stream(aug.seed, episode_id, 0);
                Some(self.background(frames[0], &foregrounds[0], &mut rng)?)
            }
            BackgroundScope::PerFrame => None,
        };

        let mut out = Vec::with_capacity(frames.len());
        for (i, (frame, f)) in frames.iter().zip(&foregrounds).enumerate() {
            let layer = prepare_foreground(f, aug.dilate_radius, aug.feather_radius);
            let (bg, prompt) = match &shared_bg {
                Some((bg, prompt)) => (bg.clone(), prompt.clone()),
                None => {
                    let mut rng = frame_stream(aug.seed, episode_id, i as u64);
                    self.background(frame, f, &mut rng)
                        .map_err(|e| with_frame_index(e, i))?
                }
            };
            out.push(AugFrame {
                frame: composite(frame, &layer, &bg).map_err(|e| with_frame_index(e, i))?,
                provenance: self.provenance(prompt),
            });
        }
        Ok(out)
    }

    /// F per frame: robot mask plus one object mask per name, all
    /// segmented through the transport batch size.
    fn batched_foregrounds(
        &self,
        frames: &[&Frame],
        object_names: &[String],
    ) -> Result<Vec<BinaryMask>> {
        let robo = self.robo.as_deref().unwrap();
        let obj = self.obj.as_deref().unwrap();
        let robots = segment_video(robo, frames, ROBOT_PROMPT, self.cfg.batch_size)?;
        let mut per_name = Vec::with_capacity(object_names.len());
        for name in object_names {
            per_name.push(segment_video(obj, frames, name, self.cfg.batch_size)?);
        }
        let mut out = Vec::with_capacity(frames.len());
        for i in 0..frames.len() {
            let mut parts: Vec<&BinaryMask> = vec![&robots[i]];
            for masks in &per_name {
                parts.push(&masks[i]);
            }
            out.push(union(&parts)?);
        }
        Ok(out)
    }

    /// Augment every episode into `cfg.output`, then load the result.
    /// Episodes are staged under `.staging/<id>` and renamed into place
    /// only when complete, so an aborted run never leaves a partial
    /// episode; rerunning skips episodes that already exist.
    pub fn augment_dataset(&self, ds: &DemoDataset) -> Result<DemoDataset> {
        let out_root = self
            .cfg
            .output
            .as_ref()
            .ok_or_else(|| Error::config("augment_dataset needs an output directory"))?
            .clone();
        let episodes_dir = out_root.join("episodes");
        let staging_root = out_root.join(".staging");
        std::fs::create_dir_all(&episodes_dir).map_err(|e| Error::io(&episodes_dir, e))?;

        ds.episodes()
            .par_iter()
            .map(|ep| {
                let final_dir = episodes_dir.join(ep.id());
                if final_dir.exists() {
                    log::info!("episode {} already augmented, skipping", ep.id());
                    return Ok(());
                }
                let stage_dir = staging_root.join(ep.id());
                self.stage_episode(ep, &stage_dir)
                    .and_then(|()| {
                        std::fs::rename(&stage_dir, &final_dir)
                            .map_err(|e| Error::io(&final_dir, e))
                    })
                    .map_err(|e| {
                        let _ = std::fs::remove_dir_all(&stage_dir);
                        match e {
                            Error::Backend { endpoint, message } => Error::Backend {
                                endpoint,
                                message: format!("episode {}: {message}", ep.id()),
                            },
                            Error::Protocol { endpoint, message } => Error::Protocol {
                                endpoint,
                                message: format!("episode {}: {message}", ep.id()),
                            },
                            other => other,
                        }
                    })
            })
            .collect::<Result<Vec<()>>>()?;

        let _ = std::fs::remove_dir(&staging_root);
        load_dataset(&out_root)
    }

    fn stage_episode(&self, ep: &crate::dataset::Episode, stage_dir: &Path) -> Result<()> {
        if stage_dir.exists() {
            // Leftover from an aborted run; episodes are only renamed
            // into place when complete, so this is safe to redo.
            std::fs::remove_dir_all(stage_dir).map_err(|e| Error::io(stage_dir, e))?;
        }
        let frames_dir = stage_dir.join("frames");
        std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;

        let frames = ep.frames()?;
        let augmented = self.gen_video_ctx(&frames, &ep.meta().object_names, ep.id())?;
        for (i, af) in augmented.iter().enumerate() {
            af.frame
                .save_png(frames_dir.join(format!("{i:06}.png")))?;
        }

        // Metadata is byte-preserved from the source when it exists on
        // disk; in-memory episodes get the canonical serialization.
        let meta_path = stage_dir.join("meta.json");
        let meta_bytes = match ep.source_dir() {
            Some(src) => {
                let src_meta = src.join("meta.json");
                std::fs::read(&src_meta).map_err(|e| Error::io(&src_meta, e))?
            }
            None => ep.meta().to_json_bytes()?,
        };
        std::fs::write(&meta_path, meta_bytes).map_err(|e| Error::io(&meta_path, e))?;

        let prov = EpisodeProvenance {
            episode: ep.id().to_string(),
            method: self.cfg.aug.method,
            seed: self.cfg.aug.seed,
            frames: augmented.into_iter().map(|a| a.provenance).collect(),
        };
        let prov_path = stage_dir.join("provenance.json");
        let mut bytes = serde_json::to_vec_pretty(&prov)
            .map_err(|e| Error::schema(format!("provenance serialization: {e}")))?;
        bytes.push(b'\n');
        std::fs::write(&prov_path, bytes).map_err(|e| Error::io(&prov_path, e))?;
        Ok(())
    }
}

fn with_frame_index(err: Error, index: usize) -> Error {
    match err {
        Error::Backend { endpoint, message } => Error::Backend {
            endpoint,
            message: format!("frame {index}: {message}"),
        },
        Error::Protocol { endpoint, message } => Error::Protocol {
            endpoint,
            message: format!("frame {index}: {message}"),
        },
        other => other,
    }
}

/// Per-episode record of how each output frame was produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeProvenance {
    pub episode: String,
    pub method: AugMethod,
    pub seed: u64,
    pub frames: Vec<Provenance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub source_id: u64,
    pub copy_index: u64,
    pub augmented: bool,
    pub seed: u64,
}

/// Scaling-experiment recipe: which demos to copy, whether each copy
/// is augmented, the per-copy seed, and how long to train.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalePlan {
    pub n_demos: u64,
    pub factor: u64,
    pub mix: bool,
    pub train_epochs: u64,
    pub episodes: Vec<PlanEntry>,
}

/// Plan a factor-N scaling run over n demos. Mix plans keep the
/// originals as copy 0 and augment the remaining N-1 copies; non-mix
/// plans augment every copy. Epochs follow the training recipes for
/// factors 1/2/4/6; other factors fall back to round(1000/N).
pub fn scale_plan(n_demos: u64, factor: u64, mix: bool, base_seed: u64) -> Result<ScalePlan> {
    if n_demos == 0 {
        return Err(Error::config("scale plan needs at least one demo"));
    }
    if factor == 0 {
        return Err(Error::config("scale factor must be >= 1"));
    }
    let train_epochs = match factor {
        1 => 1000,
        2 => 700,
        4 => 400,
        6 => 300,
        f => {
            let epochs = (1000.0 / f as f64).round() as u64;
            log::warn!("no training recipe for factor {f}, using round(1000/{f}) = {epochs} epochs");
            epochs
        }
    };

    let mut episodes = Vec::with_capacity((n_demos * factor) as usize);
    for copy_index in 0..factor {
        for source_id in 0..n_demos {
            episodes.push(PlanEntry {
                source_id,
                copy_index,
                augmented: !(mix && copy_index == 0),
                seed: derive_u64(
                    "robaug.plan.v1",
                    &[
                        &base_seed.to_le_bytes(),
                        &source_id.to_le_bytes(),
                        &copy_index.to_le_bytes(),
                    ],
                ),
            });
        }
    }
    Ok(ScalePlan {
        n_demos,
        factor,
        mix,
        train_epochs,
        episodes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub method: AugMethod,
    pub sec_per_frame_mean: f64,
    pub sec_per_frame_stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub frame_count: usize,
    pub methods: Vec<MethodTiming>,
}

/// Wall-clock per-frame cost of each method on the given dataset,
/// single-frame batches. Report only; timings depend on the machine.
pub fn bench(cfg: &EngineConfig, ds: &DemoDataset, methods: &[AugMethod]) -> Result<BenchReport> {
    if methods.is_empty() {
        return Err(Error::config("bench needs at least one method"));
    }
    let mut items: Vec<(&str, u64, &Frame, &[String])> = Vec::new();
    for ep in ds.episodes() {
        for i in 0..ep.len() {
            items.push((
                ep.id(),
                i as u64,
                ep.frame(i)?,
                &ep.meta().object_names,
            ));
        }
    }
    if items.len() < 10 {
        return Err(Error::config(format!(
            "bench needs at least 10 frames for stable timing, got {}",
            items.len()
        )));
    }

    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let mut method_cfg = cfg.clone();
        method_cfg.aug.method = method;
        method_cfg.batch_size = 1;
        let engine = Engine::new(method_cfg)?;

        let mut times = Vec::with_capacity(items.len());
        for (ep_id, index, frame, names) in &items {
            let t0 = Instant::now();
            engine.gen_image_ctx(frame, names, ep_id, *index)?;
            times.push(t0.elapsed().as_secs_f64());
        }
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / times.len() as f64;
        out.push(MethodTiming {
            method,
            sec_per_frame_mean: mean,
            sec_per_frame_stddev: var.sqrt(),
        });
    }
    Ok(BenchReport {
        frame_count: items.len(),
        methods: out,
    })
}

/// Score a segmentation backend against an annotated set: prompt
/// "robot" per image versus the stored robot masks. A bare passthrough
/// descriptor is served from the evaluation set itself.
pub fn eval_seg(desc: &BackendDescriptor, roboseg_root: impl AsRef<Path>) -> Result<GIoUReport> {
    let frames = load_roboseg(&roboseg_root)?;
    let backend: Box<dyn SegBackend> =
        if desc.kind == BackendKind::Passthrough && !desc.params.contains_key("dir") {
            Box::new(PassthroughBackend::from_annotated(&frames)?)
        } else {
            desc.connect()?
        };

    let mut ids = Vec::with_capacity(frames.len());
    let mut preds = Vec::with_capacity(frames.len());
    let mut gts = Vec::with_capacity(frames.len());
    for af in &frames {
        let pred = backend.segment(&SegRequest {
            image: &af.image,
            prompt: ROBOT_PROMPT,
            mode: Mode::Semantic,
        })?;
        ids.push(af.name.clone());
        preds.push(pred);
        gts.push(af.robot_mask()?);
    }
    mean_giou_labeled(&ids, &preds, &gts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aug::ProceduralGen;
    use crate::dataset::{save_dataset, save_roboseg, AnnotatedFrame, Episode, Metadata};
    use crate::mask::Rect;
    use crate::treehash::hash_tree;
    use std::collections::HashMap;

    fn annotated(name: &str, salt: u8) -> AnnotatedFrame {
        let image = Frame::from_fn(24, 20, |x, y| {
            [salt.wrapping_add(x as u8 * 5), y as u8 * 7, salt]
        });
        AnnotatedFrame {
            name: name.to_string(),
            image,
            // Main and aux tile one filled rectangle, so a perfect
            // prediction scores GIoU exactly 1.0.
            robot_main: BinaryMask::from_rect(24, 20, Rect { x0: 2, y0: 2, x1: 9, y1: 12 }),
            robot_aux: BinaryMask::from_rect(24, 20, Rect { x0: 2, y0: 12, x1: 9, y1: 16 }),
            object: BinaryMask::from_rect(24, 20, Rect { x0: 14, y0: 6, x1: 20, y1: 11 }),
            instruction: "pick up the block".to_string(),
            descriptions: vec!["a lab bench".to_string(), "a white table".to_string()],
        }
    }

    fn fixture(n: usize) -> (Vec<AnnotatedFrame>, Vec<Frame>) {
        let ann: Vec<AnnotatedFrame> =
            (0..n).map(|i| annotated(&format!("f{i}"), 20 + i as u8 * 9)).collect();
        let frames: Vec<Frame> = ann.iter().map(|a| a.image.clone()).collect();
        (ann, frames)
    }

    fn base_cfg(method: AugMethod) -> EngineConfig {
        let mut aug = AugConfig::new(method);
        aug.seed = 11;
        EngineConfig::new(
            BackendDescriptor::parse("chroma").unwrap(),
            BackendDescriptor::parse("chroma").unwrap(),
            aug,
        )
    }

    fn write_prompts(dir: &Path) -> PathBuf {
        let p = dir.join("prompts.txt");
        std::fs::write(&p, "a lab bench\na wooden desk\na meeting room\na kitchen\n").unwrap();
        p
    }

    fn write_assets(dir: &Path) -> PathBuf {
        let d = dir.join("assets");
        std::fs::create_dir_all(&d).unwrap();
        for (i, c) in [[250u8, 20, 20], [20, 250, 20], [20, 20, 250]].iter().enumerate() {
            Frame::from_fn(9, 7, |x, y| {
                [c[0].wrapping_add(x as u8), c[1].wrapping_add(y as u8), c[2]]
            })
            .save_png(d.join(format!("t{i}.png")))
            .unwrap();
        }
        d
    }

    fn engine_with(method: AugMethod, dir: &Path, ann: &[AnnotatedFrame]) -> Engine {
        let mut cfg = base_cfg(method);
        if method.needs_prompts() {
            cfg.prompt_pool = Some(write_prompts(dir));
        }
        if method.needs_assets() {
            cfg.asset_pool = Some(write_assets(dir));
        }
        if method == AugMethod::Inpainting {
            cfg.aug.backends.proposals = Some(BackendDescriptor::parse("passthrough:unused").unwrap());
        }
        let proposals: Option<Box<dyn ProposalBackend>> = (method == AugMethod::Inpainting)
            .then(|| {
                let mut by_digest = HashMap::new();
                for a in ann {
                    by_digest.insert(
                        a.image.digest(),
                        vec![BinaryMask::from_rect(24, 20, Rect { x0: 10, y0: 14, x1: 22, y1: 19 })],
                    );
                }
                Box::new(crate::aug::FixtureProposals::new(by_digest)) as Box<dyn ProposalBackend>
            });
        Engine::with_backends(
            cfg,
            Box::new(PassthroughBackend::from_annotated(ann).unwrap()),
            Box::new(PassthroughBackend::from_annotated(ann).unwrap()),
            Some(Box::new(ProceduralGen)),
            proposals,
        )
        .unwrap()
    }

    #[test]
    fn config_validation_gates_resources() {
        assert!(base_cfg(AugMethod::None).validate().is_ok());

        let mut cfg = base_cfg(AugMethod::Texture);
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        cfg.asset_pool = Some(PathBuf::from("/tmp/x"));
        assert!(cfg.validate().is_ok());

        let cfg = base_cfg(AugMethod::Engine);
        assert!(cfg.validate().unwrap_err().to_string().contains("prompt pool"));

        let cfg = base_cfg(AugMethod::Inpainting);
        assert!(cfg.validate().unwrap_err().to_string().contains("proposal"));

        let mut cfg = base_cfg(AugMethod::None);
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn method_none_is_identity() {
        let (ann, frames) = fixture(1);
        let engine = engine_with(AugMethod::None, tempfile::tempdir().unwrap().path(), &ann);
        let out = engine.gen_image(&frames[0], &[]).unwrap();
        assert_eq!(out.frame, frames[0]);
        assert_eq!(out.provenance.method, AugMethod::None);
    }

    #[test]
    fn texture_method_is_deterministic_and_preserves_foreground() {
        let dir = tempfile::tempdir().unwrap();
        let (ann, frames) = fixture(1);
        let engine = engine_with(AugMethod::Texture, dir.path(), &ann);
        let names = vec!["block".to_string()];

        let a = engine.gen_image(&frames[0], &names).unwrap();
        let b = engine.gen_image(&frames[0], &names).unwrap();
        assert_eq!(a.frame, b.frame);

        // Foreground = robot_main + robot_aux + object mask.
        let f = union(&[&ann[0].robot_mask().unwrap(), &ann[0].object]).unwrap();
        let mut fg_pixels = 0;
        for y in 0..20u32 {
            for x in 0..24u32 {
                if f.get(x, y) {
                    assert_eq!(a.frame.get(x, y), frames[0].get(x, y));
                    fg_pixels += 1;
                }
            }
        }
        assert!(fg_pixels > 0);

        // The expected background is reproducible from the same stream.
        let mut rng = frame_stream(11, "", 0);
        let pool = AssetPool::load(dir.path().join("assets"), AssetKind::Texture).unwrap();
        let expected_bg =
            gen_background_texture(&pool, (24, 20), &mut rng, crate::aug::Resample::Bilinear)
                .unwrap();
        for y in 0..20u32 {
            for x in 0..24u32 {
                if !f.get(x, y) {
                    assert_eq!(a.frame.get(x, y), expected_bg.get(x, y));
                }
            }
        }
        assert_eq!(a.provenance.backend, "assets");
    }

    #[test]
    fn engine_method_fills_background_from_generator() {
        let dir = tempfile::tempdir().unwrap();
        let (ann, frames) = fixture(1);
        let engine = engine_with(AugMethod::Engine, dir.path(), &ann);
        let names = vec!["block".to_string()];
        let out = engine.gen_image(&frames[0], &names).unwrap();

        let f = union(&[&ann[0].robot_mask().unwrap(), &ann[0].object]).unwrap();
        let mut rng = frame_stream(11, "", 0);
        let pool = load_prompt_pool(dir.path().join("prompts.txt")).unwrap();
        let prompt = sample_prompt(&pool, &mut rng).to_string();
        let expected_bg =
            gen_background_engine(&frames[0], &f, &prompt, &ProceduralGen, &mut rng).unwrap();

        for y in 0..20u32 {
            for x in 0..24u32 {
                let want = if f.get(x, y) {
                    frames[0].get(x, y)
                } else {
                    expected_bg.get(x, y)
                };
                assert_eq!(out.frame.get(x, y), want);
            }
        }
        assert_eq!(out.provenance.prompt, Some(prompt));
    }

    #[test]
    fn video_is_batch_invariant_and_matches_gen_image() {
        let dir = tempfile::tempdir().unwrap();
        let (ann, frames) = fixture(5);
        let refs: Vec<&Frame> = frames.iter().collect();
        let names = vec!["block".to_string()];

        for method in [AugMethod::Engine, AugMethod::Texture, AugMethod::Inpainting] {
            let base = engine_with(method, dir.path(), &ann);
            let out1 = base.gen_video(&refs, &names).unwrap();
            for batch in [2usize, 4, 32] {
                let mut cfg = base.config().clone();
                cfg.batch_size = batch;
                let eng = engine_with(method, dir.path(), &ann);
                let mut eng = eng;
                eng.cfg.batch_size = batch;
                let out2 = eng.gen_video(&refs, &names).unwrap();
                for (a, b) in out1.iter().zip(&out2) {
                    assert_eq!(a.frame, b.frame, "method {method} batch {batch}");
                }
            }
            for (i, af) in out1.iter().enumerate() {
                let single = base.gen_image_ctx(&frames[i], &names, "", i as u64).unwrap();
                assert_eq!(af.frame, single.frame, "method {method} frame {i}");
            }
        }
    }

    #[test]
    fn per_episode_scope_shares_one_background() {
        let dir = tempfile::tempdir().unwrap();
        let (ann, frames) = fixture(3);
        let refs: Vec<&Frame> = frames.iter().collect();
        let names = vec!["block".to_string()];

        let mut engine = engine_with(AugMethod::Background, dir.path(), &ann);
        engine.cfg.aug.background_scope = BackgroundScope::PerEpisode;
        let out = engine.gen_video_ctx(&refs, &names, "ep").unwrap();

        // The scene backdrop is mask-free, so outside every foreground
        // all output frames agree pixel for pixel.
        let fgs: Vec<BinaryMask> = ann
            .iter()
            .map(|a| union(&[&a.robot_mask().unwrap(), &a.object]).unwrap())
            .collect();
        for y in 0..20u32 {
            for x in 0..24u32 {
                if fgs.iter().all(|f| !f.get(x, y)) {
                    assert_eq!(out[0].frame.get(x, y), out[1].frame.get(x, y));
                    assert_eq!(out[0].frame.get(x, y), out[2].frame.get(x, y));
                }
            }
        }
        assert_eq!(out[0].provenance.prompt, out[2].provenance.prompt);

        // Per-frame scope diverges somewhere in the background.
        engine.cfg.aug.background_scope = BackgroundScope::PerFrame;
        let per_frame = engine.gen_video_ctx(&refs, &names, "ep").unwrap();
        let differs = (0..20u32).any(|y| {
            (0..24u32).any(|x| {
                fgs.iter().all(|f| !f.get(x, y))
                    && per_frame[0].frame.get(x, y) != per_frame[1].frame.get(x, y)
            })
        });
        assert!(differs);
    }

    #[test]
    fn empty_video_is_empty() {
        let (ann, _frames) = fixture(1);
        let engine = engine_with(AugMethod::Texture, tempfile::tempdir().unwrap().path(), &ann);
        assert!(engine.gen_video(&[], &[]).unwrap().is_empty());
    }

    fn disk_dataset(dir: &Path, ann: &[AnnotatedFrame]) -> DemoDataset {
        let mut eps = Vec::new();
        for (i, chunk) in ann.chunks(3).enumerate() {
            let frames: Vec<Frame> = chunk.iter().map(|a| a.image.clone()).collect();
            let mut meta = Metadata::new("pick up the block", vec!["block".to_string()]);
            meta.extra.insert(
                "note".to_string(),
                serde_json::Value::String(format!("episode {i}")),
            );
            eps.push(Episode::new(format!("ep{i:03}"), frames, meta).unwrap());
        }
        let ds = DemoDataset::new(eps).unwrap();
        save_dataset(&ds, dir, false).unwrap();
        load_dataset(dir).unwrap()
    }

    #[test]
    fn augment_dataset_is_deterministic_and_preserves_meta() {
        let dir = tempfile::tempdir().unwrap();
        let (ann, _frames) = fixture(6);
        let ds = disk_dataset(&dir.path().join("in"), &ann);

        let run = |out: &Path| {
            let mut engine = engine_with(AugMethod::Texture, dir.path(), &ann);
            engine.cfg.output = Some(out.to_path_buf());
            engine.augment_dataset(&ds).unwrap()
        };
        let out1 = run(&dir.path().join("out1"));
        let _ = run(&dir.path().join("out2"));
        assert_eq!(
            hash_tree(dir.path().join("out1")).unwrap(),
            hash_tree(dir.path().join("out2")).unwrap()
        );

        assert_eq!(out1.len(), 2);
        for ep in out1.episodes() {
            let got = std::fs::read(ep.source_dir().unwrap().join("meta.json")).unwrap();
            let want = std::fs::read(
                dir.path()
                    .join("in/episodes")
                    .join(ep.id())
                    .join("meta.json"),
            )
            .unwrap();
            assert_eq!(got, want);
            assert!(ep.source_dir().unwrap().join("provenance.json").is_file());
        }
        assert!(!dir.path().join("out1/.staging").exists());
    }

    #[test]
    fn augment_dataset_skips_existing_episodes() {
        let dir = tempfile::tempdir().unwrap();
        let (ann, _frames) = fixture(6);
        let ds = disk_dataset(&dir.path().join("in"), &ann);

        let out = dir.path().join("out");
        let done = out.join("episodes/ep000");
        std::fs::create_dir_all(&done).unwrap();
        std::fs::write(done.join("marker"), b"keep me").unwrap();

        let mut engine = engine_with(AugMethod::None, dir.path(), &ann);
        engine.cfg.output = Some(out.clone());
        // ep000 is skipped (stale marker untouched), ep001 is written.
        let err = engine.augment_dataset(&ds);
        // Loading fails because the skipped ep000 has no frames, but
        // the marker proves the existing episode was not overwritten.
        assert!(err.is_err());
        assert_eq!(std::fs::read(done.join("marker")).unwrap(), b"keep me");
        assert!(out.join("episodes/ep001/frames/000000.png").is_file());
    }

    #[test]
    fn method_none_round_trips_dataset_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (ann, _frames) = fixture(3);
        let ds = disk_dataset(&dir.path().join("in"), &ann);

        let mut engine = engine_with(AugMethod::None, dir.path(), &ann);
        engine.cfg.output = Some(dir.path().join("out"));
        let out = engine.augment_dataset(&ds).unwrap();

        for (ep_in, ep_out) in ds.episodes().iter().zip(out.episodes()) {
            for i in 0..ep_in.len() {
                let a = std::fs::read(ep_in.source_dir().unwrap().join(format!("frames/{i:06}.png"))).unwrap();
                let b = std::fs::read(ep_out.source_dir().unwrap().join(format!("frames/{i:06}.png"))).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn scale_plan_matches_training_recipes() {
        let plan = scale_plan(50, 2, true, 7).unwrap();
        assert_eq!(plan.train_epochs, 700);
        assert_eq!(plan.episodes.len(), 100);
        assert_eq!(plan.episodes.iter().filter(|e| !e.augmented).count(), 50);
        assert_eq!(plan.episodes.iter().filter(|e| e.augmented).count(), 50);

        let plan = scale_plan(50, 1, false, 7).unwrap();
        assert_eq!(plan.train_epochs, 1000);
        assert_eq!(plan.episodes.len(), 50);
        assert!(plan.episodes.iter().all(|e| e.augmented));

        assert_eq!(scale_plan(50, 4, false, 7).unwrap().train_epochs, 400);

        let plan = scale_plan(50, 6, false, 7).unwrap();
        assert_eq!(plan.train_epochs, 300);
        assert_eq!(plan.episodes.len(), 300);
        for src in 0..50 {
            assert_eq!(
                plan.episodes.iter().filter(|e| e.source_id == src).count(),
                6
            );
        }

        // Seeds are distinct across copies and sources.
        let mut seeds: Vec<u64> = plan.episodes.iter().map(|e| e.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 300);

        // Off-recipe factor falls back to round(1000/N).
        assert_eq!(scale_plan(10, 3, false, 7).unwrap().train_epochs, 333);

        assert!(scale_plan(0, 2, false, 7).is_err());
        assert!(scale_plan(10, 0, false, 7).is_err());

        // Same inputs, same plan.
        assert_eq!(scale_plan(50, 2, true, 7).unwrap(), scale_plan(50, 2, true, 7).unwrap());
    }

    #[test]
    fn bench_reports_per_method_timing() {
        let dir = tempfile::tempdir().unwrap();
        let (ann, _frames) = fixture(12);
        let ds = disk_dataset(&dir.path().join("in"), &ann);

        // Passthrough backends over the fixture's stored masks.
        let roboseg = dir.path().join("seg");
        save_roboseg(&ann, &roboseg).unwrap();
        let mut cfg = base_cfg(AugMethod::None);
        cfg.robo_seg =
            BackendDescriptor::parse(&format!("passthrough:{}", roboseg.display())).unwrap();
        cfg.obj_seg = cfg.robo_seg.clone();
        cfg.asset_pool = Some(write_assets(dir.path()));

        let report = bench(&cfg, &ds, &[AugMethod::None, AugMethod::Texture]).unwrap();
        assert_eq!(report.frame_count, 12);
        assert_eq!(report.methods.len(), 2);
        assert_eq!(report.methods[0].method, AugMethod::None);
        assert!(report.methods.iter().all(|m| m.sec_per_frame_mean >= 0.0));

        let small = disk_dataset(&dir.path().join("small"), &ann[..3]);
        assert_eq!(bench(&cfg, &small, &[AugMethod::None]).unwrap_err().exit_code(), 2);
        assert!(bench(&cfg, &ds, &[]).is_err());
    }

    #[test]
    fn eval_seg_passthrough_is_exactly_one() {
        let dir = tempfile::tempdir().unwrap();
        let (ann, _frames) = fixture(5);
        let root = dir.path().join("seg");
        save_roboseg(&ann, &root).unwrap();

        let report = eval_seg(&BackendDescriptor::parse("passthrough").unwrap(), &root).unwrap();
        assert_eq!(report.evaluated, 5);
        assert_eq!(report.failed, 0);
        assert_eq!(report.mean, Some(1.0));
        assert!(report.per_item.iter().all(|i| i.giou == Some(1.0)));
    }

    #[test]
    fn eval_seg_chroma_scores_by_formula() {
        let dir = tempfile::tempdir().unwrap();
        // Green-screen image: robot rectangle on a keyed background.
        let rect = Rect { x0: 3, y0: 2, x1: 9, y1: 8 };
        let image = Frame::from_fn(12, 10, |x, y| {
            if rect.contains(x, y) {
                [180, 40, 40]
            } else {
                [0, 255, 0]
            }
        });
        let gt = Rect { x0: 3, y0: 2, x1: 9, y1: 5 };
        let ann = vec![AnnotatedFrame {
            name: "g0".to_string(),
            image,
            robot_main: BinaryMask::from_rect(12, 10, gt),
            robot_aux: BinaryMask::new(12, 10),
            object: BinaryMask::from_rect(12, 10, Rect { x0: 10, y0: 9, x1: 11, y1: 10 }),
            instruction: "demo".to_string(),
            descriptions: vec![],
        }];
        let root = dir.path().join("seg");
        save_roboseg(&ann, &root).unwrap();

        let report = eval_seg(&BackendDescriptor::parse("chroma").unwrap(), &root).unwrap();
        let pred = BinaryMask::from_rect(12, 10, rect);
        let want = crate::metrics::giou(&pred, &BinaryMask::from_rect(12, 10, gt)).unwrap();
        assert_eq!(report.mean, Some(want));
    }
}

//! Deterministic procedural image generator: the built-in stand-in for
//! diffusion backends, so the full pipeline runs and tests with zero
//! model dependencies.
//!
//! Output is a pure function of (kind, seed, dims, prompt, conditioning
//! digests): multi-octave value noise over a two-tone horizon gradient.
//! Only IEEE add/mul/floor arithmetic is used, so images are
//! byte-identical across platforms.

use crate::aug::{GenBackend, GenKind, GenRequest};
use crate::dataset::Frame;
use crate::error::{Error, Result};
use crate::stream::derive_u64;

pub const DEFAULT_HORIZON: f64 = 0.55;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Lattice value in [0, 1) for one integer lattice point of one octave.
fn lattice(key: u64, ix: i64, iy: i64, octave: u32) -> f64 {
    let h = splitmix64(
        key ^ (ix as u64).wrapping_mul(0x9E3779B97F4A7C15)
            ^ (iy as u64).wrapping_mul(0xC2B2AE3D27D4EB4F)
            ^ (octave as u64).wrapping_mul(0x165667B19E3779F9),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Bilinearly interpolated value noise at pixel (x, y).
fn value_noise(key: u64, x: f64, y: f64, cell: f64, octave: u32) -> f64 {
    let u = x / cell;
    let v = y / cell;
    let ix = u.floor();
    let iy = v.floor();
    let fx = smoothstep(u - ix);
    let fy = smoothstep(v - iy);
    let (ix, iy) = (ix as i64, iy as i64);
    let top = lerp(
        lattice(key, ix, iy, octave),
        lattice(key, ix + 1, iy, octave),
        fx,
    );
    let bottom = lerp(
        lattice(key, ix, iy + 1, octave),
        lattice(key, ix + 1, iy + 1, octave),
        fx,
    );
    lerp(top, bottom, fy)
}

const OCTAVE_CELLS: [f64; 4] = [16.0, 8.0, 4.0, 2.0];
const OCTAVE_WEIGHTS: [f64; 4] = [1.0, 0.5, 0.25, 0.125];

fn fbm(key: u64, x: f64, y: f64) -> f64 {
    let mut sum = 0.0;
    let mut norm = 0.0;
    for (o, (&cell, &w)) in OCTAVE_CELLS.iter().zip(&OCTAVE_WEIGHTS).enumerate() {
        sum += w * value_noise(key, x, y, cell, o as u32);
        norm += w;
    }
    sum / norm
}

/// Key-derived palette channel triple within [lo, lo+span).
fn palette(key: u64, salt: u64, lo: u32, span: u32) -> [f64; 3] {
    let h = splitmix64(key ^ salt);
    let bytes = h.to_le_bytes();
    [
        (lo + bytes[0] as u32 % span) as f64,
        (lo + bytes[1] as u32 % span) as f64,
        (lo + bytes[2] as u32 % span) as f64,
    ]
}

/// Render the scene: wall tone above the horizon, floor tone below,
/// both modulated by fractal value noise.
pub fn procedural_image(key: u64, width: u32, height: u32, horizon: f64) -> Frame {
    let wall = palette(key, 0x57A11ED0_0DD5EED5, 40, 90);
    let floor = palette(key, 0xF100_12B4_5E1E_C7ED, 120, 100);
    let band = 0.1;
    Frame::from_fn(width, height, |x, y| {
        let xf = x as f64 + 0.5;
        let yf = y as f64 + 0.5;
        let n = fbm(key, xf, yf);
        let rel = yf / height as f64;
        let s = ((rel - (horizon - band)) / (2.0 * band)).clamp(0.0, 1.0);
        let blend = smoothstep(s);
        let gain = 0.8 + 0.4 * n;
        let mut px = [0u8; 3];
        for c in 0..3 {
            let base = lerp(wall[c], floor[c], blend);
            px[c] = (base * gain + 0.5).floor().clamp(0.0, 255.0) as u8;
        }
        px
    })
}

/// The procedural generative backend. Honors the same request shape as
/// a remote diffusion server.
pub struct ProceduralGen;

impl GenBackend for ProceduralGen {
    fn generate(&self, req: &GenRequest<'_>) -> Result<Frame> {
        if let Some(image) = req.image {
            if image.dims() != (req.width, req.height) {
                return Err(Error::validation(
                    "generate request image dims disagree with width/height",
                ));
            }
        }
        if let Some(mask) = req.mask {
            if mask.dims() != (req.width, req.height) {
                return Err(Error::validation(
                    "generate request mask dims disagree with width/height",
                ));
            }
        }

        // A foreground mask conditions the horizon: backgrounds start
        // roughly where the foreground's top edge sits.
        let horizon = match req.kind {
            GenKind::Background => req
                .mask
                .and_then(|m| m.bbox())
                .map(|b| (b.y0 as f64 / req.height as f64).clamp(0.25, 0.75))
                .unwrap_or(DEFAULT_HORIZON),
            GenKind::Scene | GenKind::Inpaint => DEFAULT_HORIZON,
        };

        let seed_le = req.seed.to_le_bytes();
        let w_le = req.width.to_le_bytes();
        let h_le = req.height.to_le_bytes();
        let mut parts: Vec<&[u8]> = vec![
            req.kind.as_wire().as_bytes(),
            &seed_le,
            &w_le,
            &h_le,
            req.prompt.as_bytes(),
        ];
        let mask_digest;
        if let Some(mask) = req.mask {
            mask_digest = mask.digest();
            parts.push(&mask_digest);
        }
        let image_digest;
        if req.kind == GenKind::Inpaint {
            if let Some(image) = req.image {
                image_digest = image.digest();
                parts.push(&image_digest);
            }
        }
        let key = derive_u64("robaug.procgen.v1", &parts);
        let generated = procedural_image(key, req.width, req.height, horizon);

        // Inpainting answers with the source frame, regions regenerated.
        if req.kind == GenKind::Inpaint {
            if let (Some(src), Some(region)) = (req.image, req.mask) {
                return Ok(Frame::from_fn(req.width, req.height, |x, y| {
                    if region.get(x, y) {
                        generated.get(x, y)
                    } else {
                        src.get(x, y)
                    }
                }));
            }
        }
        Ok(generated)
    }

    fn kind(&self) -> &'static str {
        "procedural"
    }
}

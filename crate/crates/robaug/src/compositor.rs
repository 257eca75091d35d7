//! Pastes foreground pixels over a synthesized background.
//!
//! The binary path is an exact per-pixel select: pixels under the mask
//! are byte-identical to the source frame, pixels outside it are
//! byte-identical to the background. The soft path blends only where
//! the feathered alpha is fractional; alpha 1 and alpha 0 keep the
//! exactness guarantee.

use serde::{Deserialize, Serialize};

use crate::aug::AugMethod;
use crate::dataset::Frame;
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, SoftMask};

/// Foreground coverage used by the compositor.
#[derive(Debug, Clone, PartialEq)]
pub enum FgLayer {
    Binary(BinaryMask),
    Soft(SoftMask),
}

impl FgLayer {
    pub fn dims(&self) -> (u32, u32) {
        match self {
            FgLayer::Binary(m) => m.dims(),
            FgLayer::Soft(m) => m.dims(),
        }
    }
}

/// Grow the robot+object mask by `dilate_radius` to keep a safety
/// margin, then feather the boundary. `feather_radius` 0 keeps the
/// layer binary, preserving every pixel exactly.
pub fn prepare_foreground(mask: &BinaryMask, dilate_radius: u32, feather_radius: u32) -> FgLayer {
    let grown = mask.dilate(dilate_radius);
    if feather_radius == 0 {
        FgLayer::Binary(grown)
    } else {
        FgLayer::Soft(grown.feather(feather_radius))
    }
}

/// Blend `frame` over `background` under the layer. Blended channels
/// are computed in f64 and rounded half-up.
pub fn composite(frame: &Frame, layer: &FgLayer, background: &Frame) -> Result<Frame> {
    if layer.dims() != frame.dims() {
        return Err(Error::validation(format!(
            "foreground layer is {}x{}, frame is {}x{}",
            layer.dims().0,
            layer.dims().1,
            frame.width(),
            frame.height()
        )));
    }
    if background.dims() != frame.dims() {
        return Err(Error::validation(format!(
            "background is {}x{}, frame is {}x{}",
            background.width(),
            background.height(),
            frame.width(),
            frame.height()
        )));
    }

    let out = match layer {
        FgLayer::Binary(mask) => Frame::from_fn(frame.width(), frame.height(), |x, y| {
            if mask.get(x, y) {
                frame.get(x, y)
            } else {
                background.get(x, y)
            }
        }),
        FgLayer::Soft(alpha) => Frame::from_fn(frame.width(), frame.height(), |x, y| {
            let a = alpha.get(x, y) as f64;
            if a >= 1.0 {
                return frame.get(x, y);
            }
            if a <= 0.0 {
                return background.get(x, y);
            }
            let f = frame.get(x, y);
            let b = background.get(x, y);
            let mut px = [0u8; 3];
            for c in 0..3 {
                let v = a * f[c] as f64 + (1.0 - a) * b[c] as f64;
                px[c] = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
            }
            px
        }),
    };
    Ok(out)
}

/// Composite a whole episode; inputs must be index-aligned.
pub fn composite_episode(
    frames: &[Frame],
    layers: &[FgLayer],
    backgrounds: &[Frame],
) -> Result<Vec<Frame>> {
    if frames.len() != layers.len() || frames.len() != backgrounds.len() {
        return Err(Error::validation(format!(
            "composite inputs disagree: {} frames, {} layers, {} backgrounds",
            frames.len(),
            layers.len(),
            backgrounds.len()
        )));
    }
    frames
        .iter()
        .zip(layers)
        .zip(backgrounds)
        .map(|((f, l), b)| composite(f, l, b))
        .collect()
}

/// How one augmented frame was produced; serialized next to outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: AugMethod,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub backend: String,
}

/// An output frame plus the record of how it was made.
#[derive(Debug, Clone)]
pub struct AugFrame {
    pub frame: Frame,
    pub provenance: Provenance,
}

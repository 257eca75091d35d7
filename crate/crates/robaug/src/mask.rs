//! Binary and soft (alpha) masks plus the morphology used to prepare
//! foreground layers: union, square dilation, clipped erosion, and
//! box-filter feathering.
//!
//! Coordinates are (x, y) with the origin at the top-left corner; bits
//! are stored row-major. Rectangles are inclusive-exclusive.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Axis-aligned rectangle, `x0 <= x < x1`, `y0 <= y < y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl Rect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    /// Smallest rectangle covering both.
    pub fn join(&self, other: &Rect) -> Rect {
        Rect {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }
}

/// Per-pixel binary mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    /// All-zero mask. Dimensions must be nonzero.
    pub fn new(width: u32, height: u32) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be nonzero");
        BinaryMask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn filled(width: u32, height: u32) -> Self {
        let mut m = BinaryMask::new(width, height);
        m.bits.fill(true);
        m
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = BinaryMask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.bits[(y * width + x) as usize] = f(x, y);
            }
        }
        m
    }

    /// Mask that is set exactly inside `rect`.
    pub fn from_rect(width: u32, height: u32, rect: Rect) -> Self {
        BinaryMask::from_fn(width, height, |x, y| rect.contains(x, y))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[(y * self.width + x) as usize] = v;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Number of set pixels.
    pub fn count_set(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    /// Tight bounding box of the set pixels, `None` when empty.
    pub fn bbox(&self) -> Option<Rect> {
        let mut x0 = self.width;
        let mut y0 = self.height;
        let mut x1 = 0u32;
        let mut y1 = 0u32;
        let mut any = false;
        for y in 0..self.height {
            let row = &self.bits[(y * self.width) as usize..((y + 1) * self.width) as usize];
            if let Some(first) = row.iter().position(|&b| b) {
                let last = row.iter().rposition(|&b| b).unwrap();
                any = true;
                x0 = x0.min(first as u32);
                x1 = x1.max(last as u32 + 1);
                if y < y0 {
                    y0 = y;
                }
                y1 = y + 1;
            }
        }
        any.then_some(Rect { x0, y0, x1, y1 })
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        check_dims(self, other)?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a && b)
                .collect(),
        })
    }

    /// Grow by `radius` pixels: output is set wherever any input pixel
    /// lies within Chebyshev distance `radius`.
    pub fn dilate(&self, radius: u32) -> BinaryMask {
        if radius == 0 {
            return self.clone();
        }
        let h = window_pass(self, radius, true, Axis::X);
        window_pass(&h, radius, true, Axis::Y)
    }

    /// Shrink by `radius` pixels: output is set only where every input
    /// pixel within Chebyshev distance `radius` is set. Neighborhoods
    /// are clipped at the image border, so a filled image stays filled.
    pub fn erode(&self, radius: u32) -> BinaryMask {
        if radius == 0 {
            return self.clone();
        }
        let h = window_pass(self, radius, false, Axis::X);
        window_pass(&h, radius, false, Axis::Y)
    }

    /// Soft edge falloff: each output alpha is the fraction of set
    /// pixels inside the `(2r+1)^2` window clipped to the image.
    ///
    /// Alpha is 1 exactly on `erode(radius)`, 0 exactly outside
    /// `dilate(radius)`, and interpolates in between.
    pub fn feather(&self, radius: u32) -> SoftMask {
        let w = self.width as usize;
        let h = self.height as usize;
        // Integral image: sums[y][x] = set count in [0, x) x [0, y).
        let mut sums = vec![0u64; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u64;
            for x in 0..w {
                row += self.bits[y * w + x] as u64;
                sums[(y + 1) * (w + 1) + (x + 1)] = sums[y * (w + 1) + (x + 1)] + row;
            }
        }
        let r = radius as usize;
        let rect_sum = |x0: usize, y0: usize, x1: usize, y1: usize| -> u64 {
            sums[y1 * (w + 1) + x1] + sums[y0 * (w + 1) + x0]
                - sums[y0 * (w + 1) + x1]
                - sums[y1 * (w + 1) + x0]
        };
        let mut alpha = vec![0f32; w * h];
        for y in 0..h {
            let y0 = y.saturating_sub(r);
            let y1 = (y + r + 1).min(h);
            for x in 0..w {
                let x0 = x.saturating_sub(r);
                let x1 = (x + r + 1).min(w);
                let set = rect_sum(x0, y0, x1, y1);
                let count = ((x1 - x0) * (y1 - y0)) as u64;
                alpha[y * w + x] = (set as f64 / count as f64) as f32;
            }
        }
        SoftMask {
            width: self.width,
            height: self.height,
            alpha,
        }
    }

    /// SHA-256 over dimensions and pixel bits.
    pub fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(b"robaug.mask.v1");
        hasher.update(self.width.to_le_bytes());
        hasher.update(self.height.to_le_bytes());
        let mut bytes = vec![0u8; self.bits.len()];
        for (dst, &b) in bytes.iter_mut().zip(&self.bits) {
            *dst = b as u8;
        }
        hasher.update(&bytes);
        hasher.finalize().into()
    }

    pub fn digest_hex(&self) -> String {
        hex(&self.digest())
    }

    /// Encode as a single-channel 8-bit PNG, set pixels as 255.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut img = image::GrayImage::new(self.width, self.height);
        for (i, p) in img.pixels_mut().enumerate() {
            p.0[0] = if self.bits[i] { 255 } else { 0 };
        }
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| Error::image("<memory>", e))?;
        Ok(out.into_inner())
    }

    /// Decode from PNG bytes. The raster must be single-channel 8-bit;
    /// pixels with value >= 128 are set.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<BinaryMask> {
        Self::decode(bytes, Path::new("<memory>"))
    }

    fn decode(bytes: &[u8], path: &Path) -> Result<BinaryMask> {
        let img = image::load_from_memory(bytes).map_err(|e| Error::image(path, e))?;
        let luma = match img {
            image::DynamicImage::ImageLuma8(l) => l,
            other => {
                return Err(Error::image(
                    path,
                    format!(
                        "mask must be single-channel 8-bit, got {:?}",
                        other.color()
                    ),
                ))
            }
        };
        Ok(BinaryMask {
            width: luma.width(),
            height: luma.height(),
            bits: luma.pixels().map(|p| p.0[0] >= 128).collect(),
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_png_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<BinaryMask> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

enum Axis {
    X,
    Y,
}

/// One separable pass of dilation (`any` = true) or clipped erosion
/// (`any` = false) along a single axis, via prefix sums.
fn window_pass(mask: &BinaryMask, radius: u32, any: bool, axis: Axis) -> BinaryMask {
    let w = mask.width as usize;
    let h = mask.height as usize;
    let r = radius as usize;
    let mut out = BinaryMask::new(mask.width, mask.height);
    let (lines, len) = match axis {
        Axis::X => (h, w),
        Axis::Y => (w, h),
    };
    let idx = |line: usize, i: usize| match axis {
        Axis::X => line * w + i,
        Axis::Y => i * w + line,
    };
    let mut prefix = vec![0u32; len + 1];
    for line in 0..lines {
        for i in 0..len {
            prefix[i + 1] = prefix[i] + mask.bits[idx(line, i)] as u32;
        }
        for i in 0..len {
            let lo = i.saturating_sub(r);
            let hi = (i + r + 1).min(len);
            let count = prefix[hi] - prefix[lo];
            out.bits[idx(line, i)] = if any {
                count > 0
            } else {
                count == (hi - lo) as u32
            };
        }
    }
    out
}

/// Union of one or more masks of identical dimensions.
pub fn union(masks: &[&BinaryMask]) -> Result<BinaryMask> {
    let first = masks
        .first()
        .ok_or_else(|| Error::validation("union of zero masks"))?;
    let mut out = (*first).clone();
    for m in &masks[1..] {
        check_dims(first, m)?;
        for (dst, &b) in out.bits.iter_mut().zip(&m.bits) {
            *dst = *dst || b;
        }
    }
    Ok(out)
}

pub(crate) fn check_dims(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::validation(format!(
            "mask dimension mismatch: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Per-pixel alpha in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    width: u32,
    height: u32,
    alpha: Vec<f32>,
}

impl SoftMask {
    pub fn from_binary(mask: &BinaryMask) -> SoftMask {
        SoftMask {
            width: mask.width,
            height: mask.height,
            alpha: mask.bits.iter().map(|&b| b as u8 as f32).collect(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.alpha[(y * self.width + x) as usize]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.alpha
    }

    /// Binary mask of pixels with alpha >= `t`.
    pub fn threshold(&self, t: f32) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.alpha.iter().map(|&a| a >= t).collect(),
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(w: u32, h: u32, x: u32, y: u32) -> BinaryMask {
        let mut m = BinaryMask::new(w, h);
        m.set(x, y, true);
        m
    }

    #[test]
    fn bbox_of_rect_mask() {
        let r = Rect {
            x0: 1,
            y0: 2,
            x1: 4,
            y1: 5,
        };
        let m = BinaryMask::from_rect(8, 8, r);
        assert_eq!(m.bbox(), Some(r));
        assert_eq!(m.count_set(), 9);
        assert!(BinaryMask::new(3, 3).bbox().is_none());
    }

    #[test]
    fn dilate_single_pixel() {
        let m = single(5, 5, 2, 2);
        let d = m.dilate(1);
        assert_eq!(d.count_set(), 9);
        assert_eq!(
            d.bbox(),
            Some(Rect {
                x0: 1,
                y0: 1,
                x1: 4,
                y1: 4
            })
        );
        assert_eq!(m.dilate(0), m);
    }

    #[test]
    fn dilate_clips_at_border() {
        let m = single(4, 4, 0, 0);
        let d = m.dilate(2);
        assert_eq!(
            d.bbox(),
            Some(Rect {
                x0: 0,
                y0: 0,
                x1: 3,
                y1: 3
            })
        );
    }

    #[test]
    fn erode_block() {
        let m = BinaryMask::from_rect(
            5,
            5,
            Rect {
                x0: 1,
                y0: 1,
                x1: 4,
                y1: 4,
            },
        );
        let e = m.erode(1);
        assert_eq!(e.count_set(), 1);
        assert!(e.get(2, 2));
    }

    #[test]
    fn erode_is_clipped_at_border() {
        // A filled image has no unset out-of-bounds neighbors to eat it.
        let m = BinaryMask::filled(4, 4);
        assert_eq!(m.erode(3), m);
    }

    #[test]
    fn feather_values() {
        let m = single(5, 5, 2, 2);
        let f = m.feather(1);
        assert!((f.get(2, 2) - 1.0 / 9.0).abs() < 1e-6);
        assert_eq!(f.get(0, 0), 0.0);
        assert!((f.get(1, 1) - 1.0 / 9.0).abs() < 1e-6);
        assert_eq!(f.get(4, 4), 0.0);

        let full = BinaryMask::filled(5, 5);
        let f = full.feather(2);
        assert!(f.as_slice().iter().all(|&a| a == 1.0));
    }

    #[test]
    fn union_and_dims() {
        let a = single(4, 4, 0, 0);
        let b = single(4, 4, 3, 3);
        let u = union(&[&a, &b]).unwrap();
        assert_eq!(u.count_set(), 2);
        assert!(u.get(0, 0) && u.get(3, 3));

        let c = BinaryMask::new(5, 4);
        let err = union(&[&a, &c]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn png_round_trip_and_threshold() {
        let m = BinaryMask::from_fn(9, 7, |x, y| (x * 31 + y * 17) % 3 == 0);
        let bytes = m.to_png_bytes().unwrap();
        assert_eq!(BinaryMask::from_png_bytes(&bytes).unwrap(), m);

        // Stored values are exactly 0 or 255.
        let img = image::load_from_memory(&bytes).unwrap().to_luma8();
        assert!(img.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));

        // Decode threshold sits at 128.
        let mut gray = image::GrayImage::new(2, 1);
        gray.put_pixel(0, 0, image::Luma([127]));
        gray.put_pixel(1, 0, image::Luma([128]));
        let mut buf = std::io::Cursor::new(Vec::new());
        gray.write_to(&mut buf, image::ImageFormat::Png).unwrap();
        let m = BinaryMask::from_png_bytes(&buf.into_inner()).unwrap();
        assert!(!m.get(0, 0));
        assert!(m.get(1, 0));
    }

    #[test]
    fn multi_channel_mask_is_rejected() {
        let rgb = image::RgbImage::from_pixel(2, 2, image::Rgb([255, 255, 255]));
        let mut buf = std::io::Cursor::new(Vec::new());
        rgb.write_to(&mut buf, image::ImageFormat::Png).unwrap();
        let err = BinaryMask::from_png_bytes(&buf.into_inner()).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn digest_is_stable_and_distinct() {
        let a = single(4, 4, 1, 1);
        let b = single(4, 4, 1, 2);
        assert_eq!(a.digest(), a.clone().digest());
        assert_ne!(a.digest(), b.digest());
        assert_ne!(BinaryMask::new(2, 8).digest(), BinaryMask::new(8, 2).digest());
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1u32..12, 1u32..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), (w * h) as usize).prop_map(move |bits| {
                let mut m = BinaryMask::new(w, h);
                for (i, b) in bits.into_iter().enumerate() {
                    m.bits[i] = b;
                }
                m
            })
        })
    }

    proptest! {
        #[test]
        fn dilate_grows_erode_shrinks(m in arb_mask(), r in 0u32..4) {
            let d = m.dilate(r);
            let e = m.erode(r);
            for y in 0..m.height() {
                for x in 0..m.width() {
                    prop_assert!(!m.get(x, y) || d.get(x, y));
                    prop_assert!(!e.get(x, y) || m.get(x, y));
                }
            }
        }

        #[test]
        fn feather_bounds_match_morphology(m in arb_mask(), r in 0u32..4) {
            let f = m.feather(r);
            let d = m.dilate(r);
            let e = m.erode(r);
            for y in 0..m.height() {
                for x in 0..m.width() {
                    let a = f.get(x, y);
                    prop_assert!((0.0..=1.0).contains(&a));
                    if !d.get(x, y) {
                        prop_assert_eq!(a, 0.0);
                    }
                    if e.get(x, y) {
                        prop_assert_eq!(a, 1.0);
                    }
                    if a == 0.0 {
                        prop_assert!(!d.get(x, y));
                    }
                }
            }
        }

        #[test]
        fn png_round_trip(m in arb_mask()) {
            let bytes = m.to_png_bytes().unwrap();
            prop_assert_eq!(BinaryMask::from_png_bytes(&bytes).unwrap(), m);
        }
    }
}

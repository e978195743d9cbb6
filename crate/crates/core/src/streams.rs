//! Information streams extracted from an image.
//!
//! | stream       | dim         | content                                   |
//! |--------------|-------------|-------------------------------------------|
//! | `rgb`        | 3·S·S       | area-averaged S×S thumbnail in [0, 1]     |
//! | `color_hist` | 512         | joint 8×8×8 RGB histogram, r-major index  |
//! | `edge_hist`  | 64          | Sobel gradient-magnitude histogram        |
//!
//! Histograms are L1-normalized unless raw counts are requested.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgio::Image;

pub const COLOR_BINS: usize = 512;
pub const EDGE_BINS: usize = 64;
/// Largest Sobel magnitude kept; 4 · 255.
pub const EDGE_MAX: f64 = 1020.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamId {
    Rgb,
    ColorHist,
    EdgeHist,
}

impl StreamId {
    pub fn code(self) -> u32 {
        match self {
            StreamId::Rgb => 0,
            StreamId::ColorHist => 1,
            StreamId::EdgeHist => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(StreamId::Rgb),
            1 => Some(StreamId::ColorHist),
            2 => Some(StreamId::EdgeHist),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StreamId::Rgb => "rgb",
            StreamId::ColorHist => "color_hist",
            StreamId::EdgeHist => "edge_hist",
        }
    }

    pub fn dim(self, thumb_side: usize) -> usize {
        match self {
            StreamId::Rgb => 3 * thumb_side * thumb_side,
            StreamId::ColorHist => COLOR_BINS,
            StreamId::EdgeHist => EDGE_BINS,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StreamError {
    #[error("image has zero area")]
    EmptyImage,
    #[error("edge histogram needs at least 3x3 pixels, got {width}x{height}")]
    TooSmallForSobel { width: usize, height: usize },
    #[error("thumbnail side must be at least 1")]
    ZeroThumb,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamVector {
    pub id: StreamId,
    pub values: Vec<f64>,
}

impl StreamVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Flat joint-bin index of a pixel: `(r/32)·64 + (g/32)·8 + b/32`.
#[inline]
pub fn color_bin(p: [u8; 3]) -> usize {
    ((p[0] >> 5) as usize) * 64 + ((p[1] >> 5) as usize) * 8 + (p[2] >> 5) as usize
}

pub fn color_histogram(image: &Image, normalize: bool) -> Result<StreamVector, StreamError> {
    let n = image.pixels().len();
    if n == 0 {
        return Err(StreamError::EmptyImage);
    }
    let mut counts = [0u32; COLOR_BINS];
    for &p in image.pixels() {
        counts[color_bin(p)] += 1;
    }
    let scale = if normalize { 1.0 / n as f64 } else { 1.0 };
    Ok(StreamVector {
        id: StreamId::ColorHist,
        values: counts.iter().map(|&c| c as f64 * scale).collect(),
    })
}

/// BT.601 luminance `0.299r + 0.587g + 0.114b`, rounded half up, in
/// exact integer arithmetic.
#[inline]
pub fn luminance(p: [u8; 3]) -> i32 {
    (299 * p[0] as i32 + 587 * p[1] as i32 + 114 * p[2] as i32 + 500) / 1000
}

#[inline]
pub fn edge_bin(magnitude: f64) -> usize {
    let m = magnitude.clamp(0.0, EDGE_MAX);
    ((m / (EDGE_MAX / EDGE_BINS as f64)) as usize).min(EDGE_BINS - 1)
}

pub fn edge_histogram(image: &Image, normalize: bool) -> Result<StreamVector, StreamError> {
    let (w, h) = (image.width(), image.height());
    if w < 3 || h < 3 {
        return Err(StreamError::TooSmallForSobel { width: w, height: h });
    }
    let lum: Vec<i32> = image.pixels().iter().map(|&p| luminance(p)).collect();
    let at = |x: usize, y: usize| lum[y * w + x];
    let mut counts = [0u32; EDGE_BINS];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2 * at(x, y - 1) + at(x + 1, y - 1));
            let m = ((gx * gx + gy * gy) as f64).sqrt();
            counts[edge_bin(m)] += 1;
        }
    }
    let interior = ((w - 2) * (h - 2)) as f64;
    let scale = if normalize { 1.0 / interior } else { 1.0 };
    Ok(StreamVector {
        id: StreamId::EdgeHist,
        values: counts.iter().map(|&c| c as f64 * scale).collect(),
    })
}

/// Overlap weights of source cells `0..src` with `dst` equal output cells.
fn box_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let (lo, hi) = (o as f64 * ratio, (o + 1) as f64 * ratio);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|i| {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (overlap > 0.0).then_some((i, overlap / ratio))
                })
                .collect()
        })
        .collect()
}

/// Area-average resample to `thumb_side`², channels scaled to [0, 1],
/// flattened `r, g, b` per pixel in row-major order.
pub fn rgb_stream(image: &Image, thumb_side: usize) -> Result<StreamVector, StreamError> {
    if thumb_side == 0 {
        return Err(StreamError::ZeroThumb);
    }
    if image.pixels().is_empty() {
        return Err(StreamError::EmptyImage);
    }
    let wx = box_weights(image.width(), thumb_side);
    let wy = box_weights(image.height(), thumb_side);
    let mut values = Vec::with_capacity(3 * thumb_side * thumb_side);
    for row in &wy {
        for col in &wx {
            let mut acc = [0.0f64; 3];
            for &(y, fy) in row {
                for &(x, fx) in col {
                    let p = image.get(x, y);
                    for c in 0..3 {
                        acc[c] += fy * fx * p[c] as f64;
                    }
                }
            }
            values.extend(acc.iter().map(|v| v / 255.0));
        }
    }
    Ok(StreamVector { id: StreamId::Rgb, values })
}

/// The stream layout a model consumes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamSpec {
    pub streams: Vec<StreamId>,
    pub thumb_side: usize,
}

impl StreamSpec {
    pub fn dims(&self) -> Vec<usize> {
        self.streams.iter().map(|s| s.dim(self.thumb_side)).collect()
    }

    /// Extracts every configured stream, histograms normalized.
    pub fn extract(&self, image: &Image) -> Result<Vec<StreamVector>, StreamError> {
        self.streams
            .iter()
            .map(|id| match id {
                StreamId::Rgb => rgb_stream(image, self.thumb_side),
                StreamId::ColorHist => color_histogram(image, true),
                StreamId::EdgeHist => edge_histogram(image, true),
            })
            .collect()
    }
}

/// Little-endian feature cache header magic, `"1FFC"` on disk.
pub const FEATURE_CACHE_MAGIC: u32 = 0x4346_4631;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("bad feature cache magic {0:#010x}")]
    BadMagic(u32),
    #[error("unknown stream id {0}")]
    UnknownStream(u32),
    #[error("vectors must share one stream and dimension")]
    Inconsistent,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Writes `u32 magic, u32 stream_id, u32 count, u32 dim` followed by
/// `count × dim` little-endian f32 values.
pub fn write_feature_cache(path: &Path, id: StreamId, vectors: &[StreamVector]) -> Result<(), CacheError> {
    let dim = vectors.first().map_or(0, StreamVector::dim);
    if vectors.iter().any(|v| v.id != id || v.dim() != dim) {
        return Err(CacheError::Inconsistent);
    }
    let mut out = Vec::with_capacity(16 + vectors.len() * dim * 4);
    for word in [FEATURE_CACHE_MAGIC, id.code(), vectors.len() as u32, dim as u32] {
        out.extend_from_slice(&word.to_le_bytes());
    }
    for v in vectors {
        for &x in &v.values {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn read_feature_cache(path: &Path) -> Result<Vec<StreamVector>, CacheError> {
    let mut f = fs::File::open(path)?;
    let mut word = [0u8; 4];
    let mut next = |f: &mut fs::File| -> io::Result<u32> {
        f.read_exact(&mut word)?;
        Ok(u32::from_le_bytes(word))
    };
    let magic = next(&mut f)?;
    if magic != FEATURE_CACHE_MAGIC {
        return Err(CacheError::BadMagic(magic));
    }
    let code = next(&mut f)?;
    let id = StreamId::from_code(code).ok_or(CacheError::UnknownStream(code))?;
    let count = next(&mut f)? as usize;
    let dim = next(&mut f)? as usize;
    let mut body = vec![0u8; count * dim * 4];
    f.read_exact(&mut body)?;
    let floats: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(floats
        .chunks(dim.max(1))
        .take(count)
        .map(|c| StreamVector { id, values: c.to_vec() })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_image(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Image::new(w, h, (0..w * h).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn black_image_histogram() {
        let img = Image::filled(4, 4, [0, 0, 0]);
        let raw = color_histogram(&img, false).unwrap();
        assert_eq!(raw.dim(), 512);
        assert_eq!(raw.values[0], 16.0);
        assert!(raw.values[1..].iter().all(|&v| v == 0.0));
        assert_eq!(color_histogram(&img, true).unwrap().values[0], 1.0);
    }

    #[test]
    fn white_pixel_goes_to_last_bin() {
        let img = Image::filled(1, 1, [255, 255, 255]);
        let h = color_histogram(&img, false).unwrap();
        assert_eq!(h.values[7 * 64 + 7 * 8 + 7], 1.0);
        assert_eq!(h.values.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn constant_image_has_no_edges() {
        let img = Image::filled(7, 5, [90, 30, 200]);
        let h = edge_histogram(&img, false).unwrap();
        assert_eq!(h.values[0], 15.0);
        assert_eq!(h.values.iter().sum::<f64>(), 15.0);
        assert_eq!(edge_histogram(&img.rotate90(), false).unwrap(), h);
    }

    #[test]
    fn vertical_step_edge() {
        let mut img = Image::filled(8, 8, [0, 0, 0]);
        for y in 0..8 {
            for x in 4..8 {
                img.set(x, y, [255, 255, 255]);
            }
        }
        let h = edge_histogram(&img, false).unwrap();
        // columns 3 and 4 of the 6 interior rows see Gx = 1020
        assert_eq!(h.values[63], 12.0);
        assert_eq!(h.values[0], 24.0);
        assert_eq!(h.values.iter().sum::<f64>(), 36.0);
    }

    #[test]
    fn sobel_needs_three_pixels() {
        assert_eq!(
            edge_histogram(&Image::filled(2, 5, [0; 3]), true),
            Err(StreamError::TooSmallForSobel { width: 2, height: 5 })
        );
        assert_eq!(color_histogram(&Image::filled(0, 0, [0; 3]), true), Err(StreamError::EmptyImage));
    }

    #[test]
    fn rgb_identity_resample() {
        let img = Image::new(2, 1, vec![[255, 0, 0], [0, 255, 51]]).unwrap();
        let s = rgb_stream(&img, 2).unwrap();
        // 2x1 into 2x2 duplicates the row
        assert_eq!(&s.values[..6], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.2]);
        let one = rgb_stream(&Image::filled(3, 3, [255, 0, 0]), 3).unwrap();
        assert_eq!(&one.values[..3], &[1.0, 0.0, 0.0]);
        assert_eq!(one.dim(), 27);
    }

    #[test]
    fn rgb_gray_average() {
        let s = rgb_stream(&Image::filled(2, 2, [128; 3]), 1).unwrap();
        for v in &s.values {
            assert!((v - 0.50196).abs() < 1e-5);
        }
    }

    #[test]
    fn rgb_checkerboard_average() {
        let mut img = Image::filled(4, 4, [0; 3]);
        for y in 0..4 {
            for x in 0..4 {
                if (x + y) % 2 == 0 {
                    img.set(x, y, [255; 3]);
                }
            }
        }
        let s = rgb_stream(&img, 2).unwrap();
        assert_eq!(s.dim(), 12);
        assert!(s.values.iter().all(|&v| (v - 0.5).abs() < 1e-12));
        assert_eq!(rgb_stream(&img, 0), Err(StreamError::ZeroThumb));
    }

    #[test]
    fn feature_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.bin");
        let vs: Vec<_> = (0..3)
            .map(|s| color_histogram(&random_image(s, 8, 8), true).unwrap())
            .collect();
        write_feature_cache(&path, StreamId::ColorHist, &vs).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], &FEATURE_CACHE_MAGIC.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 3 * 512 * 4);
        let back = read_feature_cache(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in vs.iter().zip(&back) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        assert!(matches!(
            write_feature_cache(&path, StreamId::EdgeHist, &vs),
            Err(CacheError::Inconsistent)
        ));
    }

    proptest! {
        #[test]
        fn histograms_conserve_mass_and_ignore_position(seed in any::<u64>(), w in 3usize..12, h in 3usize..12) {
            let img = random_image(seed, w, h);
            let raw = color_histogram(&img, false).unwrap();
            prop_assert_eq!(raw.values.iter().sum::<f64>(), (w * h) as f64);
            let norm = color_histogram(&img, true).unwrap();
            prop_assert!((norm.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);

            let mut shuffled = img.clone();
            shuffled.pixels_mut().reverse();
            prop_assert_eq!(color_histogram(&shuffled, false).unwrap(), raw);
            prop_assert_eq!(color_histogram(&img.flip_horizontal(), false).unwrap(), color_histogram(&img, false).unwrap());

            let e = edge_histogram(&img, false).unwrap();
            prop_assert_eq!(e.values.iter().sum::<f64>(), ((w - 2) * (h - 2)) as f64);
            let en = edge_histogram(&img, true).unwrap();
            prop_assert!((en.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(en.values.iter().all(|&v| v >= 0.0));
        }
    }
}

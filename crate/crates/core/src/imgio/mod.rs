//! Images, PPM files, synthetic pill datasets and task partitioning.

mod dataset;
mod ppm;
mod synth;
mod tasks;

pub use dataset::{load_dataset, write_dataset, DatasetError, MANIFEST_FILE};
pub use ppm::{decode_ppm, encode_ppm, load_ppm, save_ppm, PpmError};
pub use synth::{
    generate_dataset, ClassMeta, GeneratedDataset, GeneratorSpec, Imprint, PaletteColor, Shape,
    SynthError, PALETTE,
};
pub use tasks::{split_tasks, Task, TaskError, TaskSequence};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("pixel buffer holds {got} pixels, expected {width}x{height}")]
    SizeMismatch { width: usize, height: usize, got: usize },
}

/// A row-major RGB raster with 8-bit channels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self, ImageError> {
        if pixels.len() != width * height {
            return Err(ImageError::SizeMismatch { width, height, got: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self { width, height, pixels: vec![rgb; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [[u8; 3]] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }

    /// Mirror about the vertical axis.
    pub fn flip_horizontal(&self) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks(self.width.max(1)) {
            pixels.extend(row.iter().rev());
        }
        Self { width: self.width, height: self.height, pixels }
    }

    /// Rotate 90 degrees clockwise.
    pub fn rotate90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let mut out = Self::filled(h, w, [0; 3]);
        for y in 0..h {
            for x in 0..w {
                out.set(h - 1 - y, x, self.get(x, y));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One image with its label. `id` is the sample's row in the dataset
/// manifest and is what exemplar manifests refer to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSample {
    pub id: usize,
    pub image: Image,
    pub class_id: u32,
    pub split: Split,
}

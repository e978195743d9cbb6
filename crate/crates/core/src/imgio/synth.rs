//! Synthetic pill-like images.
//!
//! A class is a (shape, base color, imprint) triple. Classes `2k` and `2k + 1`
//! share shape and imprint and differ only in base color, so roughly half of
//! all classes have a color-only twin.

use std::f64::consts::PI;

use rand::Rng as _;
use thiserror::Error;

use super::{Image, LabeledSample, Split};
use crate::rng::{seeded, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    Circle,
    Capsule,
    Oblong,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Imprint {
    None,
    Bar,
    Dot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PaletteColor {
    pub name: &'static str,
    pub rgb: [u8; 3],
}

/// Consecutive entries form the color pairs used for twin classes.
pub const PALETTE: [PaletteColor; 8] = [
    PaletteColor { name: "red", rgb: [210, 40, 40] },
    PaletteColor { name: "blue", rgb: [40, 70, 210] },
    PaletteColor { name: "white", rgb: [242, 242, 236] },
    PaletteColor { name: "cream", rgb: [240, 230, 168] },
    PaletteColor { name: "yellow", rgb: [226, 204, 58] },
    PaletteColor { name: "orange", rgb: [232, 146, 52] },
    PaletteColor { name: "green", rgb: [60, 160, 80] },
    PaletteColor { name: "teal", rgb: [60, 160, 150] },
];

const COMBOS: [(Shape, Imprint); 9] = [
    (Shape::Circle, Imprint::Bar),
    (Shape::Capsule, Imprint::None),
    (Shape::Oblong, Imprint::Dot),
    (Shape::Circle, Imprint::None),
    (Shape::Capsule, Imprint::Bar),
    (Shape::Oblong, Imprint::None),
    (Shape::Circle, Imprint::Dot),
    (Shape::Capsule, Imprint::Dot),
    (Shape::Oblong, Imprint::Bar),
];

const COLOR_PAIRS: usize = PALETTE.len() / 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassMeta {
    pub class_id: u32,
    pub shape: Shape,
    pub color: PaletteColor,
    pub imprint: Imprint,
}

impl ClassMeta {
    /// Number of distinct (shape, color, imprint) triples available.
    pub const MAX_CLASSES: usize = COMBOS.len() * PALETTE.len();

    pub fn for_class(class_id: u32) -> Option<Self> {
        let c = class_id as usize;
        if c >= Self::MAX_CLASSES {
            return None;
        }
        let pair = c / 2;
        let combo = pair % COMBOS.len();
        let color_pair = (combo + pair / COMBOS.len()) % COLOR_PAIRS;
        let (shape, imprint) = COMBOS[combo];
        Some(Self { class_id, shape, color: PALETTE[2 * color_pair + c % 2], imprint })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorSpec {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub image_size: usize,
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SynthError {
    #[error("{field} must be at least {min}, got {got}")]
    TooSmall { field: &'static str, min: usize, got: usize },
    #[error("{requested} classes requested but only {available} distinct classes exist")]
    TooManyClasses { requested: usize, available: usize },
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (field, got, min) in [
            ("num_classes", self.num_classes, 1),
            ("train_per_class", self.train_per_class, 1),
            ("test_per_class", self.test_per_class, 1),
            ("image_size", self.image_size, 16),
        ] {
            if got < min {
                return Err(SynthError::TooSmall { field, min, got });
            }
        }
        if self.num_classes > ClassMeta::MAX_CLASSES {
            return Err(SynthError::TooManyClasses {
                requested: self.num_classes,
                available: ClassMeta::MAX_CLASSES,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedDataset {
    pub samples: Vec<LabeledSample>,
    pub classes: Vec<ClassMeta>,
}

/// Renders the dataset described by `spec`. Samples are ordered class by
/// class, train before test; a sample's `id` is its position in that order.
pub fn generate_dataset(spec: &GeneratorSpec) -> Result<GeneratedDataset, SynthError> {
    spec.validate()?;
    let classes: Vec<ClassMeta> = (0..spec.num_classes as u32)
        .map(|c| ClassMeta::for_class(c).expect("class count validated"))
        .collect();
    let mut jobs = Vec::with_capacity(spec.num_classes * (spec.train_per_class + spec.test_per_class));
    for meta in &classes {
        for i in 0..spec.train_per_class {
            jobs.push((*meta, Split::Train, i));
        }
        for i in 0..spec.test_per_class {
            jobs.push((*meta, Split::Test, i));
        }
    }
    let images = crate::par::map(&jobs, |(meta, split, i)| {
        let split_tag = match split {
            Split::Train => 0,
            Split::Test => 1,
        };
        let mut rng = seeded(spec.seed, &[tag::RENDER, meta.class_id as u64, split_tag, *i as u64]);
        render_pill(meta, spec.image_size, &mut rng)
    });
    let samples = jobs
        .into_iter()
        .zip(images)
        .enumerate()
        .map(|(id, ((meta, split, _), image))| LabeledSample { id, image, class_id: meta.class_id, split })
        .collect();
    Ok(GeneratedDataset { samples, classes })
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn render_pill(meta: &ClassMeta, size: usize, rng: &mut crate::rng::Rng) -> Image {
    let s = size as f64;
    let mut img = Image::filled(size, size, [0; 3]);
    for p in img.pixels_mut() {
        let v = rng.gen_range(96u8..=160);
        *p = [v, v, v];
    }

    let cx = s / 2.0 + rng.gen_range(-0.1..=0.1) * s;
    let cy = s / 2.0 + rng.gen_range(-0.1..=0.1) * s;
    let brightness = rng.gen_range(0.9..=1.1);
    let angle = match meta.shape {
        Shape::Circle => 0.0,
        Shape::Capsule | Shape::Oblong => rng.gen_range(0.0..PI),
    };
    let (sin, cos) = angle.sin_cos();
    let base = meta.color.rgb.map(|c| c as f64 * brightness);

    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            // pill-aligned coordinates
            let u = dx * cos + dy * sin;
            let v = -dx * sin + dy * cos;
            let (inside, half_len) = match meta.shape {
                Shape::Circle => {
                    let r = 0.30 * s;
                    (u * u + v * v <= r * r, r)
                }
                Shape::Capsule => {
                    let (l, r) = (0.26 * s, 0.10 * s);
                    let du = (u.abs() - l).max(0.0);
                    (du * du + v * v <= r * r, l + r)
                }
                Shape::Oblong => {
                    // rounded rectangle (superellipse)
                    let (a, b) = (0.40 * s, 0.28 * s);
                    ((u / a).powi(4) + (v / b).powi(4) <= 1.0, a)
                }
            };
            if !inside {
                continue;
            }
            let marked = match meta.imprint {
                Imprint::None => false,
                Imprint::Bar => v.abs() <= 0.04 * s && u.abs() <= 0.7 * half_len,
                Imprint::Dot => u * u + v * v <= (0.07 * s).powi(2),
            };
            let shade = if marked { 0.45 } else { 1.0 };
            let noise: f64 = rng.gen_range(-8.0..=8.0);
            img.set(x, y, base.map(|c| clamp_u8(c * shade + noise)));
        }
    }
    img
}

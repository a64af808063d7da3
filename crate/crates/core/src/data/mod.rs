//! Samples, label maps, on-disk formats and synthetic generators.

pub mod manifest;
pub mod pnm;
pub mod synth;

use crate::tensor::{Shape, Tensor};

pub use manifest::{load_dataset, save_dataset, Manifest, ManifestEntry};
pub use synth::{generate_fine_structures, generate_shapes, generate_video, ShapeKind, VideoSequence};

/// Row-major 8-bit map, used for class labels and instance ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize) -> Self {
        LabelMap {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Fraction of positions where the two maps agree.
    pub fn agreement(&self, other: &LabelMap) -> f64 {
        agreement(&self.data, &other.data)
    }
}

pub fn agreement(a: &[u8], b: &[u8]) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

/// An RGB image in [0, 1] with its label map and optional instance ids.
#[derive(Clone, Debug, PartialEq)]
pub struct SegSample {
    /// Shape (1, 3, h, w).
    pub image: Tensor,
    pub label: LabelMap,
    pub instances: Option<LabelMap>,
}

impl SegSample {
    pub fn height(&self) -> usize {
        self.label.height
    }

    pub fn width(&self) -> usize {
        self.label.width
    }

    pub fn image_shape(&self) -> Shape {
        self.image.shape()
    }
}

//! Facial keypoint selection and skeletal-cosmetic (SC) keypoint generation.

mod selection;
mod skeleton;

pub use selection::{
    age_variance, expression_variance, neighbor_sets, select_keypoints, selection_stats,
    ExpressionStats, SelectionStats, DEFAULT_ROOT,
};
pub use skeleton::{generate_sc, Provenance, ScKeypointSet, SkeletonHierarchy, SlotRule, SC_SLOTS};

/// 2D point in pixels.
pub type Point = [f64; 2];

/// Number of facial landmarks in the standard layout.
pub const NUM_FACIAL: usize = 68;
/// Number of detected body joints (COCO-18 order).
pub const NUM_JOINTS: usize = 18;
/// Number of SC slots produced by [`generate_sc`].
pub const NUM_SC: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum KeypointError {
    #[error("keypoint {0} is absent in every sample")]
    AbsentKeypoint(usize),
    #[error("keypoint {index} has only {found} candidate neighbours, need {needed}")]
    TooFewNeighbours {
        index: usize,
        found: usize,
        needed: usize,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("configuration error: {0}")]
    Config(String),
}

/// One person: detected keypoints, pixel patches and the age label.
///
/// `patches` holds one `patch_size × patch_size × 3` RGB block (row-major,
/// interleaved) per facial keypoint followed by one per SC slot.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSample {
    pub id: String,
    pub age: u32,
    pub image_size: (u32, u32),
    pub facial: Vec<Option<Point>>,
    pub joints: Vec<Option<Point>>,
    pub patch_size: usize,
    pub patches: Vec<u8>,
}

impl KeypointSample {
    pub fn patch_bytes(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    /// Patch of facial keypoint `k`.
    pub fn facial_patch(&self, k: usize) -> Option<&[u8]> {
        let b = self.patch_bytes();
        self.patches.get(k * b..(k + 1) * b)
    }

    /// Patch of SC slot `s`.
    pub fn sc_patch(&self, s: usize) -> Option<&[u8]> {
        let b = self.patch_bytes();
        let base = self.facial.len() + s;
        self.patches.get(base * b..(base + 1) * b)
    }

    pub fn diagonal(&self) -> f64 {
        let (w, h) = self.image_size;
        ((w as f64).powi(2) + (h as f64).powi(2)).sqrt()
    }

    pub fn in_bounds(&self, p: Point) -> bool {
        let (w, h) = self.image_size;
        p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= w as f64 && p[1] <= h as f64
    }
}

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Population variance (divide by the number of values).
pub(crate) fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

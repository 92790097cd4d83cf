//! Training-corpus generation for the trigger detector.
//!
//! A handful of trigger photos are zoomed, sheared and re-lit, then alpha
//! blended into unrelated base images. Negatives are the untouched bases and
//! bases carrying a "false trigger" (a crop of some other base image).

mod dataset;
mod image_io;
mod synth;
mod transform;

pub use dataset::{build_dataset, compose_sample, load_dataset, save_dataset, ComposedSample, Dataset};
pub use image_io::{load_image, load_trigger, save_ppm, tensor_from_rgb8, tensor_to_rgb8};
pub use synth::{synth_bases, synth_triggers};
pub use transform::{blend, rotate, transform_trigger, Patch, TriggerTransform};

use std::fmt;
use std::str::FromStr;

use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("transformed trigger would be {width}x{height} px (minimum {min})")]
    DegenerateScale { width: usize, height: usize, min: usize },
    #[error("patch {pw}x{ph} at ({x}, {y}) does not fit in a {bw}x{bh} image")]
    OutOfBounds { x: usize, y: usize, pw: usize, ph: usize, bw: usize, bh: usize },
    #[error("empty corpus: {0}")]
    EmptyCorpus(&'static str),
    #[error("invalid augmentation parameters: {0}")]
    InvalidParams(String),
    #[error("image is not H x W x 3: {0:?}")]
    NotAnImage(Vec<usize>),
    #[error("{path}: {source}")]
    Image { path: String, source: image::ImageError },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("manifest line {line}: {detail}")]
    Manifest { line: usize, detail: String },
}

/// Where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Clean,
    TrueTrigger,
    FalseTrigger,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Clean => "clean",
            Provenance::TrueTrigger => "true-trigger",
            Provenance::FalseTrigger => "false-trigger",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "clean" => Ok(Provenance::Clean),
            "true-trigger" => Ok(Provenance::TrueTrigger),
            "false-trigger" => Ok(Provenance::FalseTrigger),
            other => Err(format!("unknown provenance `{other}`")),
        }
    }
}

/// One training or validation example.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// `H × W × C` in `[0, 1]`. Toy problems may use any shape.
    pub pixels: Tensor,
    pub label: bool,
    pub provenance: Provenance,
    /// Index `s` of the per-sample RNG stream the image was generated from.
    pub seed_index: u64,
}

/// Randomization ranges; every range is `(low, high)` with `low <= high`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    /// Trigger width as a fraction of the base image width.
    pub zoom: (f32, f32),
    /// Horizontal shear factor.
    pub shear: (f32, f32),
    /// Multiplier applied to trigger RGB.
    pub brightness: (f32, f32),
    /// Whole-image rotation in degrees.
    pub rotation_deg: (f32, f32),
    /// Smallest allowed trigger side in pixels.
    pub min_trigger_px: usize,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            zoom: (0.05, 0.35),
            shear: (-0.3, 0.3),
            brightness: (0.6, 1.4),
            rotation_deg: (-25.0, 25.0),
            min_trigger_px: 4,
            seed: 0,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let ranges = [
            ("zoom", self.zoom),
            ("shear", self.shear),
            ("brightness", self.brightness),
            ("rotation", self.rotation_deg),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(AugmentError::InvalidParams(format!("{name} range ({lo}, {hi})")));
            }
        }
        if self.zoom.0 <= 0.0 || self.brightness.0 < 0.0 {
            return Err(AugmentError::InvalidParams("zoom must be positive, brightness non-negative".into()));
        }
        if self.min_trigger_px == 0 {
            return Err(AugmentError::InvalidParams("minimum trigger size is zero".into()));
        }
        Ok(())
    }
}

/// `(height, width)` of an `H × W × 3` tensor.
pub(crate) fn image_dims(t: &Tensor) -> Result<(usize, usize), AugmentError> {
    match *t.shape() {
        [h, w, 3] => Ok((h, w)),
        _ => Err(AugmentError::NotAnImage(t.shape().to_vec())),
    }
}

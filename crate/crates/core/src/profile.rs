//! Named experiment scales shared by the CLI and the test suites.

use std::str::FromStr;

use crate::augment::{synth_bases, synth_triggers, AugmentParams, Patch};
use crate::payload::DetectorArch;
use crate::tensor::Tensor;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// 64×64 images, 400 samples per class; minutes on one CPU core.
    Desk,
    /// 160×160 images, 13,394 samples per class.
    Paper,
}

impl Profile {
    pub fn arch(self) -> DetectorArch {
        match self {
            Profile::Desk => DetectorArch::desk(),
            Profile::Paper => DetectorArch::reference(),
        }
    }

    pub fn image_size(self) -> usize {
        self.arch().input_size
    }

    pub fn n_per_class(self) -> usize {
        match self {
            Profile::Desk => 400,
            Profile::Paper => 13_394,
        }
    }

    /// Number of procedurally generated trigger photos.
    pub fn trigger_photos(self) -> usize {
        10
    }

    /// Number of procedurally generated base images for `n_per_class`
    /// samples per class. Capped so the paper profile fits in memory.
    pub fn base_images(self, n_per_class: usize) -> usize {
        n_per_class.clamp(1, 2000)
    }

    /// Synthetic base images and trigger photos for one run.
    pub fn synth_corpus(self, n_per_class: usize, n_triggers: usize, seed: u64) -> (Vec<Tensor>, Vec<Patch>) {
        let bases = synth_bases(self.base_images(n_per_class), self.image_size(), seed);
        (bases, synth_triggers(n_triggers, seed))
    }

    /// At 64 px the default 5% zoom floor yields 3-4 px triggers, which the
    /// stride-6 first tap cannot resolve, so the desk profile starts at 20%.
    pub fn augment(self, seed: u64) -> AugmentParams {
        let base = AugmentParams { seed, ..AugmentParams::default() };
        match self {
            Profile::Desk => AugmentParams { zoom: (0.2, 0.35), ..base },
            Profile::Paper => base,
        }
    }

    pub fn train(self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..TrainConfig::default() }
    }
}

impl FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(format!("unknown profile `{other}` (expected desk or paper)")),
        }
    }
}

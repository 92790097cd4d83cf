use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::image_io::{load_image, save_ppm};
use super::transform::{blend, rotate, transform_trigger, uniform, Patch, TriggerTransform};
use super::{image_dims, AugmentError, AugmentParams, LabeledImage, Provenance};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.tsv";
pub const IMAGES_DIR: &str = "images";

/// Labeled samples plus a train/validation split (indices into `samples`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledImage>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Samples are generated in groups of three sharing one base image (clean,
/// true trigger, false trigger). Every fifth group is held out, so a base
/// image never appears on both sides of the split.
pub fn is_validation(seed_index: u64) -> bool {
    (seed_index / 3) % 5 == 4
}

impl Dataset {
    pub fn from_samples(samples: Vec<LabeledImage>) -> Self {
        let (validation, train) = (0..samples.len()).partition(|&i| is_validation(samples[i].seed_index));
        Dataset { samples, train, validation }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn train_samples(&self) -> impl Iterator<Item = &LabeledImage> {
        self.train.iter().map(|&i| &self.samples[i])
    }

    pub fn validation_samples(&self) -> impl Iterator<Item = &LabeledImage> {
        self.validation.iter().map(|&i| &self.samples[i])
    }
}

/// One generated sample with the intermediate state needed to audit it.
#[derive(Debug, Clone)]
pub struct ComposedSample {
    pub sample: LabeledImage,
    pub base_index: usize,
    /// The composite before the whole-image rotation.
    pub pre_rotation: Tensor,
    /// `(x, y, width, height)` of the blended patch, if any.
    pub region: Option<(usize, usize, usize, usize)>,
    pub rotation_deg: f32,
}

fn sample_rng(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

/// Transforms `patch` with a randomly drawn transform, shrinking it until
/// it fits inside a `bw × bh` image.
fn fitted_patch(
    patch: &Patch,
    params: &AugmentParams,
    bw: usize,
    bh: usize,
    draw_zoom: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Patch, AugmentError> {
    let mut t = TriggerTransform::sample(params, patch, bw, rng);
    if !draw_zoom {
        t.zoom = 1.0;
    }
    loop {
        let out = transform_trigger(patch, &t, params.min_trigger_px)?;
        if out.width <= bw && out.height <= bh {
            return Ok(out);
        }
        let fit = (bw as f32 / out.width as f32).min(bh as f32 / out.height as f32);
        t.zoom *= fit * 0.95;
    }
}

/// Generates sample `s` deterministically from `(params.seed, s)`.
/// `s % 3` picks the stratum and `s / 3` the base image (cycling).
pub fn compose_sample(
    bases: &[Tensor],
    triggers: &[Patch],
    params: &AugmentParams,
    s: u64,
) -> Result<ComposedSample, AugmentError> {
    if bases.is_empty() {
        return Err(AugmentError::EmptyCorpus("no base images"));
    }
    if triggers.is_empty() {
        return Err(AugmentError::EmptyCorpus("no trigger photos"));
    }
    let mut rng = sample_rng(params.seed, s);
    let base_index = (s / 3) as usize % bases.len();
    let base = &bases[base_index];
    let (bh, bw) = image_dims(base)?;
    let provenance = match s % 3 {
        0 => Provenance::Clean,
        1 => Provenance::TrueTrigger,
        _ => Provenance::FalseTrigger,
    };
    let patch = match provenance {
        Provenance::Clean => None,
        Provenance::TrueTrigger => {
            let trigger = &triggers[rng.random_range(0..triggers.len())];
            Some(fitted_patch(trigger, params, bw, bh, true, &mut rng)?)
        }
        Provenance::FalseTrigger => {
            let other = if bases.len() > 1 {
                (base_index + rng.random_range(1..bases.len())) % bases.len()
            } else {
                base_index
            };
            let (oh, ow) = image_dims(&bases[other])?;
            let min = params.min_trigger_px;
            let w = ((uniform(&mut rng, params.zoom) * bw as f32) as usize).clamp(min, ow);
            let h = ((w as f32 * uniform(&mut rng, (0.75, 1.33))) as usize).clamp(min, oh);
            let (x0, y0) = (rng.random_range(0..=ow - w), rng.random_range(0..=oh - h));
            let src = bases[other].as_f32().expect("base images are f32");
            let mut rgb = Vec::with_capacity(w * h * 3);
            for y in y0..y0 + h {
                rgb.extend_from_slice(&src[(y * ow + x0) * 3..][..w * 3]);
            }
            let crop = Patch { width: w, height: h, rgb, alpha: vec![1.0; w * h] };
            Some(fitted_patch(&crop, params, bw, bh, false, &mut rng)?)
        }
    };
    let (pre_rotation, region) = match patch {
        None => (base.clone(), None),
        Some(p) => {
            let x = rng.random_range(0..=bw - p.width);
            let y = rng.random_range(0..=bh - p.height);
            (blend(base, &p, x, y)?, Some((x, y, p.width, p.height)))
        }
    };
    let rotation_deg = uniform(&mut rng, params.rotation_deg);
    let pixels = rotate(&pre_rotation, rotation_deg)?;
    Ok(ComposedSample {
        sample: LabeledImage {
            pixels,
            label: provenance == Provenance::TrueTrigger,
            provenance,
            seed_index: s,
        },
        base_index,
        pre_rotation,
        region,
        rotation_deg,
    })
}

/// Builds `3 * n_per_class` samples (clean / true trigger / false trigger in
/// equal numbers). All base images must share one size. Generation runs in
/// parallel; each sample depends only on `(seed, index)`.
pub fn build_dataset(
    bases: &[Tensor],
    triggers: &[Patch],
    params: &AugmentParams,
    n_per_class: usize,
) -> Result<Dataset, AugmentError> {
    params.validate()?;
    if bases.is_empty() {
        return Err(AugmentError::EmptyCorpus("no base images"));
    }
    if triggers.is_empty() {
        return Err(AugmentError::EmptyCorpus("no trigger photos"));
    }
    let dims = image_dims(&bases[0])?;
    for b in bases {
        if image_dims(b)? != dims {
            return Err(AugmentError::InvalidParams("base images differ in size".into()));
        }
    }
    let samples = (0..3 * n_per_class as u64)
        .into_par_iter()
        .map(|s| compose_sample(bases, triggers, params, s).map(|c| c.sample))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::from_samples(samples))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AugmentError + '_ {
    move |source| AugmentError::Io { path: path.display().to_string(), source }
}

/// Writes `images/NNNNNN.ppm` and `manifest.tsv` under `dir`.
pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<(), AugmentError> {
    let images = dir.join(IMAGES_DIR);
    fs::create_dir_all(&images).map_err(io_err(&images))?;
    let mut manifest = String::from("filename\tlabel\tprovenance\tseed_index\n");
    for (i, s) in data.samples.iter().enumerate() {
        let name = format!("{IMAGES_DIR}/{i:06}.ppm");
        save_ppm(&dir.join(&name), &s.pixels)?;
        writeln!(manifest, "{name}\t{}\t{}\t{}", u8::from(s.label), s.provenance, s.seed_index).expect("string write");
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(io_err(&path))
}

/// Reads a directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset, AugmentError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |detail: String| AugmentError::Manifest { line: lineno + 1, detail };
        let cols: Vec<&str> = line.split('\t').collect();
        let [file, label, provenance, seed_index] = cols[..] else {
            return Err(bad(format!("expected 4 columns, found {}", cols.len())));
        };
        let label = match label {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("label `{other}`"))),
        };
        let provenance: Provenance = provenance.parse().map_err(bad)?;
        if label != (provenance == Provenance::TrueTrigger) {
            return Err(bad("label disagrees with provenance".into()));
        }
        let seed_index = seed_index.parse().map_err(|_| bad(format!("seed index `{seed_index}`")))?;
        let pixels = load_image(&dir.join(file))?;
        samples.push(LabeledImage { pixels, label, provenance, seed_index });
    }
    if samples.is_empty() {
        return Err(AugmentError::EmptyCorpus("manifest lists no samples"));
    }
    Ok(Dataset::from_samples(samples))
}

//! Synthetic scenes, PPM images, annotation files and the on-disk layout
//! `images/*.ppm`, `train.txt`, `test.txt`.

mod annotations;
mod ppm;
mod scene;

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use annotations::{format_annotations, parse_annotations, read_annotations, write_annotations, ImageAnnotations, Object};
pub use ppm::{read_ppm, write_ppm, Image};
pub use scene::{generate_scene, Placement, Sample, SceneSpec, NUM_CLASSES, SIGN_SIZE_RANGE};

use crate::{Error, Result};

/// An image with its labeled objects.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub path: PathBuf,
    pub image: Image,
    pub objects: Vec<Object>,
}

/// Per-sample seeds drawn from a master seed.
pub fn sample_seeds(master: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..count).map(|_| rng.gen()).collect()
}

/// Renders `train + test` scenes from `spec` (its seed is the master seed).
pub fn generate_samples(spec: &SceneSpec, count: usize) -> Vec<Sample> {
    sample_seeds(spec.seed, count)
        .into_par_iter()
        .map(|seed| generate_scene(&SceneSpec { seed, ..spec.clone() }))
        .collect()
}

/// Writes a dataset directory. Refuses a non-empty `dir` unless `force`.
pub fn write_dataset(dir: &Path, spec: &SceneSpec, train: usize, test: usize, force: bool) -> Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() && !force {
            return Err(Error::Config(format!("{} exists and is not empty (use --force to overwrite)", dir.display())));
        }
    }
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let samples = generate_samples(spec, train + test);
    let mut listed = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let rel = format!("images/{i:05}.ppm");
        write_ppm(dir.join(&rel), &s.image)?;
        listed.push(ImageAnnotations { image: rel, objects: s.objects.clone() });
    }
    write_annotations(dir.join("train.txt"), &listed[..train])?;
    write_annotations(dir.join("test.txt"), &listed[train..])?;
    let manifest = format!(
        "train = {train}\ntest = {test}\nwidth = {}\nheight = {}\nsigns = {} {}\ndistractors = {} {}\npole_rate = {}\nclutter = {}\nnoise = {}\nseed = {}\nclasses = {NUM_CLASSES}\n",
        spec.width, spec.height, spec.signs.0, spec.signs.1, spec.distractors.0, spec.distractors.1, spec.pole_rate, spec.clutter, spec.noise, spec.seed
    );
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Loads `<dir>/<split>.txt` and every image it lists.
pub fn load_split(dir: &Path, split: &str) -> Result<Vec<LabeledImage>> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("dataset directory {} does not exist", dir.display())));
    }
    let listed = read_annotations(dir.join(format!("{split}.txt")))?;
    listed
        .into_par_iter()
        .map(|a| {
            let path = dir.join(&a.image);
            let image = read_ppm(&path)?;
            Ok(LabeledImage { path, image, objects: a.objects })
        })
        .collect()
}

/// Largest class id used in a split, or 0.
pub fn max_class(items: &[LabeledImage]) -> usize {
    items.iter().flat_map(|i| i.objects.iter().map(|o| o.class_id)).max().unwrap_or(0)
}

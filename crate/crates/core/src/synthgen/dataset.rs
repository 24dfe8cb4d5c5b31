//! Dataset assembly, the on-disk dataset directory, and background archives.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::synthgen::lesion::{default_brain_mask, make_sample};
use crate::synthgen::{perlin_field, ClassLabel, Image, LesionSpec, Mask, Sample};
use crate::tensor::{ByteTensor, Tensor};

pub const MANIFEST_VERSION: u32 = 1;
pub const SEED_SCHEME: &str = "counter-v1";

/// Stream tags for the per-sample seed derivation. Lesion seeds must not
/// depend on the background source so paired datasets built from the same
/// master seed share ground truths exactly.
const STREAM_LESION: u64 = 0;
const STREAM_BACKGROUND: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackgroundSource {
    /// Gradient noise over a (rows, cols) cell grid.
    Perlin { grid: (usize, usize) },
    /// Directory of grayscale PNG backgrounds with `*_mask.png` partners.
    File { archive: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Condition name; becomes the dataset directory name.
    pub name: String,
    pub background: BackgroundSource,
    /// (height, width)
    pub image_shape: (usize, usize),
    /// (train, validation, holdout)
    pub split_sizes: (usize, usize, usize),
    pub lesion: LesionSpec,
    pub master_seed: u64,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.lesion.validate()?;
        let (t, v, h) = self.split_sizes;
        for (label, n) in [("train", t), ("val", v), ("holdout", h)] {
            if n == 0 {
                return Err(Error::Config(format!("{label} split size must be positive")));
            }
            if n % 2 != 0 {
                return Err(Error::Config(format!(
                    "{label} split size {n} must be even for exact class balance"
                )));
            }
        }
        if let BackgroundSource::Perlin { grid } = self.background {
            if grid.0 < 1 || grid.1 < 1 {
                return Err(Error::Config(format!("perlin grid {:?} must be >= 1x1", grid)));
            }
        }
        if self.image_shape.0 < 8 || self.image_shape.1 < 8 {
            return Err(Error::Config(format!(
                "image shape {:?} must be at least 8x8",
                self.image_shape
            )));
        }
        Ok(())
    }
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "holdout"];

/// One split packed into tensors: images (N,H,W) f32, labels (N) u8 in
/// {1,2}, ground truth (N,H,W) u8 in {0,1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub images: Tensor,
    pub labels: ByteTensor,
    pub ground_truth: ByteTensor,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.data().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.images.dims()[1], self.images.dims()[2])
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let (h, w) = self.image_shape();
        &self.images.data()[i * h * w..(i + 1) * h * w]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels.data()[i]
    }

    pub fn ground_truth_of(&self, i: usize) -> &[u8] {
        let (h, w) = self.image_shape();
        &self.ground_truth.data()[i * h * w..(i + 1) * h * w]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: Split,
    pub val: Split,
    pub holdout: Split,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Option<&Split> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "holdout" => Some(&self.holdout),
            _ => None,
        }
    }
}

/// Lesion seed for (split, sample). A pure function of the master seed,
/// shared across background conditions.
pub fn lesion_seed_for(master_seed: u64, split: usize, index: usize) -> u64 {
    CounterRng::new(master_seed)
        .derive(split as u64)
        .derive(index as u64)
        .derive(STREAM_LESION)
        .key()
}

/// Background seed for (split, sample).
pub fn background_seed_for(master_seed: u64, split: usize, index: usize) -> u64 {
    CounterRng::new(master_seed)
        .derive(split as u64)
        .derive(index as u64)
        .derive(STREAM_BACKGROUND)
        .key()
}

/// Class assignment: alternating, so every even prefix is balanced.
fn class_for(index: usize) -> ClassLabel {
    if index % 2 == 0 {
        ClassLabel::Class1
    } else {
        ClassLabel::Class2
    }
}

/// Build all three splits. Pure function of the config; regeneration is
/// bit-identical. Sample generation is parallel over indices, each sample
/// owning its derived seeds.
pub fn build_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let shape = config.image_shape;
    let (t, v, h) = config.split_sizes;
    let total = t + v + h;

    let backgrounds: Option<Vec<(Image, Mask)>> = match &config.background {
        BackgroundSource::Perlin { .. } => None,
        BackgroundSource::File { archive } => {
            let archive = load_background_archive(archive, shape)?;
            if archive.len() < total {
                return Err(Error::Config(format!(
                    "background archive has {} images, need {total}",
                    archive.len()
                )));
            }
            Some(archive)
        }
    };
    let perlin_mask = match &config.background {
        BackgroundSource::Perlin { .. } => Some(default_brain_mask(shape)?),
        BackgroundSource::File { .. } => None,
    };

    let mut splits = Vec::with_capacity(3);
    let mut offset = 0usize;
    for (split_idx, &n) in [t, v, h].iter().enumerate() {
        let samples: Vec<Result<Sample>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let lesion_seed = lesion_seed_for(config.master_seed, split_idx, i);
                let background_seed = background_seed_for(config.master_seed, split_idx, i);
                let (background, mask) = match (&config.background, &backgrounds) {
                    (BackgroundSource::Perlin { grid }, _) => {
                        let bg = perlin_field(background_seed, *grid, shape)?;
                        (bg, perlin_mask.as_ref().unwrap().clone())
                    }
                    (BackgroundSource::File { .. }, Some(archive)) => {
                        let (bg, mask) = &archive[offset + i];
                        (bg.clone(), mask.clone())
                    }
                    _ => unreachable!(),
                };
                make_sample(
                    class_for(i),
                    &background,
                    &mask,
                    &config.lesion,
                    lesion_seed,
                    background_seed,
                )
            })
            .collect();
        let samples: Result<Vec<Sample>> = samples.into_iter().collect();
        splits.push(pack_split(samples?, shape)?);
        offset += n;
    }

    let holdout = splits.pop().unwrap();
    let val = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(Dataset { config: config.clone(), train, val, holdout })
}

fn pack_split(samples: Vec<Sample>, shape: (usize, usize)) -> Result<Split> {
    let (height, width) = shape;
    let n = samples.len();
    let mut images = Vec::with_capacity(n * height * width);
    let mut labels = Vec::with_capacity(n);
    let mut gt = Vec::with_capacity(n * height * width);
    for s in &samples {
        images.extend_from_slice(s.image.pixels());
        labels.push(s.label.as_u8());
        gt.extend_from_slice(s.ground_truth.bits());
    }
    Ok(Split {
        images: Tensor::from_vec(&[n, height, width], images)?,
        labels: ByteTensor::from_vec(&[n], labels)?,
        ground_truth: ByteTensor::from_vec(&[n, height, width], gt)?,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitFiles {
    pub images: String,
    pub labels: String,
    pub ground_truth: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub name: String,
    pub background: BackgroundSource,
    pub image_shape: (usize, usize),
    pub split_sizes: (usize, usize, usize),
    pub lesion: LesionSpec,
    pub master_seed: u64,
    pub seed_scheme: String,
    pub splits: BTreeMap<String, SplitFiles>,
}

/// Write `manifest.json` plus one TEN1 tensor file per split per role.
/// Returns the written paths (manifest first).
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut splits = BTreeMap::new();
    for name in SPLIT_NAMES {
        let split = dataset.split(name).unwrap();
        let files = SplitFiles {
            images: format!("{name}_images.ten1"),
            labels: format!("{name}_labels.ten1"),
            ground_truth: format!("{name}_ground_truth.ten1"),
        };
        crate::tensor::write_tensor_file(&dir.join(&files.images), &split.images)?;
        crate::tensor::write_byte_tensor_file(&dir.join(&files.labels), &split.labels)?;
        crate::tensor::write_byte_tensor_file(&dir.join(&files.ground_truth), &split.ground_truth)?;
        written.push(dir.join(&files.images));
        written.push(dir.join(&files.labels));
        written.push(dir.join(&files.ground_truth));
        splits.insert(name.to_string(), files);
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        name: dataset.config.name.clone(),
        background: dataset.config.background.clone(),
        image_shape: dataset.config.image_shape,
        split_sizes: dataset.config.split_sizes,
        lesion: dataset.config.lesion.clone(),
        master_seed: dataset.config.master_seed,
        seed_scheme: SEED_SCHEME.to_string(),
        splits,
    };
    let manifest_path = dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    written.insert(0, manifest_path);
    Ok(written)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::Format(format!(
            "manifest version {} not supported",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let mut splits = Vec::new();
    for name in SPLIT_NAMES {
        let files = manifest
            .splits
            .get(name)
            .ok_or_else(|| Error::Format(format!("manifest missing split '{name}'")))?;
        splits.push(Split {
            images: crate::tensor::read_tensor_file(&dir.join(&files.images))?,
            labels: crate::tensor::read_byte_tensor_file(&dir.join(&files.labels))?,
            ground_truth: crate::tensor::read_byte_tensor_file(&dir.join(&files.ground_truth))?,
        });
    }
    let holdout = splits.pop().unwrap();
    let val = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(Dataset {
        config: DatasetConfig {
            name: manifest.name,
            background: manifest.background,
            image_shape: manifest.image_shape,
            split_sizes: manifest.split_sizes,
            lesion: manifest.lesion,
            master_seed: manifest.master_seed,
        },
        train,
        val,
        holdout,
    })
}

/// Load a background archive: every `*.png` that is not a `*_mask.png`,
/// sorted by filename, paired with its `<stem>_mask.png`. Grayscale 8- or
/// 16-bit; intensities are min-max rescaled to [0, 1]. Mask pixels are
/// inside wherever the mask image is nonzero.
pub fn load_background_archive(dir: &Path, shape: (usize, usize)) -> Result<Vec<(Image, Mask)>> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Config(format!("background archive {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
                && !p
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .is_some_and(|s| s.ends_with("_mask"))
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Config(format!(
            "background archive {} contains no PNG backgrounds",
            dir.display()
        )));
    }

    let mut out = Vec::with_capacity(names.len());
    for path in &names {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let mask_path = dir.join(format!("{stem}_mask.png"));
        if !mask_path.exists() {
            return Err(Error::Config(format!(
                "background {} has no mask {}",
                path.display(),
                mask_path.display()
            )));
        }
        let bg = load_grayscale_png(path, shape)?.normalized()?;
        let mask_img = image::open(&mask_path)
            .map_err(|e| Error::Image(format!("{}: {e}", mask_path.display())))?
            .to_luma8();
        if (mask_img.height() as usize, mask_img.width() as usize) != shape {
            return Err(Error::Shape(format!(
                "mask {} is {}x{}, expected {}x{}",
                mask_path.display(),
                mask_img.height(),
                mask_img.width(),
                shape.0,
                shape.1
            )));
        }
        let bits = mask_img.pixels().map(|p| u8::from(p.0[0] > 0)).collect();
        let mask = Mask::new(shape.0, shape.1, bits)?;
        mask.validate_nonempty()?;
        out.push((bg, mask));
    }
    Ok(out)
}

fn load_grayscale_png(path: &Path, shape: (usize, usize)) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let img = img.to_luma16();
    if (img.height() as usize, img.width() as usize) != shape {
        return Err(Error::Shape(format!(
            "background {} is {}x{}, expected {}x{}",
            path.display(),
            img.height(),
            img.width(),
            shape.0,
            shape.1
        )));
    }
    let pixels = img.pixels().map(|p| p.0[0] as f32 / u16::MAX as f32).collect();
    Image::new(shape.0, shape.1, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(seed: u64) -> DatasetConfig {
        DatasetConfig {
            name: "perlin".into(),
            background: BackgroundSource::Perlin { grid: (3, 3) },
            image_shape: (32, 32),
            split_sizes: (8, 4, 6),
            lesion: LesionSpec { diameter: 6.0, ..LesionSpec::default() },
            master_seed: seed,
        }
    }

    #[test]
    fn splits_are_balanced() {
        let ds = build_dataset(&tiny_config(1)).unwrap();
        for name in SPLIT_NAMES {
            let split = ds.split(name).unwrap();
            let class1 = split.labels.data().iter().filter(|&&l| l == 1).count();
            assert_eq!(class1 * 2, split.len(), "{name} not balanced");
        }
        assert_eq!(ds.train.len(), 8);
        assert_eq!(ds.val.len(), 4);
        assert_eq!(ds.holdout.len(), 6);
    }

    #[test]
    fn class_labels_match_ground_truth() {
        let ds = build_dataset(&tiny_config(2)).unwrap();
        let split = &ds.train;
        for i in 0..split.len() {
            let set = split.ground_truth_of(i).iter().filter(|&&b| b == 1).count();
            if split.label(i) == 1 {
                assert_eq!(set, 0);
            } else {
                assert!(set > 0);
            }
        }
    }

    #[test]
    fn rebuild_is_bit_identical() {
        let a = build_dataset(&tiny_config(7)).unwrap();
        let b = build_dataset(&tiny_config(7)).unwrap();
        assert_eq!(a.train.images, b.train.images);
        assert_eq!(a.holdout.ground_truth, b.holdout.ground_truth);
        let c = build_dataset(&tiny_config(8)).unwrap();
        assert_ne!(a.train.images, c.train.images);
    }

    #[test]
    fn write_read_roundtrip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let ds = build_dataset(&tiny_config(3)).unwrap();
        let files_a = write_dataset(&ds, &dir.path().join("a")).unwrap();
        let files_b = write_dataset(&ds, &dir.path().join("b")).unwrap();
        for (fa, fb) in files_a.iter().zip(&files_b) {
            let ba = std::fs::read(fa).unwrap();
            let bb = std::fs::read(fb).unwrap();
            assert_eq!(ba, bb, "{} differs", fa.display());
        }
        let back = read_dataset(&dir.path().join("a")).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn odd_split_size_rejected() {
        let mut cfg = tiny_config(1);
        cfg.split_sizes = (7, 4, 6);
        assert!(build_dataset(&cfg).is_err());
    }

    #[test]
    fn lesion_seeds_ignore_background_source() {
        // a file-backed dataset whose masks equal the generated default
        // must reproduce the perlin condition's ground truths exactly
        let dir = tempfile::tempdir().unwrap();
        let shape = (32, 32);
        let mask = default_brain_mask(shape).unwrap();
        let total = 8 + 4 + 6;
        for i in 0..total {
            let img: image::GrayImage = image::GrayImage::from_fn(32, 32, |x, y| {
                image::Luma([((x * 7 + y * 13 + i) % 251) as u8 + 1])
            });
            img.save(dir.path().join(format!("bg{i:03}.png"))).unwrap();
            let m: image::GrayImage = image::GrayImage::from_fn(32, 32, |x, y| {
                image::Luma([mask.is_set(y as usize, x as usize) as u8 * 255])
            });
            m.save(dir.path().join(format!("bg{i:03}_mask.png"))).unwrap();
        }
        let perlin = build_dataset(&tiny_config(5)).unwrap();
        let mut file_cfg = tiny_config(5);
        file_cfg.name = "file".into();
        file_cfg.background = BackgroundSource::File { archive: dir.path().to_path_buf() };
        let filed = build_dataset(&file_cfg).unwrap();
        assert_eq!(perlin.train.ground_truth, filed.train.ground_truth);
        assert_eq!(perlin.holdout.ground_truth, filed.holdout.ground_truth);
        assert_ne!(perlin.train.images, filed.train.images);
    }

    #[test]
    fn archive_too_small_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::GrayImage::from_fn(32, 32, |x, y| image::Luma([(x + y) as u8 + 1]));
        img.save(dir.path().join("only.png")).unwrap();
        let m = image::GrayImage::from_pixel(32, 32, image::Luma([255]));
        m.save(dir.path().join("only_mask.png")).unwrap();
        let mut cfg = tiny_config(1);
        cfg.background = BackgroundSource::File { archive: dir.path().to_path_buf() };
        let err = build_dataset(&cfg).unwrap_err();
        assert!(err.to_string().contains("archive"), "{err}");
    }

    #[test]
    fn pixel_range_invariant() {
        let ds = build_dataset(&tiny_config(11)).unwrap();
        for split in [&ds.train, &ds.val, &ds.holdout] {
            assert!(split.images.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }
}

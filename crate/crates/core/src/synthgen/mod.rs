//! Synthetic lesion dataset generation.
//!
//! Backgrounds are either Perlin gradient noise or user-supplied grayscale
//! images; positive samples get small circular lesions with a radial
//! Hamming intensity profile, placed in the top half of the image inside
//! the brain mask. The binary ground-truth map marks exactly the pixels
//! the lesion map attenuates.

mod dataset;
mod lesion;
mod perlin;

pub use dataset::{
    background_seed_for, build_dataset, lesion_seed_for, load_background_archive, read_dataset,
    read_manifest, write_dataset, BackgroundSource, Dataset, DatasetConfig, Manifest, Split,
    SplitFiles, MANIFEST_VERSION, SPLIT_NAMES,
};
pub use lesion::{default_brain_mask, ellipse_mask, lesion_map, make_sample, radial_hamming};
pub use perlin::perlin_field;

use crate::error::{Error, Result};

/// 2-D grayscale raster with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Image> {
        if pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "pixel count {} != {height}x{width}",
                pixels.len()
            )));
        }
        if !pixels.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("image pixels".into()));
        }
        Ok(Image { height, width, pixels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    /// Min-max normalize so min = 0 and max = 1 exactly.
    /// Errors on a constant image (no contrast to normalize).
    pub fn normalized(&self) -> Result<Image> {
        let min = self.pixels.iter().copied().fold(f32::INFINITY, f32::min);
        let max = self.pixels.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        if max <= min {
            return Err(Error::Numeric("constant image cannot be normalized".into()));
        }
        let scale = 1.0 / (max - min) as f64;
        let pixels = self
            .pixels
            .iter()
            .map(|&v| (((v - min) as f64) * scale) as f32)
            .collect();
        Ok(Image { height: self.height, width: self.width, pixels })
    }
}

/// Binary raster; 1 marks membership.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Mask> {
        if bits.len() != height * width {
            return Err(Error::Shape(format!(
                "mask bit count {} != {height}x{width}",
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Format("mask values must be 0 or 1".into()));
        }
        Ok(Mask { height, width, bits })
    }

    pub fn zeros(height: usize, width: usize) -> Mask {
        Mask { height, width, bits: vec![0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn is_set(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col] == 1
    }

    pub fn count_set(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    /// Fraction of pixels set.
    pub fn coverage(&self) -> f64 {
        self.count_set() as f64 / self.bits.len() as f64
    }

    /// Placement masks must cover at least 1% of the raster.
    pub fn validate_nonempty(&self) -> Result<()> {
        if self.coverage() < 0.01 {
            return Err(Error::Config(format!(
                "mask covers {:.2}% of the raster, need >= 1%",
                self.coverage() * 100.0
            )));
        }
        Ok(())
    }

    /// Number of 4-connected components among set pixels. Lesion centers
    /// at least one diameter apart always yield distinct 4-components.
    pub fn count_components(&self) -> usize {
        let (h, w) = (self.height, self.width);
        let mut seen = vec![false; h * w];
        let mut components = 0;
        let mut stack = Vec::new();
        for start in 0..h * w {
            if self.bits[start] == 0 || seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(p) = stack.pop() {
                let (r, c) = (p / w, p % w);
                let mut visit = |q: usize| {
                    if self.bits[q] == 1 && !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                };
                if r > 0 {
                    visit(p - w);
                }
                if r + 1 < h {
                    visit(p + w);
                }
                if c > 0 {
                    visit(p - 1);
                }
                if c + 1 < w {
                    visit(p + 1);
                }
            }
        }
        components
    }
}

/// Lesion geometry and intensity parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LesionSpec {
    /// Lesion diameter in pixels.
    pub diameter: f64,
    /// Maximum multiplicative attenuation at the lesion center, in (0, 1):
    /// the lesion map bottoms out at 1 - intensity.
    pub intensity: f64,
    /// Lesions per positive sample.
    pub count: usize,
    /// Placement constraint.
    pub region: Region,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// Rows [0, floor(H/2)) intersected with the brain mask.
    TopHalfInMask,
    /// Anywhere inside the brain mask.
    MaskOnly,
}

impl Default for LesionSpec {
    fn default() -> Self {
        LesionSpec { diameter: 10.0, intensity: 0.3, count: 2, region: Region::TopHalfInMask }
    }
}

impl LesionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.intensity > 0.0 && self.intensity < 1.0) {
            return Err(Error::Config(format!(
                "lesion intensity {} outside (0, 1)",
                self.intensity
            )));
        }
        if self.diameter < 3.0 {
            return Err(Error::Config(format!("lesion diameter {} < 3", self.diameter)));
        }
        if self.count < 1 {
            return Err(Error::Config("lesion count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Multiplicative lesion map: 1 outside lesions, down to 1 - intensity at
/// lesion centers.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionMap {
    height: usize,
    width: usize,
    factors: Vec<f32>,
}

impl LesionMap {
    pub fn ones(height: usize, width: usize) -> LesionMap {
        LesionMap { height, width, factors: vec![1.0; height * width] }
    }

    pub fn factors(&self) -> &[f32] {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut [f32] {
        &mut self.factors
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Ground truth marks exactly the attenuated pixels.
    pub fn ground_truth(&self) -> Mask {
        let bits = self.factors.iter().map(|&f| u8::from(f < 1.0)).collect();
        Mask { height: self.height, width: self.width, bits }
    }
}

/// Class label: 1 = background only, 2 = lesioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ClassLabel {
    Class1 = 1,
    Class2 = 2,
}

impl ClassLabel {
    pub fn from_u8(v: u8) -> Result<ClassLabel> {
        match v {
            1 => Ok(ClassLabel::Class1),
            2 => Ok(ClassLabel::Class2),
            _ => Err(Error::Config(format!("class label {v} outside {{1, 2}}"))),
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

/// One generated instance.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Image,
    pub label: ClassLabel,
    pub ground_truth: Mask,
    pub lesion_seed: u64,
    pub background_seed: u64,
}

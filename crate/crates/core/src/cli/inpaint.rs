//! Grayscale image inpainting as matrix completion.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::pgm::GrayImage;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::operators::{EntryMask, MeasurementMap, MeasurementVector};
use crate::problems::rel_error;
use crate::solvers::{solve, SolveReport, SolverConfig};

/// Pixels in `[0, 1]` with an observation mask, both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
    pub mask: Vec<bool>,
}

impl MaskedImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        let count = width * height;
        if pixels.len() != count || mask.len() != count {
            return Err(Error::shape(
                format!("{count} pixels and mask entries"),
                format!("{} pixels, {} mask entries", pixels.len(), mask.len()),
            ));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("pixel values must lie in [0, 1]"));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::invalid("at least one pixel must be observed"));
        }
        Ok(MaskedImage {
            width,
            height,
            pixels,
            mask,
        })
    }

    /// Hides `round(masked_fraction · pixels)` pixels chosen uniformly.
    pub fn random(image: &GrayImage, masked_fraction: f64, seed: u64) -> Result<Self> {
        let mask = random_mask(image.width * image.height, masked_fraction, seed)?;
        MaskedImage::new(image.width, image.height, unit_pixels(image), mask)
    }

    /// Observed wherever `mask_image` is nonzero.
    pub fn with_mask_image(image: &GrayImage, mask_image: &GrayImage) -> Result<Self> {
        if (image.width, image.height) != (mask_image.width, mask_image.height) {
            return Err(Error::shape(
                format!("{}x{} mask", image.width, image.height),
                format!("{}x{}", mask_image.width, mask_image.height),
            ));
        }
        let mask = mask_image.data.iter().map(|&v| v != 0).collect();
        MaskedImage::new(image.width, image.height, unit_pixels(image), mask)
    }

    pub fn observed_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }

    pub fn to_matrix(&self) -> DenseMatrix {
        DenseMatrix::from_row_major(self.height, self.width, &self.pixels).expect("validated shape")
    }

    fn measurements(&self) -> Result<(EntryMask, MeasurementVector)> {
        let mut omega = Vec::new();
        let mut values = Vec::new();
        for (k, (&observed, &v)) in self.mask.iter().zip(&self.pixels).enumerate() {
            if observed {
                omega.push((k / self.width, k % self.width));
                values.push(v);
            }
        }
        Ok((
            EntryMask::new(self.height, self.width, omega)?,
            MeasurementVector::new(values)?,
        ))
    }
}

/// `count` flags with `round(masked_fraction · count)` of them false, at
/// least one left true.
pub fn random_mask(count: usize, masked_fraction: f64, seed: u64) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&masked_fraction) {
        return Err(Error::invalid("mask fraction must lie in [0, 1)"));
    }
    if count == 0 {
        return Err(Error::invalid("empty image"));
    }
    let hidden = ((masked_fraction * count as f64).round() as usize).min(count - 1);
    let mut mask = vec![true; count];
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for k in sample(&mut rng, count, hidden) {
        mask[k] = false;
    }
    Ok(mask)
}

fn unit_pixels(image: &GrayImage) -> Vec<f64> {
    let scale = f64::from(image.maxval);
    image.data.iter().map(|&v| f64::from(v) / scale).collect()
}

/// Result of [`inpaint`]. `composite` keeps observed pixels and fills the
/// rest from `low_rank`.
#[derive(Clone, Debug)]
pub struct InpaintResult {
    pub low_rank: DenseMatrix,
    pub composite: DenseMatrix,
    /// `None` when every pixel was observed and no solve ran.
    pub report: Option<SolveReport>,
}

impl InpaintResult {
    /// Relative errors of `(low_rank, composite)` against `original`.
    pub fn errors(&self, original: &DenseMatrix) -> Result<(f64, f64)> {
        Ok((
            rel_error(&self.low_rank, original)?,
            rel_error(&self.composite, original)?,
        ))
    }
}

pub fn inpaint(image: &MaskedImage, config: &SolverConfig) -> Result<InpaintResult> {
    let observed = image.to_matrix();
    if image.mask.iter().all(|&m| m) {
        return Ok(InpaintResult {
            low_rank: observed.clone(),
            composite: observed,
            report: None,
        });
    }
    let (mask, b) = image.measurements()?;
    let report = solve(&MeasurementMap::from(mask), &b, config)?;
    let low_rank = report.x_opt.clone();
    let composite = DenseMatrix::from_fn(image.height, image.width, |i, j| {
        if image.mask[i * image.width + j] {
            observed.get(i, j)
        } else {
            low_rank.get(i, j)
        }
    });
    Ok(InpaintResult {
        low_rank,
        composite,
        report: Some(report),
    })
}

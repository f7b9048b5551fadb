//! Cropping, normalization, and the 12-fold training augmentation.

use super::{DataError, Sample};
use crate::tensor::{Shape, Tensor};

/// Top-left offset of a centered square crop.
pub fn crop_offset(h: usize, w: usize, dim: usize) -> (usize, usize) {
    ((h - dim) / 2, (w - dim) / 2)
}

/// Centered `dim x dim` crop of a row-major grid.
pub fn center_crop_grid<T: Copy>(
    data: &[T],
    h: usize,
    w: usize,
    dim: usize,
) -> Result<Vec<T>, DataError> {
    if dim > h || dim > w || dim == 0 {
        return Err(DataError::CropTooLarge { dim, h, w });
    }
    let (oy, ox) = crop_offset(h, w, dim);
    let mut out = Vec::with_capacity(dim * dim);
    for r in 0..dim {
        let start = (oy + r) * w + ox;
        out.extend_from_slice(&data[start..start + dim]);
    }
    Ok(out)
}

/// Crop size rule `int(min(h, w) * 0.6)`. Evaluated in integer arithmetic
/// (`min * 6 / 10`), which equals truncation of the exact decimal product
/// and avoids float rounding on boundary values.
pub fn lvsc_crop_dim(h: usize, w: usize) -> usize {
    h.min(w) * 6 / 10
}

/// Whole-image standardization to zero mean, unit variance (population
/// variance, epsilon guard on the standard deviation). Constant images map
/// to all zeros.
pub fn mvn_normalize(pixels: &[f32]) -> Vec<f32> {
    let n = pixels.len().max(1) as f64;
    let mean = pixels.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = pixels
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let denom = var.sqrt() + 1e-6;
    pixels
        .iter()
        .map(|&v| ((v as f64 - mean) / denom) as f32)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridTransform {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    VFlip,
    HFlip,
}

impl GridTransform {
    pub fn tag(&self) -> &'static str {
        match self {
            GridTransform::Identity => "id",
            GridTransform::Rot90 => "rot90",
            GridTransform::Rot180 => "rot180",
            GridTransform::Rot270 => "rot270",
            GridTransform::VFlip => "vflip",
            GridTransform::HFlip => "hflip",
        }
    }
}

/// Applies one transform to a row-major `h x w` grid. Rotations are
/// clockwise and return a `w x h` grid (identical for the square inputs the
/// augmentation pipeline feeds in).
pub fn transform_grid<T: Copy + Default>(
    data: &[T],
    h: usize,
    w: usize,
    t: GridTransform,
) -> Vec<T> {
    debug_assert_eq!(data.len(), h * w);
    let mut out = vec![T::default(); h * w];
    match t {
        GridTransform::Identity => out.copy_from_slice(data),
        GridTransform::Rot90 => {
            // out is w x h: out(r, c) = in(h-1-c, r)
            for r in 0..w {
                for c in 0..h {
                    out[r * h + c] = data[(h - 1 - c) * w + r];
                }
            }
        }
        GridTransform::Rot180 => {
            for r in 0..h {
                for c in 0..w {
                    out[r * w + c] = data[(h - 1 - r) * w + (w - 1 - c)];
                }
            }
        }
        GridTransform::Rot270 => {
            // out is w x h: out(r, c) = in(c, w-1-r)
            for r in 0..w {
                for c in 0..h {
                    out[r * h + c] = data[c * w + (w - 1 - r)];
                }
            }
        }
        GridTransform::VFlip => {
            for r in 0..h {
                out[r * w..(r + 1) * w].copy_from_slice(&data[(h - 1 - r) * w..(h - r) * w]);
            }
        }
        GridTransform::HFlip => {
            for r in 0..h {
                for c in 0..w {
                    out[r * w + c] = data[r * w + (w - 1 - c)];
                }
            }
        }
    }
    out
}

/// Rotation/flip selection. Crop rules live alongside because Table-style
/// configurations pair a training crop list with a test crop.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationConfig {
    /// Training crop sides, assigned round-robin per source image. Empty
    /// means no cropping.
    pub crop_dims: Vec<usize>,
    /// Test-time standardization crop; `None` keeps the full image.
    pub test_crop: Option<usize>,
    /// When set, both crops become `int(min(h, w) * 0.6)` per image.
    pub crop_min_fraction: bool,
    /// Clockwise rotation degrees, subset of {90, 180, 270}.
    pub rotations: Vec<u16>,
    pub vertical_flip: bool,
    pub horizontal_flip: bool,
}

impl AugmentationConfig {
    /// No cropping, no variants.
    pub fn none() -> Self {
        AugmentationConfig {
            crop_dims: vec![],
            test_crop: None,
            crop_min_fraction: false,
            rotations: vec![],
            vertical_flip: false,
            horizontal_flip: false,
        }
    }

    /// Full rotation set plus both flips (12 variants), no cropping; suits
    /// phantom datasets that are already tightly framed.
    pub fn flips_and_rotations() -> Self {
        AugmentationConfig {
            rotations: vec![90, 180, 270],
            vertical_flip: true,
            horizontal_flip: true,
            ..AugmentationConfig::none()
        }
    }

    /// Multi-scale crops in [100, 120], rotations, both flips; test crop 100.
    pub fn sunnybrook() -> Self {
        AugmentationConfig {
            crop_dims: vec![100, 110, 120],
            test_crop: Some(100),
            ..AugmentationConfig::flips_and_rotations()
        }
    }

    /// Fractional crop `int(min(h, w) * 0.6)` at train and test time, no
    /// affine variants.
    pub fn lvsc() -> Self {
        AugmentationConfig {
            crop_min_fraction: true,
            ..AugmentationConfig::none()
        }
    }

    /// Multi-scale crops in [200, 216], rotations, both flips; test crop 200.
    pub fn rvsc() -> Self {
        AugmentationConfig {
            crop_dims: vec![200, 208, 216],
            test_crop: Some(200),
            ..AugmentationConfig::flips_and_rotations()
        }
    }

    /// Variants per source image: (1 + rotations) x (1 + enabled flips).
    pub fn variant_count(&self) -> usize {
        (1 + self.rotations.len())
            * (1 + self.vertical_flip as usize + self.horizontal_flip as usize)
    }

    fn rotation_transforms(&self) -> Result<Vec<GridTransform>, DataError> {
        let mut out = vec![GridTransform::Identity];
        for &deg in &self.rotations {
            out.push(match deg {
                90 => GridTransform::Rot90,
                180 => GridTransform::Rot180,
                270 => GridTransform::Rot270,
                other => {
                    return Err(DataError::Config(format!(
                        "unsupported rotation {other} (use 90, 180, 270)"
                    )))
                }
            });
        }
        Ok(out)
    }

    fn flip_transforms(&self) -> Vec<Option<GridTransform>> {
        let mut out = vec![None];
        if self.vertical_flip {
            out.push(Some(GridTransform::VFlip));
        }
        if self.horizontal_flip {
            out.push(Some(GridTransform::HFlip));
        }
        out
    }
}

/// Expands one sample into its rotation x flip variant set, applying each
/// transform identically to image and mask. Rotations require square
/// samples.
pub fn augment(sample: &Sample, cfg: &AugmentationConfig) -> Result<Vec<Sample>, DataError> {
    let (h, w) = (sample.height(), sample.width());
    if !cfg.rotations.is_empty() && h != w {
        return Err(DataError::NonSquare {
            id: sample.id.clone(),
            h,
            w,
        });
    }
    let mut out = Vec::with_capacity(cfg.variant_count());
    for rot in cfg.rotation_transforms()? {
        for flip in cfg.flip_transforms() {
            let mut image = transform_grid(sample.image.data(), h, w, rot);
            let mut mask = transform_grid(&sample.mask, h, w, rot);
            let mut tag = rot.tag().to_string();
            if let Some(f) = flip {
                image = transform_grid(&image, h, w, f);
                mask = transform_grid(&mask, h, w, f);
                tag = format!("{tag}_{}", f.tag());
            }
            out.push(Sample {
                id: sample.id.clone(),
                aug: tag,
                image: Tensor::from_vec_unchecked(Shape::new(1, 1, h, w), image),
                mask,
                spacing_mm: sample.spacing_mm,
            });
        }
    }
    Ok(out)
}

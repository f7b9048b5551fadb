//! Dataset ingestion: DICOM/PGM images, contour ground truth, cropping,
//! normalization, and training augmentation, driven by a manifest CSV.
//!
//! Manifest format: header `id,image,contour_endo,contour_epi`, one sample
//! per row, paths relative to the manifest's directory, empty contour cells
//! where ground truth is missing.

pub mod augment;
pub mod contour;
pub mod dicom;
pub mod pgm;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

pub use augment::{
    augment, center_crop_grid, crop_offset, lvsc_crop_dim, mvn_normalize, transform_grid,
    AugmentationConfig, GridTransform,
};
pub use contour::{rasterize_contour, Contour};
pub use dicom::{parse_dicom, DicomImage};
pub use pgm::{read_pgm, read_pgm_file, write_pgm16, write_pgm8};

use crate::tensor::{Shape, Tensor};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    MissingFile {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{file}: {msg}")]
    Dicom { file: String, msg: String },
    #[error("{file}: unsupported transfer syntax {uid}")]
    UnsupportedTransferSyntax { file: String, uid: String },
    #[error("{file}: missing required tag {tag}")]
    MissingTag { file: String, tag: String },
    #[error("{file}: pixel payload has {found} samples, Rows x Columns is {expected}")]
    PayloadMismatch {
        file: String,
        expected: usize,
        found: usize,
    },
    #[error("{file}: not a DICOM stream")]
    NotDicom { file: String },
    #[error("{file}: {msg}")]
    Pgm { file: String, msg: String },
    #[error("{file}: {msg}")]
    Contour { file: String, msg: String },
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("duplicate sample id {0}")]
    DuplicateId(String),
    #[error("sample {id}: {msg}")]
    SizeMismatch { id: String, msg: String },
    #[error("sample {id} is {h}x{w}; rotations require square inputs")]
    NonSquare { id: String, h: usize, w: usize },
    #[error("crop dim {dim} exceeds image {h}x{w}")]
    CropTooLarge { dim: usize, h: usize, w: usize },
    #[error("{0}")]
    Config(String),
}

/// Which ground-truth structure(s) a model is trained on. `Endo` and `Epi`
/// are binary (background/object); `Multi` is the three-class encoding
/// 0 background, 1 myocardium ring, 2 blood pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Structure {
    Endo,
    Epi,
    Multi,
}

impl Structure {
    pub fn classes(&self) -> usize {
        match self {
            Structure::Multi => 3,
            _ => 2,
        }
    }

    pub fn parse(s: &str) -> Result<Self, DataError> {
        match s {
            "endo" => Ok(Structure::Endo),
            "epi" => Ok(Structure::Epi),
            "multi" => Ok(Structure::Multi),
            other => Err(DataError::Config(format!(
                "unknown structure {other} (expected endo, epi, or multi)"
            ))),
        }
    }
}

/// One network-ready image: MVN-normalized pixels plus the per-pixel label
/// mask, pixel spacing in millimeters, and provenance.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    /// Augmentation tag: "orig" for the untransformed sample, otherwise the
    /// rotation/flip combination that produced it.
    pub aug: String,
    pub image: Tensor<f32>,
    pub mask: Vec<u8>,
    pub spacing_mm: (f64, f64),
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.shape().h
    }

    pub fn width(&self) -> usize {
        self.image.shape().w
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    pub image: PathBuf,
    pub contour_endo: Option<PathBuf>,
    pub contour_epi: Option<PathBuf>,
}

pub const MANIFEST_HEADER: &str = "id,image,contour_endo,contour_epi";

pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DataError::MissingFile {
        path: path.display().to_string(),
        source: e,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DataError::Manifest {
        line: 1,
        msg: "empty file, expected header".to_string(),
    })?;
    if header.trim() != MANIFEST_HEADER {
        return Err(DataError::Manifest {
            line: 1,
            msg: format!("expected header `{MANIFEST_HEADER}`, got `{}`", header.trim()),
        });
    }

    let mut rows = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 4 {
            return Err(DataError::Manifest {
                line: idx + 1,
                msg: format!("expected 4 cells, got {}", cells.len()),
            });
        }
        if cells[0].is_empty() || cells[1].is_empty() {
            return Err(DataError::Manifest {
                line: idx + 1,
                msg: "id and image cells must be non-empty".to_string(),
            });
        }
        if !seen.insert(cells[0].to_string()) {
            return Err(DataError::DuplicateId(cells[0].to_string()));
        }
        let resolve = |cell: &str| -> Option<PathBuf> {
            if cell.is_empty() {
                None
            } else {
                Some(base.join(cell))
            }
        };
        rows.push(ManifestRow {
            id: cells[0].to_string(),
            image: base.join(cells[1]),
            contour_endo: resolve(cells[2]),
            contour_epi: resolve(cells[3]),
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub cfg: AugmentationConfig,
    /// Train mode applies round-robin crop scales and the rotation/flip
    /// variants; test mode applies only the standardization crop.
    pub train: bool,
    pub structure: Structure,
}

#[derive(Debug, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub warnings: Vec<String>,
}

/// Decoded image: (rows, cols, samples, spacing in mm).
pub type DecodedImage = (usize, usize, Vec<f32>, (f64, f64));

/// Reads an image by content: binary PGM or DICOM.
pub fn load_image(path: &Path) -> Result<DecodedImage, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::MissingFile {
        path: path.display().to_string(),
        source: e,
    })?;
    let name = path.display().to_string();
    if bytes.starts_with(b"P5") {
        let (h, w, px) = read_pgm(&bytes, &name)?;
        Ok((h, w, px.iter().map(|&v| v as f32).collect(), (1.0, 1.0)))
    } else {
        let img = parse_dicom(&bytes, &name)?;
        Ok((
            img.rows,
            img.cols,
            img.pixels.iter().map(|&v| v as f32).collect(),
            img.spacing,
        ))
    }
}

fn row_to_samples(
    row: &ManifestRow,
    row_index: usize,
    opts: &LoadOptions,
) -> Result<(Vec<Sample>, Vec<String>), DataError> {
    let mut warnings = Vec::new();
    let (h, w, pixels, spacing) = load_image(&row.image)?;

    let load_contour = |path: &Option<PathBuf>| -> Result<Option<Contour>, DataError> {
        let Some(path) = path else { return Ok(None) };
        let c = Contour::parse_file(path)?;
        for &(x, y) in &c.points {
            if x < -0.5 || y < -0.5 || x > w as f64 - 0.5 || y > h as f64 - 0.5 {
                return Err(DataError::SizeMismatch {
                    id: row.id.clone(),
                    msg: format!(
                        "contour point ({x}, {y}) outside {h}x{w} image {}",
                        path.display()
                    ),
                });
            }
        }
        Ok(Some(c))
    };

    let endo = load_contour(&row.contour_endo)?;
    let epi = load_contour(&row.contour_epi)?;

    let mask: Vec<u8> = match opts.structure {
        Structure::Endo => match &endo {
            Some(c) => rasterize_contour(c, h, w)?,
            None => {
                warnings.push(format!("{}: no endo contour, skipped", row.id));
                return Ok((vec![], warnings));
            }
        },
        Structure::Epi => match &epi {
            Some(c) => rasterize_contour(c, h, w)?,
            None => {
                warnings.push(format!("{}: no epi contour, skipped", row.id));
                return Ok((vec![], warnings));
            }
        },
        Structure::Multi => match (&endo, &epi) {
            (Some(endo), Some(epi)) => {
                let inner = rasterize_contour(endo, h, w)?;
                let outer = rasterize_contour(epi, h, w)?;
                inner
                    .iter()
                    .zip(&outer)
                    .map(|(&i, &o)| if i == 1 { 2 } else { o })
                    .collect()
            }
            _ => {
                warnings.push(format!("{}: needs both contours, skipped", row.id));
                return Ok((vec![], warnings));
            }
        },
    };

    // Crop, then normalize, then expand variants.
    let dim = if opts.cfg.crop_min_fraction {
        Some(lvsc_crop_dim(h, w))
    } else if opts.train {
        (!opts.cfg.crop_dims.is_empty())
            .then(|| opts.cfg.crop_dims[row_index % opts.cfg.crop_dims.len()])
    } else {
        opts.cfg.test_crop
    };
    let (h, w, pixels, mask) = match dim {
        Some(dim) => (
            dim,
            dim,
            center_crop_grid(&pixels, h, w, dim)?,
            center_crop_grid(&mask, h, w, dim)?,
        ),
        None => (h, w, pixels, mask),
    };

    let normalized = mvn_normalize(&pixels);
    let base = Sample {
        id: row.id.clone(),
        aug: "orig".to_string(),
        image: Tensor::from_vec(Shape::new(1, 1, h, w), normalized).map_err(|e| {
            DataError::SizeMismatch {
                id: row.id.clone(),
                msg: e.to_string(),
            }
        })?,
        mask,
        spacing_mm: spacing,
    };

    if opts.train {
        Ok((augment(&base, &opts.cfg)?, warnings))
    } else {
        Ok((vec![base], warnings))
    }
}

/// Loads a set of manifest rows into network-ready samples. Rows load in
/// parallel; the resulting order is the row order regardless of worker
/// count.
pub fn load_rows(rows: &[ManifestRow], opts: &LoadOptions) -> Result<Dataset, DataError> {
    let per_row: Vec<(Vec<Sample>, Vec<String>)> = rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| row_to_samples(row, i, opts))
        .collect::<Result<_, _>>()?;

    let mut dataset = Dataset::default();
    for (samples, warnings) in per_row {
        dataset.samples.extend(samples);
        dataset.warnings.extend(warnings);
    }
    Ok(dataset)
}

/// Loads every manifest row into network-ready samples.
pub fn load_dataset(
    manifest_path: impl AsRef<Path>,
    opts: &LoadOptions,
) -> Result<Dataset, DataError> {
    let rows = parse_manifest(&manifest_path)?;
    if rows.is_empty() {
        return Ok(Dataset {
            samples: vec![],
            warnings: vec![format!(
                "manifest {} lists no samples",
                manifest_path.as_ref().display()
            )],
        });
    }
    load_rows(&rows, opts)
}

/// An image prepared for inference: standardization crop plus MVN, no
/// ground truth required.
#[derive(Clone, Debug)]
pub struct PredictionInput {
    pub id: String,
    pub image: Tensor<f32>,
    pub spacing_mm: (f64, f64),
}

/// Loads manifest images for prediction, applying the test-time crop rule.
pub fn load_prediction_inputs(
    rows: &[ManifestRow],
    cfg: &AugmentationConfig,
) -> Result<Vec<PredictionInput>, DataError> {
    rows.par_iter()
        .map(|row| {
            let (h, w, pixels, spacing) = load_image(&row.image)?;
            let dim = if cfg.crop_min_fraction {
                Some(lvsc_crop_dim(h, w))
            } else {
                cfg.test_crop
            };
            let (h, w, pixels) = match dim {
                Some(dim) => (dim, dim, center_crop_grid(&pixels, h, w, dim)?),
                None => (h, w, pixels),
            };
            let normalized = mvn_normalize(&pixels);
            Ok(PredictionInput {
                id: row.id.clone(),
                image: Tensor::from_vec_unchecked(Shape::new(1, 1, h, w), normalized),
                spacing_mm: spacing,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_phantom_row(
        dir: &Path,
        id: &str,
        h: usize,
        w: usize,
    ) -> (String, String, String) {
        let img: Vec<u16> = (0..h * w).map(|i| (i * 131 % 4096) as u16).collect();
        let img_name = format!("{id}.pgm");
        write_pgm16(dir.join(&img_name), h, w, &img).unwrap();
        let endo = Contour::new(vec![(10.0, 10.0), (20.0, 10.0), (20.0, 20.0), (10.0, 20.0)]);
        let epi = Contour::new(vec![(7.0, 7.0), (23.0, 7.0), (23.0, 23.0), (7.0, 23.0)]);
        let endo_name = format!("{id}_endo.txt");
        let epi_name = format!("{id}_epi.txt");
        endo.write_file(dir.join(&endo_name)).unwrap();
        epi.write_file(dir.join(&epi_name)).unwrap();
        (img_name, endo_name, epi_name)
    }

    fn write_manifest(dir: &Path, rows: &[(String, String, String, String)]) -> PathBuf {
        let mut text = format!("{MANIFEST_HEADER}\n");
        for (id, img, endo, epi) in rows {
            text += &format!("{id},{img},{endo},{epi}\n");
        }
        let path = dir.join("manifest.csv");
        fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn train_mode_expands_twelvefold() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = Vec::new();
        for i in 0..15 {
            let id = format!("case{i:02}");
            let (img, endo, epi) = write_phantom_row(dir.path(), &id, 32, 32);
            rows.push((id, img, endo, epi));
        }
        let manifest = write_manifest(dir.path(), &rows);
        let opts = LoadOptions {
            cfg: AugmentationConfig::flips_and_rotations(),
            train: true,
            structure: Structure::Endo,
        };
        let ds = load_dataset(&manifest, &opts).unwrap();
        assert_eq!(ds.samples.len(), 180);
        assert!(ds.warnings.is_empty());

        let test = load_dataset(
            &manifest,
            &LoadOptions {
                train: false,
                ..opts
            },
        )
        .unwrap();
        assert_eq!(test.samples.len(), 15);
        assert!(test.samples.iter().all(|s| s.aug == "orig"));
    }

    #[test]
    fn empty_manifest_warns() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_manifest(dir.path(), &[]);
        let ds = load_dataset(
            &manifest,
            &LoadOptions {
                cfg: AugmentationConfig::none(),
                train: true,
                structure: Structure::Endo,
            },
        )
        .unwrap();
        assert!(ds.samples.is_empty());
        assert_eq!(ds.warnings.len(), 1);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (img, endo, epi) = write_phantom_row(dir.path(), "case", 16, 16);
        let manifest = write_manifest(
            dir.path(),
            &[
                ("case".into(), img.clone(), endo.clone(), epi.clone()),
                ("case".into(), img, endo, epi),
            ],
        );
        assert!(matches!(
            parse_manifest(&manifest),
            Err(DataError::DuplicateId(_))
        ));
    }

    #[test]
    fn missing_image_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_manifest(
            dir.path(),
            &[("x".into(), "gone.pgm".into(), "".into(), "".into())],
        );
        let err = load_dataset(
            &manifest,
            &LoadOptions {
                cfg: AugmentationConfig::none(),
                train: false,
                structure: Structure::Endo,
            },
        );
        // With no endo contour the row would be skipped, but the image load
        // fails first.
        assert!(matches!(err, Err(DataError::MissingFile { .. })));
    }

    #[test]
    fn contour_outside_image_is_a_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let img: Vec<u16> = vec![0; 16 * 16];
        write_pgm16(dir.path().join("img.pgm"), 16, 16, &img).unwrap();
        Contour::new(vec![(2.0, 2.0), (40.0, 2.0), (40.0, 40.0)])
            .write_file(dir.path().join("endo.txt"))
            .unwrap();
        let manifest = write_manifest(
            dir.path(),
            &[("x".into(), "img.pgm".into(), "endo.txt".into(), "".into())],
        );
        let err = load_dataset(
            &manifest,
            &LoadOptions {
                cfg: AugmentationConfig::none(),
                train: false,
                structure: Structure::Endo,
            },
        );
        assert!(matches!(err, Err(DataError::SizeMismatch { .. })));
    }

    #[test]
    fn multi_class_encoding_nests_pool_inside_ring() {
        let dir = tempfile::tempdir().unwrap();
        let (img, endo, epi) = write_phantom_row(dir.path(), "case", 32, 32);
        let manifest = write_manifest(dir.path(), &[("case".into(), img, endo, epi)]);
        let ds = load_dataset(
            &manifest,
            &LoadOptions {
                cfg: AugmentationConfig::none(),
                train: false,
                structure: Structure::Multi,
            },
        )
        .unwrap();
        let mask = &ds.samples[0].mask;
        assert!(mask.contains(&0) && mask.contains(&1) && mask.contains(&2));
        // Blood pool (15,15) inside both contours; ring (8,15) between them.
        assert_eq!(mask[15 * 32 + 15], 2);
        assert_eq!(mask[8 * 32 + 15], 1);
        assert_eq!(mask[0], 0);
    }

    /// A marker pixel embedded in the image and mask lands at the same
    /// position in every augmented variant.
    #[test]
    fn augmentation_moves_image_and_mask_together() {
        let h = 12;
        let mut image = vec![0.0f32; h * h];
        let mut mask = vec![0u8; h * h];
        image[2 * h + 9] = 7.5;
        mask[2 * h + 9] = 1;
        let sample = Sample {
            id: "marker".into(),
            aug: "orig".into(),
            image: Tensor::from_vec(Shape::new(1, 1, h, h), image).unwrap(),
            mask,
            spacing_mm: (1.0, 1.0),
        };
        let variants = augment(&sample, &AugmentationConfig::flips_and_rotations()).unwrap();
        assert_eq!(variants.len(), 12);
        for v in &variants {
            let img_pos = v
                .image
                .data()
                .iter()
                .position(|&p| p == 7.5)
                .expect("marker survives");
            let mask_pos = v.mask.iter().position(|&m| m == 1).unwrap();
            assert_eq!(img_pos, mask_pos, "variant {}", v.aug);
            assert_eq!(v.mask.iter().filter(|&&m| m == 1).count(), 1);
        }
        // All 12 variants are distinct placements except where symmetry
        // coincides; at minimum the tag set is distinct.
        let tags: std::collections::HashSet<_> = variants.iter().map(|v| v.aug.clone()).collect();
        assert_eq!(tags.len(), 12);
    }

    #[test]
    fn non_square_with_rotations_is_an_error() {
        let sample = Sample {
            id: "rect".into(),
            aug: "orig".into(),
            image: Tensor::from_vec(Shape::new(1, 1, 2, 3), vec![0.0; 6]).unwrap(),
            mask: vec![0; 6],
            spacing_mm: (1.0, 1.0),
        };
        assert!(matches!(
            augment(&sample, &AugmentationConfig::flips_and_rotations()),
            Err(DataError::NonSquare { .. })
        ));
    }
}

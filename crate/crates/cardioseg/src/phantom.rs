//! Deterministic synthetic short-axis-like datasets with exact ground
//! truth, so training, fine-tuning, and evaluation run without gated
//! clinical data.
//!
//! Family A mimics a left ventricle: a bright blood pool inside the
//! endocardial ellipse, an intermediate-intensity muscle ring out to the
//! epicardial ellipse, dark background. Family B mimics the right
//! ventricle's crescent: a circular epicardial boundary with a shifted disc
//! carved out, leaving a crescent-shaped pool. Contours are emitted as
//! 64-point polylines and the masks are their exact rasterizations, so mask
//! and contour agree by construction.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{rasterize_contour, write_pgm16, Contour, DataError, MANIFEST_HEADER};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("sample {index}: {msg}")]
    Containment { index: usize, msg: String },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhantomFamily {
    /// Concentric ellipses (left-ventricle-like).
    LvRings,
    /// Circle minus shifted disc (right-ventricle-like crescent).
    RvCrescent,
}

#[derive(Clone, Debug)]
pub struct PhantomSpec {
    pub family: PhantomFamily,
    /// Square image side in pixels.
    pub size: usize,
    pub count: usize,
    pub seed: u64,
    /// Uniform center jitter in pixels, per axis.
    pub center_jitter: f64,
    /// Endocardial semi-axis range (family A) or epicardial radius range
    /// (family B).
    pub radius_range: (f64, f64),
    /// Muscle ring thickness range (family A only).
    pub ring_thickness: (f64, f64),
    pub intensity_bg: f64,
    pub intensity_ring: f64,
    pub intensity_pool: f64,
    /// Additive Gaussian noise standard deviation on the intensity levels.
    pub noise_sd: f64,
    /// Bright background blobs at pool intensity that do not belong to the
    /// object, mimicking surrounding structures whose intensity
    /// distribution overlaps the target's. Zero disables them.
    pub distractors: usize,
}

impl PhantomSpec {
    pub fn family_a(size: usize, count: usize, seed: u64) -> Self {
        let scale = size as f64 / 64.0;
        PhantomSpec {
            family: PhantomFamily::LvRings,
            size,
            count,
            seed,
            center_jitter: 3.0 * scale,
            radius_range: (8.0 * scale, 12.0 * scale),
            ring_thickness: (3.0 * scale, 5.0 * scale),
            intensity_bg: 12000.0,
            intensity_ring: 26000.0,
            intensity_pool: 44000.0,
            noise_sd: 1500.0,
            distractors: 0,
        }
    }

    pub fn family_b(size: usize, count: usize, seed: u64) -> Self {
        let scale = size as f64 / 64.0;
        PhantomSpec {
            family: PhantomFamily::RvCrescent,
            size,
            count,
            seed,
            center_jitter: 3.0 * scale,
            radius_range: (12.0 * scale, 16.0 * scale),
            ring_thickness: (0.0, 0.0),
            intensity_bg: 12000.0,
            intensity_ring: 26000.0,
            intensity_pool: 44000.0,
            noise_sd: 1500.0,
            distractors: 0,
        }
    }

    /// Low-contrast, noisy variant with confusable background blobs; the
    /// regime where feature quality, not raw intensity, decides
    /// segmentation.
    pub fn confounded(mut self) -> Self {
        self.intensity_bg = 16000.0;
        self.intensity_ring = 22000.0;
        self.intensity_pool = 28000.0;
        self.noise_sd = 6000.0;
        self.distractors = 4;
        self
    }
}

#[derive(Clone, Debug)]
pub struct PhantomSample {
    pub id: String,
    pub size: usize,
    pub pixels: Vec<u16>,
    pub endo: Contour,
    pub epi: Contour,
    pub endo_mask: Vec<u8>,
    pub epi_mask: Vec<u8>,
}

/// 64-point axis-aligned ellipse polyline.
pub fn ellipse_contour(cx: f64, cy: f64, a: f64, b: f64, points: usize) -> Contour {
    Contour::new(
        (0..points)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / points as f64;
                (cx + a * t.cos(), cy + b * t.sin())
            })
            .collect(),
    )
}

/// Boundary of circle(c1, r1) minus disc(c2, r2): the arc of the outer
/// circle away from the cut joined to the cut disc's intruding arc. The
/// discs must properly intersect with the cut poking out of the outer
/// circle.
fn crescent_contour(
    c1: (f64, f64),
    r1: f64,
    c2: (f64, f64),
    r2: f64,
    points: usize,
) -> Option<Contour> {
    let d = ((c2.0 - c1.0).powi(2) + (c2.1 - c1.1).powi(2)).sqrt();
    if d <= (r1 - r2).abs() || d >= r1 + r2 || d + r2 <= r1 {
        return None;
    }
    // Intersection points in the frame where c2 lies along +x from c1.
    let a = (d * d + r1 * r1 - r2 * r2) / (2.0 * d);
    let h = (r1 * r1 - a * a).sqrt();
    let ux = ((c2.0 - c1.0) / d, (c2.1 - c1.1) / d);
    let base_angle = ux.1.atan2(ux.0);
    let phi = h.atan2(a); // angle of the intersection on the outer circle
    let psi = h.atan2(a - d); // angle on the cut disc (from its center)

    let n_outer = (points * 2) / 3;
    let n_inner = points - n_outer;
    let mut pts = Vec::with_capacity(points);
    // Outer arc from +phi around the far side to -phi (counterclockwise).
    for i in 0..n_outer {
        let t = phi + (2.0 * PI - 2.0 * phi) * i as f64 / n_outer as f64;
        let ang = base_angle + t;
        pts.push((c1.0 + r1 * ang.cos(), c1.1 + r1 * ang.sin()));
    }
    // Cut arc from the -phi intersection back to +phi, tracing the side
    // that intrudes into the outer circle (through angle pi from c2).
    for i in 0..n_inner {
        let t = (2.0 * PI - psi) - (2.0 * PI - 2.0 * psi) * i as f64 / n_inner as f64;
        let ang = base_angle + t;
        pts.push((c2.0 + r2 * ang.cos(), c2.1 + r2 * ang.sin()));
    }
    Some(Contour::new(pts))
}

fn gaussian<R: Rng>(rng: &mut R, sd: f64) -> f64 {
    // Box-Muller; consumes two uniform draws deterministically.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    sd * (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

pub fn generate(spec: &PhantomSpec) -> Result<Vec<PhantomSample>, PhantomError> {
    if spec.size < 16 {
        return Err(PhantomError::Config("image size must be at least 16".into()));
    }
    if spec.radius_range.0 > spec.radius_range.1 || spec.radius_range.0 <= 0.0 {
        return Err(PhantomError::Config("bad radius range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.count);
    for index in 0..spec.count {
        let center = spec.size as f64 / 2.0 - 0.5;
        let cx = center + rng.gen_range(-spec.center_jitter..=spec.center_jitter);
        let cy = center + rng.gen_range(-spec.center_jitter..=spec.center_jitter);

        let (endo, epi) = match spec.family {
            PhantomFamily::LvRings => {
                let a = rng.gen_range(spec.radius_range.0..=spec.radius_range.1);
                let b = rng.gen_range(spec.radius_range.0..=spec.radius_range.1);
                let t = rng.gen_range(spec.ring_thickness.0..=spec.ring_thickness.1);
                (
                    ellipse_contour(cx, cy, a, b, 64),
                    ellipse_contour(cx, cy, a + t, b + t, 64),
                )
            }
            PhantomFamily::RvCrescent => {
                let r1 = rng.gen_range(spec.radius_range.0..=spec.radius_range.1);
                let r2 = r1 * rng.gen_range(0.55..=0.75);
                let d = (r1 - r2) + r2 * rng.gen_range(0.35..=0.65);
                let theta = rng.gen_range(0.0..2.0 * PI);
                let c2 = (cx + d * theta.cos(), cy + d * theta.sin());
                let endo = crescent_contour((cx, cy), r1, c2, r2, 64).ok_or_else(|| {
                    PhantomError::Containment {
                        index,
                        msg: "crescent construction failed".to_string(),
                    }
                })?;
                (endo, ellipse_contour(cx, cy, r1, r1, 64))
            }
        };

        // Containment: every contour point stays inside with a margin.
        let margin = 1.0;
        for &(x, y) in endo.points.iter().chain(&epi.points) {
            if x < margin
                || y < margin
                || x > spec.size as f64 - 1.0 - margin
                || y > spec.size as f64 - 1.0 - margin
            {
                return Err(PhantomError::Containment {
                    index,
                    msg: format!("contour point ({x:.1}, {y:.1}) leaves the image"),
                });
            }
        }

        let endo_mask = rasterize_contour(&endo, spec.size, spec.size)?;
        let epi_mask = rasterize_contour(&epi, spec.size, spec.size)?;

        // Confusable background blobs: pool-intensity discs placed clear of
        // the object so the ground-truth masks stay untouched.
        let epi_extent = epi
            .points
            .iter()
            .map(|&(x, y)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt())
            .fold(0.0f64, f64::max);
        let mut blobs: Vec<(f64, f64, f64)> = Vec::new();
        let mut attempts = 0;
        while blobs.len() < spec.distractors && attempts < 60 {
            attempts += 1;
            let r = rng.gen_range(2.0..=4.0) * (spec.size as f64 / 64.0).max(0.5);
            let bx = rng.gen_range(r + 1.0..spec.size as f64 - 1.0 - r);
            let by = rng.gen_range(r + 1.0..spec.size as f64 - 1.0 - r);
            let clearance = ((bx - cx).powi(2) + (by - cy).powi(2)).sqrt();
            if clearance > epi_extent + r + 2.0 {
                blobs.push((bx, by, r));
            }
        }

        let mut pixels = Vec::with_capacity(spec.size * spec.size);
        for i in 0..spec.size * spec.size {
            let (row, col) = (i / spec.size, i % spec.size);
            let level = if endo_mask[i] != 0 {
                spec.intensity_pool
            } else if epi_mask[i] != 0 {
                spec.intensity_ring
            } else if blobs.iter().any(|&(bx, by, r)| {
                (col as f64 - bx).powi(2) + (row as f64 - by).powi(2) <= r * r
            }) {
                spec.intensity_pool
            } else {
                spec.intensity_bg
            };
            let v = level + gaussian(&mut rng, spec.noise_sd);
            pixels.push(v.clamp(0.0, 65535.0) as u16);
        }

        out.push(PhantomSample {
            id: format!("phantom{index:03}"),
            size: spec.size,
            pixels,
            endo,
            epi,
            endo_mask,
            epi_mask,
        });
    }
    Ok(out)
}

/// Writes PGM images, contour text files, and a manifest consumable by the
/// data pipeline. Returns the manifest path.
pub fn write_dataset(samples: &[PhantomSample], dir: impl AsRef<Path>) -> Result<PathBuf, PhantomError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "{MANIFEST_HEADER}");
    for s in samples {
        let image = format!("{}.pgm", s.id);
        let endo = format!("{}_endo.txt", s.id);
        let epi = format!("{}_epi.txt", s.id);
        write_pgm16(dir.join(&image), s.size, s.size, &s.pixels)?;
        s.endo.write_file(dir.join(&endo))?;
        s.epi.write_file(dir.join(&epi))?;
        let _ = writeln!(manifest, "{},{image},{endo},{epi}", s.id);
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest)?;
    Ok(path)
}

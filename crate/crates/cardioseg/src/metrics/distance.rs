//! Contour distance measures in millimeters.
//!
//! Distances are point-to-point: contours here are dense (pixel-scale
//! vertex spacing), so the difference from point-to-segment distance is
//! sub-pixel, and plain point sets keep the brute-force test oracles exact.
//! Coordinates scale per axis by the pixel spacing before the Euclidean
//! distance, so anisotropic acquisitions measure correctly.

use super::MetricError;
use crate::data::Contour;

fn scaled(points: &[(f64, f64)], spacing_mm: (f64, f64)) -> Vec<(f64, f64)> {
    // x runs along columns, y along rows.
    points
        .iter()
        .map(|&(x, y)| (x * spacing_mm.1, y * spacing_mm.0))
        .collect()
}

fn min_dist_sq(p: (f64, f64), points: &[(f64, f64)]) -> f64 {
    points
        .iter()
        .map(|&(x, y)| {
            let dx = p.0 - x;
            let dy = p.1 - y;
            dx * dx + dy * dy
        })
        .fold(f64::INFINITY, f64::min)
}

fn check(a: &Contour, m: &Contour) -> Result<(), MetricError> {
    if a.is_empty() || m.is_empty() {
        return Err(MetricError::EmptyContour);
    }
    Ok(())
}

/// Mean over the points of `a` of the distance to the nearest point of `m`.
fn directed_mean(a: &[(f64, f64)], m: &[(f64, f64)]) -> f64 {
    a.iter().map(|&p| min_dist_sq(p, m).sqrt()).sum::<f64>() / a.len() as f64
}

fn directed_max(a: &[(f64, f64)], m: &[(f64, f64)]) -> f64 {
    a.iter()
        .map(|&p| min_dist_sq(p, m))
        .fold(0.0f64, f64::max)
        .sqrt()
}

/// Average perpendicular distance, symmetrized as the mean of the two
/// directed average distances.
pub fn apd(a: &Contour, m: &Contour, spacing_mm: (f64, f64)) -> Result<f64, MetricError> {
    check(a, m)?;
    let pa = scaled(&a.points, spacing_mm);
    let pm = scaled(&m.points, spacing_mm);
    Ok(0.5 * (directed_mean(&pa, &pm) + directed_mean(&pm, &pa)))
}

/// One-directional APD (from `a` toward `m`), kept for comparison with the
/// symmetrized default.
pub fn apd_directed(a: &Contour, m: &Contour, spacing_mm: (f64, f64)) -> Result<f64, MetricError> {
    check(a, m)?;
    let pa = scaled(&a.points, spacing_mm);
    let pm = scaled(&m.points, spacing_mm);
    Ok(directed_mean(&pa, &pm))
}

/// Symmetric Hausdorff distance: the larger of the two directed max-min
/// distances.
pub fn hausdorff(a: &Contour, m: &Contour, spacing_mm: (f64, f64)) -> Result<f64, MetricError> {
    check(a, m)?;
    let pa = scaled(&a.points, spacing_mm);
    let pm = scaled(&m.points, spacing_mm);
    Ok(directed_max(&pa, &pm).max(directed_max(&pm, &pa)))
}

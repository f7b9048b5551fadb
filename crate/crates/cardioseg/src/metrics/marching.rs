//! Mask-to-contour conversion: largest-component selection followed by
//! marching squares.
//!
//! Pixel centers sit at integer coordinates; the binary mask is sampled on
//! that lattice with a virtual zero border, and contour vertices land on
//! cell-edge midpoints at iso-level 0.5. Saddle cells keep diagonal
//! foreground pixels connected, matching the 8-connected component
//! definition used for selection. Segments are oriented with the object on
//! the left, so loops chain head-to-tail deterministically.

use std::collections::HashMap;

use crate::data::Contour;

/// Binary mask of the largest 8-connected nonzero component; `None` when the
/// mask has no foreground. Ties resolve to the component seen first in scan
/// order.
pub fn largest_component(mask: &[u8], h: usize, w: usize) -> Option<Vec<u8>> {
    debug_assert_eq!(mask.len(), h * w);
    let mut label = vec![0u32; h * w];
    let mut next = 0u32;
    let mut best: Option<(u32, usize)> = None;
    let mut queue = Vec::new();
    for start in 0..h * w {
        if mask[start] == 0 || label[start] != 0 {
            continue;
        }
        next += 1;
        let mut size = 0usize;
        queue.clear();
        queue.push(start);
        label[start] = next;
        while let Some(p) = queue.pop() {
            size += 1;
            let (r, c) = (p / w, p % w);
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let q = nr as usize * w + nc as usize;
                    if mask[q] != 0 && label[q] == 0 {
                        label[q] = next;
                        queue.push(q);
                    }
                }
            }
        }
        if best.map(|(_, s)| size > s).unwrap_or(true) {
            best = Some((next, size));
        }
    }
    let (keep, _) = best?;
    Some(
        label
            .iter()
            .map(|&l| if l == keep { 1 } else { 0 })
            .collect(),
    )
}

/// Half-integer vertex key: doubled coordinates stay exactly integral.
fn key(x: f64, y: f64) -> (i64, i64) {
    ((2.0 * x).round() as i64, (2.0 * y).round() as i64)
}

/// Marching-squares boundary of the largest 8-connected component: the
/// closed loop with the greatest enclosed area (holes produce smaller inner
/// loops, which are dropped). `None` when the mask is empty.
pub fn mask_to_contour(mask: &[u8], h: usize, w: usize) -> Option<Contour> {
    let component = largest_component(mask, h, w)?;
    let inside = |r: i64, c: i64| -> bool {
        r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w
            && component[r as usize * w + c as usize] != 0
    };

    // Collect directed segments, object on the left (y grows downward).
    let mut segments: Vec<((f64, f64), (f64, f64))> = Vec::new();
    for r in -1..h as i64 {
        for c in -1..w as i64 {
            let case = inside(r, c) as u8
                | (inside(r, c + 1) as u8) << 1
                | (inside(r + 1, c + 1) as u8) << 2
                | (inside(r + 1, c) as u8) << 3;
            let (rf, cf) = (r as f64, c as f64);
            let top = (cf + 0.5, rf);
            let right = (cf + 1.0, rf + 0.5);
            let bottom = (cf + 0.5, rf + 1.0);
            let left = (cf, rf + 0.5);
            // Bits: 1 = top-left, 2 = top-right, 4 = bottom-right,
            // 8 = bottom-left.
            match case {
                0 | 15 => {}
                1 => segments.push((left, top)),
                2 => segments.push((top, right)),
                3 => segments.push((left, right)),
                4 => segments.push((right, bottom)),
                5 => {
                    // Diagonal saddle: keep tl and br connected.
                    segments.push((right, top));
                    segments.push((left, bottom));
                }
                6 => segments.push((top, bottom)),
                7 => segments.push((left, bottom)),
                8 => segments.push((bottom, left)),
                9 => segments.push((bottom, top)),
                10 => {
                    segments.push((top, left));
                    segments.push((bottom, right));
                }
                11 => segments.push((bottom, right)),
                12 => segments.push((right, left)),
                13 => segments.push((right, top)),
                14 => segments.push((top, left)),
                _ => unreachable!(),
            }
        }
    }
    if segments.is_empty() {
        return None;
    }

    // Chain segments into closed loops; every vertex has exactly one
    // outgoing segment.
    let mut by_start: HashMap<(i64, i64), usize> = HashMap::with_capacity(segments.len());
    for (i, seg) in segments.iter().enumerate() {
        by_start.insert(key(seg.0 .0, seg.0 .1), i);
    }
    let mut used = vec![false; segments.len()];
    let mut best_loop: Option<(f64, Vec<(f64, f64)>)> = None;
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        let mut points = Vec::new();
        let mut i = start;
        loop {
            used[i] = true;
            let (from, to) = segments[i];
            points.push(from);
            let next = by_start
                .get(&key(to.0, to.1))
                .copied()
                .expect("marching squares produces closed loops");
            if next == start {
                break;
            }
            i = next;
        }
        // Shoelace area; the outer boundary encloses the most.
        let mut area2 = 0.0;
        for j in 0..points.len() {
            let (x1, y1) = points[j];
            let (x2, y2) = points[(j + 1) % points.len()];
            area2 += x1 * y2 - x2 * y1;
        }
        let area = area2.abs() * 0.5;
        if best_loop.as_ref().map(|(a, _)| area > *a).unwrap_or(true) {
            best_loop = Some((area, points));
        }
    }
    best_loop.map(|(_, points)| Contour::new(points))
}

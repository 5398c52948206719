//! Scalar evaluation metrics: RMSE, Hausdorff distance, IoU, and F1 (Dice).

use crate::error::{RegError, Result};
use crate::geom::Point;
use crate::image::{Image, Mask};
use crate::nonrigid::ssd;

/// Root mean squared intensity difference over the region (full frame when
/// None).
pub fn rmse(a: &Image, b: &Image, region: Option<&Mask>) -> Result<f64> {
    Ok(ssd(a, b, region)?.sqrt())
}

/// Region-overlap statistics of two masks (background excluded).
#[derive(Clone, Copy, Debug)]
pub struct Overlap {
    pub iou: f64,
    pub f1: f64,
    /// True when both masks were empty: overlap is vacuously perfect.
    pub vacuous: bool,
}

pub fn overlap(a: &Mask, b: &Mask) -> Result<Overlap> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(RegError::DimensionMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    let mut inter = 0u64;
    let mut na = 0u64;
    let mut nb = 0u64;
    for (pa, pb) in a.data().iter().zip(b.data()) {
        na += *pa as u64;
        nb += *pb as u64;
        inter += (*pa && *pb) as u64;
    }
    if na == 0 && nb == 0 {
        return Ok(Overlap { iou: 1.0, f1: 1.0, vacuous: true });
    }
    let union = na + nb - inter;
    Ok(Overlap {
        iou: inter as f64 / union as f64,
        f1: 2.0 * inter as f64 / (na + nb) as f64,
        vacuous: false,
    })
}

/// Intersection over union of the foreground regions.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    Ok(overlap(a, b)?.iou)
}

/// F1 of the foreground regions, i.e. the Dice coefficient
/// 2|a AND b| / (|a| + |b|).
pub fn f1(a: &Mask, b: &Mask) -> Result<f64> {
    Ok(overlap(a, b)?.f1)
}

/// Centers of foreground pixels that touch the background through at least
/// one 4-neighbor; pixels on the frame border count as touching background.
pub fn boundary_points(mask: &Mask) -> Vec<Point> {
    let (w, h) = (mask.width(), mask.height());
    let bg = |x: i64, y: i64| -> bool {
        x < 0 || y < 0 || x >= w as i64 || y >= h as i64 || !mask.get(x as usize, y as usize)
    };
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let (xi, yi) = (x as i64, y as i64);
            if bg(xi - 1, yi) || bg(xi + 1, yi) || bg(xi, yi - 1) || bg(xi, yi + 1) {
                out.push(Point::new(x as f64, y as f64));
            }
        }
    }
    out
}

/// Hausdorff distance: the larger of the two directed max-min Euclidean
/// distances. Exact; a uniform spatial grid with expanding ring search keeps
/// it near O(n) for spread-out sets.
pub fn hausdorff(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(RegError::EmptyPointSet);
    }
    Ok(directed_hausdorff(a, b).max(directed_hausdorff(b, a)))
}

fn directed_hausdorff(from: &[Point], to: &[Point]) -> f64 {
    // One grid over the joint bounding box so query points always fall in a
    // cell, keeping the ring lower bound valid.
    let mut min_x = f64::INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for p in from.iter().chain(to) {
        min_x = min_x.min(p.x);
        min_y = min_y.min(p.y);
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
    }
    let extent = (max_x - min_x).max(max_y - min_y).max(1e-9);
    let cells = ((to.len() as f64).sqrt().ceil() as usize).clamp(1, 256);
    let h = extent / cells as f64;
    let cell_of = |p: &Point| -> (usize, usize) {
        (
            (((p.x - min_x) / h) as usize).min(cells - 1),
            (((p.y - min_y) / h) as usize).min(cells - 1),
        )
    };
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); cells * cells];
    for (i, p) in to.iter().enumerate() {
        let (cx, cy) = cell_of(p);
        buckets[cy * cells + cx].push(i);
    }

    let mut worst = 0.0f64;
    for p in from {
        let (cx, cy) = cell_of(p);
        let mut best = f64::INFINITY;
        for ring in 0..cells {
            // Cells at Chebyshev distance `ring` from (cx, cy).
            let x0 = cx.saturating_sub(ring);
            let x1 = (cx + ring).min(cells - 1);
            let y0 = cy.saturating_sub(ring);
            let y1 = (cy + ring).min(cells - 1);
            for gy in y0..=y1 {
                for gx in x0..=x1 {
                    if gx.abs_diff(cx).max(gy.abs_diff(cy)) != ring {
                        continue;
                    }
                    for &bi in &buckets[gy * cells + gx] {
                        best = best.min(p.dist(to[bi]));
                    }
                }
            }
            // Any point in an unscanned cell is at Chebyshev cell distance
            // >= ring + 1, hence at Euclidean distance >= ring * h.
            if best <= ring as f64 * h {
                break;
            }
        }
        worst = worst.max(best);
    }
    worst
}

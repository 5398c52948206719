//! Boundary refinement: replace a fuzzy mask boundary with the minimum-cost
//! closed path through a gradient-weighted polar graph.
//!
//! The image is Gaussian-smoothed, its gradient magnitude becomes (negated)
//! node weights on a polar band unwrapped around the initial mask's centroid,
//! and dynamic programming finds the smoothest-jump closed path of lowest
//! total weight — i.e. the closed contour hugging the strongest edge near the
//! initial boundary. Assumes a star-shaped region, which oval tissue
//! sections satisfy.

use serde::{Deserialize, Serialize};

use crate::error::{RegError, Result};
use crate::geom::Point;
use crate::image::{Image, Mask};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Gaussian sigma applied to the image before taking gradients.
    pub smoothing_sigma: f64,
    /// Rows R of the polar band (radial resolution).
    pub radial_samples: usize,
    /// Columns Theta of the polar band (angular resolution).
    pub angular_samples: usize,
    /// Maximum |row change| between adjacent columns (and across closure).
    pub max_radial_jump: usize,
    /// Band half-width as a fraction of the initial boundary radius.
    pub band_fraction: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            smoothing_sigma: 2.0,
            radial_samples: 41,
            angular_samples: 360,
            max_radial_jump: 2,
            band_fraction: 0.25,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radial_samples < 8 {
            return Err(RegError::InvalidParameter(format!(
                "radial_samples must be at least 8, got {}",
                self.radial_samples
            )));
        }
        if self.angular_samples < 16 {
            return Err(RegError::InvalidParameter(format!(
                "angular_samples must be at least 16, got {}",
                self.angular_samples
            )));
        }
        if self.max_radial_jump == 0 {
            return Err(RegError::InvalidParameter(
                "max_radial_jump must be at least 1".into(),
            ));
        }
        if !(self.band_fraction > 0.0 && self.band_fraction < 1.0) {
            return Err(RegError::InvalidParameter(format!(
                "band_fraction must lie in (0,1), got {}",
                self.band_fraction
            )));
        }
        if self.smoothing_sigma.is_nan() || self.smoothing_sigma <= 0.0 {
            return Err(RegError::InvalidParameter(format!(
                "smoothing_sigma must be positive, got {}",
                self.smoothing_sigma
            )));
        }
        Ok(())
    }
}

/// Refinement output: the rasterized mask, the closed polygon (one vertex per
/// angular sample), and whether the search band had to be clipped at the
/// frame border.
#[derive(Clone, Debug)]
pub struct RefineResult {
    pub mask: Mask,
    pub polygon: Vec<Point>,
    pub band_clipped: bool,
}

/// Minimum-weight closed path through a Theta x R node grid: one node per
/// column, |row(t+1) - row(t)| <= max_jump, and the same bound between the
/// last and first column. Returns (total weight, row per column). Ties break
/// toward the lowest cost, then the smallest starting row, then the
/// lexicographically smallest row sequence.
pub fn min_closed_path(weights: &[Vec<f64>], max_jump: usize) -> (f64, Vec<usize>) {
    let t = weights.len();
    assert!(t > 0, "at least one column");
    let r = weights[0].len();
    assert!(r > 0 && weights.iter().all(|c| c.len() == r), "rectangular weight grid");

    let mut best_cost = f64::INFINITY;
    let mut best_path: Vec<usize> = Vec::new();
    // cost_to_end[th][j]: cheapest completion from node (th, j) to the last
    // column, honoring the closure bound back to the start row.
    let mut cost_to_end = vec![vec![0.0f64; r]; t];
    for start in 0..r {
        for j in 0..r {
            cost_to_end[t - 1][j] = if start.abs_diff(j) <= max_jump {
                weights[t - 1][j]
            } else {
                f64::INFINITY
            };
        }
        for th in (0..t - 1).rev() {
            for j in 0..r {
                let lo = j.saturating_sub(max_jump);
                let hi = (j + max_jump).min(r - 1);
                let m = cost_to_end[th + 1][lo..=hi]
                    .iter()
                    .fold(f64::INFINITY, |acc, &c| acc.min(c));
                cost_to_end[th][j] = weights[th][j] + m;
            }
        }
        let cost = cost_to_end[0][start];
        if cost < best_cost {
            // Greedy forward reconstruction picking the smallest row that
            // attains the optimal completion at each column.
            let mut path = Vec::with_capacity(t);
            path.push(start);
            let mut cur = start;
            for th in 0..t - 1 {
                let lo = cur.saturating_sub(max_jump);
                let hi = (cur + max_jump).min(r - 1);
                let mut pick = lo;
                for k in lo..=hi {
                    if cost_to_end[th + 1][k] < cost_to_end[th + 1][pick] {
                        pick = k;
                    }
                }
                cur = pick;
                path.push(cur);
            }
            best_cost = cost;
            best_path = path;
        }
    }
    (best_cost, best_path)
}

/// Boundary radius of the region along each of `count` ray directions from
/// `center`: the largest sampled radius still inside the region.
fn radial_profile(region: &Mask, center: Point, count: usize) -> Vec<f64> {
    let img = region.to_image();
    let max_r = (region.width() as f64).hypot(region.height() as f64);
    let step = 0.25;
    (0..count)
        .map(|i| {
            let angle = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            let (s, c) = angle.sin_cos();
            let mut last_inside = 0.0f64;
            let mut rr = 0.0;
            while rr <= max_r {
                let p = Point::new(center.x + rr * c, center.y + rr * s);
                let smp = img.bilinear_sample(p.x, p.y);
                if smp.in_domain && smp.value >= 0.5 {
                    last_inside = rr;
                }
                rr += step;
            }
            last_inside.max(1.0)
        })
        .collect()
}

/// Ordered polygon tracing the region boundary: one vertex per ray from
/// `center`, at the measured boundary radius. Assumes the region is
/// star-shaped around `center` (true of the oval regions this pipeline
/// targets), which makes the vertices angularly sorted by construction.
pub fn mask_polygon(region: &Mask, center: Point, count: usize) -> Result<Vec<Point>> {
    region.require_nonempty()?;
    if count < 3 {
        return Err(RegError::InvalidParameter(format!(
            "polygon needs at least 3 rays, got {count}"
        )));
    }
    let radii = radial_profile(region, center, count);
    Ok(radii
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let angle = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            let (s, c) = angle.sin_cos();
            Point::new(center.x + r * c, center.y + r * s)
        })
        .collect())
}

/// Fill a closed polygon by even-odd scanline rasterization at pixel centers.
pub fn rasterize_polygon(polygon: &[Point], width: usize, height: usize) -> Mask {
    let mut mask = Mask::filled(width, height, false);
    if polygon.len() < 3 {
        return mask;
    }
    for y in 0..height {
        let fy = y as f64;
        let mut xs: Vec<f64> = Vec::new();
        for i in 0..polygon.len() {
            let a = polygon[i];
            let b = polygon[(i + 1) % polygon.len()];
            // Half-open rule avoids double-counting vertices on a scanline.
            let (lo, hi) = if a.y <= b.y { (a, b) } else { (b, a) };
            if fy >= lo.y && fy < hi.y {
                xs.push(lo.x + (fy - lo.y) * (hi.x - lo.x) / (hi.y - lo.y));
            }
        }
        xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
        for pair in xs.chunks_exact(2) {
            let x0 = pair[0].ceil().max(0.0) as usize;
            let x1 = pair[1].floor().min(width as f64 - 1.0);
            if x1 < 0.0 {
                continue;
            }
            for x in x0..=(x1 as usize) {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// Refine the boundary of `initial` against the edges of `img`.
pub fn refine_boundary(img: &Image, initial: &Mask, cfg: &RefineConfig) -> Result<RefineResult> {
    cfg.validate()?;
    initial.require_nonempty()?;
    if img.width() != initial.width() || img.height() != initial.height() {
        return Err(RegError::DimensionMismatch(
            img.width(),
            img.height(),
            initial.width(),
            initial.height(),
        ));
    }
    let region = initial.largest_component()?;
    let center = region.centroid()?;
    if center.x < 0.0
        || center.y < 0.0
        || center.x > (img.width() - 1) as f64
        || center.y > (img.height() - 1) as f64
    {
        return Err(RegError::InvalidParameter(
            "initial mask centroid falls outside the image".into(),
        ));
    }

    let grad = img.gaussian_filter(cfg.smoothing_sigma)?.gradient_magnitude()?;
    let radii = radial_profile(&region, center, cfg.angular_samples);

    let theta_count = cfg.angular_samples;
    let row_count = cfg.radial_samples;
    let mut band_clipped = false;
    let max_x = (img.width() - 1) as f64;
    let max_y = (img.height() - 1) as f64;
    // Node (theta, row) sits at radius (1 - band .. 1 + band) * r(theta),
    // row 0 innermost. Out-of-frame nodes are clamped to the border and
    // flagged.
    let mut node_pos = vec![Point::new(0.0, 0.0); theta_count * row_count];
    let mut weights = vec![vec![0.0f64; row_count]; theta_count];
    for ti in 0..theta_count {
        let angle = 2.0 * std::f64::consts::PI * ti as f64 / theta_count as f64;
        let (s, c) = angle.sin_cos();
        for j in 0..row_count {
            let frac = 1.0 - cfg.band_fraction
                + 2.0 * cfg.band_fraction * j as f64 / (row_count - 1) as f64;
            let rho = radii[ti] * frac;
            let mut p = Point::new(center.x + rho * c, center.y + rho * s);
            if p.x < 0.0 || p.y < 0.0 || p.x > max_x || p.y > max_y {
                band_clipped = true;
                p.x = p.x.clamp(0.0, max_x);
                p.y = p.y.clamp(0.0, max_y);
            }
            node_pos[ti * row_count + j] = p;
            weights[ti][j] = -grad.bilinear_sample(p.x, p.y).value;
        }
    }

    let (_, rows) = min_closed_path(&weights, cfg.max_radial_jump);
    let polygon: Vec<Point> = rows
        .iter()
        .enumerate()
        .map(|(ti, j)| node_pos[ti * row_count + j])
        .collect();
    let mask = rasterize_polygon(&polygon, img.width(), img.height());
    Ok(RefineResult { mask, polygon, band_clipped })
}

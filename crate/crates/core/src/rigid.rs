//! Rotation + translation alignment between consecutive frames, driven by
//! their region masks.
//!
//! Intensity inside the tissue region changes drastically between frames
//! (signaling transients), so the first registration phase matches
//! Gaussian-smoothed mask images instead of raw intensities. The optimizer is
//! regular-step gradient descent: step along the negative normalized
//! gradient, and shrink the step length whenever the gradient direction
//! reverses. Frame k is warm-started from frame k-1's optimum so strongly
//! oval regions do not lock onto the opposite orientation.

use serde::{Deserialize, Serialize};

use crate::error::{RegError, Result};
use crate::geom::Point;
use crate::image::{Image, Mask};
use crate::transform::TransformChain;

/// Rigid transform: rotate by `theta` about (`cx`, `cy`), then translate by
/// (`tx`, `ty`). Applied in backward-warp convention: it maps reference-frame
/// coordinates to source-frame sample positions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidParams {
    #[serde(rename = "theta_rad")]
    pub theta: f64,
    pub tx: f64,
    pub ty: f64,
    pub cx: f64,
    pub cy: f64,
}

impl RigidParams {
    pub fn identity() -> Self {
        RigidParams { theta: 0.0, tx: 0.0, ty: 0.0, cx: 0.0, cy: 0.0 }
    }

    pub fn new(theta: f64, tx: f64, ty: f64, cx: f64, cy: f64) -> Self {
        RigidParams { theta, tx, ty, cx, cy }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        RigidParams { theta: 0.0, tx, ty, cx: 0.0, cy: 0.0 }
    }

    pub fn apply(&self, p: Point) -> Point {
        let (s, c) = self.theta.sin_cos();
        let dx = p.x - self.cx;
        let dy = p.y - self.cy;
        Point::new(
            c * dx - s * dy + self.cx + self.tx,
            s * dx + c * dy + self.cy + self.ty,
        )
    }

    /// Exact inverse about the same center.
    pub fn inverse(&self) -> RigidParams {
        // q = R(p - c) + c + t  =>  p = R^{-1}(q - c - t) + c
        //   = R^{-1}(q - c) + c + [R^{-1}(-t) + R^{-1}(c) - c + ...]; derive
        // directly: p = R'(q - c) + c + t' with R' = R^{-1} and
        // t' = R'(-t) + (R'(c) - c) - (R'(c) - c) ... computed numerically:
        let (s, c) = (-self.theta).sin_cos();
        // p = R'(q - c - t) + c = R'(q - c) - R'(t) + c
        let tx = -(c * self.tx - s * self.ty);
        let ty = -(s * self.tx + c * self.ty);
        RigidParams { theta: -self.theta, tx, ty, cx: self.cx, cy: self.cy }
    }

    /// Same transform expressed about a different rotation center.
    pub fn recenter(&self, center: Point) -> RigidParams {
        // R(p - c) + c + t = R(p - c') + c' + [R(c' - c) - (c' - c) + t]
        let (s, c) = self.theta.sin_cos();
        let dx = center.x - self.cx;
        let dy = center.y - self.cy;
        RigidParams {
            theta: self.theta,
            tx: self.tx + (c * dx - s * dy) - dx,
            ty: self.ty + (s * dx + c * dy) - dy,
            cx: center.x,
            cy: center.y,
        }
    }

    /// Theta wrapped into (-pi, pi].
    pub fn normalized(&self) -> RigidParams {
        let mut t = self.theta.rem_euclid(2.0 * std::f64::consts::PI);
        if t > std::f64::consts::PI {
            t -= 2.0 * std::f64::consts::PI;
        }
        RigidParams { theta: t, ..*self }
    }

    /// Re-express in a coordinate frame related by q = s*p + h per axis (the
    /// pixel-center map between dyadic resolutions): center maps through the
    /// affine map, translation scales, the angle is unchanged.
    pub fn rescale(&self, s: f64, h: f64) -> RigidParams {
        RigidParams {
            theta: self.theta,
            tx: s * self.tx,
            ty: s * self.ty,
            cx: s * self.cx + h,
            cy: s * self.cy + h,
        }
    }
}

/// Regular-step gradient descent settings.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigidConfig {
    /// Starting step length in pixels of parameter motion.
    pub initial_step: f64,
    /// Terminate once the step length falls below this.
    pub min_step: f64,
    /// Step-length multiplier applied on gradient reversal, in (0, 1).
    pub relaxation: f64,
    pub max_iters: usize,
    /// Gaussian sigma applied to both mask images before matching.
    pub smoothing_sigma: f64,
}

impl Default for RigidConfig {
    fn default() -> Self {
        RigidConfig {
            initial_step: 2.0,
            min_step: 1e-3,
            relaxation: 0.5,
            max_iters: 200,
            smoothing_sigma: 2.0,
        }
    }
}

impl RigidConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_step > 0.0 && self.min_step < self.initial_step) {
            return Err(RegError::InvalidParameter(format!(
                "rigid steps must satisfy 0 < min_step < initial_step, got {} and {}",
                self.min_step, self.initial_step
            )));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 1.0) {
            return Err(RegError::InvalidParameter(format!(
                "rigid relaxation must lie in (0,1), got {}",
                self.relaxation
            )));
        }
        if self.smoothing_sigma.is_nan() || self.smoothing_sigma <= 0.0 {
            return Err(RegError::InvalidParameter(format!(
                "rigid smoothing_sigma must be positive, got {}",
                self.smoothing_sigma
            )));
        }
        Ok(())
    }
}

/// Mean squared difference between the reference raster and the warped
/// source raster over the full frame.
fn mask_cost(ref_smooth: &Image, src_smooth: &Image, params: RigidParams) -> f64 {
    let chain = TransformChain::from_rigid(params);
    let warped = src_smooth.warp(&chain);
    let mut acc = 0.0;
    for (a, b) in ref_smooth.data().iter().zip(warped.image.data()) {
        let d = a - b;
        acc += d * d;
    }
    acc / ref_smooth.data().len() as f64
}

/// Align `src_mask` to `ref_mask` over (theta, tx, ty), starting from `init`
/// (identity for the first pair, the preceding pair's optimum afterwards).
/// Returns the best parameters seen and their cost.
pub fn register_rigid(
    ref_mask: &Mask,
    src_mask: &Mask,
    init: RigidParams,
    cfg: &RigidConfig,
) -> Result<(RigidParams, f64)> {
    cfg.validate()?;
    ref_mask.require_nonempty()?;
    src_mask.require_nonempty()?;
    if ref_mask.width() != src_mask.width() || ref_mask.height() != src_mask.height() {
        return Err(RegError::DimensionMismatch(
            ref_mask.width(),
            ref_mask.height(),
            src_mask.width(),
            src_mask.height(),
        ));
    }

    let ref_smooth = ref_mask.to_image().gaussian_filter(cfg.smoothing_sigma)?;
    let src_smooth = src_mask.to_image().gaussian_filter(cfg.smoothing_sigma)?;

    // Rotation center: reference-mask centroid, which decouples the rotation
    // and translation axes of the search.
    let center = ref_mask.centroid()?;
    // RMS radius of the reference region converts radians into pixels of
    // boundary motion, so rotation and translation share one step scale.
    let r0 = {
        let mut acc = 0.0;
        let mut n = 0.0;
        for y in 0..ref_mask.height() {
            for x in 0..ref_mask.width() {
                if ref_mask.get(x, y) {
                    acc += (x as f64 - center.x).powi(2) + (y as f64 - center.y).powi(2);
                    n += 1.0;
                }
            }
        }
        (acc / n).sqrt().max(1.0)
    };

    const DELTA_THETA: f64 = 1e-3; // rad
    const DELTA_TRANS: f64 = 0.25; // px

    let cost = |p: RigidParams| mask_cost(&ref_smooth, &src_smooth, p);
    // Gradient in the scaled parameter space (r0*theta, tx, ty), by central
    // finite differences in the raw parameters.
    let scaled_grad = |p: RigidParams| -> [f64; 3] {
        let gt = (cost(RigidParams { theta: p.theta + DELTA_THETA, ..p })
            - cost(RigidParams { theta: p.theta - DELTA_THETA, ..p }))
            / (2.0 * DELTA_THETA);
        let gx = (cost(RigidParams { tx: p.tx + DELTA_TRANS, ..p })
            - cost(RigidParams { tx: p.tx - DELTA_TRANS, ..p }))
            / (2.0 * DELTA_TRANS);
        let gy = (cost(RigidParams { ty: p.ty + DELTA_TRANS, ..p })
            - cost(RigidParams { ty: p.ty - DELTA_TRANS, ..p }))
            / (2.0 * DELTA_TRANS);
        [gt / r0, gx, gy]
    };

    let mut cur = init.recenter(center).normalized();
    let mut best = cur;
    let mut best_cost = cost(cur);
    let mut step = cfg.initial_step;
    let mut prev_g: Option<[f64; 3]> = None;

    for _ in 0..cfg.max_iters {
        if step < cfg.min_step {
            break;
        }
        let g = scaled_grad(cur);
        let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        if norm < 1e-14 {
            break;
        }
        if let Some(pg) = prev_g {
            if pg[0] * g[0] + pg[1] * g[1] + pg[2] * g[2] < 0.0 {
                step *= cfg.relaxation;
                if step < cfg.min_step {
                    break;
                }
            }
        }
        prev_g = Some(g);
        cur = RigidParams {
            theta: cur.theta - step * g[0] / norm / r0,
            tx: cur.tx - step * g[1] / norm,
            ty: cur.ty - step * g[2] / norm,
            ..cur
        };
        let c = cost(cur);
        if c < best_cost {
            best_cost = c;
            best = cur;
        }
    }

    Ok((best.normalized(), best_cost))
}

#[cfg(test)]
pub(crate) mod test_masks {
    use super::*;

    /// Filled ellipse mask rotated by `tilt` about the image center.
    pub fn ellipse_mask(w: usize, h: usize, a: f64, b: f64, tilt: f64) -> Mask {
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (s, c) = tilt.sin_cos();
        let mut m = Mask::filled(w, h, false);
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                    m.set(x, y, true);
                }
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::test_masks::ellipse_mask;
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn apply_examples() {
        let id = RigidParams::identity();
        let p = Point::new(2.5, -1.5);
        let q = id.apply(p);
        assert!((q.x - p.x).abs() < 1e-15 && (q.y - p.y).abs() < 1e-15);

        let rot = RigidParams::new(PI / 2.0, 0.0, 0.0, 0.0, 0.0);
        let q = rot.apply(Point::new(1.0, 0.0));
        assert!(q.x.abs() < 1e-12 && (q.y - 1.0).abs() < 1e-12);

        let tr = RigidParams::translation(3.0, -2.0);
        let q = tr.apply(Point::new(5.0, 5.0));
        assert!((q.x - 8.0).abs() < 1e-15 && (q.y - 3.0).abs() < 1e-15);
    }

    #[test]
    fn inverse_round_trips() {
        let p = RigidParams::new(0.7, 3.0, -2.0, 10.0, 12.0);
        let inv = p.inverse();
        for i in 0..50 {
            let pt = Point::new(i as f64 * 1.7 - 20.0, i as f64 * 0.9 - 10.0);
            let rt = inv.apply(p.apply(pt));
            assert!((rt.x - pt.x).abs() < 1e-10 && (rt.y - pt.y).abs() < 1e-10);
        }
    }

    #[test]
    fn recenter_preserves_mapping() {
        let p = RigidParams::new(-0.4, 1.5, 2.5, 3.0, 4.0);
        let q = p.recenter(Point::new(-7.0, 11.0));
        for i in 0..50 {
            let pt = Point::new(i as f64 * 0.31, 25.0 - i as f64 * 0.73);
            let a = p.apply(pt);
            let b = q.apply(pt);
            assert!((a.x - b.x).abs() < 1e-10 && (a.y - b.y).abs() < 1e-10);
        }
    }

    #[test]
    fn theta_normalization() {
        let p = RigidParams::new(3.0 * PI, 0.0, 0.0, 0.0, 0.0).normalized();
        assert!((p.theta - PI).abs() < 1e-12, "3pi wraps to pi, got {}", p.theta);
        let p = RigidParams::new(-PI, 0.0, 0.0, 0.0, 0.0).normalized();
        assert!((p.theta - PI).abs() < 1e-12, "-pi wraps to +pi (half-open range)");
        let p = RigidParams::new(0.3, 0.0, 0.0, 0.0, 0.0).normalized();
        assert!((p.theta - 0.3).abs() < 1e-15);
    }

    #[test]
    fn rescale_is_exact_conjugation() {
        let p = RigidParams::new(0.5, 1.25, -2.5, 7.0, 9.0);
        let f = p.rescale(2.0, 0.5);
        for i in 0..50 {
            let pt = Point::new(i as f64 * 0.77 - 5.0, i as f64 * 1.13 - 9.0);
            let want = p.apply(pt) * 2.0 + Point::new(0.5, 0.5);
            let got = f.apply(pt * 2.0 + Point::new(0.5, 0.5));
            assert!((want.x - got.x).abs() < 1e-10 && (want.y - got.y).abs() < 1e-10);
        }
    }

    #[test]
    fn self_registration_stays_at_identity() {
        let m = ellipse_mask(64, 64, 20.0, 12.0, 0.3);
        let (p, cost) =
            register_rigid(&m, &m, RigidParams::identity(), &RigidConfig::default()).unwrap();
        assert!(p.theta.abs() < 1e-3, "theta {}", p.theta);
        assert!(p.tx.abs() < 0.1 && p.ty.abs() < 0.1, "t ({}, {})", p.tx, p.ty);
        assert!(cost < 1e-8);
    }

    #[test]
    fn recovers_integer_translation() {
        let ref_mask = ellipse_mask(96, 96, 24.0, 14.0, 0.2);
        // Source produced by warping with tx = +4: content shifts left, and
        // the recovered backward-mapping translation is -4.
        let truth = TransformChain::from_rigid(RigidParams::translation(4.0, 0.0));
        let src_mask = ref_mask.warp(&truth);
        let (p, _) =
            register_rigid(&ref_mask, &src_mask, RigidParams::identity(), &RigidConfig::default())
                .unwrap();
        assert!((p.tx + 4.0).abs() < 0.5, "tx {}", p.tx);
        assert!(p.ty.abs() < 0.5, "ty {}", p.ty);
        assert!(p.theta.abs() < 0.02, "theta {}", p.theta);
    }

    #[test]
    fn recovers_moderate_rotation() {
        let ref_mask = ellipse_mask(96, 96, 26.0, 13.0, 0.0);
        let c = ref_mask.centroid().unwrap();
        let truth_theta = 15f64.to_radians();
        let truth =
            TransformChain::from_rigid(RigidParams::new(truth_theta, 0.0, 0.0, c.x, c.y));
        let src_mask = ref_mask.warp(&truth);
        let (p, _) =
            register_rigid(&ref_mask, &src_mask, RigidParams::identity(), &RigidConfig::default())
                .unwrap();
        assert!(
            (p.theta + truth_theta).abs() < 1f64.to_radians(),
            "recovered {} rad, want {} rad",
            p.theta,
            -truth_theta
        );
    }

    #[test]
    fn warm_start_avoids_opposite_orientation() {
        let ref_mask = ellipse_mask(96, 96, 26.0, 13.0, 0.0);
        let c = ref_mask.centroid().unwrap();
        // Built with -170 deg, so the correctly recovered angle is +170 deg;
        // the near-opposite local optimum sits around -10 deg.
        let truth =
            TransformChain::from_rigid(RigidParams::new(-170f64.to_radians(), 0.0, 0.0, c.x, c.y));
        let src_mask = ref_mask.warp(&truth);

        let warm = RigidParams::new(160f64.to_radians(), 0.0, 0.0, c.x, c.y);
        let (p, _) =
            register_rigid(&ref_mask, &src_mask, warm, &RigidConfig::default()).unwrap();
        let err = (p.theta - 170f64.to_radians()).abs();
        assert!(err < 5f64.to_radians(), "warm start landed {} rad off", err);

        let (p_cold, _) = register_rigid(
            &ref_mask,
            &src_mask,
            RigidParams::identity(),
            &RigidConfig::default(),
        )
        .unwrap();
        // Cold start is allowed to settle near the opposite orientation;
        // assert only that it found *some* basin (cost comparable or the
        // angle near one of the two symmetric optima).
        let d170 = (p_cold.theta - 170f64.to_radians()).abs();
        let dm10 = (p_cold.theta + 10f64.to_radians()).abs();
        assert!(
            d170 < 8f64.to_radians() || dm10 < 8f64.to_radians(),
            "cold start ended at {} rad",
            p_cold.theta
        );
    }

    #[test]
    fn equivariance_under_common_shift() {
        let ref_a = ellipse_mask(96, 96, 22.0, 12.0, 0.15);
        let truth = TransformChain::from_rigid(RigidParams::translation(3.0, -2.0));
        let src_a = ref_a.warp(&truth);

        // Shift both masks by the same integer offset.
        let shift = TransformChain::from_rigid(RigidParams::translation(-5.0, -4.0));
        let ref_b = ref_a.warp(&shift);
        let src_b = src_a.warp(&shift);

        let cfg = RigidConfig::default();
        let (pa, _) = register_rigid(&ref_a, &src_a, RigidParams::identity(), &cfg).unwrap();
        let (pb, _) = register_rigid(&ref_b, &src_b, RigidParams::identity(), &cfg).unwrap();
        assert!((pa.tx - pb.tx).abs() < 0.2, "{} vs {}", pa.tx, pb.tx);
        assert!((pa.ty - pb.ty).abs() < 0.2, "{} vs {}", pa.ty, pb.ty);
        assert!((pa.theta - pb.theta).abs() < 0.01);
    }

    #[test]
    fn rejects_empty_and_mismatched_masks() {
        let good = ellipse_mask(32, 32, 10.0, 6.0, 0.0);
        let empty = Mask::filled(32, 32, false);
        let small = ellipse_mask(16, 32, 5.0, 5.0, 0.0);
        let cfg = RigidConfig::default();
        assert!(register_rigid(&good, &empty, RigidParams::identity(), &cfg).is_err());
        assert!(register_rigid(&empty, &good, RigidParams::identity(), &cfg).is_err());
        assert!(register_rigid(&good, &small, RigidParams::identity(), &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let cfg = RigidConfig { relaxation: 1.5, ..RigidConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = RigidConfig { min_step: 5.0, ..RigidConfig::default() };
        assert!(cfg.validate().is_err());
    }
}

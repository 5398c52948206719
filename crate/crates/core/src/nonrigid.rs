//! Phase-two optimizer: minimize mean squared intensity difference plus a
//! control-displacement penalty over free-form deformation lattices, coarse
//! to fine.
//!
//! Each pyramid level works on a downsampled copy of both frames with a
//! lattice of doubled cell count, optimizes only the newest (active) lattice
//! with fixed-step gradient descent plus halving backtracking, then the
//! accepted lattice is re-expressed in full-resolution coordinates and
//! appended to the transform chain.

use serde::{Deserialize, Serialize};

use crate::error::{RegError, Result};
use crate::ffd::{Lattice, LatticeSupport};
use crate::geom::{Point, RoiRect};
use crate::image::{Image, Mask};
use crate::rigid::RigidParams;
use crate::transform::TransformChain;

/// Energy and pyramid settings.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    /// Weight of the mean squared control-displacement penalty.
    pub reg_weight: f64,
    /// Terminate a level when one iteration improves energy by less than this.
    pub epsilon: f64,
    /// Iteration budget per level.
    pub max_iters: usize,
    /// Number of pyramid levels g.
    pub levels: usize,
    /// Lattice cells per axis at the coarsest level.
    pub base_cells: usize,
    /// Initial gradient-descent step, in pixels of maximum control motion.
    pub step: f64,
    /// Pixels added around the mask bounding box to form the lattice domain.
    pub roi_margin: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig {
            reg_weight: 0.01,
            epsilon: 1e-6,
            max_iters: 100,
            levels: 3,
            base_cells: 4,
            step: 1.0,
            roi_margin: 10.0,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reg_weight < 0.0 {
            return Err(RegError::InvalidParameter(format!(
                "reg_weight must be non-negative, got {}",
                self.reg_weight
            )));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(RegError::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.levels == 0 || self.base_cells == 0 {
            return Err(RegError::InvalidParameter(
                "levels and base_cells must be at least 1".into(),
            ));
        }
        if self.step.is_nan() || self.step <= 0.0 {
            return Err(RegError::InvalidParameter(format!(
                "step must be positive, got {}",
                self.step
            )));
        }
        if self.roi_margin < 0.0 {
            return Err(RegError::InvalidParameter(format!(
                "roi_margin must be non-negative, got {}",
                self.roi_margin
            )));
        }
        Ok(())
    }
}

/// One accepted optimizer iteration, for the run log.
#[derive(Clone, Copy, Debug)]
pub struct IterationRecord {
    pub level: usize,
    pub iter: usize,
    pub energy: f64,
    pub step: f64,
}

/// Mean squared difference over the region (full frame when None).
pub fn ssd(a: &Image, b: &Image, region: Option<&Mask>) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(RegError::DimensionMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    if let Some(m) = region {
        if m.width() != a.width() || m.height() != a.height() {
            return Err(RegError::DimensionMismatch(a.width(), a.height(), m.width(), m.height()));
        }
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for i in 0..a.data().len() {
        if region.is_none_or(|m| m.data()[i]) {
            let d = a.data()[i] - b.data()[i];
            acc += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(RegError::EmptyRegion);
    }
    Ok(acc / n as f64)
}

/// Lattice domain: mask bounding box expanded by `margin`, clipped to the
/// frame, rejected when smaller than 8 px per side.
pub fn roi_from_mask(mask: &Mask, margin: f64) -> Result<RoiRect> {
    let (x0, y0, x1, y1) = mask.bbox()?;
    let xl = (x0 as f64 - margin).max(0.0);
    let xr = (x1 as f64 + 1.0 + margin).min(mask.width() as f64);
    let yl = (y0 as f64 - margin).max(0.0);
    let yr = (y1 as f64 + 1.0 + margin).min(mask.height() as f64);
    const MIN_SIDE: f64 = 8.0;
    if xr - xl < MIN_SIDE || yr - yl < MIN_SIDE {
        return Err(RegError::DegenerateRoi(xr - xl, yr - yl, MIN_SIDE));
    }
    RoiRect::new(xl, xr, yl, yr)
}

/// Per-pixel quantities that stay fixed while one level's lattice is being
/// optimized: the prefix-transformed sample origin, the active lattice's
/// basis support there (geometry only, independent of displacement values),
/// and the reference intensity.
struct Workspace {
    pre: Vec<Point>,
    sup: Vec<Option<LatticeSupport>>,
    ref_val: Vec<f64>,
}

impl Workspace {
    fn build(ref_img: &Image, region: &Mask, chain: &TransformChain) -> Result<Self> {
        if ref_img.width() != region.width() || ref_img.height() != region.height() {
            return Err(RegError::DimensionMismatch(
                ref_img.width(),
                ref_img.height(),
                region.width(),
                region.height(),
            ));
        }
        let active = chain
            .levels
            .last()
            .ok_or_else(|| RegError::InvalidParameter("chain has no active lattice".into()))?;
        let prefix = &chain.levels[..chain.levels.len() - 1];
        let mut ws = Workspace { pre: Vec::new(), sup: Vec::new(), ref_val: Vec::new() };
        for y in 0..region.height() {
            for x in 0..region.width() {
                if !region.get(x, y) {
                    continue;
                }
                let mut q = chain.rigid.apply(Point::new(x as f64, y as f64));
                for lat in prefix {
                    q = lat.apply(q);
                }
                ws.sup.push(active.support(q));
                ws.pre.push(q);
                ws.ref_val.push(ref_img.get(x, y));
            }
        }
        if ws.pre.is_empty() {
            return Err(RegError::EmptyRegion);
        }
        Ok(ws)
    }
}

#[inline]
fn weighted_disp(active: &Lattice, sup: &LatticeSupport) -> Point {
    let cols = active.cols();
    let d = active.displacements();
    let mut dx = 0.0;
    let mut dy = 0.0;
    for b in 0..4 {
        let row = (sup.l + b) * cols + sup.k;
        for a in 0..4 {
            let w = sup.wx[a] * sup.wy[b];
            dx += w * d[row + a].x;
            dy += w * d[row + a].y;
        }
    }
    Point::new(dx, dy)
}

/// Energy of a candidate active lattice over a prebuilt workspace. None when
/// every sample lands outside the source image.
fn energy_of(src: &Image, ws: &Workspace, active: &Lattice, reg_weight: f64) -> Option<f64> {
    let mut acc = 0.0;
    let mut n = 0usize;
    for i in 0..ws.pre.len() {
        let q = match &ws.sup[i] {
            Some(s) => ws.pre[i] + weighted_disp(active, s),
            None => ws.pre[i],
        };
        let smp = src.bilinear_sample(q.x, q.y);
        if !smp.in_domain {
            continue;
        }
        let r = smp.value - ws.ref_val[i];
        acc += r * r;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    Some(acc / n as f64 + reg_weight * active.mean_sq_displacement())
}

/// Analytic energy gradient w.r.t. every control displacement of the active
/// lattice. Exact for the bilinear interpolant: each in-domain pixel adds
/// (2/N) * residual * (d src / d sample point) * basis weight, and the
/// penalty adds reg_weight * 2/(control count) * displacement.
fn grad_of(src: &Image, ws: &Workspace, active: &Lattice, reg_weight: f64) -> Option<Vec<Point>> {
    let cols = active.cols();
    let mut g = vec![Point::new(0.0, 0.0); active.displacements().len()];
    let mut n = 0usize;
    for i in 0..ws.pre.len() {
        let Some(sup) = &ws.sup[i] else { continue };
        let q = ws.pre[i] + weighted_disp(active, sup);
        let smp = src.bilinear_sample_grad(q.x, q.y);
        if !smp.in_domain {
            continue;
        }
        n += 1;
        let r = smp.value - ws.ref_val[i];
        for b in 0..4 {
            let row = (sup.l + b) * cols + sup.k;
            for a in 0..4 {
                let w = sup.wx[a] * sup.wy[b];
                g[row + a].x += r * smp.dx * w;
                g[row + a].y += r * smp.dy * w;
            }
        }
    }
    // Pixels with no active support still count in N when their plain sample
    // is in domain (their residual is constant in the active lattice).
    for i in 0..ws.pre.len() {
        if ws.sup[i].is_none() && src.bilinear_sample(ws.pre[i].x, ws.pre[i].y).in_domain {
            n += 1;
        }
    }
    if n == 0 {
        return None;
    }
    let scale = 2.0 / n as f64;
    let reg_scale = reg_weight * 2.0 / active.displacements().len() as f64;
    for (gc, d) in g.iter_mut().zip(active.displacements()) {
        gc.x = gc.x * scale + reg_scale * d.x;
        gc.y = gc.y * scale + reg_scale * d.y;
    }
    Some(g)
}

/// Similarity + penalty energy of the chain's last (active) lattice, summed
/// over `region` pixels whose warped sample stays inside `src`.
pub fn energy(
    ref_img: &Image,
    src: &Image,
    chain: &TransformChain,
    cfg: &EnergyConfig,
    region: &Mask,
) -> Result<f64> {
    let ws = Workspace::build(ref_img, region, chain)?;
    let active = chain.levels.last().expect("checked by Workspace::build");
    energy_of(src, &ws, active, cfg.reg_weight).ok_or(RegError::EmptyRegion)
}

/// Analytic gradient of `energy` w.r.t. the active lattice's displacements,
/// in the lattice's row-major control order.
pub fn grad_energy(
    ref_img: &Image,
    src: &Image,
    chain: &TransformChain,
    cfg: &EnergyConfig,
    region: &Mask,
) -> Result<Vec<Point>> {
    let ws = Workspace::build(ref_img, region, chain)?;
    let active = chain.levels.last().expect("checked by Workspace::build");
    grad_of(src, &ws, active, cfg.reg_weight).ok_or(RegError::EmptyRegion)
}

/// Optimize the chain's last lattice by fixed-step descent along the
/// max-norm-normalized gradient, halving the step whenever a move fails to
/// decrease energy (the halving persists across iterations). Terminates when
/// an accepted iteration improves energy by less than `cfg.epsilon`, the
/// iteration budget is spent, or the step underflows. Returns the
/// lowest-energy lattice seen plus the per-iteration log.
pub fn optimize_level(
    ref_img: &Image,
    src: &Image,
    chain: &TransformChain,
    cfg: &EnergyConfig,
    region: &Mask,
    level_index: usize,
) -> Result<(Lattice, Vec<IterationRecord>)> {
    let ws = Workspace::build(ref_img, region, chain)?;
    let initial = chain.levels.last().expect("checked by Workspace::build");
    let mut log = Vec::new();
    if cfg.max_iters == 0 {
        return Ok((initial.clone(), log));
    }

    let mut active = initial.clone();
    let mut cur = energy_of(src, &ws, &active, cfg.reg_weight).ok_or(RegError::EmptyRegion)?;
    let mut best = active.clone();
    let mut best_energy = cur;
    let mut step = cfg.step;
    const STEP_FLOOR: f64 = 1e-9;

    'outer: for iter in 1..=cfg.max_iters {
        let Some(g) = grad_of(src, &ws, &active, cfg.reg_weight) else { break };
        let ginf = g.iter().fold(0.0f64, |m, p| m.max(p.x.abs()).max(p.y.abs()));
        if ginf < 1e-15 {
            break;
        }
        // Backtracking: shrink the step until a move decreases energy.
        let (next, next_energy) = loop {
            let mut cand = active.clone();
            for (d, gc) in cand.displacements_mut().iter_mut().zip(&g) {
                d.x -= step * gc.x / ginf;
                d.y -= step * gc.y / ginf;
            }
            match energy_of(src, &ws, &cand, cfg.reg_weight) {
                Some(e) if e < cur => break (cand, e),
                _ => {
                    step *= 0.5;
                    if step < STEP_FLOOR {
                        break 'outer;
                    }
                }
            }
        };
        let improvement = cur - next_energy;
        active = next;
        cur = next_energy;
        if cur < best_energy {
            best_energy = cur;
            best = active.clone();
        }
        log.push(IterationRecord { level: level_index, iter, energy: cur, step });
        if improvement < cfg.epsilon {
            break;
        }
    }
    Ok((best, log))
}

/// Full phase-two registration: build the region-of-interest from the
/// reference mask, then optimize a coarse-to-fine stack of lattices. Level L
/// (1-based) works on the frames downsampled (levels - L) times with a
/// lattice of base_cells * 2^(L-1) cells per axis; each accepted lattice is
/// rescaled into full-resolution coordinates and appended to the chain.
pub fn register_nonrigid(
    ref_img: &Image,
    src: &Image,
    ref_mask: &Mask,
    rigid: RigidParams,
    cfg: &EnergyConfig,
) -> Result<(TransformChain, Vec<IterationRecord>)> {
    register_nonrigid_from(ref_img, src, ref_mask, rigid, None, cfg)
}

/// Like [`register_nonrigid`], but each level's optimization may start from
/// a previous solution's lattices (e.g. the preceding frame of a sequence)
/// instead of zero displacements. `init_levels` must hold one lattice per
/// pyramid level, in full-resolution coordinates, with the shapes this
/// configuration would produce.
pub fn register_nonrigid_from(
    ref_img: &Image,
    src: &Image,
    ref_mask: &Mask,
    rigid: RigidParams,
    init_levels: Option<&[Lattice]>,
    cfg: &EnergyConfig,
) -> Result<(TransformChain, Vec<IterationRecord>)> {
    cfg.validate()?;
    if ref_img.width() != src.width() || ref_img.height() != src.height() {
        return Err(RegError::DimensionMismatch(
            ref_img.width(),
            ref_img.height(),
            src.width(),
            src.height(),
        ));
    }
    ref_mask.require_nonempty()?;
    let roi = roi_from_mask(ref_mask, cfg.roi_margin)?;
    if let Some(init) = init_levels {
        if init.len() != cfg.levels {
            return Err(RegError::InvalidParameter(format!(
                "warm start has {} lattices but the pyramid has {} levels",
                init.len(),
                cfg.levels
            )));
        }
    }

    // Dyadic pyramids, index = number of halvings.
    let mut ref_pyr = vec![ref_img.clone()];
    let mut src_pyr = vec![src.clone()];
    let mut mask_pyr = vec![ref_mask.clone()];
    for k in 1..cfg.levels {
        ref_pyr.push(ref_pyr[k - 1].downsample_half()?);
        src_pyr.push(src_pyr[k - 1].downsample_half()?);
        mask_pyr.push(mask_pyr[k - 1].downsample_half()?);
    }

    let mut chain = TransformChain::from_rigid(rigid);
    let mut logs = Vec::new();
    for level in 1..=cfg.levels {
        let k = cfg.levels - level; // halvings at this level
        let s = (1u64 << k) as f64;
        let h = (s - 1.0) / 2.0;
        // Full-resolution coordinates map to this level by p -> (p - h) / s.
        let (inv_s, inv_h) = (1.0 / s, -h / s);
        let roi_level = RoiRect::new(
            inv_s * roi.x_left + inv_h,
            inv_s * roi.x_right + inv_h,
            inv_s * roi.y_left + inv_h,
            inv_s * roi.y_right + inv_h,
        )?;
        let cells = cfg.base_cells << (level - 1);
        let start = match init_levels {
            Some(init) => {
                let lat = &init[level - 1];
                if lat.m() != cells || lat.n() != cells || lat.domain() != roi {
                    return Err(RegError::InvalidParameter(format!(
                        "warm-start lattice for level {level} does not match \
                         {cells}x{cells} cells over the current region"
                    )));
                }
                lat.rescale(inv_s, inv_h)
            }
            None => Lattice::zeros(roi_level, cells, cells)?,
        };
        let mut level_chain = TransformChain {
            rigid: chain.rigid.rescale(inv_s, inv_h),
            levels: chain.levels.iter().map(|l| l.rescale(inv_s, inv_h)).collect(),
        };
        level_chain.levels.push(start);
        let (optimized, log) = optimize_level(
            &ref_pyr[k],
            &src_pyr[k],
            &level_chain,
            cfg,
            &mask_pyr[k],
            level,
        )?;
        chain.levels.push(optimized.rescale(s, h));
        logs.extend(log);
    }
    Ok((chain, logs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(state: &mut u64) -> f64 {
        *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*state >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Smooth random test image: white noise blurred and rescaled.
    fn smooth_image(w: usize, h: usize, seed: u64) -> Image {
        let mut state = seed;
        let data: Vec<f64> = (0..w * h).map(|_| lcg(&mut state)).collect();
        Image::new(w, h, data).gaussian_filter(2.5).unwrap().rescale_unit()
    }

    fn box_mask(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Mask {
        let mut m = Mask::filled(w, h, false);
        for y in y0..=y1 {
            for x in x0..=x1 {
                m.set(x, y, true);
            }
        }
        m
    }

    #[test]
    fn ssd_examples() {
        let a = Image::filled(4, 4, 0.3);
        assert_eq!(ssd(&a, &a, None).unwrap(), 0.0);

        let zeros = Image::filled(4, 4, 0.0);
        let ones = Image::filled(4, 4, 1.0);
        assert_eq!(ssd(&zeros, &ones, None).unwrap(), 1.0);

        let a = Image::new(2, 1, vec![0.0, 0.5]);
        let b = Image::new(2, 1, vec![0.5, 0.5]);
        assert!((ssd(&a, &b, None).unwrap() - 0.125).abs() < 1e-15);

        let smaller = Image::filled(3, 4, 0.0);
        assert!(ssd(&a, &smaller, None).is_err());
        let empty_region = Mask::filled(2, 1, false);
        assert!(matches!(ssd(&a, &b, Some(&empty_region)), Err(RegError::EmptyRegion)));
    }

    #[test]
    fn roi_construction_and_degeneracy() {
        let m = box_mask(64, 64, 20, 24, 40, 36);
        let roi = roi_from_mask(&m, 10.0).unwrap();
        assert_eq!(
            (roi.x_left, roi.x_right, roi.y_left, roi.y_right),
            (10.0, 51.0, 14.0, 47.0)
        );
        // Clipping at the frame edge.
        let m = box_mask(32, 32, 0, 0, 12, 12);
        let roi = roi_from_mask(&m, 10.0).unwrap();
        assert_eq!((roi.x_left, roi.y_left), (0.0, 0.0));
        assert_eq!((roi.x_right, roi.y_right), (23.0, 23.0));
        // A hairline mask with zero margin is degenerate.
        let m = box_mask(32, 32, 5, 5, 6, 30);
        assert!(matches!(roi_from_mask(&m, 0.0), Err(RegError::DegenerateRoi(..))));
    }

    #[test]
    fn energy_examples() {
        let img = smooth_image(32, 32, 9);
        let region = box_mask(32, 32, 4, 4, 27, 27);
        let roi = roi_from_mask(&region, 2.0).unwrap();
        let cfg = EnergyConfig::default();

        // Identical frames, zero active lattice: energy 0.
        let chain = TransformChain {
            rigid: RigidParams::identity(),
            levels: vec![Lattice::zeros(roi, 2, 2).unwrap()],
        };
        let e = energy(&img, &img, &chain, &cfg, &region).unwrap();
        assert!(e.abs() < 1e-15);

        // Zero lattice means the penalty term vanishes for any weight.
        let other = smooth_image(32, 32, 10);
        let mut cfg_heavy = cfg;
        cfg_heavy.reg_weight = 123.0;
        let e_heavy = energy(&img, &other, &chain, &cfg_heavy, &region).unwrap();
        let mut cfg_zero = cfg;
        cfg_zero.reg_weight = 0.0;
        let e_zero = energy(&img, &other, &chain, &cfg_zero, &region).unwrap();
        assert!((e_heavy - e_zero).abs() < 1e-15);
    }

    #[test]
    fn energy_matches_hand_computed_penalty_and_brute_force_warp() {
        // 5x5-point lattice = 2x2 cells; one control pushed by (2,0) with
        // reg_weight 0.1 adds exactly 0.1 * 4/25 on top of the SSD term,
        // and the SSD term must equal an independent full-frame warp.
        let ref_img = smooth_image(24, 24, 31);
        let src = smooth_image(24, 24, 32);
        let region = box_mask(24, 24, 3, 3, 20, 20);
        let roi = roi_from_mask(&region, 2.0).unwrap();
        let mut lat = Lattice::zeros(roi, 2, 2).unwrap();
        lat.set_displacement(2, 2, Point::new(2.0, 0.0));
        let chain = TransformChain { rigid: RigidParams::identity(), levels: vec![lat] };
        let cfg = EnergyConfig { reg_weight: 0.1, ..EnergyConfig::default() };

        let e = energy(&ref_img, &src, &chain, &cfg, &region).unwrap();

        // Brute-force SSD: warp the whole frame through the chain, then
        // average squared differences over region pixels with valid samples.
        let warped = src.warp(&chain);
        let valid_region = region.and(&warped.valid).unwrap();
        let ssd_term = ssd(&ref_img, &warped.image, Some(&valid_region)).unwrap();
        let want = ssd_term + 0.1 * 4.0 / 25.0;
        assert!((e - want).abs() < 1e-12, "energy {e} vs oracle {want}");
    }

    #[test]
    fn gradient_is_zero_at_perfect_match() {
        let img = smooth_image(32, 32, 5);
        let region = box_mask(32, 32, 4, 4, 27, 27);
        let roi = roi_from_mask(&region, 2.0).unwrap();
        let chain = TransformChain {
            rigid: RigidParams::identity(),
            levels: vec![Lattice::zeros(roi, 3, 3).unwrap()],
        };
        let cfg = EnergyConfig { reg_weight: 0.0, ..EnergyConfig::default() };
        let g = grad_energy(&img, &img, &chain, &cfg, &region).unwrap();
        for p in g {
            assert!(p.x.abs() < 1e-14 && p.y.abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // Probe small enough that few warped samples cross a bilinear cell
        // edge inside the FD interval (that crossing noise scales with h,
        // FD truncation with h^2; roundoff stays ~1e-12 of the energy).
        let h = 1e-4;
        for trial in 0..20u64 {
            let ref_img = smooth_image(32, 32, 100 + trial);
            let src = smooth_image(32, 32, 200 + trial);
            let region = box_mask(32, 32, 6, 6, 25, 25);
            let roi = roi_from_mask(&region, 3.0).unwrap();
            let mut state = 300 + trial;
            let mut lat = Lattice::zeros(roi, 3, 3).unwrap();
            for d in lat.displacements_mut() {
                *d = Point::new(lcg(&mut state) * 2.0 - 1.0, lcg(&mut state) * 2.0 - 1.0);
            }
            let rigid = RigidParams::new(
                (lcg(&mut state) - 0.5) * 0.06,
                lcg(&mut state) - 0.5,
                lcg(&mut state) - 0.5,
                15.5,
                15.5,
            );
            let chain = TransformChain { rigid, levels: vec![lat] };
            let reg_weight = if trial % 2 == 0 { 0.01 } else { 0.0 };
            let cfg = EnergyConfig { reg_weight, ..EnergyConfig::default() };

            let analytic = grad_energy(&ref_img, &src, &chain, &cfg, &region).unwrap();
            let mut an_vec = Vec::with_capacity(2 * analytic.len());
            let mut fd_vec = Vec::with_capacity(2 * analytic.len());
            for (ci, a) in analytic.iter().enumerate() {
                for axis in 0..2 {
                    let mut plus = chain.clone();
                    let mut minus = chain.clone();
                    {
                        let d = &mut plus.levels[0].displacements_mut()[ci];
                        if axis == 0 { d.x += h } else { d.y += h }
                    }
                    {
                        let d = &mut minus.levels[0].displacements_mut()[ci];
                        if axis == 0 { d.x -= h } else { d.y -= h }
                    }
                    let ep = energy(&ref_img, &src, &plus, &cfg, &region).unwrap();
                    let em = energy(&ref_img, &src, &minus, &cfg, &region).unwrap();
                    fd_vec.push((ep - em) / (2.0 * h));
                    an_vec.push(if axis == 0 { a.x } else { a.y });
                }
            }
            // The FD probe drags sample points across bilinear cell edges
            // where the image derivative jumps, so individual components
            // carry noise proportional to the probe size; judge the gradient
            // as a vector instead of per-component relative error.
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let inf = fd_vec.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let diff: Vec<f64> =
                an_vec.iter().zip(&fd_vec).map(|(a, f)| a - f).collect();
            assert!(
                norm(&diff) <= 1e-3 * norm(&fd_vec) + 1e-10,
                "trial {trial}: gradient L2 mismatch {} vs norm {}",
                norm(&diff),
                norm(&fd_vec)
            );
            for (i, d) in diff.iter().enumerate() {
                assert!(
                    d.abs() <= 1e-3 * inf + 1e-9,
                    "trial {trial} component {i}: analytic {} vs fd {}",
                    an_vec[i],
                    fd_vec[i]
                );
            }
        }
    }

    #[test]
    fn optimize_level_respects_zero_budget() {
        let img = smooth_image(24, 24, 7);
        let region = box_mask(24, 24, 3, 3, 20, 20);
        let roi = roi_from_mask(&region, 2.0).unwrap();
        let mut lat = Lattice::zeros(roi, 2, 2).unwrap();
        lat.set_displacement(1, 1, Point::new(0.7, -0.3));
        let chain = TransformChain { rigid: RigidParams::identity(), levels: vec![lat.clone()] };
        let cfg = EnergyConfig { max_iters: 0, ..EnergyConfig::default() };
        let (out, log) = optimize_level(&img, &img, &chain, &cfg, &region, 1).unwrap();
        assert_eq!(out, lat);
        assert!(log.is_empty());
    }

    #[test]
    fn optimize_level_on_identical_frames_stays_near_zero() {
        let img = smooth_image(32, 32, 21);
        let region = box_mask(32, 32, 4, 4, 27, 27);
        let roi = roi_from_mask(&region, 3.0).unwrap();
        let chain = TransformChain {
            rigid: RigidParams::identity(),
            levels: vec![Lattice::zeros(roi, 4, 4).unwrap()],
        };
        let cfg = EnergyConfig::default();
        let initial = energy(&img, &img, &chain, &cfg, &region).unwrap();
        let (out, _) = optimize_level(&img, &img, &chain, &cfg, &region, 1).unwrap();
        let final_chain = TransformChain { rigid: RigidParams::identity(), levels: vec![out.clone()] };
        let final_e = energy(&img, &img, &final_chain, &cfg, &region).unwrap();
        assert!(final_e <= initial + 1e-15);
        let max_disp = out
            .displacements()
            .iter()
            .fold(0.0f64, |m, d| m.max(d.x.abs()).max(d.y.abs()));
        assert!(max_disp < 0.5, "drifted {max_disp} px on identical frames");
    }

    #[test]
    fn optimize_level_recovers_single_control_push() {
        let ref_img = smooth_image(48, 48, 55);
        let region = box_mask(48, 48, 6, 6, 41, 41);
        let roi = roi_from_mask(&region, 4.0).unwrap();
        let mut truth = Lattice::zeros(roi, 4, 4).unwrap();
        truth.set_displacement(3, 3, Point::new(2.0, 0.0));
        let truth_chain = TransformChain { rigid: RigidParams::identity(), levels: vec![truth] };
        let src = ref_img.warp(&truth_chain).image;

        let start = TransformChain {
            rigid: RigidParams::identity(),
            levels: vec![Lattice::zeros(roi, 4, 4).unwrap()],
        };
        let cfg = EnergyConfig { reg_weight: 0.0, ..EnergyConfig::default() };
        let initial = energy(&ref_img, &src, &start, &cfg, &region).unwrap();
        let (out, log) = optimize_level(&ref_img, &src, &start, &cfg, &region, 1).unwrap();
        let final_chain = TransformChain { rigid: RigidParams::identity(), levels: vec![out] };
        let final_e = energy(&ref_img, &src, &final_chain, &cfg, &region).unwrap();
        assert!(
            final_e <= 0.25 * initial,
            "ssd only fell from {initial} to {final_e}"
        );
        assert!(!log.is_empty());
        // Log energies are strictly decreasing (accepted moves only).
        for w in log.windows(2) {
            assert!(w[1].energy < w[0].energy);
        }
    }

    #[test]
    fn register_nonrigid_structure_and_self_registration() {
        let img = smooth_image(64, 64, 77);
        let region = box_mask(64, 64, 12, 14, 50, 48);
        let cfg = EnergyConfig { levels: 1, ..EnergyConfig::default() };
        let (chain, _) =
            register_nonrigid(&img, &img, &region, RigidParams::identity(), &cfg).unwrap();
        assert_eq!(chain.levels.len(), 1);

        let cfg = EnergyConfig { levels: 3, ..EnergyConfig::default() };
        let (chain, _) =
            register_nonrigid(&img, &img, &region, RigidParams::identity(), &cfg).unwrap();
        assert_eq!(chain.levels.len(), 3);
        assert_eq!(chain.levels[0].m() * 2, chain.levels[1].m());
        assert_eq!(chain.levels[1].m() * 2, chain.levels[2].m());
        // Every level's domain is the full-resolution ROI.
        let d0 = chain.levels[0].domain();
        for l in &chain.levels {
            let d = l.domain();
            assert!((d.x_left - d0.x_left).abs() < 1e-9 && (d.x_right - d0.x_right).abs() < 1e-9);
        }

        let warped = img.warp(&chain);
        let e = ssd(&img, &warped.image, Some(&region.and(&warped.valid).unwrap())).unwrap();
        assert!(e.sqrt() < 0.01, "self-registration rmse {}", e.sqrt());
    }

    #[test]
    fn register_nonrigid_is_deterministic() {
        let ref_img = smooth_image(48, 48, 3);
        let src = smooth_image(48, 48, 4);
        let region = box_mask(48, 48, 8, 8, 39, 39);
        let cfg = EnergyConfig { levels: 2, max_iters: 15, ..EnergyConfig::default() };
        let (a, _) = register_nonrigid(&ref_img, &src, &region, RigidParams::identity(), &cfg).unwrap();
        let (b, _) = register_nonrigid(&ref_img, &src, &region, RigidParams::identity(), &cfg).unwrap();
        assert_eq!(a, b, "identical runs must produce bit-identical chains");
    }

    #[test]
    fn warm_start_accepts_previous_solution_and_rejects_bad_shapes() {
        let ref_img = smooth_image(48, 48, 31);
        let src = smooth_image(48, 48, 32);
        let region = box_mask(48, 48, 8, 8, 39, 39);
        let cfg = EnergyConfig { levels: 2, max_iters: 20, ..EnergyConfig::default() };
        let (cold, _) =
            register_nonrigid(&ref_img, &src, &region, RigidParams::identity(), &cfg).unwrap();
        // With a zero iteration budget the init lattices must pass through
        // bit-exactly (the per-level rescale round-trip is dyadic, so exact):
        // proof that the warm start actually seeds each level.
        let mut frozen = cfg;
        frozen.max_iters = 0;
        let (warm, log) = register_nonrigid_from(
            &ref_img,
            &src,
            &region,
            cold.rigid,
            Some(&cold.levels),
            &frozen,
        )
        .unwrap();
        assert!(log.is_empty());
        assert_eq!(warm.levels, cold.levels);

        // Wrong lattice count or shape is rejected.
        assert!(register_nonrigid_from(
            &ref_img,
            &src,
            &region,
            RigidParams::identity(),
            Some(&cold.levels[..1]),
            &cfg
        )
        .is_err());
        let mut swapped = cold.levels.clone();
        swapped.reverse();
        assert!(register_nonrigid_from(
            &ref_img,
            &src,
            &region,
            RigidParams::identity(),
            Some(&swapped),
            &cfg
        )
        .is_err());
    }

    #[test]
    fn config_validation() {
        let cfg = EnergyConfig { epsilon: 0.0, ..EnergyConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = EnergyConfig { levels: 0, ..EnergyConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = EnergyConfig { reg_weight: -0.1, ..EnergyConfig::default() };
        assert!(cfg.validate().is_err());
    }
}

//! Synthetic benchmark generation: geometric distortion, intensity
//! distortion, and the clean-registered evaluation measure.
//!
//! Each dataset item i derives from the reference by (1) a random rigid +
//! elastic warp with known ground truth and (2) Gaussian noise inside random
//! disks of the warped region followed by an affine rescale to [0, 1] —
//! mimicking intensity transients that sweep through signaling tissue.
//! Registration quality is then judged by warping the *noise-free* distorted
//! image with the recovered transform and measuring RMSE against the
//! reference, isolating geometric accuracy from intensity distortion.

use serde::{Deserialize, Serialize};

use crate::error::{RegError, Result};
use crate::ffd::Lattice;
use crate::image::{Image, Mask};
use crate::nonrigid::ssd;
use crate::rigid::RigidParams;
use crate::transform::TransformChain;

/// Deterministic counter-based generator (SplitMix64 core). Streams are
/// isolated by (seed, stream) keys so items can be generated independently
/// and in any order while staying bit-reproducible.
#[derive(Clone, Debug)]
pub struct Rng {
    state: u64,
}

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_SALT: u64 = 0xD1B5_4A32_D192_ED03;

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Rng { state: seed.wrapping_add(stream.wrapping_mul(STREAM_SALT)) }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in (0, 1].
    pub fn u01(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [-a, a].
    pub fn uniform_sym(&mut self, a: f64) -> f64 {
        a * (2.0 * self.u01() - 1.0)
    }

    /// Uniform in [lo, hi].
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.u01()
    }

    /// Uniform index in 0..count.
    pub fn index(&mut self, count: usize) -> usize {
        ((self.u01() * count as f64) as usize).min(count - 1)
    }

    /// Uniform integer in [lo, hi] inclusive.
    pub fn int_in(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.index(hi - lo + 1)
    }

    /// Standard normal via Box-Muller (second value discarded).
    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.u01();
        let u2 = self.u01();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Distortion magnitudes and dataset shape.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    /// Items generated per reference.
    pub count: usize,
    /// Cells per axis of the elastic distortion lattice.
    pub elastic_grid: usize,
    /// Uniform bound on elastic control displacements, px.
    pub elastic_max_disp: f64,
    /// Uniform bound on the rigid angle, rad.
    pub rigid_max_theta: f64,
    /// Uniform bound on the rigid translation, px.
    pub rigid_max_trans: f64,
    /// Inclusive range of noise-disk counts.
    pub disk_count_range: [usize; 2],
    /// Range of noise-disk radii, px.
    pub disk_radius_range: [f64; 2],
    /// Std-dev of the disk noise, intensity units.
    pub noise_sigma: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            count: 20,
            elastic_grid: 5,
            elastic_max_disp: 4.0,
            rigid_max_theta: 0.15,
            rigid_max_trans: 8.0,
            disk_count_range: [3, 8],
            disk_radius_range: [5.0, 15.0],
            noise_sigma: 0.15,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(RegError::InvalidParameter("count must be at least 1".into()));
        }
        if self.elastic_grid == 0 {
            return Err(RegError::InvalidParameter("elastic_grid must be at least 1".into()));
        }
        if self.elastic_max_disp < 0.0
            || self.rigid_max_theta < 0.0
            || self.rigid_max_trans < 0.0
            || self.noise_sigma < 0.0
        {
            return Err(RegError::InvalidParameter(
                "distortion magnitudes must be non-negative".into(),
            ));
        }
        if self.disk_count_range[0] > self.disk_count_range[1] {
            return Err(RegError::InvalidParameter(format!(
                "disk_count_range [{}, {}] is inverted",
                self.disk_count_range[0], self.disk_count_range[1]
            )));
        }
        if !(self.disk_radius_range[0] >= 0.0
            && self.disk_radius_range[0] <= self.disk_radius_range[1])
        {
            return Err(RegError::InvalidParameter(format!(
                "disk_radius_range [{}, {}] is invalid",
                self.disk_radius_range[0], self.disk_radius_range[1]
            )));
        }
        Ok(())
    }
}

/// Output of the geometric distortion stage.
#[derive(Clone, Debug)]
pub struct GeometricItem {
    /// Geometrically distorted, noise-free image.
    pub s1: Image,
    /// Region mask warped the same way.
    pub mask: Mask,
    /// Ground-truth transform; the ideal registration recovers its inverse.
    pub truth: TransformChain,
}

/// One complete dataset item.
#[derive(Clone, Debug)]
pub struct SynthItem {
    pub s1: Image,
    /// s1 with intensity distortion: the image the pipeline registers.
    pub s2: Image,
    pub mask: Mask,
    pub truth: TransformChain,
}

/// Draw the ground-truth warp for item `index` and apply it to the reference
/// frame and mask. Draw order (fixed for reproducibility): theta, tx, ty,
/// then control displacements row-major, (dx, dy) per control.
pub fn gen_geometric(
    ref_img: &Image,
    ref_mask: &Mask,
    spec: &SynthSpec,
    index: usize,
) -> Result<GeometricItem> {
    spec.validate()?;
    ref_mask.require_nonempty()?;
    let mut rng = Rng::new(spec.seed, 2 * index as u64);

    let center = ref_mask.centroid()?;
    let theta = rng.uniform_sym(spec.rigid_max_theta);
    let tx = rng.uniform_sym(spec.rigid_max_trans);
    let ty = rng.uniform_sym(spec.rigid_max_trans);
    // An all-zero draw must be the exact identity: rotating about an
    // arbitrary centroid computes (p - c) + c, which costs a few ulps.
    let rigid = if theta == 0.0 && tx == 0.0 && ty == 0.0 {
        RigidParams::identity()
    } else {
        RigidParams::new(theta, tx, ty, center.x, center.y)
    };

    let (x0, y0, x1, y1) = ref_mask.bbox()?;
    let domain = crate::geom::RoiRect::new(
        x0 as f64,
        (x1 + 1) as f64,
        y0 as f64,
        (y1 + 1) as f64,
    )?;
    let g = spec.elastic_grid;
    let mut lattice = Lattice::zeros(domain, g, g)?;
    for d in lattice.displacements_mut() {
        d.x = rng.uniform_sym(spec.elastic_max_disp);
        d.y = rng.uniform_sym(spec.elastic_max_disp);
    }

    let truth = TransformChain { rigid, levels: vec![lattice] };
    let s1 = ref_img.warp(&truth).image;
    let mask = ref_mask.warp(&truth);
    Ok(GeometricItem { s1, mask, truth })
}

/// Add disk-shaped Gaussian noise inside the region, then rescale the frame
/// affinely to [0, 1]. Draw order: disk count, then per disk (center index
/// into the row-major foreground list, radius), then per-pixel noise
/// row-major over disk-and-mask pixels.
pub fn gen_intensity(s1: &Image, mask: &Mask, spec: &SynthSpec, index: usize) -> Result<Image> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed, 2 * index as u64 + 1);
    let mut data = s1.data().to_vec();
    let (w, h) = (s1.width(), s1.height());
    if mask.width() != w || mask.height() != h {
        return Err(RegError::DimensionMismatch(w, h, mask.width(), mask.height()));
    }

    let fg: Vec<(usize, usize)> = (0..w * h)
        .filter(|i| mask.data()[*i])
        .map(|i| (i % w, i / w))
        .collect();
    let disks = rng.int_in(spec.disk_count_range[0], spec.disk_count_range[1]);
    if !fg.is_empty() {
        for _ in 0..disks {
            let (cx, cy) = fg[rng.index(fg.len())];
            let radius = rng.uniform_in(spec.disk_radius_range[0], spec.disk_radius_range[1]);
            for y in 0..h {
                for x in 0..w {
                    if mask.get(x, y)
                        && (x as f64 - cx as f64).hypot(y as f64 - cy as f64) <= radius
                    {
                        data[y * w + x] += spec.noise_sigma * rng.gaussian();
                    }
                }
            }
        }
    }
    Ok(Image::new(w, h, data).rescale_unit())
}

/// Generate one full item (geometric stage then intensity stage).
pub fn generate_item(
    ref_img: &Image,
    ref_mask: &Mask,
    spec: &SynthSpec,
    index: usize,
) -> Result<SynthItem> {
    let geo = gen_geometric(ref_img, ref_mask, spec, index)?;
    let s2 = gen_intensity(&geo.s1, &geo.mask, spec, index)?;
    Ok(SynthItem { s1: geo.s1, s2, mask: geo.mask, truth: geo.truth })
}

/// Clean-registered RMSE: warp the noise-free distorted image with the
/// recovered transform and compare against the reference over the region
/// (excluding pixels whose warped sample left the frame).
pub fn clean_register_eval(
    ref_img: &Image,
    s1: &Image,
    recovered: &TransformChain,
    region: &Mask,
) -> Result<f64> {
    let warped = s1.warp(recovered);
    let counted = region.and(&warped.valid)?;
    Ok(ssd(ref_img, &warped.image, Some(&counted))?.sqrt())
}

/// Deterministic test subject: an oval region with smooth internal texture
/// on a dark background, plus its mask. Stands in for a microscopy frame in
/// demos and benchmarks.
pub fn phantom_pouch(width: usize, height: usize, seed: u64) -> (Image, Mask) {
    let mut rng = Rng::new(seed, u64::MAX);
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let a = width as f64 * (0.30 + 0.06 * rng.u01());
    let b = height as f64 * (0.22 + 0.06 * rng.u01());
    let tilt = rng.uniform_sym(0.35);
    let (ts, tc) = tilt.sin_cos();

    let inside = |x: f64, y: f64| -> f64 {
        let dx = x - cx;
        let dy = y - cy;
        let u = tc * dx + ts * dy;
        let v = -ts * dx + tc * dy;
        (u / a).powi(2) + (v / b).powi(2)
    };

    let mut mask = Mask::filled(width, height, false);
    for y in 0..height {
        for x in 0..width {
            if inside(x as f64, y as f64) <= 1.0 {
                mask.set(x, y, true);
            }
        }
    }

    // Smooth internal texture: a base plateau plus random Gaussian bumps.
    let bump_count = 18;
    let bumps: Vec<(f64, f64, f64, f64)> = (0..bump_count)
        .map(|_| {
            // Rejection-sample a bump center inside the oval.
            let (mut bx, mut by);
            loop {
                bx = rng.u01() * (width as f64 - 1.0);
                by = rng.u01() * (height as f64 - 1.0);
                if inside(bx, by) <= 0.9 {
                    break;
                }
            }
            let sigma = 2.5 + 5.0 * rng.u01();
            let amp = rng.uniform_sym(0.28);
            (bx, by, sigma, amp)
        })
        .collect();

    let mut img = Image::filled(width, height, 0.1);
    for y in 0..height {
        for x in 0..width {
            if !mask.get(x, y) {
                continue;
            }
            let mut v = 0.5;
            for &(bx, by, sigma, amp) in &bumps {
                let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                v += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
            img.set(x, y, v.clamp(0.05, 0.95));
        }
    }
    (img, mask)
}

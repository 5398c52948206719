//! Raster storage, interpolation, filtering, differentiation, downsampling and
//! warping. Every other module samples from here.
//!
//! Images are dense row-major grayscale rasters with intensities in [0, 1].
//! All sampling uses the pixel-center convention: pixel (i, j) sits at
//! continuous coordinates (i as f64, j as f64), and the valid sampling domain
//! is [0, width-1] x [0, height-1]. Out-of-domain samples return the
//! background fill 0.0 together with an `in_domain = false` flag so callers
//! can exclude them from statistics.

use crate::error::{RegError, Result};
use crate::geom::Point;
use crate::transform::TransformChain;

/// Dense 2-D grayscale raster, row-major, intensities normalized to [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Binary raster marking a region of interest.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

/// Result of one interpolated lookup.
#[derive(Clone, Copy, Debug)]
pub struct Sampled {
    pub value: f64,
    pub in_domain: bool,
}

/// Interpolated lookup plus the exact spatial derivative of the interpolant.
#[derive(Clone, Copy, Debug)]
pub struct SampledGrad {
    pub value: f64,
    pub dx: f64,
    pub dy: f64,
    pub in_domain: bool,
}

/// A warped image together with the per-pixel validity of its samples.
#[derive(Clone, Debug)]
pub struct Warped {
    pub image: Image,
    pub valid: Mask,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "data length must be width*height");
        Image { width, height, data }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Image::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    fn cell(&self, x: f64, y: f64) -> (usize, usize, f64, f64) {
        // Clamp the cell index so x = width-1 (in-domain boundary) lands in
        // the last cell with a fractional offset of exactly 1.
        let ix = (x.floor() as usize).min(self.width - 2);
        let iy = (y.floor() as usize).min(self.height - 2);
        (ix, iy, x - ix as f64, y - iy as f64)
    }

    /// Bilinear interpolation at continuous coordinates.
    ///
    /// Outside [0, width-1] x [0, height-1] the value is the background fill
    /// 0.0 and `in_domain` is false.
    pub fn bilinear_sample(&self, x: f64, y: f64) -> Sampled {
        if !self.sample_in_domain(x, y) {
            return Sampled { value: 0.0, in_domain: false };
        }
        let (ix, iy, fx, fy) = self.cell(x, y);
        let v00 = self.get(ix, iy);
        let v10 = self.get(ix + 1, iy);
        let v01 = self.get(ix, iy + 1);
        let v11 = self.get(ix + 1, iy + 1);
        let top = v00 + fx * (v10 - v00);
        let bot = v01 + fx * (v11 - v01);
        Sampled { value: top + fy * (bot - top), in_domain: true }
    }

    /// Bilinear lookup plus the exact derivative of the bilinear interpolant
    /// at (x, y). The derivative is what gradient-based optimizers need; a
    /// smoothed central-difference field would not match finite differences
    /// of the sampled values.
    pub fn bilinear_sample_grad(&self, x: f64, y: f64) -> SampledGrad {
        if !self.sample_in_domain(x, y) {
            return SampledGrad { value: 0.0, dx: 0.0, dy: 0.0, in_domain: false };
        }
        let (ix, iy, fx, fy) = self.cell(x, y);
        let v00 = self.get(ix, iy);
        let v10 = self.get(ix + 1, iy);
        let v01 = self.get(ix, iy + 1);
        let v11 = self.get(ix + 1, iy + 1);
        let top = v00 + fx * (v10 - v00);
        let bot = v01 + fx * (v11 - v01);
        SampledGrad {
            value: top + fy * (bot - top),
            dx: (v10 - v00) * (1.0 - fy) + (v11 - v01) * fy,
            dy: bot - top,
            in_domain: true,
        }
    }

    fn sample_in_domain(&self, x: f64, y: f64) -> bool {
        self.width >= 2
            && self.height >= 2
            && x >= 0.0
            && y >= 0.0
            && x <= (self.width - 1) as f64
            && y <= (self.height - 1) as f64
    }

    /// Separable Gaussian convolution, kernel truncated at radius ceil(3*sigma)
    /// and renormalized to sum 1. Borders are handled by edge clamping.
    pub fn gaussian_filter(&self, sigma: f64) -> Result<Image> {
        if sigma.is_nan() || sigma <= 0.0 {
            return Err(RegError::InvalidParameter(format!(
                "gaussian_filter requires sigma > 0, got {sigma}"
            )));
        }
        let kernel = gaussian_kernel(sigma);
        let r = (kernel.len() - 1) / 2;
        let clamp = |v: i64, hi: usize| -> usize { v.clamp(0, hi as i64 - 1) as usize };

        // Horizontal pass.
        let mut tmp = vec![0.0; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = 0.0;
                for (t, w) in kernel.iter().enumerate() {
                    let sx = clamp(x as i64 + t as i64 - r as i64, self.width);
                    acc += w * self.get(sx, y);
                }
                tmp[y * self.width + x] = acc;
            }
        }
        // Vertical pass.
        let mut out = vec![0.0; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = 0.0;
                for (t, w) in kernel.iter().enumerate() {
                    let sy = clamp(y as i64 + t as i64 - r as i64, self.height);
                    acc += w * tmp[sy * self.width + x];
                }
                out[y * self.width + x] = acc;
            }
        }
        Ok(Image::new(self.width, self.height, out))
    }

    /// Gradient magnitude from central differences (one-sided at borders).
    pub fn gradient_magnitude(&self) -> Result<Image> {
        let (gx, gy) = self.gradient_xy()?;
        let data = gx
            .data
            .iter()
            .zip(gy.data.iter())
            .map(|(a, b)| a.hypot(*b))
            .collect();
        Ok(Image::new(self.width, self.height, data))
    }

    /// Per-axis derivative rasters: central differences in the interior,
    /// one-sided differences on the borders.
    pub fn gradient_xy(&self) -> Result<(Image, Image)> {
        if self.width < 3 || self.height < 3 {
            return Err(RegError::InvalidParameter(format!(
                "gradient needs at least a 3x3 image, got {}x{}",
                self.width, self.height
            )));
        }
        let mut gx = vec![0.0; self.data.len()];
        let mut gy = vec![0.0; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                let dx = if x == 0 {
                    self.get(1, y) - self.get(0, y)
                } else if x == self.width - 1 {
                    self.get(x, y) - self.get(x - 1, y)
                } else {
                    (self.get(x + 1, y) - self.get(x - 1, y)) / 2.0
                };
                let dy = if y == 0 {
                    self.get(x, 1) - self.get(x, 0)
                } else if y == self.height - 1 {
                    self.get(x, y) - self.get(x, y - 1)
                } else {
                    (self.get(x, y + 1) - self.get(x, y - 1)) / 2.0
                };
                gx[y * self.width + x] = dx;
                gy[y * self.width + x] = dy;
            }
        }
        Ok((
            Image::new(self.width, self.height, gx),
            Image::new(self.width, self.height, gy),
        ))
    }

    /// Halve resolution by 2x2 block averaging. Output is ceil(w/2) x
    /// ceil(h/2); partial border blocks average the pixels they have.
    pub fn downsample_half(&self) -> Result<Image> {
        if self.width < 2 || self.height < 2 {
            return Err(RegError::InvalidParameter(format!(
                "downsample_half needs at least 2x2, got {}x{}",
                self.width, self.height
            )));
        }
        let ow = self.width.div_ceil(2);
        let oh = self.height.div_ceil(2);
        let mut out = vec![0.0; ow * oh];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                let mut n = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (sx, sy) = (2 * ox + dx, 2 * oy + dy);
                        if sx < self.width && sy < self.height {
                            acc += self.get(sx, sy);
                            n += 1.0;
                        }
                    }
                }
                out[oy * ow + ox] = acc / n;
            }
        }
        Ok(Image::new(ow, oh, out))
    }

    /// Backward-warp: output(p) = bilinear_sample(self, chain(p)). Samples
    /// that fall outside the image become 0.0 and are marked invalid.
    pub fn warp(&self, chain: &TransformChain) -> Warped {
        let mut data = vec![0.0; self.data.len()];
        let mut valid = vec![false; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                let q = chain.apply(Point::new(x as f64, y as f64));
                let s = self.bilinear_sample(q.x, q.y);
                data[y * self.width + x] = s.value;
                valid[y * self.width + x] = s.in_domain;
            }
        }
        Warped {
            image: Image::new(self.width, self.height, data),
            valid: Mask::new(self.width, self.height, valid),
        }
    }

    /// Rescale intensities affinely so min -> 0 and max -> 1. A constant
    /// image is returned unchanged.
    pub fn rescale_unit(&self) -> Image {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi <= lo {
            return self.clone();
        }
        let scale = 1.0 / (hi - lo);
        let data = self.data.iter().map(|v| (v - lo) * scale).collect();
        Image::new(self.width, self.height, data)
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * r)
        .map(|i| {
            let d = i as f64 - r as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for w in &mut k {
        *w /= sum;
    }
    k
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height, "data length must be width*height");
        Mask { width, height, data }
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Mask::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn require_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(RegError::EmptyMask)
        } else {
            Ok(())
        }
    }

    /// Intersection with another mask of the same dimensions.
    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if self.width != other.width || self.height != other.height {
            return Err(RegError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| *a && *b)
            .collect();
        Ok(Mask::new(self.width, self.height, data))
    }

    /// Centroid of the foreground pixel centers.
    pub fn centroid(&self) -> Result<Point> {
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut n = 0.0;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1.0;
                }
            }
        }
        if n == 0.0 {
            return Err(RegError::EmptyMask);
        }
        Ok(Point::new(sx / n, sy / n))
    }

    /// Inclusive pixel bounding box (min_x, min_y, max_x, max_y).
    pub fn bbox(&self) -> Result<(usize, usize, usize, usize)> {
        let mut found = false;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    found = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        if !found {
            return Err(RegError::EmptyMask);
        }
        Ok((x0, y0, x1, y1))
    }

    /// View the mask as a {0.0, 1.0} intensity image.
    pub fn to_image(&self) -> Image {
        let data = self.data.iter().map(|v| if *v { 1.0 } else { 0.0 }).collect();
        Image::new(self.width, self.height, data)
    }

    /// Threshold an intensity image at 0.5.
    pub fn from_image(img: &Image) -> Mask {
        let data = img.data().iter().map(|v| *v >= 0.5).collect();
        Mask::new(img.width(), img.height(), data)
    }

    /// Halve resolution; a coarse pixel is foreground when at least half of
    /// its source block is.
    pub fn downsample_half(&self) -> Result<Mask> {
        Ok(Mask::from_image(&self.to_image().downsample_half()?))
    }

    /// Backward-warp the mask (bilinear on the {0,1} image, threshold 0.5).
    pub fn warp(&self, chain: &TransformChain) -> Mask {
        Mask::from_image(&self.to_image().warp(chain).image)
    }

    /// Largest 4-connected foreground component (row-major scan order breaks
    /// ties deterministically).
    pub fn largest_component(&self) -> Result<Mask> {
        self.require_nonempty()?;
        let mut label = vec![usize::MAX; self.data.len()];
        let mut sizes = Vec::new();
        let mut queue = std::collections::VecDeque::new();
        for start in 0..self.data.len() {
            if !self.data[start] || label[start] != usize::MAX {
                continue;
            }
            let id = sizes.len();
            let mut size = 0usize;
            label[start] = id;
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                size += 1;
                let (x, y) = (i % self.width, i / self.width);
                let mut push = |nx: usize, ny: usize| {
                    let j = ny * self.width + nx;
                    if self.data[j] && label[j] == usize::MAX {
                        label[j] = id;
                        queue.push_back(j);
                    }
                };
                if x > 0 {
                    push(x - 1, y);
                }
                if x + 1 < self.width {
                    push(x + 1, y);
                }
                if y > 0 {
                    push(x, y - 1);
                }
                if y + 1 < self.height {
                    push(x, y + 1);
                }
            }
            sizes.push(size);
        }
        let best = sizes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        let data = label.iter().map(|l| *l == best).collect();
        Ok(Mask::new(self.width, self.height, data))
    }
}

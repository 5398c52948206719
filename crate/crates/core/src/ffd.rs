//! Cubic B-spline free-form deformation: basis evaluation, the control-point
//! lattice, point displacement, and level refinement.
//!
//! A lattice covers a half-open rectangular domain with m x n cells and
//! (m+3) x (n+3) control points (one phantom ring outside the domain on each
//! side). A point inside the domain maps to lattice units u in [1, m+1),
//! v in [1, n+1); its displacement blends the 16 surrounding control points
//! with the uniform cubic B-spline basis.

use serde::{Deserialize, Serialize};

use crate::error::{RegError, Result};
use crate::geom::{Point, RoiRect};

/// Uniform cubic B-spline basis functions on the unit interval:
/// B0 = (1-t)^3/6, B1 = (3t^3-6t^2+4)/6, B2 = (-3t^3+3t^2+3t+1)/6,
/// B3 = t^3/6.
pub fn basis(i: usize, t: f64) -> Result<f64> {
    if i > 3 {
        return Err(RegError::InvalidParameter(format!(
            "basis index {i} out of range 0..=3"
        )));
    }
    Ok(basis_all(t)[i])
}

/// All four basis values at once (the hot-path form).
#[inline]
pub fn basis_all(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    let omt = 1.0 - t;
    [
        omt * omt * omt / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}

/// One free-form deformation level: a control-point displacement grid over a
/// fixed domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    domain: RoiRect,
    m: usize,
    n: usize,
    /// (m+3)*(n+3) control displacements, row-major: index j*(m+3)+i for
    /// control column i in 0..m+3 and row j in 0..n+3.
    displacements: Vec<Point>,
}

/// The 16-control-point support of one in-domain query: base indices plus the
/// per-axis basis weights. Control (k+a, l+b) gets weight wx[a]*wy[b].
#[derive(Clone, Copy, Debug)]
pub struct LatticeSupport {
    pub k: usize,
    pub l: usize,
    pub wx: [f64; 4],
    pub wy: [f64; 4],
}

impl Lattice {
    /// Zero-displacement lattice with m x n cells over `domain`.
    pub fn zeros(domain: RoiRect, m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(RegError::InvalidParameter(format!(
                "lattice needs at least one cell per axis, got m={m}, n={n}"
            )));
        }
        Ok(Lattice {
            domain,
            m,
            n,
            displacements: vec![Point::new(0.0, 0.0); (m + 3) * (n + 3)],
        })
    }

    pub fn with_displacements(
        domain: RoiRect,
        m: usize,
        n: usize,
        displacements: Vec<Point>,
    ) -> Result<Self> {
        let mut lat = Lattice::zeros(domain, m, n)?;
        if displacements.len() != lat.displacements.len() {
            return Err(RegError::InvalidParameter(format!(
                "lattice {}x{} needs {} control points, got {}",
                m,
                n,
                lat.displacements.len(),
                displacements.len()
            )));
        }
        if displacements.iter().any(|d| !d.x.is_finite() || !d.y.is_finite()) {
            return Err(RegError::InvalidParameter(
                "non-finite control displacement".into(),
            ));
        }
        lat.displacements = displacements;
        Ok(lat)
    }

    pub fn domain(&self) -> RoiRect {
        self.domain
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Control grid width, m+3.
    pub fn cols(&self) -> usize {
        self.m + 3
    }

    /// Control grid height, n+3.
    pub fn rows(&self) -> usize {
        self.n + 3
    }

    pub fn displacements(&self) -> &[Point] {
        &self.displacements
    }

    pub fn displacements_mut(&mut self) -> &mut [Point] {
        &mut self.displacements
    }

    pub fn displacement(&self, i: usize, j: usize) -> Point {
        self.displacements[j * self.cols() + i]
    }

    pub fn set_displacement(&mut self, i: usize, j: usize, d: Point) {
        let c = self.cols();
        self.displacements[j * c + i] = d;
    }

    /// Mean squared control-displacement magnitude (the regularization term).
    pub fn mean_sq_displacement(&self) -> f64 {
        let s: f64 = self.displacements.iter().map(|d| d.x * d.x + d.y * d.y).sum();
        s / self.displacements.len() as f64
    }

    /// Basis support at a point, or None outside the domain.
    ///
    /// Lattice units: u = (x - x_left) * m / (x_right - x_left) + 1, and v
    /// likewise with n, so u in [1, m+1) inside the half-open domain. The
    /// base index is k = floor(u) - 1 and the fraction s = u - floor(u).
    /// Rounding can push u to exactly m+1 for x just below x_right; the
    /// floor is clamped to m so the support window stays inside the grid
    /// (the fraction then evaluates at its t -> 1 limit).
    pub fn support(&self, p: Point) -> Option<LatticeSupport> {
        if !self.domain.contains(p) {
            return None;
        }
        let d = self.domain;
        let u = (p.x - d.x_left) * self.m as f64 / (d.x_right - d.x_left) + 1.0;
        let v = (p.y - d.y_left) * self.n as f64 / (d.y_right - d.y_left) + 1.0;
        let fu = u.floor().clamp(1.0, self.m as f64);
        let fv = v.floor().clamp(1.0, self.n as f64);
        Some(LatticeSupport {
            k: fu as usize - 1,
            l: fv as usize - 1,
            wx: basis_all(u - fu),
            wy: basis_all(v - fv),
        })
    }

    /// Displacement at an in-domain point; None outside the domain (callers
    /// treat that as zero displacement).
    pub fn displace(&self, p: Point) -> Option<Point> {
        let sup = self.support(p)?;
        let mut dx = 0.0;
        let mut dy = 0.0;
        for b in 0..4 {
            let row = (sup.l + b) * self.cols() + sup.k;
            for a in 0..4 {
                let w = sup.wx[a] * sup.wy[b];
                let d = self.displacements[row + a];
                dx += w * d.x;
                dy += w * d.y;
            }
        }
        Some(Point::new(dx, dy))
    }

    /// The deformation this level defines: p plus its displacement (identity
    /// outside the domain).
    pub fn apply(&self, p: Point) -> Point {
        match self.displace(p) {
            Some(d) => p + d,
            None => p,
        }
    }

    /// Next multi-level stage: a fresh zero lattice over the same domain with
    /// twice the cells per axis. The current level's deformation is not
    /// resampled in; accumulation happens by composing the levels.
    pub fn refine(&self) -> Lattice {
        Lattice::zeros(self.domain, 2 * self.m, 2 * self.n).expect("doubling keeps m,n positive")
    }

    /// Re-express the lattice in a coordinate frame related by q = s*p + h
    /// per axis (the pixel-center map between dyadic resolutions). The
    /// returned lattice satisfies out.apply(s*p + h) = s*self.apply(p) + h
    /// exactly: the domain maps through the same affine map and control
    /// displacements scale by s.
    pub fn rescale(&self, s: f64, h: f64) -> Lattice {
        let d = self.domain;
        let domain = RoiRect::new(
            s * d.x_left + h,
            s * d.x_right + h,
            s * d.y_left + h,
            s * d.y_right + h,
        )
        .expect("affine map with s > 0 keeps the rect non-degenerate");
        let displacements = self.displacements.iter().map(|p| *p * s).collect();
        Lattice { domain, m: self.m, n: self.n, displacements }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Cardinal cubic B-spline, an independent formulation of the same
    /// blending: the weight of control column i at lattice coordinate u is
    /// card(u - i). Support (-2, 2).
    fn card(x: f64) -> f64 {
        let a = x.abs();
        if a < 1.0 {
            2.0 / 3.0 - a * a + a * a * a / 2.0
        } else if a < 2.0 {
            let b = 2.0 - a;
            b * b * b / 6.0
        } else {
            0.0
        }
    }

    /// Brute-force oracle: sum over every control point with cardinal
    /// weights, no windowing or fraction extraction.
    fn oracle_displace(lat: &Lattice, p: Point) -> Point {
        let d = lat.domain();
        let u = (p.x - d.x_left) * lat.m() as f64 / (d.x_right - d.x_left) + 1.0;
        let v = (p.y - d.y_left) * lat.n() as f64 / (d.y_right - d.y_left) + 1.0;
        let mut out = Point::new(0.0, 0.0);
        for j in 0..lat.rows() {
            for i in 0..lat.cols() {
                let w = card(u - i as f64) * card(v - j as f64);
                out = out + lat.displacement(i, j) * w;
            }
        }
        out
    }

    fn lcg(state: &mut u64) -> f64 {
        // Minimal deterministic generator for test fixtures.
        *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*state >> 11) as f64 / (1u64 << 53) as f64
    }

    #[test]
    fn basis_closed_forms() {
        assert!((basis(0, 0.0).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!((basis(1, 0.0).unwrap() - 4.0 / 6.0).abs() < 1e-15);
        assert!((basis(2, 0.0).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(basis(3, 0.0).unwrap(), 0.0);
        let near_one = 1.0 - 1e-9;
        assert!((basis(3, near_one).unwrap() - 1.0 / 6.0).abs() < 1e-8);
        assert!(basis(4, 0.5).is_err());
    }

    #[test]
    fn basis_partition_of_unity_and_nonnegative() {
        let mut worst: f64 = 0.0;
        for s in 0..10_000 {
            let t = s as f64 / 10_000.0;
            let b = basis_all(t);
            for w in b {
                assert!(w >= 0.0, "negative basis value {w} at t={t}");
            }
            worst = worst.max((b.iter().sum::<f64>() - 1.0).abs());
        }
        assert!(worst <= 1e-12, "partition-of-unity error {worst}");
    }

    #[test]
    fn zero_lattice_displaces_nothing() {
        let dom = RoiRect::new(2.0, 10.0, 3.0, 9.0).unwrap();
        let lat = Lattice::zeros(dom, 4, 3).unwrap();
        for (x, y) in [(2.0, 3.0), (5.5, 6.25), (9.999, 8.999)] {
            let d = lat.displace(Point::new(x, y)).unwrap();
            assert_eq!((d.x, d.y), (0.0, 0.0));
        }
    }

    #[test]
    fn constant_lattice_reproduces_constant() {
        let dom = RoiRect::new(0.0, 16.0, 0.0, 12.0).unwrap();
        let mut lat = Lattice::zeros(dom, 5, 4).unwrap();
        for d in lat.displacements_mut() {
            *d = Point::new(1.25, -0.75);
        }
        let mut state = 7u64;
        for _ in 0..300 {
            let p = Point::new(lcg(&mut state) * 16.0 * 0.9999, lcg(&mut state) * 12.0 * 0.9999);
            let d = lat.displace(p).unwrap();
            assert!((d.x - 1.25).abs() < 1e-12 && (d.y + 0.75).abs() < 1e-12, "at {p:?}");
        }
        // Domain corner and near-edge queries included.
        let d = lat.displace(Point::new(0.0, 0.0)).unwrap();
        assert!((d.x - 1.25).abs() < 1e-12);
        let d = lat.displace(Point::new(16.0 - 1e-9, 12.0 - 1e-9)).unwrap();
        assert!((d.x - 1.25).abs() < 1e-12 && (d.y + 0.75).abs() < 1e-12);
    }

    #[test]
    fn single_control_point_matches_oracle_on_grid() {
        // One displaced control point on a 4x4-cell lattice, sampled on a
        // 9x9 grid, against the cardinal-spline brute-force sum.
        let dom = RoiRect::new(0.0, 8.0, 0.0, 8.0).unwrap();
        let mut lat = Lattice::zeros(dom, 4, 4).unwrap();
        lat.set_displacement(3, 2, Point::new(1.0, 0.0));
        for gy in 0..9 {
            for gx in 0..9 {
                let p = Point::new(gx as f64 * 0.999, gy as f64 * 0.999);
                let got = lat.displace(p).unwrap();
                let want = oracle_displace(&lat, p);
                assert!(
                    (got.x - want.x).abs() <= 1e-12 && (got.y - want.y).abs() <= 1e-12,
                    "mismatch at {p:?}: {got:?} vs {want:?}"
                );
            }
        }
    }

    #[test]
    fn random_lattices_match_oracle() {
        let mut state = 42u64;
        for trial in 0..20 {
            let m = 1 + (lcg(&mut state) * 6.0) as usize;
            let n = 1 + (lcg(&mut state) * 6.0) as usize;
            let x0 = lcg(&mut state) * 10.0;
            let y0 = lcg(&mut state) * 10.0;
            let dom =
                RoiRect::new(x0, x0 + 5.0 + lcg(&mut state) * 40.0, y0, y0 + 5.0 + lcg(&mut state) * 40.0)
                    .unwrap();
            let mut lat = Lattice::zeros(dom, m, n).unwrap();
            for d in lat.displacements_mut() {
                *d = Point::new(lcg(&mut state) * 6.0 - 3.0, lcg(&mut state) * 6.0 - 3.0);
            }
            for _ in 0..1000 {
                let p = Point::new(
                    dom.x_left + lcg(&mut state) * dom.width() * 0.999999,
                    dom.y_left + lcg(&mut state) * dom.height() * 0.999999,
                );
                let got = lat.displace(p).unwrap();
                let want = oracle_displace(&lat, p);
                assert!(
                    (got.x - want.x).abs() <= 1e-12 && (got.y - want.y).abs() <= 1e-12,
                    "trial {trial} at {p:?}: {got:?} vs {want:?}"
                );
            }
        }
    }

    #[test]
    fn locality_of_one_control_point() {
        let dom = RoiRect::new(0.0, 10.0, 0.0, 10.0).unwrap();
        let base = Lattice::zeros(dom, 5, 5).unwrap();
        let mut bumped = base.clone();
        let (ci, cj) = (4usize, 3usize);
        bumped.set_displacement(ci, cj, Point::new(0.5, -0.5));
        let mut state = 3u64;
        for _ in 0..500 {
            let p = Point::new(lcg(&mut state) * 9.9999, lcg(&mut state) * 9.9999);
            let u = p.x * 5.0 / 10.0 + 1.0;
            let v = p.y * 5.0 / 10.0 + 1.0;
            let inside = (u - ci as f64).abs() < 2.0 && (v - cj as f64).abs() < 2.0;
            let a = base.displace(p).unwrap();
            let b = bumped.displace(p).unwrap();
            if !inside {
                assert_eq!((a.x, a.y), (b.x, b.y), "support leak at {p:?}");
            }
        }
    }

    #[test]
    fn linearity_in_displacements() {
        let dom = RoiRect::new(0.0, 12.0, 0.0, 9.0).unwrap();
        let mut state = 11u64;
        let mut la = Lattice::zeros(dom, 3, 4).unwrap();
        let mut lb = Lattice::zeros(dom, 3, 4).unwrap();
        let mut lsum = Lattice::zeros(dom, 3, 4).unwrap();
        for i in 0..la.displacements().len() {
            let a = Point::new(lcg(&mut state) - 0.5, lcg(&mut state) - 0.5);
            let b = Point::new(lcg(&mut state) - 0.5, lcg(&mut state) - 0.5);
            la.displacements_mut()[i] = a;
            lb.displacements_mut()[i] = b;
            lsum.displacements_mut()[i] = a + b;
        }
        for _ in 0..200 {
            let p = Point::new(lcg(&mut state) * 11.9999, lcg(&mut state) * 8.9999);
            let da = la.displace(p).unwrap();
            let db = lb.displace(p).unwrap();
            let ds = lsum.displace(p).unwrap();
            assert!((da.x + db.x - ds.x).abs() <= 1e-12);
            assert!((da.y + db.y - ds.y).abs() <= 1e-12);
        }
    }

    #[test]
    fn out_of_domain_is_flagged() {
        let dom = RoiRect::new(0.0, 8.0, 0.0, 8.0).unwrap();
        let lat = Lattice::zeros(dom, 4, 4).unwrap();
        assert!(lat.displace(Point::new(-0.001, 4.0)).is_none());
        assert!(lat.displace(Point::new(8.0, 4.0)).is_none(), "right edge is exclusive");
        assert!(lat.displace(Point::new(4.0, 8.0)).is_none(), "bottom edge is exclusive");
        assert!(lat.displace(Point::new(0.0, 0.0)).is_some(), "left edge is inclusive");
        // apply() is the identity outside the domain.
        let p = Point::new(-3.0, -3.0);
        let q = lat.apply(p);
        assert_eq!((q.x, q.y), (p.x, p.y));
    }

    #[test]
    fn float_edge_query_stays_in_bounds() {
        // A coordinate just below x_right whose lattice unit rounds to m+1
        // must still evaluate (clamped window, t -> 1 limit), not panic.
        let dom = RoiRect::new(0.1, 0.4, 0.1, 0.4).unwrap();
        let mut lat = Lattice::zeros(dom, 3, 3).unwrap();
        for d in lat.displacements_mut() {
            *d = Point::new(2.0, 2.0);
        }
        let just_below = f64::from_bits(0.4f64.to_bits() - 1);
        let d = lat.displace(Point::new(just_below, just_below)).unwrap();
        assert!((d.x - 2.0).abs() < 1e-9 && (d.y - 2.0).abs() < 1e-9);
    }

    #[test]
    fn refine_doubles_cells_zeroes_displacements() {
        let dom = RoiRect::new(1.0, 9.0, 2.0, 10.0).unwrap();
        let mut lat = Lattice::zeros(dom, 4, 4).unwrap();
        lat.set_displacement(2, 2, Point::new(3.0, 3.0));
        let fine = lat.refine();
        assert_eq!((fine.m(), fine.n()), (8, 8));
        assert_eq!(fine.domain(), dom);
        assert!(fine.displacements().iter().all(|d| d.x == 0.0 && d.y == 0.0));
    }

    #[test]
    fn rescale_is_exact_conjugation() {
        let dom = RoiRect::new(1.0, 17.0, 2.0, 14.0).unwrap();
        let mut state = 99u64;
        let mut lat = Lattice::zeros(dom, 4, 3).unwrap();
        for d in lat.displacements_mut() {
            *d = Point::new(lcg(&mut state) * 2.0 - 1.0, lcg(&mut state) * 2.0 - 1.0);
        }
        let (s, h) = (2.0, 0.5);
        let fine = lat.rescale(s, h);
        for _ in 0..200 {
            let p = Point::new(
                1.0 + lcg(&mut state) * 15.9999,
                2.0 + lcg(&mut state) * 11.9999,
            );
            let want = lat.apply(p) * s + Point::new(h, h);
            let got = fine.apply(p * s + Point::new(h, h));
            assert!(
                (want.x - got.x).abs() <= 1e-12 && (want.y - got.y).abs() <= 1e-12,
                "conjugation broke at {p:?}"
            );
        }
    }
}

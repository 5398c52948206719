//! Small geometry primitives: 2-D points/vectors and rectangular domains.

use serde::{Deserialize, Serialize};

/// A 2-D point or displacement in pixel coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point) -> f64 {
        (self - other).norm()
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Half-open rectangular domain: x in [x_left, x_right), y in [y_left, y_right).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiRect {
    pub x_left: f64,
    pub x_right: f64,
    pub y_left: f64,
    pub y_right: f64,
}

impl RoiRect {
    pub fn new(
        x_left: f64,
        x_right: f64,
        y_left: f64,
        y_right: f64,
    ) -> crate::error::Result<Self> {
        if !(x_left < x_right && y_left < y_right)
            || !(x_left.is_finite() && x_right.is_finite() && y_left.is_finite() && y_right.is_finite())
        {
            return Err(crate::error::RegError::InvalidParameter(format!(
                "degenerate domain [{x_left}, {x_right}) x [{y_left}, {y_right})"
            )));
        }
        Ok(RoiRect { x_left, x_right, y_left, y_right })
    }

    pub fn width(&self) -> f64 {
        self.x_right - self.x_left
    }

    pub fn height(&self) -> f64 {
        self.y_right - self.y_left
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_left && p.x < self.x_right && p.y >= self.y_left && p.y < self.y_right
    }
}

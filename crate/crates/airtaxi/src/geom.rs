//! Planar geometry helpers shared across the crate.
//!
//! The world is a flat plane measured in kilometres; headings are radians
//! measured counter-clockwise from the +x axis.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// A point (or displacement) on the map plane, in km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    /// Euclidean distance to another point.
    pub fn dist(&self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Heading from this point towards `other`, normalized to [0, 2π).
    /// Returns 0 when the points coincide.
    pub fn bearing_to(&self, other: Point) -> f64 {
        let dy = other.y - self.y;
        let dx = other.x - self.x;
        if dx == 0.0 && dy == 0.0 {
            0.0
        } else {
            normalize_angle(dy.atan2(dx))
        }
    }
}

/// Normalize an angle to [0, 2π).
pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    // rem_euclid can return TAU itself for tiny negative inputs.
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Shortest signed angular difference `to - from`, in (-π, π].
pub fn angle_diff(from: f64, to: f64) -> f64 {
    let mut d = (to - from).rem_euclid(TAU);
    if d > std::f64::consts::PI {
        d -= TAU;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn distance_is_euclidean() {
        assert_relative_eq!(Point::new(0.0, 0.0).dist(Point::new(3.0, 4.0)), 5.0);
    }

    #[test]
    fn bearing_quadrants() {
        let o = Point::new(0.0, 0.0);
        assert_relative_eq!(o.bearing_to(Point::new(1.0, 0.0)), 0.0);
        assert_relative_eq!(o.bearing_to(Point::new(0.0, 1.0)), PI / 2.0);
        assert_relative_eq!(o.bearing_to(Point::new(-1.0, 0.0)), PI);
        assert_relative_eq!(o.bearing_to(Point::new(0.0, -1.0)), 3.0 * PI / 2.0);
    }

    #[test]
    fn normalize_wraps_into_range() {
        assert_relative_eq!(normalize_angle(-PI / 2.0), 3.0 * PI / 2.0);
        assert_relative_eq!(normalize_angle(TAU + 0.25), 0.25);
        assert!(normalize_angle(-1e-18) < TAU);
    }

    #[test]
    fn angle_diff_takes_short_way() {
        assert_relative_eq!(angle_diff(0.1, TAU - 0.1), -0.2, epsilon = 1e-12);
        assert_relative_eq!(angle_diff(TAU - 0.1, 0.1), 0.2, epsilon = 1e-12);
        assert_relative_eq!(angle_diff(0.0, PI), PI);
    }
}

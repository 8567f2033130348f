//! Planar geometry: points, polylines with arc-length parameterisation and
//! oriented boxes.

use std::f64::consts::PI;

use crate::error::SimError;

pub type Point = [f64; 2];

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

#[inline]
pub fn unit(heading: f64) -> Point {
    [heading.cos(), heading.sin()]
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Closest point of a polyline to a query point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Arc length of the closest point.
    pub s: f64,
    /// Signed offset, positive to the left of the direction of travel.
    pub lateral: f64,
    pub distance: f64,
    pub segment: usize,
}

/// Piecewise-linear curve with cumulative arc lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    points: Vec<Point>,
    cum: Vec<f64>,
}

impl Polyline {
    pub fn new(points: Vec<Point>) -> Result<Self, SimError> {
        if points.len() < 2 {
            return Err(SimError::Geometry("polyline needs at least two points".into()));
        }
        let mut cum = Vec::with_capacity(points.len());
        cum.push(0.0);
        for w in points.windows(2) {
            let d = dist(w[0], w[1]);
            if !(d > 1e-9) {
                return Err(SimError::Geometry(format!(
                    "repeated or non-finite polyline point {:?}",
                    w[1]
                )));
            }
            cum.push(cum.last().unwrap() + d);
        }
        Ok(Polyline { points, cum })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn segments(&self) -> usize {
        self.points.len() - 1
    }

    /// Arc length at the start of each vertex.
    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    fn segment_at(&self, s: f64) -> usize {
        match self.cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(self.segments() - 1),
            Err(i) => i.saturating_sub(1).min(self.segments() - 1),
        }
    }

    /// Point at arc length `s`, extrapolated along the end segments outside `[0, length]`.
    pub fn point_at(&self, s: f64) -> Point {
        let i = self.segment_at(s);
        let a = self.points[i];
        let b = self.points[i + 1];
        let len = self.cum[i + 1] - self.cum[i];
        add(a, scale(sub(b, a), (s - self.cum[i]) / len))
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let i = self.segment_at(s);
        let d = sub(self.points[i + 1], self.points[i]);
        d[1].atan2(d[0])
    }

    fn project_segment(&self, p: Point, i: usize) -> Projection {
        let a = self.points[i];
        let d = sub(self.points[i + 1], a);
        let len = self.cum[i + 1] - self.cum[i];
        let t = (dot(sub(p, a), d) / (len * len)).clamp(0.0, 1.0);
        let c = add(a, scale(d, t));
        Projection {
            s: self.cum[i] + t * len,
            lateral: cross(d, sub(p, a)) / len,
            distance: dist(p, c),
            segment: i,
        }
    }

    /// Closest point over all segments; ties go to the earliest segment.
    pub fn project(&self, p: Point) -> Projection {
        self.project_range(p, 0, self.segments())
    }

    /// Closest point over the segments overlapping arc lengths `[lo, hi]`.
    pub fn project_window(&self, p: Point, lo: f64, hi: f64) -> Projection {
        let first = self.segment_at(lo);
        let last = self.segment_at(hi);
        self.project_range(p, first, last + 1)
    }

    fn project_range(&self, p: Point, from: usize, to: usize) -> Projection {
        let mut best = self.project_segment(p, from);
        for i in from + 1..to {
            let cand = self.project_segment(p, i);
            if cand.distance < best.distance {
                best = cand;
            }
        }
        best
    }

    /// Sub-curve between two arc lengths (clamped to the curve).
    pub fn slice(&self, from: f64, to: f64) -> Vec<Point> {
        let from = from.clamp(0.0, self.length());
        let to = to.clamp(from, self.length());
        let mut out = vec![self.point_at(from)];
        for (i, &c) in self.cum.iter().enumerate() {
            if c > from + 1e-9 && c < to - 1e-9 {
                out.push(self.points[i]);
            }
        }
        let end = self.point_at(to);
        if dist(end, *out.last().unwrap()) > 1e-9 {
            out.push(end);
        }
        out
    }

    /// Axis-aligned bounds `[min_x, min_y, max_x, max_y]` grown by `margin`.
    pub fn bounds(&self, margin: f64) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in &self.points {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
        [b[0] - margin, b[1] - margin, b[2] + margin, b[3] + margin]
    }
}

/// Oriented bounding box of a vehicle footprint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Obb {
    pub center: Point,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Obb {
    pub fn new(center: Point, heading: f64, length: f64, width: f64) -> Self {
        Obb {
            center,
            heading,
            half_length: length / 2.0,
            half_width: width / 2.0,
        }
    }

    fn axes(&self) -> [Point; 2] {
        let f = unit(self.heading);
        [f, [-f[1], f[0]]]
    }

    /// Half extent of the box projected onto a unit axis.
    fn radius_along(&self, axis: Point) -> f64 {
        let [f, l] = self.axes();
        self.half_length * dot(f, axis).abs() + self.half_width * dot(l, axis).abs()
    }

    /// Separating-axis test over the four face normals. Touching boxes overlap.
    pub fn overlaps(&self, other: &Obb) -> bool {
        let d = sub(other.center, self.center);
        let [a0, a1] = self.axes();
        let [b0, b1] = other.axes();
        [a0, a1, b0, b1]
            .iter()
            .all(|&axis| dot(d, axis).abs() <= self.radius_along(axis) + other.radius_along(axis))
    }

    pub fn circumradius(&self) -> f64 {
        self.half_length.hypot(self.half_width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn polyline_rejects_degenerate_input() {
        assert!(Polyline::new(vec![[0.0, 0.0]]).is_err());
        assert!(Polyline::new(vec![[0.0, 0.0], [0.0, 0.0]]).is_err());
    }

    #[test]
    fn projection_on_an_elbow() {
        let p = Polyline::new(vec![[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]]).unwrap();
        let pr = p.project([4.0, 1.0]);
        assert_eq!(pr.s, 4.0);
        assert_eq!(pr.lateral, 1.0);
        let pr = p.project([11.0, 5.0]);
        assert_eq!(pr.s, 15.0);
        assert_eq!(pr.lateral, -1.0);
        assert_eq!(p.point_at(12.5), [10.0, 2.5]);
        assert_eq!(p.point_at(-1.0), [-1.0, 0.0]);
        assert_eq!(p.slice(5.0, 12.0), vec![[5.0, 0.0], [10.0, 0.0], [10.0, 2.0]]);
    }

    #[test]
    fn obb_separation() {
        let a = Obb::new([0.0, 0.0], 0.0, 4.0, 2.0);
        assert!(!a.overlaps(&Obb::new([5.0, 0.0], 0.0, 4.0, 2.0)));
        assert!(a.overlaps(&Obb::new([3.5, 0.0], 0.0, 4.0, 2.0)));
        // Rotated box whose corner pokes into the first one.
        assert!(a.overlaps(&Obb::new([3.0, 1.0], PI / 4.0, 2.0, 2.0)));
        assert!(!a.overlaps(&Obb::new([3.5, 2.5], PI / 4.0, 2.0, 2.0)));
    }
}

//! Ego-centred bird's-eye-view rasterisation.
//!
//! Pixel `(row, col)` has its centre at ego-frame offsets
//! `right = (col - S/2) * res` and `forward = (S/2 - row) * res`, so the ego
//! sits on pixel `(S/2, S/2)`, forward is up and right is to the right.

use serde::{Deserialize, Serialize};

use crate::geom::{add, dot, scale, Point};
use crate::scenario::{segment_contains, LaneGraph};

/// Square bit-packed binary image.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitGrid {
    size: usize,
    words: Vec<u64>,
}

impl BitGrid {
    pub fn new(size: usize) -> Self {
        BitGrid {
            size,
            words: vec![0; (size * size).div_ceil(64)],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        let k = row * self.size + col;
        self.words[k / 64] >> (k % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize) {
        let k = row * self.size + col;
        self.words[k / 64] |= 1 << (k % 64);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Row-major 0/1 values.
    pub fn write_into<T: From<u8>>(&self, out: &mut [T]) {
        for (k, o) in out.iter_mut().enumerate().take(self.size * self.size) {
            *o = T::from((self.words[k / 64] >> (k % 64) & 1) as u8);
        }
    }

    /// Set pixels as `(row, col)` pairs in row-major order.
    pub fn ones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.size * self.size)
            .filter(|&k| self.words[k / 64] >> (k % 64) & 1 == 1)
            .map(|k| (k / self.size, k % self.size))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextMaps {
    pub drivable: BitGrid,
    pub waypoint: BitGrid,
    pub resolution: f64,
}

/// Pixel/world conversion for one ego pose.
#[derive(Clone, Copy, Debug)]
pub struct BevFrame {
    pub origin: Point,
    forward: Point,
    right: Point,
    pub size: usize,
    pub resolution: f64,
}

impl BevFrame {
    pub fn new(origin: Point, heading: f64, size: usize, resolution: f64) -> Self {
        let (s, c) = heading.sin_cos();
        BevFrame {
            origin,
            forward: [c, s],
            right: [s, -c],
            size,
            resolution,
        }
    }

    fn half(&self) -> f64 {
        (self.size / 2) as f64
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> Point {
        let right = (col as f64 - self.half()) * self.resolution;
        let fwd = (self.half() - row as f64) * self.resolution;
        add(self.origin, add(scale(self.right, right), scale(self.forward, fwd)))
    }

    /// Continuous `(row, col)` of a world point.
    pub fn to_pixel(&self, p: Point) -> (f64, f64) {
        let d = [p[0] - self.origin[0], p[1] - self.origin[1]];
        let col = self.half() + dot(d, self.right) / self.resolution;
        let row = self.half() - dot(d, self.forward) / self.resolution;
        (row, col)
    }

    /// Inclusive pixel index ranges covering the world-space box around `pts`.
    fn pixel_box(&self, pts: &[Point], margin: f64) -> Option<(usize, usize, usize, usize)> {
        let m = margin / self.resolution + 1.0;
        let (mut r0, mut r1, mut c0, mut c1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &p in pts {
            let (r, c) = self.to_pixel(p);
            r0 = r0.min(r - m);
            r1 = r1.max(r + m);
            c0 = c0.min(c - m);
            c1 = c1.max(c + m);
        }
        let max = (self.size - 1) as f64;
        if r1 < 0.0 || c1 < 0.0 || r0 > max || c0 > max {
            return None;
        }
        Some((
            r0.max(0.0).floor() as usize,
            r1.min(max).ceil() as usize,
            c0.max(0.0).floor() as usize,
            c1.min(max).ceil() as usize,
        ))
    }
}

/// Marks every pixel whose centre lies on a lane surface.
pub fn rasterize_drivable(graph: &LaneGraph, frame: &BevFrame) -> BitGrid {
    let mut grid = BitGrid::new(frame.size);
    let reach = frame.half() * frame.resolution * std::f64::consts::SQRT_2 + frame.resolution;
    let view = [
        frame.origin[0] - reach,
        frame.origin[1] - reach,
        frame.origin[0] + reach,
        frame.origin[1] + reach,
    ];
    for lane in &graph.lanes {
        let b = lane.bounds();
        if b[2] < view[0] || b[0] > view[2] || b[3] < view[1] || b[1] > view[3] {
            continue;
        }
        let half = lane.width / 2.0;
        let pts = lane.line.points();
        for i in 0..lane.line.segments() {
            let Some((r0, r1, c0, c1)) = frame.pixel_box(&pts[i..i + 2], half) else {
                continue;
            };
            for r in r0..=r1 {
                for c in c0..=c1 {
                    if !grid.get(r, c) && segment_contains(pts[i], pts[i + 1], half, frame.pixel_center(r, c)) {
                        grid.set(r, c);
                    }
                }
            }
        }
        for (i, &q) in pts.iter().enumerate() {
            if !lane.has_joint(i) {
                continue;
            }
            let Some((r0, r1, c0, c1)) = frame.pixel_box(&[q], half) else {
                continue;
            };
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let p = frame.pixel_center(r, c);
                    if (p[0] - q[0]).hypot(p[1] - q[1]) <= half {
                        grid.set(r, c);
                    }
                }
            }
        }
    }
    grid
}

/// Draws a polyline with one-pixel DDA strokes (nearest-pixel rounding).
pub fn rasterize_polyline(points: &[Point], frame: &BevFrame) -> BitGrid {
    let mut grid = BitGrid::new(frame.size);
    let lo = -0.5;
    let hi = frame.size as f64 - 0.5;
    for w in points.windows(2) {
        let a = frame.to_pixel(w[0]);
        let b = frame.to_pixel(w[1]);
        let Some((a, b)) = clip(a, b, lo, hi) else {
            continue;
        };
        let (dr, dc) = (b.0 - a.0, b.1 - a.1);
        let n = dr.abs().max(dc.abs()).ceil().max(1.0) as usize;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            let r = (a.0 + dr * t).round();
            let c = (a.1 + dc * t).round();
            if r >= 0.0 && c >= 0.0 && r < frame.size as f64 && c < frame.size as f64 {
                grid.set(r as usize, c as usize);
            }
        }
    }
    grid
}

/// Liang-Barsky clip of a segment to the square `[lo, hi]^2`.
fn clip(a: (f64, f64), b: (f64, f64), lo: f64, hi: f64) -> Option<((f64, f64), (f64, f64))> {
    let d = (b.0 - a.0, b.1 - a.1);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [
        (-d.0, a.0 - lo),
        (d.0, hi - a.0),
        (-d.1, a.1 - lo),
        (d.1, hi - a.1),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then(|| ((a.0 + t0 * d.0, a.1 + t0 * d.1), (a.0 + t1 * d.0, a.1 + t1 * d.1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bitgrid_round_trip() {
        let mut g = BitGrid::new(10);
        g.set(3, 7);
        g.set(9, 9);
        assert!(g.get(3, 7) && g.get(9, 9) && !g.get(7, 3));
        assert_eq!(g.count_ones(), 2);
        assert_eq!(g.ones().collect::<Vec<_>>(), vec![(3, 7), (9, 9)]);
        let mut dense = vec![0.0f64; 100];
        g.write_into(&mut dense);
        assert_eq!(dense[37], 1.0);
    }

    #[test]
    fn frame_axes() {
        // North-facing ego: forward is +y, right is +x.
        let f = BevFrame::new([10.0, 20.0], std::f64::consts::FRAC_PI_2, 8, 1.0);
        assert_eq!(f.pixel_center(4, 4), [10.0, 20.0]);
        let p = f.pixel_center(2, 5);
        assert!((p[0] - 11.0).abs() < 1e-12 && (p[1] - 22.0).abs() < 1e-12);
        let (r, c) = f.to_pixel([11.0, 22.0]);
        assert!((r - 2.0).abs() < 1e-12 && (c - 5.0).abs() < 1e-12);
    }

    #[test]
    fn clipping() {
        assert!(clip((-5.0, -5.0), (-1.0, -1.0), -0.5, 9.5).is_none());
        let (a, b) = clip((-10.0, 4.0), (20.0, 4.0), -0.5, 9.5).unwrap();
        assert_eq!((a, b), ((-0.5, 4.0), (9.5, 4.0)));
    }
}

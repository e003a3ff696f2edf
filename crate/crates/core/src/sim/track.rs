//! Closed tracks: centerline polyline, road half-width and circular obstacles.
//!
//! Coordinates are screen-style: x to the right, y downward, heading measured
//! from +x toward +y. A positive heading change is therefore a right turn.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Point,
    pub radius: f64,
}

/// The on-disk and in-memory track description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    pub centerline: Vec<Point>,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

fn default_half_width() -> f64 {
    3.5
}

/// Nearest point on the centerline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub segment: usize,
    /// Arc length of the foot point from centerline point 0.
    pub s: f64,
    pub foot: Point,
    /// Unsigned distance to the centerline.
    pub distance: f64,
    /// Positive when the point lies right of the direction of travel.
    pub lateral: f64,
}

/// A validated track with precomputed arc lengths.
#[derive(Clone, Debug)]
pub struct Track {
    spec: TrackSpec,
    /// `cum[i]` is the arc length at vertex i; `cum[n]` is the perimeter.
    cum: Vec<f64>,
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

fn segments_cross(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(sub(p2, p1), sub(q1, p1));
    let d2 = cross(sub(p2, p1), sub(q2, p1));
    let d3 = cross(sub(q2, q1), sub(p1, q1));
    let d4 = cross(sub(q2, q1), sub(p2, q1));
    (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
}

/// Distance from `p` to segment `ab` and the clamped foot parameter.
pub fn point_segment(p: Point, a: Point, b: Point) -> (f64, f64) {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 { (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let foot = [a[0] + t * ab[0], a[1] + t * ab[1]];
    (norm(sub(p, foot)), t)
}

impl Track {
    pub fn new(mut spec: TrackSpec) -> Result<Self> {
        if !(spec.half_width > 0.0 && spec.half_width.is_finite()) {
            return Err(Error::validation(format!("half_width {} must be positive", spec.half_width)));
        }
        if spec.centerline.len() > 1 && spec.centerline.first() == spec.centerline.last() {
            spec.centerline.pop();
        }
        let pts = &spec.centerline;
        let n = pts.len();
        if n < 3 {
            return Err(Error::validation("centerline needs at least 3 distinct points"));
        }
        if pts.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("centerline has non-finite coordinates"));
        }
        for o in &spec.obstacles {
            if !(o.radius > 0.0) || o.center.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation("obstacles need a finite center and positive radius"));
            }
        }
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0.0);
        for i in 0..n {
            let len = norm(sub(pts[(i + 1) % n], pts[i]));
            if len == 0.0 {
                return Err(Error::validation(format!("centerline repeats point {i}")));
            }
            cum.push(cum[i] + len);
        }
        for i in 0..n {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                if segments_cross(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]) {
                    return Err(Error::validation(format!("centerline self-intersects at segments {i} and {j}")));
                }
            }
        }
        Ok(Self { spec, cum })
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::new(serde_json::from_str(&text)?)
    }

    /// Rounded-rectangle circuit of about 200 m with two long straights and
    /// corners of radius 8 m and 14 m, driven clockwise on screen. Point 0
    /// sits mid-way along the top straight, heading +x.
    pub fn default_circuit() -> Self {
        let (r_tight, r_wide, link) = (8.0, 14.0, 4.0);
        let straight = (200.0 - 2.0 * link - std::f64::consts::PI * (r_tight + r_wide)) / 2.0;
        let mut b = PathBuilder::new(1.0);
        b.straight(straight / 2.0);
        b.arc(r_tight, FRAC_PI_2);
        b.straight(link);
        b.arc(r_wide, FRAC_PI_2);
        b.straight(straight);
        b.arc(r_tight, FRAC_PI_2);
        b.straight(link);
        b.arc(r_wide, FRAC_PI_2);
        b.straight(straight / 2.0);
        let spec = TrackSpec { centerline: b.finish(), half_width: 3.5, obstacles: Vec::new() };
        Self::new(spec).expect("default circuit is valid")
    }

    pub fn spec(&self) -> &TrackSpec {
        &self.spec
    }

    pub fn points(&self) -> &[Point] {
        &self.spec.centerline
    }

    pub fn half_width(&self) -> f64 {
        self.spec.half_width
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.spec.obstacles
    }

    pub fn perimeter(&self) -> f64 {
        self.cum[self.cum.len() - 1]
    }

    pub fn segment_count(&self) -> usize {
        self.spec.centerline.len()
    }

    pub fn segment(&self, i: usize) -> (Point, Point) {
        let pts = self.points();
        (pts[i], pts[(i + 1) % pts.len()])
    }

    pub fn project(&self, p: Point) -> Projection {
        let mut best = (f64::INFINITY, 0usize, 0.0f64);
        for i in 0..self.segment_count() {
            let (a, b) = self.segment(i);
            let (d, t) = point_segment(p, a, b);
            if d < best.0 {
                best = (d, i, t);
            }
        }
        let (distance, segment, t) = best;
        let (a, b) = self.segment(segment);
        let ab = sub(b, a);
        let foot = [a[0] + t * ab[0], a[1] + t * ab[1]];
        let side = cross(ab, sub(p, a));
        Projection {
            segment,
            s: self.cum[segment] + t * norm(ab),
            foot,
            distance,
            lateral: if side >= 0.0 { distance } else { -distance },
        }
    }

    fn wrap(&self, s: f64) -> f64 {
        s.rem_euclid(self.perimeter())
    }

    fn segment_at(&self, s: f64) -> usize {
        let s = self.wrap(s);
        match self.cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(self.segment_count() - 1),
            Err(i) => i - 1,
        }
    }

    /// Centerline position and unit tangent at arc length `s` (wrapped).
    pub fn pose_at(&self, s: f64) -> (Point, Point) {
        let s = self.wrap(s);
        let i = self.segment_at(s);
        let (a, b) = self.segment(i);
        let ab = sub(b, a);
        let len = norm(ab);
        let t = ((s - self.cum[i]) / len).clamp(0.0, 1.0);
        ([a[0] + t * ab[0], a[1] + t * ab[1]], [ab[0] / len, ab[1] / len])
    }

    /// Mean absolute curvature (1/m) over `[s, s + window]`, from the turning
    /// angles at the vertices inside the window.
    pub fn curvature_ahead(&self, s: f64, window: f64) -> f64 {
        let n = self.segment_count();
        let start = self.segment_at(s);
        let mut turned = 0.0;
        let mut covered = self.cum[start + 1] - self.wrap(s);
        let mut i = start;
        while covered < window {
            let (a, b) = self.segment(i);
            let (_, c) = self.segment((i + 1) % n);
            let (u, v) = (sub(b, a), sub(c, b));
            turned += cross(u, v).atan2(dot(u, v)).abs();
            i = (i + 1) % n;
            covered += self.cum[i + 1] - self.cum[i];
            if i == start {
                break;
            }
        }
        turned / window
    }

    /// Signed clearance: road-edge margin or obstacle-boundary distance,
    /// whichever is smaller. Non-positive means the car has hit something.
    pub fn clearance(&self, p: Point) -> f64 {
        let mut d = self.spec.half_width - self.project(p).distance;
        for o in &self.spec.obstacles {
            d = d.min(norm(sub(p, o.center)) - o.radius);
        }
        d
    }
}

/// Distance to the nearest obstacle, road edges included, clamped at zero.
pub fn nearest_obstacle_distance(track: &Track, p: Point) -> f64 {
    track.clearance(p).max(0.0)
}

/// Walks straights and right-hand arcs to emit a polyline.
struct PathBuilder {
    pos: Point,
    heading: f64,
    spacing: f64,
    pts: Vec<Point>,
}

impl PathBuilder {
    fn new(spacing: f64) -> Self {
        Self { pos: [0.0, 0.0], heading: 0.0, spacing, pts: vec![[0.0, 0.0]] }
    }

    fn straight(&mut self, len: f64) {
        let n = (len / self.spacing).ceil().max(1.0) as usize;
        let start = self.pos;
        let (c, s) = (self.heading.cos(), self.heading.sin());
        for k in 1..=n {
            let t = len * k as f64 / n as f64;
            self.pts.push([start[0] + t * c, start[1] + t * s]);
        }
        self.pos = *self.pts.last().unwrap();
    }

    fn arc(&mut self, radius: f64, angle: f64) {
        let n = (radius * angle / self.spacing).ceil().max(1.0) as usize;
        // Centre lies to the right of the heading.
        let centre = [self.pos[0] - radius * self.heading.sin(), self.pos[1] + radius * self.heading.cos()];
        let phi0 = self.heading - FRAC_PI_2;
        for k in 1..=n {
            let phi = phi0 + angle * k as f64 / n as f64;
            self.pts.push([centre[0] + radius * phi.cos(), centre[1] + radius * phi.sin()]);
        }
        self.heading += angle;
        self.pos = *self.pts.last().unwrap();
    }

    fn finish(mut self) -> Vec<Point> {
        self.pts.pop();
        self.pts
    }
}

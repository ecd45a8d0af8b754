//! Computational-geometry kernels behind blockage verification.
//!
//! Everything here is a pure function of its inputs. Rings are closed
//! (`ring[0] == ring[last]`) and coordinates are planar meters.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::BuildingSpec;

/// Absolute tolerance in meters.
pub const TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("ring has no vertices")]
    EmptyRing,
    #[error("malformed ring: {0}")]
    MalformedRing(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 2D cross product.
    #[inline]
    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn dist(self, o: Point) -> f64 {
        (self - o).norm2().sqrt()
    }

    #[inline]
    pub fn dist2(self, o: Point) -> f64 {
        (self - o).norm2()
    }

    pub fn midpoint(self, o: Point) -> Point {
        Point::new(0.5 * (self.x + o.x), 0.5 * (self.y + o.y))
    }
}

impl Add for Point {
    type Output = Point;
    #[inline]
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    #[inline]
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    #[inline]
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn xy(self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Point,
    pub radius: f64,
}

impl Circle {
    pub fn new(center: Point, radius: f64) -> Self {
        debug_assert!(radius >= 0.0);
        Self { center, radius }
    }

    fn from_two(a: Point, b: Point) -> Self {
        let center = a.midpoint(b);
        Self::new(center, center.dist(a).max(center.dist(b)))
    }

    /// Circumcircle of three points, `None` when they are collinear.
    fn from_three(a: Point, b: Point, c: Point) -> Option<Self> {
        let ab = b - a;
        let ac = c - a;
        let d = 2.0 * ab.cross(ac);
        if d.abs() <= f64::EPSILON * (ab.norm2() + ac.norm2()) {
            return None;
        }
        let ux = (ac.y * ab.norm2() - ab.y * ac.norm2()) / d;
        let uy = (ab.x * ac.norm2() - ac.x * ab.norm2()) / d;
        let center = a + Point::new(ux, uy);
        let radius = center.dist(a).max(center.dist(b)).max(center.dist(c));
        Some(Self::new(center, radius))
    }

    /// Containment with a relative slack of `1e-9 * radius` (plus a tiny absolute floor).
    pub fn contains(&self, p: Point) -> bool {
        self.center.dist(p) <= self.radius * (1.0 + 1e-9) + 1e-12
    }
}

/// Smallest circle enclosing every vertex (iterative Welzl with move-to-front order).
///
/// The visiting order is a fixed pseudo-random permutation so results never
/// depend on anything but the input.
pub fn min_enclosing_circle(points: &[Point]) -> Result<Circle, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::EmptyRing);
    }
    let mut pts: Vec<Point> = points.to_vec();
    // Fisher-Yates with a fixed LCG; expected linear time on adversarial orderings.
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15 ^ pts.len() as u64;
    for i in (1..pts.len()).rev() {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let j = ((state >> 33) as usize) % (i + 1);
        pts.swap(i, j);
    }

    let mut c = Circle::new(pts[0], 0.0);
    for i in 1..pts.len() {
        if c.contains(pts[i]) {
            continue;
        }
        c = Circle::new(pts[i], 0.0);
        for j in 0..i {
            if c.contains(pts[j]) {
                continue;
            }
            c = Circle::from_two(pts[i], pts[j]);
            for k in 0..j {
                if c.contains(pts[k]) {
                    continue;
                }
                c = Circle::from_three(pts[i], pts[j], pts[k]).unwrap_or_else(|| {
                    // Collinear triple: the farthest pair spans it.
                    let cands = [
                        Circle::from_two(pts[i], pts[j]),
                        Circle::from_two(pts[i], pts[k]),
                        Circle::from_two(pts[j], pts[k]),
                    ];
                    cands
                        .into_iter()
                        .max_by(|a, b| a.radius.total_cmp(&b.radius))
                        .unwrap()
                });
            }
        }
    }
    Ok(c)
}

/// Signed shoelace area; positive for counterclockwise rings.
pub fn signed_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    if n < 2 {
        return 0.0;
    }
    let origin = ring[0];
    let mut twice = 0.0;
    for k in 0..n - 1 {
        twice += (ring[k] - origin).cross(ring[k + 1] - origin);
    }
    0.5 * twice
}

fn check_closed(ring: &[Point]) -> Result<(), GeometryError> {
    if ring.len() < 4 {
        return Err(GeometryError::MalformedRing(format!(
            "closed ring needs at least 4 entries, got {}",
            ring.len()
        )));
    }
    if ring[0] != ring[ring.len() - 1] {
        return Err(GeometryError::MalformedRing("ring is not closed".into()));
    }
    Ok(())
}

/// Floor area of a closed ring, independent of orientation.
pub fn polygon_area(ring: &[Point]) -> Result<f64, GeometryError> {
    check_closed(ring)?;
    let area = signed_area(ring).abs();
    if area <= 0.0 {
        return Err(GeometryError::MalformedRing("zero area".into()));
    }
    Ok(area)
}

/// Number of boundary crossings of the rightward horizontal ray from `p`.
///
/// An edge counts iff one endpoint is strictly above the ray and the other is
/// at or below it, and the crossing lies strictly to the right of `p`.
pub fn ray_crossings(p: Point, ring: &[Point]) -> usize {
    let mut count = 0;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if x > p.x {
                count += 1;
            }
        }
    }
    count
}

pub fn point_in_polygon(p: Point, ring: &[Point]) -> bool {
    ray_crossings(p, ring) % 2 == 1
}

/// Distance from `c` to the closed segment `a`-`b`.
pub fn point_segment_distance(c: Point, a: Point, b: Point) -> f64 {
    let d = b - a;
    let len2 = d.norm2();
    if len2 == 0.0 {
        return c.dist(a);
    }
    let t = ((c - a).dot(d) / len2).clamp(0.0, 1.0);
    c.dist(a + d * t)
}

/// Parameter `t` along `p + t*d` at which the segment crosses edge `a`-`b`.
///
/// Same half-open convention as [`ray_crossings`], expressed in the frame of
/// the segment direction: the edge counts iff exactly one endpoint lies
/// strictly to the left of the segment line.
#[inline]
pub(crate) fn edge_crossing(p: Point, d: Point, a: Point, b: Point) -> Option<f64> {
    let sa = d.cross(a - p) > 0.0;
    let sb = d.cross(b - p) > 0.0;
    if sa == sb {
        return None;
    }
    let e = b - a;
    let denom = d.cross(e);
    if denom == 0.0 {
        return None;
    }
    let t = (a - p).cross(e) / denom;
    (t > 0.0 && t < 1.0).then_some(t)
}

/// Straight 3D link from a ground receive point to an elevated transmitter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment3D {
    pub p: Point3,
    pub q: Point3,
}

impl Segment3D {
    pub fn new(p: Point3, q: Point3) -> Self {
        debug_assert!(q.z > 0.0);
        Self { p, q }
    }

    /// Link from a receive point on the ground to a transmitter of height `h`.
    pub fn link(mrp: Point, bs: Point, h: f64) -> Self {
        Self::new(Point3::new(mrp.x, mrp.y, 0.0), Point3::new(bs.x, bs.y, h))
    }

    fn horizontal(&self) -> (Point, Point) {
        let p = self.p.xy();
        (p, self.q.xy() - p)
    }

    #[inline]
    fn height_at(&self, t: f64) -> f64 {
        self.p.z + t * (self.q.z - self.p.z)
    }

    pub fn is_vertical(&self) -> bool {
        self.p.xy().dist(self.q.xy()) <= TOL
    }
}

/// Outcome of a single link/building test with work counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BlockTrace {
    pub blocked: bool,
    pub passed_prefilter: bool,
    pub edges_tested: u64,
}

/// Enclosing-circle prefilter: `false` means the building cannot touch the link.
#[inline]
pub fn prefilter_hits(seg: &Segment3D, circle: &Circle) -> bool {
    let near = point_segment_distance(circle.center, seg.p.xy(), seg.q.xy());
    near <= circle.radius * (1.0 + 1e-9) + TOL
}

/// Type-II test of one building against one link, with early exit.
pub fn segment_blocks_3d_traced(seg: &Segment3D, building: &BuildingSpec) -> BlockTrace {
    let mut trace = BlockTrace::default();
    if building.height_m() <= 0.0 || seg.is_vertical() {
        return trace;
    }
    if !prefilter_hits(seg, &building.circle()) {
        return trace;
    }
    trace.passed_prefilter = true;
    let (p, d) = seg.horizontal();
    for w in building.ring().windows(2) {
        trace.edges_tested += 1;
        if let Some(t) = edge_crossing(p, d, w[0], w[1]) {
            if seg.height_at(t) < building.height_m() {
                trace.blocked = true;
                return trace;
            }
        }
    }
    trace
}

pub fn segment_blocks_3d(seg: &Segment3D, building: &BuildingSpec) -> bool {
    segment_blocks_3d_traced(seg, building).blocked
}

/// Every edge, no prefilter, no early exit. Returns the verdict and edges visited.
pub fn segment_blocks_3d_exhaustive(seg: &Segment3D, building: &BuildingSpec) -> (bool, u64) {
    let edges = building.ring().len() as u64 - 1;
    if seg.is_vertical() {
        return (false, edges);
    }
    let (p, d) = seg.horizontal();
    let mut blocked = false;
    for w in building.ring().windows(2) {
        if let Some(t) = edge_crossing(p, d, w[0], w[1]) {
            blocked |= seg.height_at(t) < building.height_m();
        }
    }
    (blocked, edges)
}

//! Planar geometry kernel.
//!
//! Buffering of agent paths into swath polygons, boolean union through
//! `i_overlay`, ear-clipping triangulation and the closed-form two-step
//! swath area used to check the buffering code.

mod boolean;
mod triangulate;

pub use boolean::{polygon_difference, polygon_union};
pub use triangulate::triangulate;

use std::f64::consts::PI;

/// Polygons and holes below this area are treated as discretization noise.
pub const SLIVER_AREA: f64 = 1e-12;

/// Default chord count per half circle for round caps and joins.
pub const DEFAULT_ARC_SEGMENTS: usize = 64;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("turn angle {theta} outside [0, {max}]")]
    Domain { theta: f64, max: f64 },
    #[error("s/r = {ratio} is below pi/2, two-step area formula does not hold")]
    UnsupportedRegime { ratio: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn sub(&self, other: &Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }

    pub fn add(&self, other: &Point) -> Point {
        Point::new(self.x + other.x, self.y + other.y)
    }

    pub fn scale(&self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }

    pub fn dot(&self, other: &Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(&self, other: &Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Twice the signed area of triangle (a, b, c); positive when counterclockwise.
#[inline]
pub fn orient2d(a: &Point, b: &Point, c: &Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Axis-aligned rectangle `[x_min, x_max] x [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeomError> {
        let r = Self { x_min, y_min, x_max, y_max };
        if !(x_min.is_finite() && y_min.is_finite() && x_max.is_finite() && y_max.is_finite()) {
            return Err(GeomError::InvalidParameter("non-finite rectangle bound".into()));
        }
        if !(x_max > x_min && y_max > y_min) {
            return Err(GeomError::InvalidParameter(format!("empty rectangle {r:?}")));
        }
        Ok(r)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    /// Closed containment.
    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn to_polygon(&self) -> Polygon {
        Polygon {
            outer: vec![
                Point::new(self.x_min, self.y_min),
                Point::new(self.x_max, self.y_min),
                Point::new(self.x_max, self.y_max),
                Point::new(self.x_min, self.y_max),
            ],
            holes: Vec::new(),
        }
    }
}

/// An agent path: one or more vertices, consecutive vertices distinct.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    vertices: Vec<Point>,
}

impl Polyline {
    pub fn new(vertices: Vec<Point>) -> Result<Self, GeomError> {
        if vertices.is_empty() {
            return Err(GeomError::InvalidParameter("empty path".into()));
        }
        if let Some(p) = vertices.iter().find(|p| !p.is_finite()) {
            return Err(GeomError::InvalidParameter(format!("non-finite vertex {p:?}")));
        }
        if vertices.windows(2).any(|w| w[0] == w[1]) {
            return Err(GeomError::InvalidParameter("repeated consecutive vertex".into()));
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Appends a vertex, rejecting a repeat of the current last vertex.
    pub fn push(&mut self, p: Point) -> Result<(), GeomError> {
        if !p.is_finite() {
            return Err(GeomError::InvalidParameter(format!("non-finite vertex {p:?}")));
        }
        if self.vertices.last() == Some(&p) {
            return Err(GeomError::InvalidParameter("repeated consecutive vertex".into()));
        }
        self.vertices.push(p);
        Ok(())
    }

    pub fn bbox(&self) -> (Point, Point) {
        bbox_of(self.vertices.iter())
    }
}

fn bbox_of<'a>(points: impl Iterator<Item = &'a Point>) -> (Point, Point) {
    let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (lo, hi)
}

/// Shoelace signed area of an open ring (last vertex implicitly joins the first).
pub fn ring_signed_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = &ring[i];
        let b = &ring[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

/// Polygon with a counterclockwise outer ring and clockwise holes.
///
/// Rings are stored open: the closing edge from the last vertex back to the
/// first is implicit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polygon {
    pub outer: Vec<Point>,
    pub holes: Vec<Vec<Point>>,
}

impl Polygon {
    /// Builds a polygon, fixing ring orientation.
    pub fn from_rings(mut outer: Vec<Point>, mut holes: Vec<Vec<Point>>) -> Self {
        close_ring_duplicate(&mut outer);
        if ring_signed_area(&outer) < 0.0 {
            outer.reverse();
        }
        for h in &mut holes {
            close_ring_duplicate(h);
            if ring_signed_area(h) > 0.0 {
                h.reverse();
            }
        }
        Self { outer, holes }
    }

    pub fn area(&self) -> f64 {
        polygon_area(self)
    }

    pub fn contains(&self, q: &Point) -> bool {
        point_in_polygon(q, self)
    }

    pub fn vertex_count(&self) -> usize {
        self.outer.len() + self.holes.iter().map(Vec::len).sum::<usize>()
    }

    pub fn rings(&self) -> impl Iterator<Item = &Vec<Point>> {
        std::iter::once(&self.outer).chain(self.holes.iter())
    }

    pub fn bbox(&self) -> (Point, Point) {
        bbox_of(self.outer.iter())
    }
}

fn close_ring_duplicate(ring: &mut Vec<Point>) {
    while ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
}

/// A set of interior-disjoint polygons; the general result of a union.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MultiPolygon {
    pub polygons: Vec<Polygon>,
}

impl MultiPolygon {
    pub fn area(&self) -> f64 {
        self.polygons.iter().map(polygon_area).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    pub fn contains(&self, q: &Point) -> bool {
        self.polygons.iter().any(|p| p.contains(q))
    }

    pub fn vertex_count(&self) -> usize {
        self.polygons.iter().map(Polygon::vertex_count).sum()
    }
}

impl From<Polygon> for MultiPolygon {
    fn from(p: Polygon) -> Self {
        Self { polygons: vec![p] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub a: Point,
    pub b: Point,
    pub c: Point,
}

impl Triangle {
    pub fn new(a: Point, b: Point, c: Point) -> Self {
        Self { a, b, c }
    }

    pub fn signed_area(&self) -> f64 {
        0.5 * orient2d(&self.a, &self.b, &self.c)
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Point from barycentric weights on (a, b, c).
    pub fn at(&self, l: [f64; 3]) -> Point {
        Point::new(
            l[0] * self.a.x + l[1] * self.b.x + l[2] * self.c.x,
            l[0] * self.a.y + l[1] * self.b.y + l[2] * self.c.y,
        )
    }

    /// The four similar children from midpoint subdivision.
    pub fn subdivide(&self) -> [Triangle; 4] {
        let ab = self.a.add(&self.b).scale(0.5);
        let bc = self.b.add(&self.c).scale(0.5);
        let ca = self.c.add(&self.a).scale(0.5);
        [
            Triangle::new(self.a, ab, ca),
            Triangle::new(ab, self.b, bc),
            Triangle::new(ca, bc, self.c),
            Triangle::new(bc, ca, ab),
        ]
    }
}

/// Outer area minus hole areas.
pub fn polygon_area(p: &Polygon) -> f64 {
    let outer = ring_signed_area(&p.outer).abs();
    let holes: f64 = p.holes.iter().map(|h| ring_signed_area(h).abs()).sum();
    (outer - holes).max(0.0)
}

/// Even-odd point-in-polygon over all rings.
pub fn point_in_polygon(q: &Point, p: &Polygon) -> bool {
    p.rings().filter(|r| ring_crossings(q, r) % 2 == 1).count() % 2 == 1
}

fn ring_crossings(q: &Point, ring: &[Point]) -> usize {
    let n = ring.len();
    let mut count = 0;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let a = &ring[i];
        let b = &ring[j];
        if (a.y > q.y) != (b.y > q.y) {
            let x = a.x + (q.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if q.x < x {
                count += 1;
            }
        }
        j = i;
    }
    count
}

/// Distance from `q` to the segment `[a, b]`.
pub fn distance_to_segment(q: &Point, a: &Point, b: &Point) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(&ab);
    if len2 == 0.0 {
        return q.dist(a);
    }
    let t = (q.sub(a).dot(&ab) / len2).clamp(0.0, 1.0);
    q.dist(&a.add(&ab.scale(t)))
}

pub fn distance_to_polyline(q: &Point, path: &Polyline) -> f64 {
    let v = path.vertices();
    if v.len() == 1 {
        return q.dist(&v[0]);
    }
    v.windows(2)
        .map(|w| distance_to_segment(q, &w[0], &w[1]))
        .fold(f64::INFINITY, f64::min)
}

/// Chord polygon inscribed in the circle of `radius` about `c`, with
/// `arc_segments` chords per half turn.
pub fn disk(c: Point, radius: f64, arc_segments: usize) -> Polygon {
    let n = 2 * arc_segments;
    let step = PI / arc_segments as f64;
    let outer = (0..n)
        .map(|k| {
            let (s, co) = (k as f64 * step).sin_cos();
            Point::new(c.x + radius * co, c.y + radius * s)
        })
        .collect();
    Polygon { outer, holes: Vec::new() }
}

/// The rectangle of half-width `radius` around segment `[a, b]`.
pub fn segment_rectangle(a: Point, b: Point, radius: f64) -> Polygon {
    let d = b.sub(&a);
    let len = d.norm();
    let n = Point::new(-d.y / len, d.x / len).scale(radius);
    Polygon {
        outer: vec![a.sub(&n), b.sub(&n), b.add(&n), a.add(&n)],
        holes: Vec::new(),
    }
}

fn check_buffer_params(radius: f64, arc_segments: usize) -> Result<(), GeomError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(GeomError::InvalidParameter(format!("buffer radius {radius} must be positive")));
    }
    if arc_segments < 4 {
        return Err(GeomError::InvalidParameter(format!(
            "arc_segments {arc_segments} must be at least 4"
        )));
    }
    Ok(())
}

/// Union of vertex disks and segment rectangles of `path`.
///
/// Round caps and joins are chord-approximated with `arc_segments` chords per
/// half turn, so the area is never above the exact buffer's.
pub fn buffer_polyline(path: &Polyline, radius: f64, arc_segments: usize) -> Result<Polygon, GeomError> {
    check_buffer_params(radius, arc_segments)?;
    let v = path.vertices();
    let mut parts: Vec<Polygon> = v.iter().map(|&p| disk(p, radius, arc_segments)).collect();
    parts.extend(v.windows(2).map(|w| segment_rectangle(w[0], w[1], radius)));
    let merged = polygon_union(&parts);
    single_component(merged)
}

fn single_component(mut m: MultiPolygon) -> Result<Polygon, GeomError> {
    match m.polygons.len() {
        0 => Err(GeomError::Degenerate("buffer produced an empty region".into())),
        1 => Ok(m.polygons.pop().unwrap()),
        _ => {
            // A connected path buffers to one component; extra pieces can only be
            // snapping debris, so keep the dominant one.
            m.polygons.sort_by(|a, b| b.area().total_cmp(&a.area()));
            Ok(m.polygons.swap_remove(0))
        }
    }
}

/// Incrementally maintained buffer of a growing path.
///
/// The covered region is kept merged, so each extension is one difference
/// and one union whose size follows the region's boundary rather than the
/// number of steps.
#[derive(Debug, Clone)]
pub struct PathBuffer {
    radius: f64,
    arc_segments: usize,
    covered: MultiPolygon,
    last: Point,
}

impl PathBuffer {
    pub fn new(start: Point, radius: f64, arc_segments: usize) -> Result<Self, GeomError> {
        check_buffer_params(radius, arc_segments)?;
        if !start.is_finite() {
            return Err(GeomError::InvalidParameter("non-finite start".into()));
        }
        let covered = MultiPolygon { polygons: vec![disk(start, radius, arc_segments)] };
        Ok(Self { radius, arc_segments, covered, last: start })
    }

    /// The covered region as disjoint polygons.
    pub fn region(&self) -> MultiPolygon {
        self.covered.clone()
    }

    pub fn last(&self) -> Point {
        self.last
    }

    /// Extends the path to `next`, returning the part of the new step's
    /// swath not already covered.
    pub fn extend(&mut self, next: Point) -> Result<MultiPolygon, GeomError> {
        if !next.is_finite() || next == self.last {
            return Err(GeomError::InvalidParameter(format!("bad extension vertex {next:?}")));
        }
        let d = disk(next, self.radius, self.arc_segments);
        let r = segment_rectangle(self.last, next, self.radius);
        let step = MultiPolygon { polygons: vec![d, r] };
        let added = polygon_difference(&step, &self.covered);
        let mut parts = std::mem::take(&mut self.covered.polygons);
        parts.extend(step.polygons);
        self.covered = polygon_union(&parts);
        self.last = next;
        Ok(added)
    }
}

/// Closed-form area of the buffered two-step path with turn angle `theta`.
///
/// Valid for `0 <= theta <= 2 atan(s / r)` and `s / r >= pi / 2`.
pub fn analytic_two_step_area(theta: f64, s: f64, r: f64) -> Result<f64, GeomError> {
    if !(s > 0.0 && r > 0.0) {
        return Err(GeomError::InvalidParameter(format!("step {s} and radius {r} must be positive")));
    }
    let ratio = s / r;
    if ratio < PI / 2.0 {
        return Err(GeomError::UnsupportedRegime { ratio });
    }
    let max = 2.0 * ratio.atan();
    if !(theta >= 0.0 && theta <= max + 1e-12) {
        return Err(GeomError::Domain { theta, max });
    }
    Ok(4.0 * s * r + PI * r * r + 0.5 * r * r * theta - r * r * (0.5 * theta).tan())
}

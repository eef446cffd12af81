//! Planar geometry on quadrilaterals.
//!
//! Coordinates follow the image convention: `x` grows to the right and `y`
//! grows downward. A canonical [`Quad`] is wound clockwise on screen, which
//! makes its shoelace area (computed with the usual `x_i * y_{i+1} - x_{i+1} * y_i`
//! sum) non-negative, and starts at the vertex with the smallest `y`
//! (ties broken by the smallest `x`).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used for vertex tie-breaking and IoU comparisons.
pub const EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate quadrilateral: {0}")]
    DegenerateQuad(&'static str),
    #[error("non-finite coordinate in quadrilateral")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
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

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// z-component of `(a - o) x (b - o)`.
#[inline]
fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Axis-aligned bounds `(xmin, ymin, xmax, ymax)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Aabb {
    /// True when the two boxes share no interior point. Touching boxes count
    /// as disjoint since their intersection has zero area.
    pub fn is_disjoint(&self, other: &Aabb) -> bool {
        self.xmax <= other.xmin
            || other.xmax <= self.xmin
            || self.ymax <= other.ymin
            || other.ymax <= self.ymin
    }

    pub fn area(&self) -> f64 {
        (self.xmax - self.xmin).max(0.0) * (self.ymax - self.ymin).max(0.0)
    }

    /// Axis-aligned IoU, used for rectangular baselines.
    pub fn iou(&self, other: &Aabb) -> f64 {
        let w = (self.xmax.min(other.xmax) - self.xmin.max(other.xmin)).max(0.0);
        let h = (self.ymax.min(other.ymax) - self.ymin.max(other.ymin)).max(0.0);
        let inter = w * h;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// A quadrilateral with its vertices in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    vertices: [Point; 4],
    /// Set when the four input points had a triangular convex hull; the
    /// last vertex is then a duplicate of the third.
    hull_triangle: bool,
}

impl Quad {
    /// Orders four points into a canonical quad.
    ///
    /// Self-intersecting inputs are reordered along their convex hull. When
    /// one point lies inside (or on an edge of) the triangle formed by the
    /// other three, the quad becomes that triangle with its last vertex
    /// duplicated and [`Quad::is_hull_triangle`] reports `true`.
    pub fn canonicalize(points: [Point; 4]) -> Result<Self, GeometryError> {
        if points.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        for i in 0..4 {
            for j in (i + 1)..4 {
                if points[i] == points[j] {
                    return Err(GeometryError::DegenerateQuad("coincident vertices"));
                }
            }
        }

        let hull = convex_hull(&points);
        match hull.len() {
            4 => Ok(Self {
                vertices: rotate_to_start(&hull).try_into().unwrap(),
                hull_triangle: false,
            }),
            3 => {
                let tri = rotate_to_start(&hull);
                Ok(Self {
                    vertices: [tri[0], tri[1], tri[2], tri[2]],
                    hull_triangle: true,
                })
            }
            _ => Err(GeometryError::DegenerateQuad("collinear vertices")),
        }
    }

    /// Canonicalizes a flat `[x1, y1, ..., x4, y4]` array.
    pub fn from_coords(c: [f64; 8]) -> Result<Self, GeometryError> {
        Self::canonicalize([
            Point::new(c[0], c[1]),
            Point::new(c[2], c[3]),
            Point::new(c[4], c[5]),
            Point::new(c[6], c[7]),
        ])
    }

    /// Wraps vertices without reordering or validation. The caller vouches
    /// that they are already in canonical order.
    pub fn from_canonical_unchecked(vertices: [Point; 4]) -> Self {
        Self {
            vertices,
            hull_triangle: false,
        }
    }

    /// Axis-aligned rectangle `[xmin, xmax] x [ymin, ymax]` in canonical order.
    pub fn axis_aligned(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self::from_canonical_unchecked([
            Point::new(xmin, ymin),
            Point::new(xmax, ymin),
            Point::new(xmax, ymax),
            Point::new(xmin, ymax),
        ])
    }

    pub fn vertices(&self) -> &[Point; 4] {
        &self.vertices
    }

    pub fn coords(&self) -> [f64; 8] {
        let v = &self.vertices;
        [
            v[0].x, v[0].y, v[1].x, v[1].y, v[2].x, v[2].y, v[3].x, v[3].y,
        ]
    }

    pub fn is_hull_triangle(&self) -> bool {
        self.hull_triangle
    }

    /// Shoelace area (non-negative for canonical quads).
    pub fn area(&self) -> f64 {
        polygon_area(&self.vertices).abs()
    }

    pub fn aabb(&self) -> Aabb {
        let mut b = Aabb {
            xmin: f64::INFINITY,
            ymin: f64::INFINITY,
            xmax: f64::NEG_INFINITY,
            ymax: f64::NEG_INFINITY,
        };
        for p in &self.vertices {
            b.xmin = b.xmin.min(p.x);
            b.ymin = b.ymin.min(p.y);
            b.xmax = b.xmax.max(p.x);
            b.ymax = b.ymax.max(p.y);
        }
        b
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            vertices: self.vertices.map(|p| p.translate(dx, dy)),
            hull_triangle: self.hull_triangle,
        }
    }

    pub fn intersection_area(&self, other: &Quad) -> f64 {
        intersection_area(self, other)
    }

    pub fn iou(&self, other: &Quad) -> f64 {
        iou(self, other)
    }
}

/// Andrew's monotone chain. Collinear points are dropped. The returned hull
/// has positive shoelace area, i.e. it is clockwise on screen.
fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));

    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Rotates a positively wound polygon so that it starts at the minimum-y
/// vertex (ties within [`EPS`] go to the minimum x).
fn rotate_to_start(poly: &[Point]) -> Vec<Point> {
    let ymin = poly.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let start = poly
        .iter()
        .enumerate()
        .filter(|(_, p)| p.y <= ymin + EPS)
        .min_by(|(_, a), (_, b)| a.x.total_cmp(&b.x))
        .map(|(i, _)| i)
        .unwrap_or(0);
    poly[start..]
        .iter()
        .chain(&poly[..start])
        .copied()
        .collect()
}

/// Signed shoelace area; positive for clockwise-on-screen polygons.
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

/// Clips `subject` against every edge of the convex, positively wound
/// `clip` polygon (Sutherland-Hodgman).
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut output: Vec<Point> = subject.to_vec();
    let m = clip.len();
    for i in 0..m {
        if output.is_empty() {
            break;
        }
        let e0 = clip[i];
        let e1 = clip[(i + 1) % m];
        if e0 == e1 {
            continue;
        }
        let input = std::mem::take(&mut output);
        let n = input.len();
        for j in 0..n {
            let cur = input[j];
            let next = input[(j + 1) % n];
            let dc = cross(e0, e1, cur);
            let dn = cross(e0, e1, next);
            let cur_in = dc >= 0.0;
            let next_in = dn >= 0.0;
            if cur_in {
                output.push(cur);
            }
            if cur_in != next_in {
                let t = dc / (dc - dn);
                output.push(Point::new(
                    cur.x + t * (next.x - cur.x),
                    cur.y + t * (next.y - cur.y),
                ));
            }
        }
    }
    output
}

/// Area of `a ∩ b` for convex canonical quads.
pub fn intersection_area(a: &Quad, b: &Quad) -> f64 {
    let clipped = clip_convex(a.vertices(), b.vertices());
    polygon_area(&clipped).max(0.0)
}

/// Polygon IoU; zero when the union has zero area.
pub fn iou(a: &Quad, b: &Quad) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Polygon IoU with an axis-aligned-bounds early exit.
pub fn iou_fast(a: &Quad, b: &Quad) -> f64 {
    if a.aabb().is_disjoint(&b.aabb()) {
        0.0
    } else {
        iou(a, b)
    }
}

//! Planar polygons and axis-aligned rectangles.
//!
//! Vertices are `[x, y]` pairs. A polygon is implicitly closed; the last
//! vertex connects back to the first. Orientation is not significant.

use serde::{Deserialize, Serialize};

use crate::num::Real;

pub type Point<T> = [T; 2];

/// Axis-aligned rectangle `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Rect<T: Real = f64> {
    pub min: Point<T>,
    pub max: Point<T>,
}

impl<T: Real> Rect<T> {
    pub fn new(min: Point<T>, max: Point<T>) -> Self {
        Self { min, max }
    }

    pub fn width(&self) -> T {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> T {
        self.max[1] - self.min[1]
    }

    pub fn area(&self) -> T {
        self.width().max(T::zero()) * self.height().max(T::zero())
    }

    /// Intersection with positive area, `None` when the interiors are disjoint.
    pub fn intersection(&self, other: &Rect<T>) -> Option<Rect<T>> {
        let min = [self.min[0].max(other.min[0]), self.min[1].max(other.min[1])];
        let max = [self.max[0].min(other.max[0]), self.max[1].min(other.max[1])];
        (max[0] > min[0] && max[1] > min[1]).then_some(Rect { min, max })
    }

    pub fn union(&self, other: &Rect<T>) -> Rect<T> {
        Rect {
            min: [self.min[0].min(other.min[0]), self.min[1].min(other.min[1])],
            max: [self.max[0].max(other.max[0]), self.max[1].max(other.max[1])],
        }
    }

    /// Closed-set overlap test, true when the rectangles share any point.
    pub fn touches(&self, other: &Rect<T>) -> bool {
        self.min[0] <= other.max[0]
            && other.min[0] <= self.max[0]
            && self.min[1] <= other.max[1]
            && other.min[1] <= self.max[1]
    }

    pub fn contains(&self, p: Point<T>) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn expand(&self, by: T) -> Rect<T> {
        Rect {
            min: [self.min[0] - by, self.min[1] - by],
            max: [self.max[0] + by, self.max[1] + by],
        }
    }

    pub fn center(&self) -> Point<T> {
        let two = T::lit(2.0);
        [(self.min[0] + self.max[0]) / two, (self.min[1] + self.max[1]) / two]
    }
}

/// Simple polygon given by its vertex ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent, bound = "T: Real")]
pub struct Polygon<T: Real = f64>(pub Vec<Point<T>>);

impl<T: Real> Polygon<T> {
    pub fn new(vertices: Vec<Point<T>>) -> Self {
        Self(vertices)
    }

    pub fn vertices(&self) -> &[Point<T>] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn edges(&self) -> impl Iterator<Item = (Point<T>, Point<T>)> + '_ {
        let n = self.0.len();
        (0..n).map(move |i| (self.0[i], self.0[(i + 1) % n]))
    }

    /// Shoelace area, positive for counter-clockwise rings.
    pub fn signed_area(&self) -> T {
        let twice = self
            .edges()
            .fold(T::zero(), |acc, (p, q)| acc + (p[0] * q[1] - q[0] * p[1]));
        twice / T::lit(2.0)
    }

    pub fn area(&self) -> T {
        self.signed_area().abs()
    }

    pub fn centroid(&self) -> Option<Point<T>> {
        let a = self.signed_area();
        if a == T::zero() {
            return None;
        }
        let (mut cx, mut cy) = (T::zero(), T::zero());
        for (p, q) in self.edges() {
            let cross = p[0] * q[1] - q[0] * p[1];
            cx = cx + (p[0] + q[0]) * cross;
            cy = cy + (p[1] + q[1]) * cross;
        }
        let six_a = T::lit(6.0) * a;
        Some([cx / six_a, cy / six_a])
    }

    pub fn bbox(&self) -> Option<Rect<T>> {
        let first = *self.0.first()?;
        let mut r = Rect::new(first, first);
        for p in &self.0[1..] {
            r.min = [r.min[0].min(p[0]), r.min[1].min(p[1])];
            r.max = [r.max[0].max(p[0]), r.max[1].max(p[1])];
        }
        Some(r)
    }

    /// Even-odd point containment.
    pub fn contains(&self, pt: Point<T>) -> bool {
        let mut inside = false;
        for (p, q) in self.edges() {
            if (p[1] > pt[1]) != (q[1] > pt[1]) {
                let x = p[0] + (pt[1] - p[1]) * (q[0] - p[0]) / (q[1] - p[1]);
                if pt[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn map(&self, mut f: impl FnMut(Point<T>) -> Point<T>) -> Polygon<T> {
        Polygon(self.0.iter().map(|&p| f(p)).collect())
    }

    /// True when no two edges cross or touch except consecutive edges at their
    /// shared vertex. Repeated consecutive vertices are ignored.
    pub fn is_simple(&self) -> bool {
        let mut ring: Vec<Point<T>> = Vec::with_capacity(self.0.len());
        for &p in &self.0 {
            if ring.last() != Some(&p) {
                ring.push(p);
            }
        }
        while ring.len() > 1 && ring.first() == ring.last() {
            ring.pop();
        }
        let n = ring.len();
        if n < 3 {
            return false;
        }
        for i in 0..n {
            let (a0, a1) = (ring[i], ring[(i + 1) % n]);
            for j in (i + 1)..n {
                let (b0, b1) = (ring[j], ring[(j + 1) % n]);
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    // Consecutive edges may only share their common vertex.
                    let (shared, a_far, b_far) = if j == i + 1 { (a1, a0, b1) } else { (a0, a1, b0) };
                    if orient(a_far, shared, b_far) == T::zero()
                        && dot(sub(a_far, shared), sub(b_far, shared)) > T::zero()
                    {
                        return false;
                    }
                    continue;
                }
                if segments_intersect(a0, a1, b0, b1) {
                    return false;
                }
            }
        }
        true
    }

    /// Sutherland-Hodgman clip against a rectangle. The result of clipping a
    /// convex polygon is convex; `None` when nothing with positive area remains.
    pub fn clip_to_rect(&self, rect: &Rect<T>) -> Option<Polygon<T>> {
        let mut pts = self.0.clone();
        let planes: [(usize, T, bool); 4] = [
            (0, rect.min[0], true),
            (0, rect.max[0], false),
            (1, rect.min[1], true),
            (1, rect.max[1], false),
        ];
        for (axis, bound, keep_greater) in planes {
            if pts.is_empty() {
                break;
            }
            let inside = |p: &Point<T>| {
                if keep_greater {
                    p[axis] >= bound
                } else {
                    p[axis] <= bound
                }
            };
            let mut out = Vec::with_capacity(pts.len() + 4);
            let n = pts.len();
            for i in 0..n {
                let cur = pts[i];
                let prev = pts[(i + n - 1) % n];
                let (cin, pin) = (inside(&cur), inside(&prev));
                if cin != pin {
                    let t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
                    let mut x = [
                        prev[0] + t * (cur[0] - prev[0]),
                        prev[1] + t * (cur[1] - prev[1]),
                    ];
                    x[axis] = bound;
                    out.push(x);
                }
                if cin {
                    out.push(cur);
                }
            }
            pts = out;
        }
        pts.dedup();
        while pts.len() > 1 && pts.first() == pts.last() {
            pts.pop();
        }
        let poly = Polygon(pts);
        (poly.len() >= 3 && poly.area() > T::zero()).then_some(poly)
    }

    /// Smallest distance between the boundaries or interiors of two polygons;
    /// zero when they overlap.
    pub fn distance_to(&self, other: &Polygon<T>) -> T {
        if self.is_empty() || other.is_empty() {
            return T::infinity();
        }
        if other.contains(self.0[0]) || self.contains(other.0[0]) {
            return T::zero();
        }
        let mut best = T::infinity();
        for (a0, a1) in self.edges() {
            for (b0, b1) in other.edges() {
                if segments_intersect(a0, a1, b0, b1) {
                    return T::zero();
                }
                best = best
                    .min(point_segment_distance(a0, b0, b1))
                    .min(point_segment_distance(a1, b0, b1))
                    .min(point_segment_distance(b0, a0, a1))
                    .min(point_segment_distance(b1, a0, a1));
            }
        }
        best
    }
}

/// Bounding box of a set of polygons.
pub fn bbox_of<T: Real>(polys: &[Polygon<T>]) -> Option<Rect<T>> {
    polys
        .iter()
        .filter_map(Polygon::bbox)
        .reduce(|a, b| a.union(&b))
}

pub(crate) fn sub<T: Real>(a: Point<T>, b: Point<T>) -> Point<T> {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot<T: Real>(a: Point<T>, b: Point<T>) -> T {
    a[0] * b[0] + a[1] * b[1]
}

fn orient<T: Real>(a: Point<T>, b: Point<T>, c: Point<T>) -> T {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment<T: Real>(a: Point<T>, b: Point<T>, p: Point<T>) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Closed-segment intersection test (touching counts).
pub fn segments_intersect<T: Real>(a0: Point<T>, a1: Point<T>, b0: Point<T>, b1: Point<T>) -> bool {
    let d1 = orient(b0, b1, a0);
    let d2 = orient(b0, b1, a1);
    let d3 = orient(a0, a1, b0);
    let d4 = orient(a0, a1, b1);
    let z = T::zero();
    if ((d1 > z && d2 < z) || (d1 < z && d2 > z)) && ((d3 > z && d4 < z) || (d3 < z && d4 > z)) {
        return true;
    }
    (d1 == z && on_segment(b0, b1, a0))
        || (d2 == z && on_segment(b0, b1, a1))
        || (d3 == z && on_segment(a0, a1, b0))
        || (d4 == z && on_segment(a0, a1, b1))
}

pub fn point_segment_distance<T: Real>(p: Point<T>, a: Point<T>, b: Point<T>) -> T {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 > T::zero() {
        (dot(sub(p, a), ab) / len2).max(T::zero()).min(T::one())
    } else {
        T::zero()
    };
    let proj = [a[0] + t * ab[0], a[1] + t * ab[1]];
    let d = sub(p, proj);
    dot(d, d).sqrt()
}

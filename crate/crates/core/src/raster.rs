//! Binary rasterization of polygon masks and contour re-vectorization.
//!
//! A cell belongs to a mask iff its center lies inside one of the mask's
//! polygons (even-odd per polygon, union across polygons).

use std::collections::{BTreeMap, BTreeSet};

use crate::num::Real;
use crate::polygon::{Polygon, Rect};

/// Regular square grid. Cell `(i, j)` spans
/// `[origin + i*pitch, origin + (i+1)*pitch]` along x (and likewise y).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid<T: Real = f64> {
    pub origin: [T; 2],
    pub pitch: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> Grid<T> {
    /// Grid anchored at `rect.min`, just large enough to cover `rect`.
    pub fn covering(rect: &Rect<T>, pitch: T) -> Self {
        let cells = |extent: T| (extent / pitch).ceil().to_usize().unwrap_or(0).max(1);
        Self {
            origin: rect.min,
            pitch,
            width: cells(rect.width()),
            height: cells(rect.height()),
        }
    }

    /// Grid whose cell boundaries sit on integer multiples of `pitch`, so that
    /// independent rasterizations of overlapping regions agree cell by cell.
    pub fn aligned(rect: &Rect<T>, pitch: T) -> Self {
        let lo = [(rect.min[0] / pitch).floor(), (rect.min[1] / pitch).floor()];
        let hi = [(rect.max[0] / pitch).ceil(), (rect.max[1] / pitch).ceil()];
        let count = |a: T, b: T| (b - a).to_usize().unwrap_or(0).max(1);
        Self {
            origin: [lo[0] * pitch, lo[1] * pitch],
            pitch,
            width: count(lo[0], hi[0]),
            height: count(lo[1], hi[1]),
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [T; 2] {
        let half = T::lit(0.5);
        [
            self.origin[0] + (T::from_count(i) + half) * self.pitch,
            self.origin[1] + (T::from_count(j) + half) * self.pitch,
        ]
    }

    pub fn cell_area(&self) -> T {
        self.pitch * self.pitch
    }
}

/// Row-major occupancy bitmap over a [`Grid`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[j * self.width + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[j * self.width + i] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn and_count(&self, other: &Mask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count()
    }

    pub fn or_count(&self, other: &Mask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a || **b).count()
    }

    pub fn or_assign(&mut self, other: &Mask) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    /// Clears every cell whose center lies outside all of `keep`.
    pub fn restrict<T: Real>(&mut self, grid: &Grid<T>, keep: &[Rect<T>]) {
        for j in 0..self.height {
            for i in 0..self.width {
                if self.get(i, j) {
                    let c = grid.cell_center(i, j);
                    if !keep.iter().any(|r| r.contains(c)) {
                        self.set(i, j, false);
                    }
                }
            }
        }
    }
}

/// Rasterizes the union of `polys` onto `grid`.
pub fn rasterize<T: Real>(grid: &Grid<T>, polys: &[Polygon<T>]) -> Mask {
    let mut mask = Mask::empty(grid.width, grid.height);
    let mut xs: Vec<T> = Vec::new();
    let half = T::lit(0.5);
    for poly in polys {
        let verts = poly.vertices();
        let n = verts.len();
        if n < 3 {
            continue;
        }
        let Some(bb) = poly.bbox() else { continue };
        let row = |y: T| ((y - grid.origin[1]) / grid.pitch - half).ceil();
        let j0 = row(bb.min[1]).max(T::zero()).to_usize().unwrap_or(0);
        let j1 = row(bb.max[1]).to_isize().unwrap_or(-1).min(grid.height as isize);
        for j in j0..(j1.max(0) as usize) {
            let y = grid.origin[1] + (T::from_count(j) + half) * grid.pitch;
            xs.clear();
            for k in 0..n {
                let p = verts[k];
                let q = verts[(k + 1) % n];
                if (p[1] > y) != (q[1] > y) {
                    xs.push(p[0] + (y - p[1]) * (q[0] - p[0]) / (q[1] - p[1]));
                }
            }
            xs.sort_by(|a, b| crate::num::cmp(*a, *b));
            for pair in xs.chunks_exact(2) {
                // cells with center x in [pair[0], pair[1])
                let col = |x: T| ((x - grid.origin[0]) / grid.pitch - half).ceil();
                let i0 = col(pair[0]).max(T::zero()).to_usize().unwrap_or(0);
                let i1 = col(pair[1])
                    .min(T::from_count(grid.width))
                    .to_isize()
                    .unwrap_or(0)
                    .max(0) as usize;
                for i in i0..i1 {
                    mask.set(i, j, true);
                }
            }
        }
    }
    mask
}

/// Fills background regions that are not 4-connected to the grid border.
fn fill_holes(mask: &mut Mask) {
    let (w, h) = (mask.width, mask.height);
    let mut outside = vec![false; w * h];
    let mut stack = Vec::new();
    for i in 0..w {
        stack.push((i, 0));
        stack.push((i, h - 1));
    }
    for j in 0..h {
        stack.push((0, j));
        stack.push((w - 1, j));
    }
    while let Some((i, j)) = stack.pop() {
        let k = j * w + i;
        if outside[k] || mask.get(i, j) {
            continue;
        }
        outside[k] = true;
        if i > 0 {
            stack.push((i - 1, j));
        }
        if i + 1 < w {
            stack.push((i + 1, j));
        }
        if j > 0 {
            stack.push((i, j - 1));
        }
        if j + 1 < h {
            stack.push((i, j + 1));
        }
    }
    for (k, out) in outside.into_iter().enumerate() {
        if !out {
            mask.bits[k] = true;
        }
    }
}

type Vertex = (i64, i64);

/// Traces the outer boundaries of the occupied cells as lattice-aligned
/// polygons. Holes are filled first; diagonal-only contacts produce separate
/// rings. Total ring area equals the (hole-filled) cell count times the cell
/// area exactly.
pub fn trace_contours<T: Real>(grid: &Grid<T>, mask: &Mask) -> Vec<Polygon<T>> {
    if mask.width == 0 || mask.height == 0 {
        return Vec::new();
    }
    let mut filled = mask.clone();
    fill_holes(&mut filled);
    let occ = |i: i64, j: i64| -> bool {
        i >= 0
            && j >= 0
            && (i as usize) < filled.width
            && (j as usize) < filled.height
            && filled.get(i as usize, j as usize)
    };

    // Directed boundary edges, counter-clockwise around each cell.
    let mut out: BTreeMap<Vertex, Vec<Vertex>> = BTreeMap::new();
    for j in 0..filled.height as i64 {
        for i in 0..filled.width as i64 {
            if !occ(i, j) {
                continue;
            }
            if !occ(i, j - 1) {
                out.entry((i, j)).or_default().push((i + 1, j));
            }
            if !occ(i + 1, j) {
                out.entry((i + 1, j)).or_default().push((i + 1, j + 1));
            }
            if !occ(i, j + 1) {
                out.entry((i + 1, j + 1)).or_default().push((i, j + 1));
            }
            if !occ(i - 1, j) {
                out.entry((i, j + 1)).or_default().push((i, j));
            }
        }
    }

    let mut used: BTreeSet<(Vertex, Vertex)> = BTreeSet::new();
    let mut rings = Vec::new();
    let starts: Vec<(Vertex, Vertex)> = out
        .iter()
        .flat_map(|(&a, bs)| bs.iter().map(move |&b| (a, b)))
        .collect();
    for start in starts {
        if used.contains(&start) {
            continue;
        }
        let mut ring: Vec<Vertex> = Vec::new();
        let (mut a, mut b) = start;
        loop {
            used.insert((a, b));
            ring.push(a);
            if b == start.0 {
                break;
            }
            let dir = (b.0 - a.0, b.1 - a.1);
            let next = out[&b]
                .iter()
                .copied()
                .filter(|&c| !used.contains(&(b, c)))
                .max_by_key(|&c| {
                    // Prefer the left turn at pinch vertices.
                    let d = (c.0 - b.0, c.1 - b.1);
                    dir.0 * d.1 - dir.1 * d.0
                });
            match next {
                Some(c) => {
                    a = b;
                    b = c;
                }
                None => break,
            }
        }
        let ring = drop_collinear(ring);
        if ring.len() >= 4 {
            rings.push(Polygon(
                ring.into_iter()
                    .map(|(i, j)| {
                        [
                            grid.origin[0] + T::lit(i as f64) * grid.pitch,
                            grid.origin[1] + T::lit(j as f64) * grid.pitch,
                        ]
                    })
                    .collect(),
            ));
        }
    }
    rings
}

fn drop_collinear(ring: Vec<Vertex>) -> Vec<Vertex> {
    let n = ring.len();
    if n < 3 {
        return ring;
    }
    (0..n)
        .filter(|&k| {
            let p = ring[(k + n - 1) % n];
            let c = ring[k];
            let q = ring[(k + 1) % n];
            (c.0 - p.0) * (q.1 - c.1) - (c.1 - p.1) * (q.0 - c.0) != 0
        })
        .map(|k| ring[k])
        .collect()
}

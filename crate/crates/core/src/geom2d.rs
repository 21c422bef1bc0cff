//! Ground-plane polygon utilities: containment, boundary distance, and
//! ear-clipping triangulation for simple polygons. Coordinates are world
//! millimeters on the z=0 plane.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PolyError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon vertex {index} is not finite")]
    NonFiniteVertex { index: usize },
    #[error("polygon edges {a} and {b} intersect (polygon must be simple)")]
    SelfIntersection { a: usize, b: usize },
    #[error("polygon area is zero")]
    ZeroArea,
}

/// Simple (non-self-intersecting) polygon with nonzero area. Vertex order
/// may be either winding; operations normalize where it matters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Polygon {
    pts: Vec<[f64; 2]>,
}

impl TryFrom<Vec<[f64; 2]>> for Polygon {
    type Error = PolyError;
    fn try_from(pts: Vec<[f64; 2]>) -> Result<Self, PolyError> {
        Polygon::new(pts)
    }
}

impl From<Polygon> for Vec<[f64; 2]> {
    fn from(p: Polygon) -> Self {
        p.pts
    }
}

impl Polygon {
    pub fn new(pts: Vec<[f64; 2]>) -> Result<Self, PolyError> {
        if pts.len() < 3 {
            return Err(PolyError::TooFewVertices(pts.len()));
        }
        for (index, p) in pts.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(PolyError::NonFiniteVertex { index });
            }
        }
        let n = pts.len();
        for i in 0..n {
            let e1 = (pts[i], pts[(i + 1) % n]);
            for j in (i + 1)..n {
                // adjacent edges share an endpoint by construction; skip them
                if j == i || (j + 1) % n == i || (i + 1) % n == j {
                    continue;
                }
                let e2 = (pts[j], pts[(j + 1) % n]);
                if segments_intersect(e1.0, e1.1, e2.0, e2.1) {
                    return Err(PolyError::SelfIntersection { a: i, b: j });
                }
            }
        }
        let poly = Self { pts };
        if poly.signed_area().abs() < 1e-9 {
            return Err(PolyError::ZeroArea);
        }
        Ok(poly)
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.pts
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Shoelace area; positive for counter-clockwise vertex order.
    pub fn signed_area(&self) -> f64 {
        let n = self.pts.len();
        let mut acc = 0.0;
        for i in 0..n {
            let a = self.pts[i];
            let b = self.pts[(i + 1) % n];
            acc += a[0] * b[1] - b[0] * a[1];
        }
        acc / 2.0
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Even-odd ray cast; points exactly on the boundary count as inside.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let n = self.pts.len();
        for i in 0..n {
            if point_on_segment(p, self.pts[i], self.pts[(i + 1) % n]) {
                return true;
            }
        }
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let a = self.pts[i];
            let b = self.pts[j];
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x_cross = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if p[0] < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.pts {
            lo[0] = lo[0].min(p[0]);
            lo[1] = lo[1].min(p[1]);
            hi[0] = hi[0].max(p[0]);
            hi[1] = hi[1].max(p[1]);
        }
        (lo, hi)
    }

    pub fn edges(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.pts.len();
        (0..n).map(move |i| (self.pts[i], self.pts[(i + 1) % n]))
    }

    /// Closest point on the polygon boundary to `p`.
    pub fn closest_boundary_point(&self, p: [f64; 2]) -> [f64; 2] {
        let mut best = self.pts[0];
        let mut best_d2 = f64::INFINITY;
        for (a, b) in self.edges() {
            let q = closest_point_on_segment(p, a, b);
            let d2 = dist2(p, q);
            if d2 < best_d2 {
                best_d2 = d2;
                best = q;
            }
        }
        best
    }

    pub fn distance_to_boundary(&self, p: [f64; 2]) -> f64 {
        dist2(p, self.closest_boundary_point(p)).sqrt()
    }

    /// Ear-clipping triangulation; returns index triples into `points()`.
    /// Every simple polygon has at least one ear, so this terminates.
    pub fn triangulate(&self) -> Vec<[usize; 3]> {
        let ccw = self.signed_area() > 0.0;
        let mut idx: Vec<usize> = (0..self.pts.len()).collect();
        if !ccw {
            idx.reverse();
        }
        let mut tris = Vec::with_capacity(self.pts.len() - 2);
        while idx.len() > 3 {
            let n = idx.len();
            let mut clipped = false;
            for k in 0..n {
                let (ia, ib, ic) = (idx[(k + n - 1) % n], idx[k], idx[(k + 1) % n]);
                let (a, b, c) = (self.pts[ia], self.pts[ib], self.pts[ic]);
                if cross2(sub2(b, a), sub2(c, a)) <= 1e-12 {
                    continue; // reflex or degenerate corner
                }
                let blocked = idx.iter().any(|&other| {
                    other != ia
                        && other != ib
                        && other != ic
                        && point_in_triangle(self.pts[other], a, b, c)
                });
                if blocked {
                    continue;
                }
                tris.push([ia, ib, ic]);
                idx.remove(k);
                clipped = true;
                break;
            }
            // collinear runs can stall the strict-convexity test; drop the
            // flattest corner and keep going rather than loop forever
            if !clipped {
                let n = idx.len();
                let k = (0..n)
                    .min_by(|&i, &j| {
                        let t = |k: usize| {
                            let (a, b, c) = (
                                self.pts[idx[(k + n - 1) % n]],
                                self.pts[idx[k]],
                                self.pts[idx[(k + 1) % n]],
                            );
                            cross2(sub2(b, a), sub2(c, a)).abs()
                        };
                        t(i).partial_cmp(&t(j)).unwrap()
                    })
                    .unwrap();
                idx.remove(k);
            }
        }
        if idx.len() == 3 {
            tris.push([idx[0], idx[1], idx[2]]);
        }
        tris
    }
}

fn sub2(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = sub2(a, b);
    d[0] * d[0] + d[1] * d[1]
}

fn point_in_triangle(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    let d1 = cross2(sub2(b, a), sub2(p, a));
    let d2 = cross2(sub2(c, b), sub2(p, b));
    let d3 = cross2(sub2(a, c), sub2(p, c));
    let has_neg = d1 < -1e-12 || d2 < -1e-12 || d3 < -1e-12;
    let has_pos = d1 > 1e-12 || d2 > 1e-12 || d3 > 1e-12;
    !(has_neg && has_pos)
}

fn point_on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let cross = cross2(sub2(b, a), sub2(p, a));
    if cross.abs() > 1e-9 {
        return false;
    }
    let dot = (p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1]);
    let len2 = dist2(a, b);
    dot >= -1e-9 && dot <= len2 + 1e-9
}

pub(crate) fn closest_point_on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let ab = sub2(b, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 < 1e-18 {
        return a;
    }
    let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
    [a[0] + t * ab[0], a[1] + t * ab[1]]
}

/// Proper or improper intersection of closed segments ab and cd.
fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = cross2(sub2(b, a), sub2(c, a));
    let d2 = cross2(sub2(b, a), sub2(d, a));
    let d3 = cross2(sub2(d, c), sub2(a, c));
    let d4 = cross2(sub2(d, c), sub2(b, c));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && point_on_segment(c, a, b))
        || (d2 == 0.0 && point_on_segment(d, a, b))
        || (d3 == 0.0 && point_on_segment(a, c, d))
        || (d4 == 0.0 && point_on_segment(b, c, d))
}

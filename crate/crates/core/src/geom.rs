//! Planar polygon primitives used by the landscape generator, the quadrant
//! realization of interventions, and the habitat graph builder.
//!
//! Coordinates are interpreted as metres on a local planar grid. All polygons
//! are simple rings stored counter-clockwise without a repeated closing
//! vertex.

use crate::error::{Error, Result};

/// Absolute coordinate tolerance for point/segment coincidence tests.
pub const COORD_TOL: f64 = 1e-9;
/// Relative tolerance for area comparisons.
pub const AREA_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// A simple polygon (counter-clockwise ring, no repeated closing vertex).
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    ring: Vec<Point>,
}

impl Polygon {
    /// Builds a polygon from a ring, dropping a repeated closing vertex and
    /// consecutive duplicates, and normalizing orientation to CCW.
    pub fn new(mut ring: Vec<Point>) -> Result<Self> {
        if ring.len() >= 2 && ring[0].dist(ring[ring.len() - 1]) <= COORD_TOL {
            ring.pop();
        }
        ring.dedup_by(|a, b| a.dist(*b) <= COORD_TOL);
        if ring.len() < 3 {
            return Err(Error::Geometry(format!(
                "polygon needs at least 3 distinct vertices, got {}",
                ring.len()
            )));
        }
        let poly = Polygon { ring };
        let area = poly.signed_area();
        if area.abs() <= COORD_TOL * COORD_TOL {
            return Err(Error::Geometry("polygon has zero area".into()));
        }
        Ok(if area < 0.0 {
            Polygon {
                ring: poly.ring.into_iter().rev().collect(),
            }
        } else {
            poly
        })
    }

    /// Axis-aligned rectangle spanning (x0, y0) to (x1, y1).
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Polygon::new(vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ])
    }

    pub fn ring(&self) -> &[Point] {
        &self.ring
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.ring.len();
        (0..n).map(move |i| (self.ring[i], self.ring[(i + 1) % n]))
    }

    pub fn signed_area(&self) -> f64 {
        let n = self.ring.len();
        let mut acc = 0.0;
        for i in 0..n {
            let a = self.ring[i];
            let b = self.ring[(i + 1) % n];
            acc += a.x * b.y - b.x * a.y;
        }
        acc / 2.0
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Area centroid.
    pub fn centroid(&self) -> Point {
        let n = self.ring.len();
        let a = self.signed_area();
        if a.abs() <= COORD_TOL * COORD_TOL {
            // Degenerate; fall back to the vertex mean.
            let (sx, sy) = self
                .ring
                .iter()
                .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
            return Point::new(sx / n as f64, sy / n as f64);
        }
        let (mut cx, mut cy) = (0.0, 0.0);
        for i in 0..n {
            let p = self.ring[i];
            let q = self.ring[(i + 1) % n];
            let w = p.x * q.y - q.x * p.y;
            cx += (p.x + q.x) * w;
            cy += (p.y + q.y) * w;
        }
        Point::new(cx / (6.0 * a), cy / (6.0 * a))
    }

    pub fn bbox(&self) -> (Point, Point) {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.ring {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    /// Point-in-polygon by ray casting; boundary points count as inside
    /// within `COORD_TOL`.
    pub fn contains(&self, p: Point) -> bool {
        for (a, b) in self.edges() {
            if point_segment_distance(p, a, b) <= COORD_TOL {
                return true;
            }
        }
        let mut inside = false;
        let n = self.ring.len();
        let mut j = n - 1;
        for i in 0..n {
            let pi = self.ring[i];
            let pj = self.ring[j];
            if (pi.y > p.y) != (pj.y > p.y) {
                let xint = pj.x + (p.y - pj.y) / (pi.y - pj.y) * (pi.x - pj.x);
                if p.x < xint {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// True when every interior angle turns the same way (convex ring).
    pub fn is_convex(&self) -> bool {
        let n = self.ring.len();
        let mut sign = 0.0f64;
        for i in 0..n {
            let c = cross(
                self.ring[i],
                self.ring[(i + 1) % n],
                self.ring[(i + 2) % n],
            );
            if c.abs() <= COORD_TOL {
                continue;
            }
            if sign == 0.0 {
                sign = c.signum();
            } else if c.signum() != sign {
                return false;
            }
        }
        true
    }

    /// Clips the polygon against the half-plane to the left of the oriented
    /// line `a -> b` (Sutherland–Hodgman step). Returns `None` when nothing
    /// of substance survives.
    pub fn clip_halfplane(&self, a: Point, b: Point) -> Option<Polygon> {
        let mut out: Vec<Point> = Vec::with_capacity(self.ring.len() + 4);
        let n = self.ring.len();
        for i in 0..n {
            let cur = self.ring[i];
            let nxt = self.ring[(i + 1) % n];
            let dc = cross(a, b, cur);
            let dn = cross(a, b, nxt);
            if dc >= -COORD_TOL {
                out.push(cur);
            }
            if (dc > COORD_TOL && dn < -COORD_TOL) || (dc < -COORD_TOL && dn > COORD_TOL) {
                let t = dc / (dc - dn);
                out.push(Point::new(
                    cur.x + t * (nxt.x - cur.x),
                    cur.y + t * (nxt.y - cur.y),
                ));
            }
        }
        Polygon::new(out).ok()
    }

    /// Intersection with a convex clip polygon via successive half-plane
    /// clips. The clip polygon must be convex; the subject may be any simple
    /// polygon whose intersection with the clip region is connected.
    pub fn clip_convex(&self, clip: &Polygon) -> Option<Polygon> {
        let mut cur = self.clone();
        for (a, b) in clip.edges() {
            cur = cur.clip_halfplane(a, b)?;
        }
        Some(cur)
    }

    /// Inward offset of a convex polygon: every edge is shifted inward by
    /// `d` and the half-planes re-intersected. Returns `None` when the
    /// polygon erodes away.
    pub fn erode_convex(&self, d: f64) -> Option<Polygon> {
        debug_assert!(self.is_convex());
        let mut cur = self.clone();
        for (a, b) in self.edges() {
            let len = a.dist(b);
            if len <= COORD_TOL {
                continue;
            }
            // Inward normal for a CCW ring is the left normal of the edge.
            let nx = -(b.y - a.y) / len;
            let ny = (b.x - a.x) / len;
            let a2 = Point::new(a.x + nx * d, a.y + ny * d);
            let b2 = Point::new(b.x + nx * d, b.y + ny * d);
            cur = cur.clip_halfplane(a2, b2)?;
        }
        Some(cur)
    }

    /// Minimum distance to another polygon: 0 when they overlap or touch.
    pub fn distance(&self, other: &Polygon) -> f64 {
        if self.contains(other.ring[0]) || other.contains(self.ring[0]) {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for (a, b) in self.edges() {
            for (c, d) in other.edges() {
                best = best.min(segment_distance(a, b, c, d));
                if best == 0.0 {
                    return 0.0;
                }
            }
        }
        best
    }

    /// Total length of boundary shared with `other`: collinear, overlapping
    /// edge portions within `tol`. Corner contacts contribute zero.
    pub fn shared_boundary_length(&self, other: &Polygon, tol: f64) -> f64 {
        let mut total = 0.0;
        for (a, b) in self.edges() {
            for (c, d) in other.edges() {
                total += collinear_overlap(a, b, c, d, tol);
            }
        }
        total
    }
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let vx = b.x - a.x;
    let vy = b.y - a.y;
    let len2 = vx * vx + vy * vy;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * vx + (p.y - a.y) * vy) / len2).clamp(0.0, 1.0);
    p.dist(Point::new(a.x + t * vx, a.y + t * vy))
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    false
}

fn segment_distance(a: Point, b: Point, c: Point, d: Point) -> f64 {
    if segments_intersect(a, b, c, d) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

/// Length of the overlap between segments `ab` and `cd` when they are
/// collinear within `tol`; zero otherwise.
fn collinear_overlap(a: Point, b: Point, c: Point, d: Point, tol: f64) -> f64 {
    if point_segment_distance(c, a, b) > tol && point_segment_distance(d, a, b) > tol {
        return 0.0;
    }
    let vx = b.x - a.x;
    let vy = b.y - a.y;
    let len = (vx * vx + vy * vy).sqrt();
    if len <= tol {
        return 0.0;
    }
    // Both endpoints of cd must sit on the ab support line.
    let off_c = cross(a, b, c).abs() / len;
    let off_d = cross(a, b, d).abs() / len;
    if off_c > tol || off_d > tol {
        return 0.0;
    }
    let proj = |p: Point| ((p.x - a.x) * vx + (p.y - a.y) * vy) / len;
    let (s0, s1) = (proj(c).min(proj(d)), proj(c).max(proj(d)));
    let lo = s0.max(0.0);
    let hi = s1.min(len);
    (hi - lo).max(0.0)
}

/// A possibly multi-piece planar region with a precomputed exact area.
///
/// The pieces may overlap (margin strips are stored as one band per plot
/// edge); `area` always holds the true union area.
#[derive(Debug, Clone)]
pub struct Region {
    pub pieces: Vec<Polygon>,
    pub area: f64,
}

impl Region {
    pub fn from_polygon(poly: Polygon) -> Self {
        let area = poly.area();
        Region {
            pieces: vec![poly],
            area,
        }
    }

    pub fn empty() -> Self {
        Region {
            pieces: Vec::new(),
            area: 0.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty() || self.area <= COORD_TOL * COORD_TOL
    }

    pub fn distance(&self, other: &Region) -> f64 {
        let mut best = f64::INFINITY;
        for a in &self.pieces {
            for b in &other.pieces {
                best = best.min(a.distance(b));
                if best == 0.0 {
                    return 0.0;
                }
            }
        }
        best
    }
}

/// Partitions a convex boundary among seed points: cell `k` is the set of
/// boundary points nearest to `points[k]`, computed by clipping the boundary
/// with the perpendicular bisector of every seed pair.
pub fn voronoi_partition(boundary: &Polygon, points: &[Point]) -> Result<Vec<Polygon>> {
    if points.is_empty() {
        return Err(Error::InvalidInput("voronoi needs at least one point".into()));
    }
    for (i, p) in points.iter().enumerate() {
        if !boundary.contains(*p) {
            return Err(Error::InvalidInput(format!(
                "voronoi point {i} ({}, {}) lies outside the boundary",
                p.x, p.y
            )));
        }
        for (j, q) in points.iter().enumerate().skip(i + 1) {
            if p.dist(*q) <= COORD_TOL {
                return Err(Error::InvalidInput(format!(
                    "voronoi points {i} and {j} coincide"
                )));
            }
        }
    }
    let mut cells = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let mut cell = boundary.clone();
        for (j, q) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            let mid = Point::new((p.x + q.x) / 2.0, (p.y + q.y) / 2.0);
            // Rotating (q - p) by 90° gives a line direction whose left side
            // contains p.
            let dir = Point::new(-(q.y - p.y), q.x - p.x);
            let b = Point::new(mid.x + dir.x, mid.y + dir.y);
            cell = cell.clip_halfplane(mid, b).ok_or_else(|| {
                Error::Geometry(format!("voronoi cell {i} vanished during clipping"))
            })?;
        }
        cells.push(cell);
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_square() -> Polygon {
        Polygon::rect(0.0, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn area_and_centroid_of_rect() {
        let r = Polygon::rect(0.0, 0.0, 2.0, 4.0).unwrap();
        assert_relative_eq!(r.area(), 8.0);
        let c = r.centroid();
        assert_relative_eq!(c.x, 1.0);
        assert_relative_eq!(c.y, 2.0);
    }

    #[test]
    fn orientation_normalized_to_ccw() {
        let cw = Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
        ])
        .unwrap();
        assert!(cw.signed_area() > 0.0);
    }

    #[test]
    fn degenerate_ring_rejected() {
        let r = Polygon::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)]);
        assert!(r.is_err());
        let flat = Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(2.0, 0.0),
        ]);
        assert!(flat.is_err());
    }

    #[test]
    fn contains_interior_boundary_exterior() {
        let sq = unit_square();
        assert!(sq.contains(Point::new(0.5, 0.5)));
        assert!(sq.contains(Point::new(0.0, 0.5)));
        assert!(!sq.contains(Point::new(1.5, 0.5)));
    }

    #[test]
    fn halfplane_clip_splits_square() {
        let sq = unit_square();
        // Keep x <= 0.5: line pointing down through x = 0.5 keeps its left
        // side, which is x < 0.5.
        let left = sq
            .clip_halfplane(Point::new(0.5, 1.0), Point::new(0.5, 0.0))
            .unwrap();
        assert_relative_eq!(left.area(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn clip_convex_intersection_area() {
        let a = unit_square();
        let b = Polygon::rect(0.5, 0.5, 1.5, 1.5).unwrap();
        let inter = a.clip_convex(&b).unwrap();
        assert_relative_eq!(inter.area(), 0.25, epsilon = 1e-12);
        let far = Polygon::rect(2.0, 2.0, 3.0, 3.0).unwrap();
        assert!(a.clip_convex(&far).is_none());
    }

    #[test]
    fn erode_square() {
        let sq = Polygon::rect(0.0, 0.0, 10.0, 10.0).unwrap();
        let inner = sq.erode_convex(1.0).unwrap();
        assert_relative_eq!(inner.area(), 64.0, epsilon = 1e-9);
        assert!(sq.erode_convex(6.0).is_none());
    }

    #[test]
    fn polygon_distance_touch_and_gap() {
        let a = unit_square();
        let touching = Polygon::rect(1.0, 0.0, 2.0, 1.0).unwrap();
        let apart = Polygon::rect(3.0, 0.0, 4.0, 1.0).unwrap();
        assert_relative_eq!(a.distance(&touching), 0.0);
        assert_relative_eq!(a.distance(&apart), 2.0, epsilon = 1e-12);
        let inside = Polygon::rect(0.25, 0.25, 0.75, 0.75).unwrap();
        assert_relative_eq!(a.distance(&inside), 0.0);
    }

    #[test]
    fn shared_boundary_edge_vs_corner() {
        let a = unit_square();
        let edge_nb = Polygon::rect(1.0, 0.25, 2.0, 0.75).unwrap();
        assert_relative_eq!(a.shared_boundary_length(&edge_nb, 1e-9), 0.5, epsilon = 1e-9);
        let corner_nb = Polygon::rect(1.0, 1.0, 2.0, 2.0).unwrap();
        assert!(a.shared_boundary_length(&corner_nb, 1e-9) < 1e-9);
    }

    #[test]
    fn voronoi_single_point_returns_boundary() {
        let sq = unit_square();
        let cells = voronoi_partition(&sq, &[Point::new(0.3, 0.3)]).unwrap();
        assert_eq!(cells.len(), 1);
        assert_relative_eq!(cells[0].area(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn voronoi_two_points_bisects_at_half() {
        let sq = unit_square();
        let cells =
            voronoi_partition(&sq, &[Point::new(0.25, 0.5), Point::new(0.75, 0.5)]).unwrap();
        assert_eq!(cells.len(), 2);
        assert_relative_eq!(cells[0].area(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(cells[1].area(), 0.5, epsilon = 1e-12);
        // Cell 0 is the left half.
        assert!(cells[0].contains(Point::new(0.1, 0.5)));
        assert!(!cells[0].contains(Point::new(0.9, 0.5)));
    }

    #[test]
    fn voronoi_four_symmetric_points_quarter_cells() {
        let sq = unit_square();
        let pts = [
            Point::new(0.25, 0.25),
            Point::new(0.75, 0.25),
            Point::new(0.25, 0.75),
            Point::new(0.75, 0.75),
        ];
        let cells = voronoi_partition(&sq, &pts).unwrap();
        let total: f64 = cells.iter().map(|c| c.area()).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-9);
        for (cell, p) in cells.iter().zip(pts.iter()) {
            assert_relative_eq!(cell.area(), 0.25, epsilon = 1e-9);
            assert!(cell.contains(*p));
        }
    }

    #[test]
    fn voronoi_rejects_bad_inputs() {
        let sq = unit_square();
        assert!(voronoi_partition(&sq, &[]).is_err());
        assert!(voronoi_partition(&sq, &[Point::new(2.0, 2.0)]).is_err());
        assert!(
            voronoi_partition(&sq, &[Point::new(0.5, 0.5), Point::new(0.5, 0.5)]).is_err()
        );
    }
}

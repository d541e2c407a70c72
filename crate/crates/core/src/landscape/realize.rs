//! Turns per-plot direction choices into concrete geometry: the plot is
//! split into four quadrants by a horizontal and a vertical line through its
//! centre, habitat conversions claim whole quadrants, and margin
//! interventions claim a boundary strip of fixed width inside a quadrant.

use crate::error::{Error, Result};
use crate::geom::{Point, Polygon, Region, COORD_TOL};
use crate::landscape::{Direction, DirectionSet};

/// Which point the quadrant split runs through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitCenter {
    /// Area centroid; matches "centre of the plot" for irregular polygons.
    #[default]
    Centroid,
    BboxCenter,
}

#[derive(Debug, Clone)]
pub struct RealizedInterventions {
    pub margin_strips: Vec<(Direction, Region)>,
    pub habitat_regions: Vec<(Direction, Region)>,
    /// Degenerate directions (empty quadrant intersections) and area
    /// approximations are noted here.
    pub diagnostics: Vec<String>,
}

fn split_point(plot: &Polygon, split: SplitCenter) -> Point {
    match split {
        SplitCenter::Centroid => plot.centroid(),
        SplitCenter::BboxCenter => {
            let (lo, hi) = plot.bbox();
            Point::new((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0)
        }
    }
}

/// Quadrant of `plot` in direction `dir` relative to centre `c`.
/// North is +y, east is +x.
fn quadrant(plot: &Polygon, c: Point, dir: Direction) -> Option<Polygon> {
    // clip_halfplane keeps the left side of a -> b.
    let keep_east = (Point::new(c.x, 0.0), Point::new(c.x, -1.0));
    let keep_west = (Point::new(c.x, 0.0), Point::new(c.x, 1.0));
    let keep_north = (Point::new(0.0, c.y), Point::new(1.0, c.y));
    let keep_south = (Point::new(0.0, c.y), Point::new(-1.0, c.y));
    let (h, v) = match dir {
        Direction::NorthEast => (keep_north, keep_east),
        Direction::NorthWest => (keep_north, keep_west),
        Direction::SouthEast => (keep_south, keep_east),
        Direction::SouthWest => (keep_south, keep_west),
    };
    plot.clip_halfplane(h.0, h.1)?.clip_halfplane(v.0, v.1)
}

/// Boundary strip of width `w` inside `quad`, built as one band per plot
/// edge. For convex plots the reported area is exact
/// (quadrant minus the eroded interior); for non-convex plots it is an
/// upper-bounded approximation and a diagnostic is recorded.
fn margin_strip(
    plot: &Polygon,
    quad: &Polygon,
    w: f64,
    diagnostics: &mut Vec<String>,
    dir: Direction,
) -> Region {
    let mut pieces = Vec::new();
    let mut piece_area_sum = 0.0;
    for (a, b) in plot.edges() {
        let len = a.dist(b);
        if len <= COORD_TOL {
            continue;
        }
        let nx = -(b.y - a.y) / len;
        let ny = (b.x - a.x) / len;
        let a2 = Point::new(a.x + nx * w, a.y + ny * w);
        let b2 = Point::new(b.x + nx * w, b.y + ny * w);
        // Keep the side of the shifted line facing the original edge.
        if let Some(piece) = quad.clip_halfplane(b2, a2) {
            piece_area_sum += piece.area();
            pieces.push(piece);
        }
    }
    if pieces.is_empty() {
        return Region::empty();
    }
    let area = if plot.is_convex() {
        match plot.erode_convex(w) {
            Some(inner) => {
                let inner_in_quad = inner.clip_convex(quad).map(|p| p.area()).unwrap_or(0.0);
                (quad.area() - inner_in_quad).max(0.0)
            }
            None => quad.area(), // plot thinner than 2w: the strip is the whole quadrant
        }
    } else {
        diagnostics.push(format!(
            "{}: margin area approximated for non-convex plot",
            dir.as_str()
        ));
        piece_area_sum.min(quad.area())
    };
    Region { pieces, area }
}

/// Realizes margin strips and habitat regions for the chosen directions.
///
/// Every returned polygon is contained in the plot. A direction whose
/// quadrant intersection is empty contributes empty geometry and a
/// diagnostic entry.
pub fn realize_intervention_geometry(
    plot: &Polygon,
    margin_dirs: DirectionSet,
    habitat_dirs: DirectionSet,
    margin_width: f64,
    split: SplitCenter,
) -> Result<RealizedInterventions> {
    if !margin_dirs.is_empty() {
        let (lo, hi) = plot.bbox();
        let half_extent = ((hi.x - lo.x).min(hi.y - lo.y)) / 2.0;
        if margin_width <= 0.0 || margin_width >= half_extent {
            return Err(Error::InvalidInput(format!(
                "margin_width {margin_width} must be in (0, {half_extent}) for this plot"
            )));
        }
    }
    let c = split_point(plot, split);
    let mut diagnostics = Vec::new();
    let mut habitat_regions = Vec::new();
    for dir in habitat_dirs.iter() {
        match quadrant(plot, c, dir) {
            Some(q) => habitat_regions.push((dir, Region::from_polygon(q))),
            None => {
                diagnostics.push(format!("{}: empty habitat quadrant", dir.as_str()));
                habitat_regions.push((dir, Region::empty()));
            }
        }
    }
    let mut margin_strips = Vec::new();
    for dir in margin_dirs.iter() {
        match quadrant(plot, c, dir) {
            Some(q) => {
                let strip = margin_strip(plot, &q, margin_width, &mut diagnostics, dir);
                if strip.is_empty() {
                    diagnostics.push(format!("{}: empty margin strip", dir.as_str()));
                }
                margin_strips.push((dir, strip));
            }
            None => {
                diagnostics.push(format!("{}: empty margin quadrant", dir.as_str()));
                margin_strips.push((dir, Region::empty()));
            }
        }
    }
    Ok(RealizedInterventions {
        margin_strips,
        habitat_regions,
        diagnostics,
    })
}

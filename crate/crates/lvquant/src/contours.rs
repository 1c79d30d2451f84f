//! Polygon geometry for cardiac indices: areas, cavity dimensions, regional
//! wall thicknesses, and cardiac-phase labeling from a cavity-area series.
//!
//! All contours are simple polygons in pixel coordinates, `(x, y)` tuples,
//! listed in order (either winding). Physical quantities come out in mm/mm²
//! via the `spacing` argument (mm per pixel).

use std::f64::consts::PI;

pub type Point = (f64, f64);

#[derive(Debug, Clone)]
pub enum GeometryError {
    /// Contour fails its structural preconditions (too few vertices,
    /// inner not contained in outer, zero area).
    InvalidContour(String),
    /// A probe line or ray did not intersect the contour as required.
    DegenerateGeometry(String),
    /// Cavity-area series carries no phase information (constant / too short).
    AmbiguousPhase(String),
}

impl std::fmt::Display for GeometryError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GeometryError::InvalidContour(m) => write!(f, "invalid contour: {}", m),
            GeometryError::DegenerateGeometry(m) => write!(f, "degenerate geometry: {}", m),
            GeometryError::AmbiguousPhase(m) => write!(f, "ambiguous phase: {}", m),
        }
    }
}

impl std::error::Error for GeometryError {}

fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc * 0.5
}

/// Unsigned area of a simple polygon in pixel² (shoelace formula).
pub fn polygon_area(poly: &[Point]) -> f64 {
    signed_area(poly).abs()
}

/// Area-weighted centroid of a simple polygon.
pub fn polygon_centroid(poly: &[Point]) -> Result<Point, GeometryError> {
    let a = signed_area(poly);
    if a.abs() < 1e-12 {
        return Err(GeometryError::InvalidContour(
            "polygon area is zero, centroid undefined".into(),
        ));
    }
    let n = poly.len();
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % n];
        let cross = x0 * y1 - x1 * y0;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    Ok((cx / (6.0 * a), cy / (6.0 * a)))
}

/// Vertices of an axis-rotated ellipse, counterclockwise, first vertex at
/// parameter angle 0 (i.e. along the rotated major axis).
pub fn ellipse_polygon(center: Point, a: f64, b: f64, rot: f64, n: usize) -> Vec<Point> {
    let (cr, sr) = (rot.cos(), rot.sin());
    (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            let (ex, ey) = (a * t.cos(), b * t.sin());
            (center.0 + cr * ex - sr * ey, center.1 + sr * ex + cr * ey)
        })
        .collect()
}

/// Even-odd point-in-polygon test. Boundary points are not reliable either way.
fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > p.1) != (yj > p.1) {
            let x_cross = xi + (p.1 - yi) / (yj - yi) * (xj - xi);
            if p.0 < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn point_segment_dist(p: Point, a: Point, b: Point) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * abx + (p.1 - a.1) * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (p.0 - (a.0 + t * abx), p.1 - (a.1 + t * aby));
    (dx * dx + dy * dy).sqrt()
}

fn dist_to_boundary(p: Point, poly: &[Point]) -> f64 {
    let n = poly.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        best = best.min(point_segment_dist(p, poly[i], poly[(i + 1) % n]));
    }
    best
}

/// Parameters `t` where the line `origin + t*dir` crosses polygon edges.
/// Edges are half-open in `u` so a crossing at a shared vertex counts once.
/// Near-duplicate `t` values (vertex grazing) are merged.
fn line_polygon_crossings(origin: Point, dir: Point, poly: &[Point]) -> Vec<f64> {
    let n = poly.len();
    let mut ts: Vec<f64> = Vec::new();
    for i in 0..n {
        let (px, py) = poly[i];
        let (qx, qy) = poly[(i + 1) % n];
        let (ex, ey) = (qx - px, qy - py);
        // origin + t*dir = p + u*e
        let den = dir.0 * ey - dir.1 * ex;
        if den.abs() < 1e-14 {
            continue; // parallel
        }
        let (wx, wy) = (px - origin.0, py - origin.1);
        let t = (wx * ey - wy * ex) / den;
        let u = (wx * dir.1 - wy * dir.0) / den;
        // Slightly open lower bound so a crossing exactly at a vertex is not
        // lost to roundoff on both adjacent edges; the t-dedup below merges
        // it if it lands on both.
        if (-1e-12..1.0).contains(&u) {
            ts.push(t);
        }
    }
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
    ts
}

/// Cavity and myocardial areas in mm² from inner/outer contours.
///
/// cavity = |shoelace(inner)|·spacing²,
/// myocardium = (|shoelace(outer)| − |shoelace(inner)|)·spacing².
pub fn compute_areas(
    inner: &[Point],
    outer: &[Point],
    spacing: f64,
) -> Result<(f64, f64), GeometryError> {
    if inner.len() < 3 || outer.len() < 3 {
        return Err(GeometryError::InvalidContour(format!(
            "contours need >= 3 vertices, got inner {} / outer {}",
            inner.len(),
            outer.len()
        )));
    }
    let a_in = polygon_area(inner);
    let a_out = polygon_area(outer);
    if a_out < a_in - 1e-9 * a_in.max(1.0) {
        return Err(GeometryError::InvalidContour(
            "inner contour area exceeds outer contour area".into(),
        ));
    }
    // Containment check tolerant to the inner == outer degenerate annulus:
    // a vertex counts as violating only if it is strictly outside by margin.
    for &p in inner {
        if !point_in_polygon(p, outer) && dist_to_boundary(p, outer) > 1e-6 {
            return Err(GeometryError::InvalidContour(format!(
                "inner vertex ({:.3}, {:.3}) lies outside the outer contour",
                p.0, p.1
            )));
        }
    }
    let sp2 = spacing * spacing;
    Ok((a_in * sp2, (a_out - a_in) * sp2))
}

/// Cavity chord lengths (mm) through the centroid at `orientation`,
/// `orientation + 60°`, and `orientation + 120°` (radians, x-axis reference).
pub fn compute_dimensions(
    inner: &[Point],
    orientation: f64,
    spacing: f64,
) -> Result<[f64; 3], GeometryError> {
    if inner.len() < 3 {
        return Err(GeometryError::InvalidContour(format!(
            "cavity contour needs >= 3 vertices, got {}",
            inner.len()
        )));
    }
    let c = polygon_centroid(inner)?;
    let mut dims = [0.0; 3];
    for (k, dim) in dims.iter_mut().enumerate() {
        let theta = orientation + PI / 3.0 * k as f64;
        let dir = (theta.cos(), theta.sin());
        let ts = line_polygon_crossings(c, dir, inner);
        if ts.len() != 2 {
            return Err(GeometryError::DegenerateGeometry(format!(
                "dimension probe at {:.1} deg crosses cavity contour {} times (want 2)",
                theta.to_degrees(),
                ts.len()
            )));
        }
        *dim = (ts[1] - ts[0]) * spacing;
    }
    Ok(dims)
}

/// First positive ray crossing distance; the farthest one wins if vertex
/// grazing leaves near-duplicates.
fn ray_distance(origin: Point, theta: f64, poly: &[Point]) -> Option<f64> {
    let dir = (theta.cos(), theta.sin());
    let ts = line_polygon_crossings(origin, dir, poly);
    ts.into_iter().filter(|&t| t > 1e-9).fold(None, |acc, t| {
        Some(acc.map_or(t, |a: f64| a.max(t)))
    })
}

pub const RWT_SEGMENTS: [&str; 6] = ["IS", "I", "IL", "AL", "A", "AS"];
const RAYS_PER_SEGMENT: usize = 15;

/// Regional wall thickness (mm) of the six 60° myocardial segments
/// IS, I, IL, AL, A, AS, anchored at the first landmark's polar angle seen
/// from the cavity centroid and proceeding counterclockwise. Each segment is
/// the mean of 15 radial (outer − inner) distances across its angular span.
pub fn compute_rwt(
    inner: &[Point],
    outer: &[Point],
    landmarks: [Point; 2],
    spacing: f64,
) -> Result<[f64; 6], GeometryError> {
    if inner.len() < 3 || outer.len() < 3 {
        return Err(GeometryError::InvalidContour(format!(
            "contours need >= 3 vertices, got inner {} / outer {}",
            inner.len(),
            outer.len()
        )));
    }
    let c = polygon_centroid(inner)?;
    let anchor = (landmarks[0].1 - c.1).atan2(landmarks[0].0 - c.0);
    let seg_span = PI / 3.0;
    let mut rwt = [0.0; 6];
    for (s, out) in rwt.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..RAYS_PER_SEGMENT {
            let frac = (j as f64 + 0.5) / RAYS_PER_SEGMENT as f64;
            let theta = anchor + seg_span * (s as f64 + frac);
            let t_in = ray_distance(c, theta, inner).ok_or_else(|| {
                GeometryError::DegenerateGeometry(format!(
                    "radial ray at {:.1} deg misses the inner contour",
                    theta.to_degrees()
                ))
            })?;
            let t_out = ray_distance(c, theta, outer).ok_or_else(|| {
                GeometryError::DegenerateGeometry(format!(
                    "radial ray at {:.1} deg misses the outer contour",
                    theta.to_degrees()
                ))
            })?;
            acc += (t_out - t_in) * spacing;
        }
        *out = acc / RAYS_PER_SEGMENT as f64;
    }
    Ok(rwt)
}

/// Binary phase labels from a cavity-area series: 0 = Diastole, 1 = Systole.
///
/// ED is the argmax frame and ES the argmin (ties break toward the lower
/// index); the cyclic stretch from the frame after ED through ES inclusive is
/// Systole, the rest Diastole.
pub fn label_phases(cavity_series: &[f64]) -> Result<Vec<u8>, GeometryError> {
    let f = cavity_series.len();
    if f < 2 {
        return Err(GeometryError::AmbiguousPhase(format!(
            "need >= 2 frames, got {}",
            f
        )));
    }
    let mut ed = 0;
    let mut es = 0;
    for (i, &v) in cavity_series.iter().enumerate() {
        if v > cavity_series[ed] {
            ed = i;
        }
        if v < cavity_series[es] {
            es = i;
        }
    }
    if cavity_series[ed] == cavity_series[es] {
        return Err(GeometryError::AmbiguousPhase(
            "cavity series is constant".into(),
        ));
    }
    let mut phases = vec![0u8; f];
    let mut i = (ed + 1) % f;
    loop {
        phases[i] = 1;
        if i == es {
            break;
        }
        i = (i + 1) % f;
    }
    Ok(phases)
}

use delaunator::{triangulate, Point};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convex polygon with counter-clockwise vertices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub cluster: i64,
    pub vertices: Vec<[f64; 2]>,
}

/// Serializes as a bare JSON array of polygons.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObstacleMap {
    pub polygons: Vec<Polygon>,
}

fn cross(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Andrew's monotone chain. Collinear boundary points are dropped; the result
/// is counter-clockwise and has fewer than 3 vertices only for degenerate
/// input.
pub fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vector2<f64>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2
                && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

fn circumradius(a: &Vector2<f64>, b: &Vector2<f64>, c: &Vector2<f64>) -> f64 {
    let area2 = cross(a, b, c).abs();
    if area2 == 0.0 {
        return f64::INFINITY;
    }
    (a - b).norm() * (b - c).norm() * (c - a).norm() / (2.0 * area2)
}

/// Points on triangles of the Delaunay triangulation whose circumradius is
/// below `1 / alpha`. Empty if none qualifies.
fn alpha_shape_points(points: &[Vector2<f64>], alpha: f64) -> Vec<Vector2<f64>> {
    let input: Vec<Point> = points.iter().map(|p| Point { x: p.x, y: p.y }).collect();
    let tri = triangulate(&input);
    let max_radius = 1.0 / alpha;
    let mut used = vec![false; points.len()];
    for t in tri.triangles.chunks_exact(3) {
        if circumradius(&points[t[0]], &points[t[1]], &points[t[2]]) < max_radius {
            for &i in t {
                used[i] = true;
            }
        }
    }
    points
        .iter()
        .zip(used)
        .filter(|(_, u)| *u)
        .map(|(p, _)| *p)
        .collect()
}

fn padded_rectangle(points: &[Vector2<f64>], padding: f64) -> Vec<Vector2<f64>> {
    let (mut lo, mut hi) = (points[0], points[0]);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    lo.add_scalar_mut(-padding);
    hi.add_scalar_mut(padding);
    vec![lo, Vector2::new(hi.x, lo.y), hi, Vector2::new(lo.x, hi.y)]
}

/// Convex polygon around a cluster: the convex hull of its alpha shape.
///
/// `alpha = 0` takes the hull of all points. With `alpha > 0` points outside
/// the alpha shape may fall outside the polygon; if no triangle passes the
/// radius test the hull of all points is used. Fewer than 3 distinct points
/// or collinear input yield the bounding rectangle grown by `padding`.
pub fn cluster_to_polygon(
    points: &[Vector2<f64>],
    alpha: f64,
    padding: f64,
) -> Result<Vec<Vector2<f64>>> {
    if points.is_empty() {
        return Err(Error::Empty("cluster has no points".into()));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    if !(padding > 0.0 && padding.is_finite()) {
        return Err(Error::Config(format!(
            "padding must be positive, got {padding}"
        )));
    }
    if let Some(p) = points
        .iter()
        .find(|p| !(p.x.is_finite() && p.y.is_finite()))
    {
        return Err(Error::Domain(format!("non-finite point {p:?}")));
    }
    let full = convex_hull(points);
    if full.len() < 3 {
        return Ok(padded_rectangle(points, padding));
    }
    if alpha == 0.0 {
        return Ok(full);
    }
    let shape = alpha_shape_points(points, alpha);
    let hull = convex_hull(&shape);
    Ok(if hull.len() >= 3 { hull } else { full })
}

/// True if the polygon has at least 3 vertices and every turn is strictly
/// counter-clockwise.
pub fn is_convex_ccw(vertices: &[Vector2<f64>]) -> bool {
    let n = vertices.len();
    n >= 3
        && (0..n).all(|i| cross(&vertices[i], &vertices[(i + 1) % n], &vertices[(i + 2) % n]) > 0.0)
}

/// Point-in-convex-polygon test with a tolerance for points on the boundary.
pub fn contains(vertices: &[Vector2<f64>], p: &Vector2<f64>, tol: f64) -> bool {
    let n = vertices.len();
    (0..n).all(|i| {
        let (a, b) = (&vertices[i], &vertices[(i + 1) % n]);
        cross(a, b, p) >= -tol * (b - a).norm()
    })
}

use nalgebra::Vector2;
use rayon::prelude::*;
use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};

pub const NOISE: i64 = -1;

fn cell_of(p: &Vector2<f64>, size: f64) -> (i64, i64) {
    ((p.x / size).floor() as i64, (p.y / size).floor() as i64)
}

/// Indices of all points within `eps` of each point (self included), in
/// increasing order.
pub fn neighborhoods(points: &[Vector2<f64>], eps: f64) -> Vec<Vec<usize>> {
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(cell_of(p, eps)).or_default().push(i);
    }
    let eps2 = eps * eps;
    points
        .par_iter()
        .map(|p| {
            let (cx, cy) = cell_of(p, eps);
            let mut out = Vec::new();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    if let Some(cell) = grid.get(&(cx + dx, cy + dy)) {
                        out.extend(
                            cell.iter()
                                .copied()
                                .filter(|&j| (points[j] - p).norm_squared() <= eps2),
                        );
                    }
                }
            }
            out.sort_unstable();
            out
        })
        .collect()
}

/// DBSCAN with self-inclusive neighbor counts. Clusters are numbered in the
/// order their lowest-index core point appears; expansion is breadth-first in
/// index order, so a border point reachable from several clusters joins the
/// first one. Noise is labeled [`NOISE`].
pub fn dbscan(points: &[Vector2<f64>], eps: f64, min_pts: usize) -> Result<Vec<i64>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::Config("min_pts must be at least 1".into()));
    }
    if let Some(p) = points
        .iter()
        .find(|p| !(p.x.is_finite() && p.y.is_finite()))
    {
        return Err(Error::Domain(format!("non-finite point {p:?}")));
    }
    const UNVISITED: i64 = -2;
    let nbrs = neighborhoods(points, eps);
    let core: Vec<bool> = nbrs.iter().map(|n| n.len() >= min_pts).collect();
    let mut labels = vec![UNVISITED; points.len()];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for i in 0..points.len() {
        if labels[i] != UNVISITED {
            continue;
        }
        if !core[i] {
            labels[i] = NOISE;
            continue;
        }
        labels[i] = next;
        queue.push_back(i);
        while let Some(q) = queue.pop_front() {
            for &n in &nbrs[q] {
                match labels[n] {
                    UNVISITED => {
                        labels[n] = next;
                        if core[n] {
                            queue.push_back(n);
                        }
                    }
                    NOISE => labels[n] = next,
                    _ => {}
                }
            }
        }
        next += 1;
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(f64, f64)]) -> Vec<Vector2<f64>> {
        v.iter().map(|&(x, y)| Vector2::new(x, y)).collect()
    }

    #[test]
    fn hand_example() {
        let p = pts(&[(0.0, 0.0), (0.1, 0.0), (5.0, 5.0)]);
        assert_eq!(dbscan(&p, 0.5, 2).unwrap(), vec![0, 0, -1]);
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let p = pts(&[(1.0, 1.0); 6]);
        assert_eq!(dbscan(&p, 0.1, 3).unwrap(), vec![0; 6]);
    }

    #[test]
    fn sparse_points_are_noise() {
        let p = pts(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]);
        assert_eq!(dbscan(&p, 0.5, 2).unwrap(), vec![-1; 3]);
    }

    #[test]
    fn distance_equal_to_eps_is_a_neighbor() {
        let p = pts(&[(0.0, 0.0), (0.5, 0.0)]);
        assert_eq!(dbscan(&p, 0.5, 2).unwrap(), vec![0, 0]);
    }

    #[test]
    fn border_point_goes_to_first_cluster() {
        // Point 0 is visited first as noise, then claimed by the right cluster,
        // which is numbered first because its cores have lower indices.
        let p = pts(&[
            (0.3, 0.0),
            (0.6, 0.0),
            (0.7, 0.0),
            (0.65, 0.05),
            (0.65, -0.05),
            (0.0, 0.0),
            (-0.1, 0.0),
            (-0.05, 0.05),
            (-0.05, -0.05),
        ]);
        let labels = dbscan(&p, 0.31, 4).unwrap();
        assert_eq!(labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1]);
    }
}

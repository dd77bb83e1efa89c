use std::collections::HashMap;

use super::{ClusterError, ClusterParams};

/// DBSCAN assignment for one point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Noise,
    Cluster(u32),
}

struct Grid<'a> {
    points: &'a [[f64; 3]],
    eps: f64,
    cell: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [[f64; 3]], eps: f64) -> Self {
        // Slightly oversized cells keep every eps-neighbour in the 27-cell block
        // despite rounding in the division.
        let cell = eps * (1.0 + 1e-6);
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        Grid { points, eps, cell, cells }
    }

    fn key(p: &[f64; 3], cell: f64) -> [i64; 3] {
        [
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        ]
    }

    /// Indices within `eps` of point `i`, including `i` itself.
    fn neighbours(&self, i: usize, out: &mut Vec<u32>) {
        out.clear();
        let p = &self.points[i];
        let k = Self::key(p, self.cell);
        let e2 = self.eps * self.eps;
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(cell) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        out.extend(cell.iter().copied().filter(|&j| dist2(p, &self.points[j as usize]) <= e2));
                    }
                }
            }
        }
    }
}

pub(crate) fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Plain DBSCAN. A point is core when at least `min_points` points
/// (itself included) lie within `eps`. Points are visited in input order, so
/// cluster ids follow the smallest core index of each cluster, and a border
/// point reachable from several clusters joins the lowest id.
pub fn dbscan(points: &[[f64; 3]], eps: f64, min_points: usize) -> Vec<Label> {
    let grid = Grid::new(points, eps);
    let mut labels: Vec<Option<Label>> = vec![None; points.len()];
    let mut next = 0u32;
    let mut nb = Vec::new();
    let mut queue: Vec<u32> = Vec::new();
    for i in 0..points.len() {
        if labels[i].is_some() {
            continue;
        }
        grid.neighbours(i, &mut nb);
        if nb.len() < min_points {
            labels[i] = Some(Label::Noise);
            continue;
        }
        let c = Label::Cluster(next);
        next += 1;
        labels[i] = Some(c);
        queue.clear();
        queue.extend(nb.iter().copied());
        let mut head = 0;
        while head < queue.len() {
            let q = queue[head] as usize;
            head += 1;
            match labels[q] {
                Some(Label::Noise) => {
                    labels[q] = Some(c);
                    continue;
                }
                Some(_) => continue,
                None => labels[q] = Some(c),
            }
            grid.neighbours(q, &mut nb);
            if nb.len() >= min_points {
                queue.extend(nb.iter().copied().filter(|&j| !matches!(labels[j as usize], Some(Label::Cluster(_)))));
            }
        }
    }
    labels.into_iter().map(|l| l.unwrap_or(Label::Noise)).collect()
}

/// DBSCAN in scaled `(x, y, t)` space, refusing inputs above the extended threshold.
pub fn dbscan_cluster(points: &[[f64; 3]], params: &ClusterParams) -> Result<Vec<Label>, ClusterError> {
    params.validate()?;
    if points.len() > params.extended_threshold {
        return Err(ClusterError::TooManyPoints {
            n: points.len(),
            limit: params.extended_threshold,
        });
    }
    Ok(dbscan(points, params.epsilon, params.min_points))
}

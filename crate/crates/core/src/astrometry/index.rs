use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::quad::{diameter_pair, inside_diameter_circle, quad_code};
use super::{AstrometryError, CatalogStar, QuadCode, QuadHash};
use crate::crossmatch::KdTree;
use crate::sky::{self, RaDec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    /// Admissible quad diameters, arcsec.
    pub scale_range_arcsec: (f64, f64),
    /// Brightest stars kept per square sky cell; keeps the index uniform
    /// over wide regions instead of clustering around a few bright stars.
    pub stars_per_cell: usize,
    /// Cell side, arcsec. Non-positive means the upper scale bound.
    pub cell_arcsec: f64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            scale_range_arcsec: (150.0, 700.0),
            stars_per_cell: 16,
            cell_arcsec: 0.0,
        }
    }
}

/// Quad index over a sky cone, plus every catalog star in the cone for
/// verification.
#[derive(Clone, Debug)]
pub struct QuadIndex {
    pub center: RaDec,
    pub radius_deg: f64,
    pub config: IndexConfig,
    /// Stars that form quads.
    pub stars: Vec<CatalogStar>,
    /// Standard coordinates of `stars` about `center`, arcsec.
    pub std_coords: Vec<[f64; 2]>,
    pub quads: Vec<QuadHash>,
    /// Indices into `stars`, in A, B, C, D order.
    pub members: Vec<[u32; 4]>,
    /// All catalog stars in the cone.
    pub region: Vec<CatalogStar>,
    tree: KdTree<4>,
}

impl QuadIndex {
    pub fn len(&self) -> usize {
        self.quads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quads.is_empty()
    }

    /// Quads whose code lies within `tol` (Euclidean) of `code`, nearest first.
    pub fn lookup(&self, code: &QuadCode, tol: f64) -> Vec<usize> {
        self.tree.within(code, tol).into_iter().map(|(i, _)| i).collect()
    }
}

/// True when `p` forms an indexable quad: diameter within `range` and the
/// other two points strictly inside the circle on the diameter.
pub(crate) fn admissible(p: &[[f64; 2]; 4], range: (f64, f64)) -> bool {
    let (i, j, dia) = diameter_pair(p);
    if dia < range.0 || dia > range.1 {
        return false;
    }
    (0..4)
        .filter(|&k| k != i && k != j)
        .all(|k| inside_diameter_circle(p[i], p[j], p[k]))
}

fn select_stars(cone: &[CatalogStar], std: &[[f64; 2]], cell: f64, per_cell: usize) -> Vec<usize> {
    let mut cells: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, s) in std.iter().enumerate() {
        let key = ((s[0] / cell).floor() as i64, (s[1] / cell).floor() as i64);
        cells.entry(key).or_default().push(i);
    }
    let mut keep: Vec<usize> = Vec::new();
    for members in cells.values_mut() {
        members.sort_by(|&a, &b| cone[a].mag.total_cmp(&cone[b].mag).then(cone[a].id.cmp(&cone[b].id)));
        keep.extend(members.iter().take(per_cell).copied());
    }
    keep.sort_by(|&a, &b| cone[a].mag.total_cmp(&cone[b].mag).then(cone[a].id.cmp(&cone[b].id)));
    keep
}

/// Build a quad index over the catalog stars within `radius_deg` of `center`.
pub fn build_index(
    catalog: &[CatalogStar],
    center: RaDec,
    radius_deg: f64,
    config: &IndexConfig,
) -> Result<QuadIndex, AstrometryError> {
    let mut region: Vec<CatalogStar> = super::stars_in_cone(catalog, center, radius_deg)
        .into_iter()
        .filter(|s| sky::project(center, s.position()).is_some())
        .collect();
    region.sort_by(|a, b| a.mag.total_cmp(&b.mag).then(a.id.cmp(&b.id)));
    if region.len() < 4 {
        return Err(AstrometryError::TooFewStars { have: region.len(), need: 4 });
    }
    let all_std: Vec<[f64; 2]> = region
        .iter()
        .map(|s| sky::project(center, s.position()).expect("filtered"))
        .collect();
    let cell = if config.cell_arcsec > 0.0 { config.cell_arcsec } else { config.scale_range_arcsec.1 };
    let keep = select_stars(&region, &all_std, cell.max(1e-9), config.stars_per_cell.max(1));
    let stars: Vec<CatalogStar> = keep.iter().map(|&i| region[i]).collect();
    let std_coords: Vec<[f64; 2]> = keep.iter().map(|&i| all_std[i]).collect();

    let (smin, smax) = config.scale_range_arcsec;
    let pos_tree = KdTree::new(std_coords.clone());
    let mut quads = Vec::new();
    let mut members = Vec::new();
    let n = stars.len();
    for a in 0..n {
        for b in a + 1..n {
            let (pa, pb) = (std_coords[a], std_coords[b]);
            let dia = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
            if dia < smin || dia > smax {
                continue;
            }
            let mid = [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0];
            let mut inside: Vec<usize> = pos_tree
                .within(&mid, dia / 2.0 * (1.0 + 1e-9))
                .into_iter()
                .map(|(k, _)| k)
                .filter(|&k| k != a && k != b && inside_diameter_circle(pa, pb, std_coords[k]))
                .collect();
            inside.sort_unstable();
            for (ci, &c) in inside.iter().enumerate() {
                for &d in &inside[ci + 1..] {
                    let ids = [a, b, c, d];
                    let pts = ids.map(|k| std_coords[k]);
                    let (code, order) = quad_code(&pts);
                    let m = order.map(|o| ids[o] as u32);
                    quads.push(QuadHash { code, star_ids: m.map(|k| stars[k as usize].id) });
                    members.push(m);
                }
            }
        }
    }
    let tree = KdTree::new(quads.iter().map(|q| q.code).collect());
    Ok(QuadIndex {
        center,
        radius_deg,
        config: *config,
        stars,
        std_coords,
        quads,
        members,
        region,
        tree,
    })
}

//! Source association: against a catalog on the sky (external) and against
//! another observation of the same field (internal).

mod kdtree;

pub use kdtree::KdTree;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::astrometry::CatalogStar;
use crate::sky::{self, RaDec, ARCSEC_PER_DEG};
use crate::sourcefind::EventSource;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("reference set is empty")]
    EmptyReference,
    #[error("no anchor source in the {0} observation")]
    MissingAnchor(&'static str),
    #[error("match table: {0}")]
    Csv(#[from] csv::Error),
}

/// Nearest reference point for every query: `(index, distance)`.
pub fn kdtree_nn(queries: &[[f64; 2]], reference: &[[f64; 2]]) -> Result<Vec<(usize, f64)>, MatchError> {
    if reference.is_empty() {
        return Err(MatchError::EmptyReference);
    }
    let tree = KdTree::new(reference.to_vec());
    Ok(queries.iter().map(|q| tree.nearest(q).expect("non-empty")).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchFlag {
    Matched,
    Spurious,
}

/// One source's association result.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub source_id: usize,
    pub catalog_id: Option<u64>,
    /// Arcsec for external matches, pixels for internal ones. For an
    /// unmatched source: distance to the nearest unassigned catalog star.
    pub sep: f64,
    pub mag: Option<f64>,
    pub flags: MatchFlag,
}

/// Greedy one-to-one association by ascending separation within
/// `radius_arcsec`. Records come back in the order of `sources`.
pub fn external_match(sources: &[(usize, RaDec)], catalog: &[CatalogStar], radius_arcsec: f64) -> Vec<MatchRecord> {
    if sources.is_empty() {
        return Vec::new();
    }
    let center = sources[0].1;
    let plane = |w: RaDec| sky::project(center, w);
    let cat_xy: Vec<Option<[f64; 2]>> = catalog.iter().map(|c| plane(c.position())).collect();
    let visible: Vec<usize> = (0..catalog.len()).filter(|&i| cat_xy[i].is_some()).collect();
    let tree = KdTree::new(visible.iter().map(|&i| cat_xy[i].unwrap()).collect());
    let sep = |s: RaDec, c: &CatalogStar| sky::separation_deg(s, c.position()) * ARCSEC_PER_DEG;

    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (k, &(_, w)) in sources.iter().enumerate() {
        let Some(q) = plane(w) else { continue };
        for (j, _) in tree.within(&q, radius_arcsec * 1.01 + 1e-6) {
            let ci = visible[j];
            let d = sep(w, &catalog[ci]);
            if d <= radius_arcsec {
                pairs.push((d, k, ci));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut src_taken = vec![None; sources.len()];
    let mut cat_taken = vec![false; catalog.len()];
    for (d, k, ci) in pairs {
        if src_taken[k].is_none() && !cat_taken[ci] {
            src_taken[k] = Some((ci, d));
            cat_taken[ci] = true;
        }
    }

    let free: Vec<usize> = visible.iter().copied().filter(|&i| !cat_taken[i]).collect();
    let free_tree = KdTree::new(free.iter().map(|&i| cat_xy[i].unwrap()).collect());
    sources
        .iter()
        .enumerate()
        .map(|(k, &(id, w))| match src_taken[k] {
            Some((ci, d)) => MatchRecord {
                source_id: id,
                catalog_id: Some(catalog[ci].id),
                sep: d,
                mag: Some(catalog[ci].mag),
                flags: MatchFlag::Matched,
            },
            None => {
                let d = plane(w)
                    .and_then(|q| free_tree.nearest(&q))
                    .map_or(f64::INFINITY, |(j, _)| sep(w, &catalog[free[j]]));
                MatchRecord {
                    source_id: id,
                    catalog_id: None,
                    sep: d,
                    mag: None,
                    flags: MatchFlag::Spurious,
                }
            }
        })
        .collect()
}

/// Association between a source of the unsolved observation and one of the
/// solved observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InternalMatch {
    pub unsolved_id: usize,
    pub solved_id: usize,
    /// Distance between the two anchor-relative offsets, pixels.
    pub offset_distance: f64,
}

/// Largest source by area; ties go to more events, then lower id.
pub fn anchor_source(sources: &[EventSource]) -> Option<&EventSource> {
    sources.iter().max_by(|a, b| {
        a.area
            .cmp(&b.area)
            .then(a.n_events().cmp(&b.n_events()))
            .then(b.id.cmp(&a.id))
    })
}

fn offsets(sources: &[EventSource], anchor: &EventSource) -> Vec<[f64; 2]> {
    sources
        .iter()
        .map(|s| {
            [
                s.weighted_centroid[0] - anchor.weighted_centroid[0],
                s.weighted_centroid[1] - anchor.weighted_centroid[1],
            ]
        })
        .collect()
}

/// Match sources of two observations of one field by their offsets from
/// each observation's largest source. A pair is kept when both offset
/// components agree within `threshold_px`; each solved source is used once,
/// closest pair first. Unsolved sources without a partner are dropped.
pub fn internal_match(
    solved: &[EventSource],
    unsolved: &[EventSource],
    threshold_px: f64,
) -> Result<Vec<InternalMatch>, MatchError> {
    let a = anchor_source(solved).ok_or(MatchError::MissingAnchor("solved"))?;
    let b = anchor_source(unsolved).ok_or(MatchError::MissingAnchor("unsolved"))?;
    let so = offsets(solved, a);
    let uo = offsets(unsolved, b);
    let tree = KdTree::new(so.clone());
    let mut cands: Vec<(f64, usize, usize)> = uo
        .iter()
        .enumerate()
        .filter_map(|(k, q)| {
            let (j, d) = tree.nearest(q)?;
            let ok = (q[0] - so[j][0]).abs() <= threshold_px && (q[1] - so[j][1]).abs() <= threshold_px;
            ok.then_some((d, k, j))
        })
        .collect();
    cands.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let mut used = vec![false; solved.len()];
    let mut out = Vec::new();
    for (d, k, j) in cands {
        if !used[j] {
            used[j] = true;
            out.push(InternalMatch {
                unsolved_id: unsolved[k].id,
                solved_id: solved[j].id,
                offset_distance: d,
            });
        }
    }
    out.sort_by_key(|m| m.unsolved_id);
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct MatchRow {
    source_id: usize,
    catalog_id: Option<u64>,
    sep: f64,
    mag: Option<f64>,
    flags: MatchFlag,
}

pub fn write_matches(records: &[MatchRecord], path: &Path) -> Result<(), MatchError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(MatchRow {
            source_id: r.source_id,
            catalog_id: r.catalog_id,
            sep: r.sep,
            mag: r.mag,
            flags: r.flags,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_matches(path: &Path) -> Result<Vec<MatchRecord>, MatchError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: MatchRow = row?;
        out.push(MatchRecord {
            source_id: row.source_id,
            catalog_id: row.catalog_id,
            sep: row.sep,
            mag: row.mag,
            flags: row.flags,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sourcefind::SourceKind;

    fn cat(points: &[(f64, f64)]) -> Vec<CatalogStar> {
        points
            .iter()
            .enumerate()
            .map(|(i, &(ra, dec))| CatalogStar { id: 100 + i as u64, ra, dec, mag: 8.0 + i as f64 })
            .collect()
    }

    #[test]
    fn kdtree_nn_errors_on_empty() {
        assert!(matches!(kdtree_nn(&[[0.0, 0.0]], &[]), Err(MatchError::EmptyReference)));
    }

    #[test]
    fn exact_positions_match_at_zero() {
        let c = cat(&[(10.0, 5.0), (10.01, 5.0), (10.0, 5.02)]);
        let srcs: Vec<(usize, RaDec)> = c.iter().enumerate().map(|(i, s)| (i, s.position())).collect();
        let m = external_match(&srcs, &c, 4.0);
        for (i, r) in m.iter().enumerate() {
            assert_eq!(r.catalog_id, Some(100 + i as u64));
            assert!(r.sep < 1e-6);
            assert_eq!(r.flags, MatchFlag::Matched);
            assert_eq!(r.mag, Some(8.0 + i as f64));
        }
    }

    #[test]
    fn far_source_is_spurious() {
        let c = cat(&[(10.0, 5.0)]);
        let far = RaDec::new(10.0, 5.0 + 40.0 / 3600.0);
        let m = external_match(&[(0, far)], &c, 4.0);
        assert_eq!(m[0].flags, MatchFlag::Spurious);
        assert!(m[0].catalog_id.is_none());
        assert!((m[0].sep - 40.0).abs() < 1e-6);
    }

    #[test]
    fn greedy_is_one_to_one() {
        let c = cat(&[(10.0, 5.0)]);
        let a = RaDec::new(10.0, 5.0 + 1.0 / 3600.0);
        let b = RaDec::new(10.0, 5.0 - 2.0 / 3600.0);
        let m = external_match(&[(0, b), (1, a)], &c, 4.0);
        assert_eq!(m[1].catalog_id, Some(100));
        assert!(m[0].catalog_id.is_none());
        assert!(m[0].sep.is_infinite());
    }

    fn src(id: usize, x: f64, y: f64, area: usize) -> EventSource {
        EventSource {
            id,
            kind: SourceKind::Point,
            member_events: Vec::new(),
            weighted_centroid: [x, y],
            geometric_centroid: [x, y],
            area,
            equivalent_diameter: 0.0,
            extent: 1.0,
            event_rate: 1.0,
            on_count: 1,
            off_count: 0,
        }
    }

    #[test]
    fn internal_identity_and_shift() {
        let a = vec![src(0, 100.0, 100.0, 50), src(1, 150.0, 120.0, 5), src(2, 20.0, 300.0, 4)];
        let m = internal_match(&a, &a, 5.0).unwrap();
        assert_eq!(m.len(), 3);
        assert!(m.iter().all(|x| x.unsolved_id == x.solved_id && x.offset_distance == 0.0));
        let shifted: Vec<EventSource> = a
            .iter()
            .map(|s| src(s.id, s.weighted_centroid[0] + 3.0, s.weighted_centroid[1] + 2.0, s.area))
            .collect();
        let m = internal_match(&a, &shifted, 5.0).unwrap();
        assert_eq!(m.len(), 3);
        assert!(m.iter().all(|x| x.unsolved_id == x.solved_id));
    }

    #[test]
    fn internal_threshold_is_per_axis() {
        let a = vec![src(0, 0.0, 0.0, 50), src(1, 100.0, 0.0, 5)];
        let b = vec![src(0, 0.0, 0.0, 50), src(1, 104.0, 5.5, 5)];
        let m = internal_match(&a, &b, 5.0).unwrap();
        assert_eq!(m.len(), 1);
        assert!(internal_match(&[], &b, 5.0).is_err());
    }

    #[test]
    fn match_table_roundtrip() {
        let recs = vec![
            MatchRecord { source_id: 0, catalog_id: Some(5), sep: 0.25, mag: Some(9.5), flags: MatchFlag::Matched },
            MatchRecord { source_id: 1, catalog_id: None, sep: 17.0, mag: None, flags: MatchFlag::Spurious },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_matches(&recs, &p).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("source_id,catalog_id,sep,mag,flags"));
        assert_eq!(read_matches(&p).unwrap(), recs);
    }
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::index::admissible;
use super::quad::code_variants;
use super::{rotation_matrix, AstrometryError, CalibrationSolution, QuadIndex};
use crate::crossmatch::KdTree;
use crate::event::SensorGeometry;
use crate::sky::{self, RaDec, ARCSEC_PER_DEG};
use crate::sourcefind::EventSource;
use crate::starmap::AccumulationFrame;

/// Where catalog stars can appear in a star map: a star at map position `p`
/// sits at `p + v * tau` on the sensor for `tau` in `[0, span_s]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldRegion {
    pub width: f64,
    pub height: f64,
    /// Pixels per second.
    pub velocity: [f64; 2],
    pub span_s: f64,
}

impl FieldRegion {
    pub fn sensor(geometry: SensorGeometry) -> Self {
        FieldRegion {
            width: geometry.width as f64,
            height: geometry.height as f64,
            velocity: [0.0, 0.0],
            span_s: 0.0,
        }
    }

    pub fn for_frame(geometry: SensorGeometry, frame: &AccumulationFrame) -> Self {
        FieldRegion {
            velocity: [frame.theta.vx, frame.theta.vy],
            span_s: frame.window_s(),
            ..Self::sensor(geometry)
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let (mut lo, mut hi) = (0.0f64, self.span_s);
        for (k, extent) in [self.width, self.height].into_iter().enumerate() {
            let (a, b) = (-0.5 - p[k], extent - 0.5 - p[k]);
            let v = self.velocity[k];
            if v == 0.0 {
                if a > 0.0 || b < 0.0 {
                    return false;
                }
            } else {
                let (t0, t1) = if v > 0.0 { (a / v, b / v) } else { (b / v, a / v) };
                lo = lo.max(t0);
                hi = hi.min(t1);
            }
        }
        lo <= hi
    }

    /// `[x0, y0, x1, y1]` bounding box of the swept region.
    pub fn bounds(&self) -> [f64; 4] {
        let sx = -self.velocity[0] * self.span_s;
        let sy = -self.velocity[1] * self.span_s;
        [
            -0.5 + sx.min(0.0),
            -0.5 + sy.min(0.0),
            self.width - 0.5 + sx.max(0.0),
            self.height - 0.5 + sy.max(0.0),
        ]
    }

    /// Half diagonal of the bounding box, pixels.
    pub fn half_diagonal(&self) -> f64 {
        let b = self.bounds();
        0.5 * ((b[2] - b[0]).powi(2) + (b[3] - b[1]).powi(2)).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveHints {
    pub center: RaDec,
    /// Approximate arcsec per pixel.
    pub pixel_scale: f64,
    /// How far the true image centre may lie from `center`, degrees.
    pub search_radius_deg: f64,
    pub geometry: SensorGeometry,
    pub region: FieldRegion,
}

impl SolveHints {
    pub fn new(center: RaDec, pixel_scale: f64, search_radius_deg: f64, geometry: SensorGeometry) -> Self {
        SolveHints {
            center,
            pixel_scale,
            search_radius_deg,
            geometry,
            region: FieldRegion::sensor(geometry),
        }
    }

    pub fn with_frame(mut self, frame: &AccumulationFrame) -> Self {
        self.region = FieldRegion::for_frame(self.geometry, frame);
        self
    }

    /// Cone radius covering every catalog star that can appear, degrees.
    pub fn cone_radius_deg(&self) -> f64 {
        self.search_radius_deg + self.region.half_diagonal() * self.pixel_scale / ARCSEC_PER_DEG
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub code_tolerance: f64,
    pub match_radius_px: f64,
    pub rms_threshold_px: f64,
    pub max_sources: usize,
    pub max_hypotheses: usize,
    /// Allowed relative deviation of a hypothesis scale from the hint.
    pub scale_tolerance: f64,
    pub try_mirrored: bool,
    pub refine_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            code_tolerance: 0.01,
            match_radius_px: 2.0,
            rms_threshold_px: 1.5,
            max_sources: 50,
            max_hypotheses: 5000,
            scale_tolerance: 0.1,
            try_mirrored: true,
            refine_iterations: 3,
        }
    }
}

/// Accepted solution plus its verified correspondences.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveOutcome {
    pub solution: CalibrationSolution,
    /// `(source id, catalog id)` inlier pairs, sorted by source id.
    pub matches: Vec<(usize, u64)>,
    pub hypotheses: usize,
    /// Catalog stars expected inside the field under the solution.
    pub catalog_in_field: usize,
}

struct Hypothesis {
    sources: [usize; 4],
    stars: [usize; 4],
    mirrored: bool,
}

struct Verified {
    solution: CalibrationSolution,
    pairs: Vec<(usize, usize)>,
    rms_px: f64,
    in_field: usize,
}

/// Least-squares similarity `w = a z + b` in complex form, where `z` is the
/// pixel offset from the image centre (y negated when mirrored).
fn fit_similarity(
    pix: &[[f64; 2]],
    std: &[[f64; 2]],
    mirrored: bool,
    hints: &SolveHints,
) -> Option<CalibrationSolution> {
    let c = hints.geometry.center();
    let n = pix.len() as f64;
    let z: Vec<[f64; 2]> = pix
        .iter()
        .map(|p| [p[0] - c[0], if mirrored { c[1] - p[1] } else { p[1] - c[1] }])
        .collect();
    let zm = z.iter().fold([0.0, 0.0], |a, v| [a[0] + v[0] / n, a[1] + v[1] / n]);
    let wm = std.iter().fold([0.0, 0.0], |a, v| [a[0] + v[0] / n, a[1] + v[1] / n]);
    let (mut re, mut im, mut den) = (0.0, 0.0, 0.0);
    for (zi, wi) in z.iter().zip(std) {
        let (zx, zy) = (zi[0] - zm[0], zi[1] - zm[1]);
        let (wx, wy) = (wi[0] - wm[0], wi[1] - wm[1]);
        re += wx * zx + wy * zy;
        im += wy * zx - wx * zy;
        den += zx * zx + zy * zy;
    }
    if den <= 0.0 {
        return None;
    }
    let (ar, ai) = (re / den, im / den);
    let omega = (ar * ar + ai * ai).sqrt();
    if !(omega > 0.0) {
        return None;
    }
    let b = [wm[0] - (ar * zm[0] - ai * zm[1]), wm[1] - (ai * zm[0] + ar * zm[1])];
    let rotation = rotation_matrix(ai.atan2(ar), mirrored);
    Some(CalibrationSolution::new(
        rotation,
        omega,
        [b[0] / omega, b[1] / omega],
        hints.center,
        hints.geometry,
    ))
}

fn plausible(sol: &CalibrationSolution, hints: &SolveHints, cfg: &SolverConfig) -> bool {
    let rel = (sol.pixel_scale / hints.pixel_scale - 1.0).abs();
    let off = sol.pixel_scale * (sol.translation[0].hypot(sol.translation[1]));
    rel <= cfg.scale_tolerance && off <= hints.search_radius_deg * ARCSEC_PER_DEG
}

/// Greedy one-to-one pairing of catalog stars (projected under `sol`) with
/// sources within the match radius.
fn verify(
    sol: CalibrationSolution,
    src_pos: &[[f64; 2]],
    src_tree: &KdTree<2>,
    cat_std: &[[f64; 2]],
    hints: &SolveHints,
    cfg: &SolverConfig,
) -> Verified {
    let mut cands = Vec::new();
    let mut in_field = 0;
    for (si, s) in cat_std.iter().enumerate() {
        let p = sol.standard_to_pixel(*s);
        if !hints.region.contains(p) {
            continue;
        }
        in_field += 1;
        for (k, d) in src_tree.within(&p, cfg.match_radius_px) {
            cands.push((d, si, k));
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut star_used = vec![false; cat_std.len()];
    let mut src_used = vec![false; src_pos.len()];
    let mut pairs = Vec::new();
    let mut ss = 0.0;
    for (d, si, k) in cands {
        if star_used[si] || src_used[k] {
            continue;
        }
        star_used[si] = true;
        src_used[k] = true;
        pairs.push((k, si));
        ss += d * d;
    }
    let rms_px = if pairs.is_empty() { f64::INFINITY } else { (ss / pairs.len() as f64).sqrt() };
    Verified { solution: sol, pairs, rms_px, in_field }
}

fn required_inliers(n_sources: usize, in_field: usize) -> usize {
    4.max((0.5 * n_sources.min(in_field) as f64).ceil() as usize)
}

fn evaluate(
    h: &Hypothesis,
    src_pos: &[[f64; 2]],
    src_tree: &KdTree<2>,
    cat_std: &[[f64; 2]],
    hints: &SolveHints,
    cfg: &SolverConfig,
) -> Option<Verified> {
    let pix: Vec<[f64; 2]> = h.sources.iter().map(|&k| src_pos[k]).collect();
    let std: Vec<[f64; 2]> = h.stars.iter().map(|&k| cat_std[k]).collect();
    let sol = fit_similarity(&pix, &std, h.mirrored, hints)?;
    if !plausible(&sol, hints, cfg) {
        return None;
    }
    let mut best = verify(sol, src_pos, src_tree, cat_std, hints, cfg);
    if best.pairs.len() < 4 {
        return None;
    }
    for _ in 0..cfg.refine_iterations {
        let pix: Vec<[f64; 2]> = best.pairs.iter().map(|&(k, _)| src_pos[k]).collect();
        let std: Vec<[f64; 2]> = best.pairs.iter().map(|&(_, s)| cat_std[s]).collect();
        let Some(sol) = fit_similarity(&pix, &std, h.mirrored, hints) else { break };
        let next = verify(sol, src_pos, src_tree, cat_std, hints, cfg);
        let better = next.pairs.len() > best.pairs.len()
            || (next.pairs.len() == best.pairs.len() && next.rms_px < best.rms_px);
        if !better {
            break;
        }
        best = next;
    }
    Some(best)
}

/// Plate-solve `sources` (star-map positions) against `index`.
pub fn solve_field(
    sources: &[EventSource],
    index: &QuadIndex,
    hints: &SolveHints,
    config: &SolverConfig,
) -> Result<CalibrationSolution, AstrometryError> {
    solve_field_detailed(sources, index, hints, config).map(|o| o.solution)
}

pub fn solve_field_detailed(
    sources: &[EventSource],
    index: &QuadIndex,
    hints: &SolveHints,
    config: &SolverConfig,
) -> Result<SolveOutcome, AstrometryError> {
    if sources.len() < 4 {
        return Err(AstrometryError::TooFewSources { have: sources.len() });
    }
    let src_pos: Vec<[f64; 2]> = sources.iter().map(|s| s.weighted_centroid).collect();
    let src_tree = KdTree::new(src_pos.clone());
    let mut cat_std = Vec::with_capacity(index.region.len());
    let mut cat_ids = Vec::with_capacity(index.region.len());
    for s in &index.region {
        if let Some(p) = sky::project(hints.center, s.position()) {
            cat_std.push(p);
            cat_ids.push(s.id);
        }
    }
    // Quad members are looked up in the region list by id.
    let region_pos: std::collections::HashMap<u64, usize> =
        cat_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();

    let mut bright: Vec<usize> = (0..sources.len()).collect();
    bright.sort_by(|&a, &b| {
        sources[b]
            .event_rate
            .total_cmp(&sources[a].event_rate)
            .then(sources[a].id.cmp(&sources[b].id))
    });
    bright.truncate(config.max_sources);

    let tol = config.code_tolerance;
    let (smin, smax) = index.config.scale_range_arcsec;
    let range_px = (
        smin / (hints.pixel_scale * (1.0 + config.scale_tolerance)),
        smax / (hints.pixel_scale * (1.0 - config.scale_tolerance).max(1e-9)),
    );
    let parities: &[bool] = if config.try_mirrored { &[false, true] } else { &[false] };
    let mut hyps: Vec<Hypothesis> = Vec::new();
    let nb = bright.len();
    'outer: for l in 3..nb {
        for i in 0..l {
            for j in i + 1..l {
                for k in j + 1..l {
                    let ids = [bright[i], bright[j], bright[k], bright[l]];
                    let pts = ids.map(|s| src_pos[s]);
                    if !admissible(&pts, range_px) {
                        continue;
                    }
                    for &mirrored in parities {
                        let z = if mirrored { pts.map(|p| [p[0], -p[1]]) } else { pts };
                        for (code, order) in code_variants(&z, tol) {
                            for hit in index.lookup(&code, tol) {
                                let m = index.members[hit];
                                let stars = m.map(|s| region_pos.get(&index.stars[s as usize].id).copied());
                                let [Some(a), Some(b), Some(c), Some(d)] = stars else { continue };
                                hyps.push(Hypothesis {
                                    sources: order.map(|o| ids[o]),
                                    stars: [a, b, c, d],
                                    mirrored,
                                });
                                if hyps.len() >= config.max_hypotheses {
                                    break 'outer;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let tried = hyps.len();
    let results: Vec<Option<Verified>> = hyps
        .par_iter()
        .map(|h| evaluate(h, &src_pos, &src_tree, &cat_std, hints, config))
        .collect();
    let mut best: Option<(usize, Verified)> = None;
    for (ord, r) in results.into_iter().enumerate() {
        let Some(v) = r else { continue };
        if v.pairs.len() < required_inliers(sources.len(), v.in_field) || !(v.rms_px < config.rms_threshold_px) {
            continue;
        }
        let take = match &best {
            None => true,
            Some((_, b)) => v.pairs.len() > b.pairs.len() || (v.pairs.len() == b.pairs.len() && v.rms_px < b.rms_px),
        };
        if take {
            best = Some((ord, v));
        }
    }
    let Some((_, v)) = best else {
        return Err(AstrometryError::Unsolved { tried });
    };
    let mut solution = v.solution;
    solution.n_matched = v.pairs.len();
    solution.rms_residual = v.rms_px * solution.pixel_scale;
    let mut matches: Vec<(usize, u64)> = v.pairs.iter().map(|&(k, s)| (sources[k].id, cat_ids[s])).collect();
    matches.sort_unstable();
    Ok(SolveOutcome {
        solution,
        matches,
        hypotheses: tried,
        catalog_in_field: v.in_field,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::astrometry::{build_index, pixel_to_world, world_to_pixel, CatalogStar, IndexConfig};
    use crate::sourcefind::SourceKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn source(id: usize, p: [f64; 2], rate: f64) -> EventSource {
        EventSource {
            id,
            kind: SourceKind::Point,
            member_events: Vec::new(),
            weighted_centroid: p,
            geometric_centroid: p,
            area: 1,
            equivalent_diameter: 2.0 / std::f64::consts::PI.sqrt(),
            extent: 1.0,
            event_rate: rate,
            on_count: 0,
            off_count: 0,
        }
    }

    struct Field {
        catalog: Vec<CatalogStar>,
        truth: CalibrationSolution,
        sources: Vec<EventSource>,
    }

    fn field(seed: u64, angle_deg: f64, mirrored: bool, noise_px: f64) -> Field {
        let g = SensorGeometry::gen4_hd();
        let center = RaDec::new(80.0, -20.0);
        let truth = CalibrationSolution::new(
            rotation_matrix(angle_deg.to_radians(), mirrored),
            1.584,
            [12.0, -7.0],
            center,
            g,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut catalog = Vec::new();
        let mut sources = Vec::new();
        for i in 0..120 {
            let p = [rng.random_range(-400.0..1680.0), rng.random_range(-400.0..1120.0)];
            let w = pixel_to_world(p, &truth);
            let mag = rng.random_range(6.0..13.0);
            catalog.push(CatalogStar { id: 1000 + i, ra: w.ra, dec: w.dec, mag });
            if p[0] >= 0.0 && p[0] < 1280.0 && p[1] >= 0.0 && p[1] < 720.0 {
                let jitter = [rng.random_range(-1.0..1.0) * noise_px, rng.random_range(-1.0..1.0) * noise_px];
                let id = sources.len();
                sources.push(source(id, [p[0] + jitter[0], p[1] + jitter[1]], 10f64.powf(-0.4 * mag) * 1e6));
            }
        }
        Field { catalog, truth, sources }
    }

    fn hints() -> SolveHints {
        SolveHints::new(RaDec::new(80.0, -20.0), 1.6, 0.2, SensorGeometry::gen4_hd())
    }

    fn solve(f: &Field) -> Result<SolveOutcome, AstrometryError> {
        let h = hints();
        let idx = build_index(&f.catalog, h.center, h.cone_radius_deg(), &IndexConfig::default()).unwrap();
        solve_field_detailed(&f.sources, &idx, &h, &SolverConfig::default())
    }

    #[test]
    fn recovers_rotated_field() {
        let f = field(1, 15.0, false, 0.2);
        let out = solve(&f).unwrap();
        let s = out.solution;
        assert!((s.pixel_scale - 1.584).abs() < 0.01, "{}", s.pixel_scale);
        assert!(s.n_matched >= 4 && s.rms_residual < 1.5 * s.pixel_scale);
        assert!(!s.is_mirrored());
        for p in [[0.0, 0.0], [640.0, 360.0], [1279.0, 719.0]] {
            let a = pixel_to_world(p, &s);
            let b = pixel_to_world(p, &f.truth);
            assert!(sky::separation_deg(a, b) * ARCSEC_PER_DEG < 1.0);
        }
    }

    #[test]
    fn recovers_mirrored_field() {
        let f = field(2, 200.0, true, 0.1);
        let s = solve(&f).unwrap().solution;
        assert!(s.is_mirrored());
        assert!((s.pixel_scale - 1.584).abs() < 0.01);
        let w = pixel_to_world([100.0, 600.0], &s);
        let p = world_to_pixel(w, &f.truth).unwrap();
        assert!((p[0] - 100.0).abs() < 0.5 && (p[1] - 600.0).abs() < 0.5);
    }

    #[test]
    fn too_few_sources() {
        let f = field(3, 0.0, false, 0.0);
        let h = hints();
        let idx = build_index(&f.catalog, h.center, h.cone_radius_deg(), &IndexConfig::default()).unwrap();
        assert!(matches!(
            solve_field(&f.sources[..3], &idx, &h, &SolverConfig::default()),
            Err(AstrometryError::TooFewSources { have: 3 })
        ));
    }

    #[test]
    fn random_sources_do_not_solve() {
        let f = field(4, 0.0, false, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let junk: Vec<EventSource> = (0..40)
            .map(|i| source(i, [rng.random_range(0.0..1280.0), rng.random_range(0.0..720.0)], 1.0 + i as f64))
            .collect();
        let h = hints();
        let idx = build_index(&f.catalog, h.center, h.cone_radius_deg(), &IndexConfig::default()).unwrap();
        assert!(matches!(
            solve_field(&junk, &idx, &h, &SolverConfig::default()),
            Err(AstrometryError::Unsolved { .. })
        ));
    }

    #[test]
    fn matched_ids_invariant_under_nuisance_transforms() {
        let base = solve(&field(5, 0.0, false, 0.0)).unwrap();
        let ids = |o: &SolveOutcome| {
            let mut v: Vec<u64> = o.matches.iter().map(|m| m.1).collect();
            v.sort_unstable();
            v
        };
        for (angle, mirrored) in [(33.0, false), (147.0, true), (290.0, false)] {
            let o = solve(&field(5, angle, mirrored, 0.0)).unwrap();
            assert_eq!(ids(&o), ids(&base), "angle {angle} mirrored {mirrored}");
            assert_eq!(o.solution.is_mirrored(), mirrored);
        }
    }

    #[test]
    fn swept_region_membership() {
        let r = FieldRegion { width: 100.0, height: 50.0, velocity: [10.0, 0.0], span_s: 2.0 };
        assert!(r.contains([50.0, 10.0]));
        assert!(r.contains([-15.0, 10.0]));
        assert!(!r.contains([-25.0, 10.0]));
        assert!(!r.contains([50.0, 60.0]));
        assert_eq!(r.bounds(), [-20.5, -0.5, 99.5, 49.5]);
    }
}

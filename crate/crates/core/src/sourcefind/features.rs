use std::collections::BTreeMap;

use super::{EventSource, SourceKind};
use crate::event::EventStream;
use crate::starmap::{AccumulationFrame, PolarityMode};

/// Features of the source made of `members` (indices into `stream`).
/// Centroids are reported in sensor pixel coordinates.
pub fn extract_features(members: &[u32], frame: &AccumulationFrame, stream: &EventStream) -> EventSource {
    let events = stream.events();
    let mut weights: BTreeMap<usize, f64> = BTreeMap::new();
    let (mut on, mut off) = (0usize, 0usize);
    for &m in members {
        let e = &events[m as usize];
        match e.p.sign() {
            1 => on += 1,
            _ => off += 1,
        }
        let Some(pix) = frame.pixel_of(e) else { continue };
        let b = match frame.mode {
            PolarityMode::Dual => e.p.sign() as f64,
            PolarityMode::MonoOn => 1.0,
        };
        *weights.entry(pix).or_insert(0.0) += b;
    }
    let pixels: Vec<(i64, i64, f64)> = weights
        .iter()
        .map(|(&p, &w)| {
            let (x, y) = frame.coords(p);
            (x as i64, y as i64, w.abs())
        })
        .collect();
    let mut source = pixel_features(&pixels);
    source.geometric_centroid = frame.to_sensor(source.geometric_centroid[0], source.geometric_centroid[1]);
    source.weighted_centroid = frame.to_sensor(source.weighted_centroid[0], source.weighted_centroid[1]);
    source.member_events = members.to_vec();
    source.on_count = on;
    source.off_count = off;
    source.event_rate = members.len() as f64 / frame.window_s();
    source
}

/// Geometry-only features from `(x, y, |weight|)` pixels in frame coordinates.
pub(crate) fn pixel_features(pixels: &[(i64, i64, f64)]) -> EventSource {
    let area = pixels.len();
    let n = area.max(1) as f64;
    let gx = pixels.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let gy = pixels.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    let wsum: f64 = pixels.iter().map(|p| p.2).sum();
    let weighted = if wsum > 0.0 {
        [
            pixels.iter().map(|p| p.0 as f64 * p.2).sum::<f64>() / wsum,
            pixels.iter().map(|p| p.1 as f64 * p.2).sum::<f64>() / wsum,
        ]
    } else {
        [gx, gy]
    };
    let pts: Vec<[i64; 2]> = pixels.iter().map(|p| [p.0, p.1]).collect();
    let r = enclosing_radius(&pts);
    let extent = if area == 0 {
        0.0
    } else {
        (area as f64 / (std::f64::consts::PI * (r + 0.5).powi(2))).clamp(0.0, 1.0)
    };
    EventSource {
        id: 0,
        kind: SourceKind::Point,
        member_events: Vec::new(),
        weighted_centroid: weighted,
        geometric_centroid: [gx, gy],
        area,
        equivalent_diameter: 2.0 * (area as f64 / std::f64::consts::PI).sqrt(),
        extent,
        event_rate: 0.0,
        on_count: 0,
        off_count: 0,
    }
}

fn cross(o: [i64; 2], a: [i64; 2], b: [i64; 2]) -> i64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Strictly convex hull (monotone chain).
fn convex_hull(points: &[[i64; 2]]) -> Vec<[i64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<[i64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[i64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Radius of the minimum enclosing circle of pixel centres.
pub(crate) fn enclosing_radius(points: &[[i64; 2]]) -> f64 {
    let hull: Vec<[f64; 2]> = convex_hull(points).iter().map(|p| [p[0] as f64, p[1] as f64]).collect();
    if hull.is_empty() {
        return 0.0;
    }
    let inside = |c: [f64; 2], r: f64, p: [f64; 2]| (p[0] - c[0]).hypot(p[1] - c[1]) <= r + 1e-9;
    let mut c = hull[0];
    let mut r = 0.0;
    for i in 1..hull.len() {
        if inside(c, r, hull[i]) {
            continue;
        }
        c = hull[i];
        r = 0.0;
        for j in 0..i {
            if inside(c, r, hull[j]) {
                continue;
            }
            c = [(hull[i][0] + hull[j][0]) / 2.0, (hull[i][1] + hull[j][1]) / 2.0];
            r = (hull[i][0] - c[0]).hypot(hull[i][1] - c[1]);
            for k in 0..j {
                if inside(c, r, hull[k]) {
                    continue;
                }
                c = circumcenter(hull[i], hull[j], hull[k]);
                r = (hull[i][0] - c[0]).hypot(hull[i][1] - c[1]);
            }
        }
    }
    r
}

fn circumcenter(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> [f64; 2] {
    let d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]));
    let a2 = a[0] * a[0] + a[1] * a[1];
    let b2 = b[0] * b[0] + b[1] * b[1];
    let c2 = c[0] * c[0] + c[1] * c[1];
    [
        (a2 * (b[1] - c[1]) + b2 * (c[1] - a[1]) + c2 * (a[1] - b[1])) / d,
        (a2 * (c[0] - b[0]) + b2 * (a[0] - c[0]) + c2 * (b[0] - a[0])) / d,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Event, Polarity, SensorGeometry};
    use crate::starmap::{accumulate, VelocityHypothesis};
    use proptest::prelude::*;

    #[test]
    fn single_pixel_source() {
        let evs: Vec<Event> = (0..4).map(|i| Event::new(i * 500_000, 7, 9, Polarity::On)).collect();
        let s = EventStream::new(evs, SensorGeometry::new(20, 20).unwrap(), None).unwrap();
        let f = accumulate(&s, VelocityHypothesis::default(), 0, 2_000_000, PolarityMode::Dual).unwrap();
        let src = extract_features(&[0, 1, 2, 3], &f, &s);
        assert_eq!(src.area, 1);
        assert_eq!(src.event_rate, 2.0);
        assert_eq!((src.on_count, src.off_count), (4, 0));
        assert_eq!(src.extent, 1.0);
        assert_eq!(src.weighted_centroid, [7.0, 9.0]);
    }

    #[test]
    fn uniform_square_centroids_agree() {
        let px: Vec<(i64, i64, f64)> = (0..25).map(|i| (10 + i % 5, 20 + i / 5, 3.0)).collect();
        let s = pixel_features(&px);
        assert_eq!(s.geometric_centroid, [12.0, 22.0]);
        assert_eq!(s.weighted_centroid, [12.0, 22.0]);
        assert!((s.equivalent_diameter - 2.0 * (25.0 / std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert!(s.extent > 0.0 && s.extent < 1.0);
    }

    #[test]
    fn asymmetric_moments() {
        let px = vec![(0, 0, 1.0), (1, 0, 3.0), (2, 0, 0.0), (0, 1, 4.0)];
        let s = pixel_features(&px);
        assert_eq!(s.geometric_centroid, [0.75, 0.25]);
        // Hand moments: sum w = 8, sum w x = 3, sum w y = 4.
        assert!((s.weighted_centroid[0] - 3.0 / 8.0).abs() < 1e-12);
        assert!((s.weighted_centroid[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_fall_back_to_geometric() {
        let px = vec![(0, 0, 0.0), (2, 0, 0.0)];
        assert_eq!(pixel_features(&px).weighted_centroid, [1.0, 0.0]);
    }

    fn brute_radius(points: &[[i64; 2]]) -> f64 {
        // Smallest circle through 2 or 3 points that contains everything.
        let f: Vec<[f64; 2]> = points.iter().map(|p| [p[0] as f64, p[1] as f64]).collect();
        let covers = |c: [f64; 2], r: f64| f.iter().all(|p| (p[0] - c[0]).hypot(p[1] - c[1]) <= r + 1e-7);
        let mut best = if f.len() == 1 { 0.0 } else { f64::INFINITY };
        for i in 0..f.len() {
            for j in i + 1..f.len() {
                let c = [(f[i][0] + f[j][0]) / 2.0, (f[i][1] + f[j][1]) / 2.0];
                let r = (f[i][0] - c[0]).hypot(f[i][1] - c[1]);
                if r < best && covers(c, r) {
                    best = r;
                }
                for k in j + 1..f.len() {
                    if cross(points[i], points[j], points[k]) == 0 {
                        continue;
                    }
                    let c = circumcenter(f[i], f[j], f[k]);
                    let r = (f[i][0] - c[0]).hypot(f[i][1] - c[1]);
                    if r < best && covers(c, r) {
                        best = r;
                    }
                }
            }
        }
        best
    }

    proptest! {
        #[test]
        fn enclosing_circle_matches_brute_force(pts in prop::collection::btree_set((0i64..15, 0i64..15), 1..25)) {
            let pts: Vec<[i64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            prop_assert!((enclosing_radius(&pts) - brute_radius(&pts)).abs() < 1e-6);
        }

        #[test]
        fn features_translate(pts in prop::collection::btree_map((0i64..30, 0i64..30), 0.0f64..9.0, 1..40),
                              dx in -50i64..50, dy in -50i64..50) {
            let a: Vec<(i64, i64, f64)> = pts.iter().map(|(&(x, y), &w)| (x, y, w)).collect();
            let b: Vec<(i64, i64, f64)> = a.iter().map(|&(x, y, w)| (x + dx, y + dy, w)).collect();
            let (fa, fb) = (pixel_features(&a), pixel_features(&b));
            for k in 0..2 {
                let d = [dx, dy][k] as f64;
                prop_assert!((fb.geometric_centroid[k] - fa.geometric_centroid[k] - d).abs() < 1e-9);
                prop_assert!((fb.weighted_centroid[k] - fa.weighted_centroid[k] - d).abs() < 1e-9);
            }
            prop_assert_eq!(fa.area, fb.area);
            prop_assert!((fa.extent - fb.extent).abs() < 1e-9);
        }
    }
}

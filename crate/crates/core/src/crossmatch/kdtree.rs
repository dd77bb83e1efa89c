/// Static k-d tree over `D`-dimensional points with exact queries.
///
/// Nodes are laid out implicitly: the subtree over `order[lo..hi]` stores
/// its splitting point at the midpoint, split along the widest axis.
#[derive(Clone, Debug)]
pub struct KdTree<const D: usize> {
    points: Vec<[f64; D]>,
    order: Vec<u32>,
    axis: Vec<u8>,
}

fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for k in 0..D {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

impl<const D: usize> KdTree<D> {
    pub fn new(points: Vec<[f64; D]>) -> Self {
        let n = points.len();
        let mut tree = KdTree {
            points,
            order: (0..n as u32).collect(),
            axis: vec![0; n],
        };
        tree.build(0, n);
        tree
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= 1 {
            return;
        }
        let pts = &self.points;
        let mut best = (0usize, -1.0f64);
        for k in 0..D {
            let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.order[lo..hi] {
                let v = pts[i as usize][k];
                mn = mn.min(v);
                mx = mx.max(v);
            }
            if mx - mn > best.1 {
                best = (k, mx - mn);
            }
        }
        let k = best.0;
        let mid = (lo + hi) / 2;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            pts[a as usize][k].total_cmp(&pts[b as usize][k]).then(a.cmp(&b))
        });
        self.axis[mid] = k as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64; D] {
        &self.points[i]
    }

    /// Nearest point as `(index, distance)`; ties go to the lower index.
    pub fn nearest(&self, q: &[f64; D]) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        self.nearest_in(q, 0, self.points.len(), &mut best);
        Some((best.1, best.0.sqrt()))
    }

    fn nearest_in(&self, q: &[f64; D], lo: usize, hi: usize, best: &mut (f64, usize)) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.order[mid] as usize;
        let d = dist2(q, &self.points[i]);
        if d < best.0 || (d == best.0 && i < best.1) {
            *best = (d, i);
        }
        if hi - lo == 1 {
            return;
        }
        let k = self.axis[mid] as usize;
        let diff = q[k] - self.points[i][k];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.nearest_in(q, near.0, near.1, best);
        if diff * diff <= best.0 {
            self.nearest_in(q, far.0, far.1, best);
        }
    }

    /// All points within `radius`, sorted by `(distance, index)`.
    pub fn within(&self, q: &[f64; D], radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        if !self.points.is_empty() && radius >= 0.0 {
            self.within_in(q, radius * radius, 0, self.points.len(), &mut out);
        }
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out.into_iter().map(|(i, d2)| (i, d2.sqrt())).collect()
    }

    fn within_in(&self, q: &[f64; D], r2: f64, lo: usize, hi: usize, out: &mut Vec<(usize, f64)>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.order[mid] as usize;
        let d = dist2(q, &self.points[i]);
        if d <= r2 {
            out.push((i, d));
        }
        if hi - lo == 1 {
            return;
        }
        let k = self.axis[mid] as usize;
        let diff = q[k] - self.points[i][k];
        if diff <= 0.0 || diff * diff <= r2 {
            self.within_in(q, r2, lo, mid, out);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.within_in(q, r2, mid + 1, hi, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute<const D: usize>(pts: &[[f64; D]], q: &[f64; D]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in pts.iter().enumerate() {
            let d = dist2(q, p);
            if d < best.1 {
                best = (i, d);
            }
        }
        (best.0, best.1.sqrt())
    }

    #[test]
    fn exact_hit_and_single_point() {
        let t = KdTree::new(vec![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        assert_eq!(t.nearest(&[3.0, 4.0]), Some((1, 0.0)));
        let t = KdTree::new(vec![[1.0, 1.0]]);
        for q in [[0.0, 0.0], [100.0, -3.0]] {
            assert_eq!(t.nearest(&q).unwrap().0, 0);
        }
        assert!(KdTree::<2>::new(Vec::new()).nearest(&[0.0, 0.0]).is_none());
    }

    #[test]
    fn ties_prefer_lower_index() {
        let t = KdTree::new(vec![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(t.nearest(&[0.0, 0.0]).unwrap().0, 0);
        assert_eq!(t.nearest(&[1.0, 0.0]).unwrap().0, 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn nearest_matches_brute_force(
            pts in prop::collection::vec((-50i32..50, -50i32..50), 1..1000),
            qs in prop::collection::vec((-60.0f64..60.0, -60.0f64..60.0), 1..20),
        ) {
            let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x as f64, y as f64]).collect();
            let t = KdTree::new(pts.clone());
            for (x, y) in qs {
                let q = [x.round(), y];
                prop_assert_eq!(t.nearest(&q).unwrap(), brute(&pts, &q));
            }
        }

        #[test]
        fn within_matches_brute_force(
            pts in prop::collection::vec(prop::array::uniform4(0.0f64..1.0), 1..300),
            q in prop::array::uniform4(0.0f64..1.0), r in 0.0f64..0.5,
        ) {
            let t = KdTree::new(pts.clone());
            let mut want: Vec<(usize, f64)> = pts.iter().enumerate()
                .map(|(i, p)| (i, dist2(&q, p)))
                .filter(|&(_, d)| d <= r * r)
                .collect();
            want.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let want: Vec<(usize, f64)> = want.into_iter().map(|(i, d)| (i, d.sqrt())).collect();
            prop_assert_eq!(t.within(&q, r), want);
        }
    }
}

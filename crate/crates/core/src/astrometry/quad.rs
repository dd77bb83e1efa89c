use serde::{Deserialize, Serialize};

/// `[xc, yc, xd, yd]`: positions of C and D in the frame where A = (0, 0)
/// and B = (1, 1).
pub type QuadCode = [f64; 4];

/// Index record: a code and the catalog ids of its stars in A, B, C, D order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadHash {
    pub code: QuadCode,
    pub star_ids: [u64; 4],
}

fn d2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Most separated pair; the first pair in `(i, j)` order wins ties.
pub(crate) fn diameter_pair(p: &[[f64; 2]; 4]) -> (usize, usize, f64) {
    let mut best = (0, 1, d2(p[0], p[1]));
    for i in 0..4 {
        for j in i + 1..4 {
            let d = d2(p[i], p[j]);
            if d > best.2 {
                best = (i, j, d);
            }
        }
    }
    (best.0, best.1, best.2.sqrt())
}

/// True when `c` lies strictly inside the circle with diameter `ab`.
pub(crate) fn inside_diameter_circle(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    // Angle acb is obtuse.
    (a[0] - c[0]) * (b[0] - c[0]) + (a[1] - c[1]) * (b[1] - c[1]) < 0.0
}

/// Position of `z` in the frame with `a` at (0, 0) and `b` at (1, 1):
/// `w = (z - a) / (b - a) * (1 + i)` in complex notation.
fn unit_frame(a: [f64; 2], b: [f64; 2], z: [f64; 2]) -> [f64; 2] {
    let (bx, by) = (b[0] - a[0], b[1] - a[1]);
    let (zx, zy) = (z[0] - a[0], z[1] - a[1]);
    let den = bx * bx + by * by;
    let qx = (zx * bx + zy * by) / den;
    let qy = (zy * bx - zx * by) / den;
    [qx - qy, qx + qy]
}

/// Canonical code of four points and their order as `[A, B, C, D]`.
///
/// A and B are the most separated pair, swapped if needed so that
/// `xc + xd <= 1`; C and D are ordered by `(x, y)`.
pub fn quad_code(p: &[[f64; 2]; 4]) -> (QuadCode, [usize; 4]) {
    let (i, j, _) = diameter_pair(p);
    let rest: Vec<usize> = (0..4).filter(|&k| k != i && k != j).collect();
    let (mut a, mut b) = (i, j);
    let mut c = unit_frame(p[a], p[b], p[rest[0]]);
    let mut d = unit_frame(p[a], p[b], p[rest[1]]);
    if c[0] + d[0] > 1.0 {
        std::mem::swap(&mut a, &mut b);
        c = unit_frame(p[a], p[b], p[rest[0]]);
        d = unit_frame(p[a], p[b], p[rest[1]]);
    }
    let (mut ci, mut di) = (rest[0], rest[1]);
    if (d[0], d[1]) < (c[0], c[1]) {
        std::mem::swap(&mut c, &mut d);
        std::mem::swap(&mut ci, &mut di);
    }
    ([c[0], c[1], d[0], d[1]], [a, b, ci, di])
}

/// Alternative codes for the same quad that a small perturbation could
/// produce: A/B swapped near the `xc + xd = 1` boundary, C/D swapped when
/// their x coordinates nearly tie. Each entry pairs a code with the order.
pub(crate) fn code_variants(p: &[[f64; 2]; 4], tol: f64) -> Vec<(QuadCode, [usize; 4])> {
    let (code, order) = quad_code(p);
    let mut out = vec![(code, order)];
    let mk = |o: [usize; 4]| {
        let c = unit_frame(p[o[0]], p[o[1]], p[o[2]]);
        let d = unit_frame(p[o[0]], p[o[1]], p[o[3]]);
        ([c[0], c[1], d[0], d[1]], o)
    };
    let swap_ab = (code[0] + code[2] - 1.0).abs() < 2.0 * tol;
    let swap_cd = (code[0] - code[2]).abs() < 2.0 * tol;
    let [a, b, c, d] = order;
    if swap_ab {
        out.push(mk([b, a, c, d]));
        out.push(mk([b, a, d, c]));
    }
    if swap_cd {
        out.push(mk([a, b, d, c]));
    }
    out
}

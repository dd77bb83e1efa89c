use serde::{Deserialize, Serialize};

use super::{AccumulationFrame, StarMapError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SigmaClipParams {
    pub n_sigma: f64,
    pub max_iter: usize,
}

impl Default for SigmaClipParams {
    fn default() -> Self {
        SigmaClipParams {
            n_sigma: 3.0,
            max_iter: 10,
        }
    }
}

/// Set pixels of a `width x height` grid, as sorted raster indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<usize>,
}

impl Mask {
    pub fn new(width: usize, height: usize, mut pixels: Vec<usize>) -> Self {
        pixels.sort_unstable();
        pixels.dedup();
        Mask { width, height, pixels }
    }

    pub fn from_bools(width: usize, height: usize, bits: &[bool]) -> Self {
        let pixels = bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
        Mask { width, height, pixels }
    }

    pub fn contains(&self, pixel: usize) -> bool {
        self.pixels.binary_search(&pixel).is_ok()
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Iterative two-sided clip of `|values|`.
///
/// The background set starts as every pixel; each pass keeps the values
/// within `n_sigma` standard deviations of its mean. Pixels whose magnitude
/// exceeds `mean + n_sigma * std` of the final background are significant.
pub fn sigma_clip_mask(frame: &AccumulationFrame, n_sigma: f64, max_iter: usize) -> Result<Mask, StarMapError> {
    let (thr, _) = clip_threshold(&frame.values, n_sigma, max_iter)?;
    let pixels = frame
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > thr)
        .map(|(i, _)| i)
        .collect();
    Ok(Mask {
        width: frame.width,
        height: frame.height,
        pixels,
    })
}

/// Threshold on `|v|` and the iterations used. Zeros are handled as one
/// block so cost scales with the number of non-zero pixels.
pub(crate) fn clip_threshold(values: &[f64], n_sigma: f64, max_iter: usize) -> Result<(f64, usize), StarMapError> {
    if !(n_sigma > 0.0) || max_iter < 1 {
        return Err(StarMapError::InvalidClip { n_sigma, max_iter });
    }
    let mut nz: Vec<f64> = values.iter().map(|v| v.abs()).filter(|&v| v != 0.0).collect();
    nz.sort_by(f64::total_cmp);
    let zeros = values.len() - nz.len();
    if values.is_empty() {
        return Ok((f64::INFINITY, 0));
    }

    // Current background: zeros (if included) plus nz[lo..hi].
    let mut state = (zeros > 0, 0usize, nz.len());
    let stats = |(with_zero, lo, hi): (bool, usize, usize)| -> (f64, f64) {
        let nzero = if with_zero { zeros } else { 0 };
        let n = (nzero + hi - lo) as f64;
        if n == 0.0 {
            return (0.0, 0.0);
        }
        let mean = nz[lo..hi].iter().sum::<f64>() / n;
        let ss = nzero as f64 * mean * mean + nz[lo..hi].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        (mean, (ss / n).sqrt())
    };
    let mut iters = 0;
    for _ in 0..max_iter {
        iters += 1;
        let (m, s) = stats(state);
        let lim = n_sigma * s;
        let cur = &nz[state.1..state.2];
        let next = (
            state.0 && (0.0 - m).abs() <= lim,
            state.1 + cur.partition_point(|&v| v < m && (v - m).abs() > lim),
            state.1 + cur.partition_point(|&v| v <= m || (v - m).abs() <= lim),
        );
        let next = (next.0, next.1, next.2.max(next.1));
        if next == state {
            break;
        }
        state = next;
    }
    let (m, s) = stats(state);
    Ok((m + n_sigma * s, iters))
}

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AccumulationFrame, PolarityMode, Splat, StarMapError, VelocityHypothesis};

/// Metadata written next to an exported star map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSidecar {
    pub theta: VelocityHypothesis,
    pub t_start_us: u64,
    pub integration_us: u64,
    pub mode: PolarityMode,
    pub splat: Splat,
    pub width: usize,
    pub height: usize,
    /// Sensor coordinates of frame pixel (0, 0) are `(-pad[0], -pad[1])`.
    pub pad: [usize; 2],
    /// Grey level of a zero pixel.
    pub zero_level: u16,
    pub out_of_bounds: usize,
}

/// 16-bit binary PGM (`P5`, big-endian) with `value + 32768` per pixel,
/// clamped to the u16 range, plus a `<path>.json` sidecar.
pub fn write_pgm(frame: &AccumulationFrame, path: &Path) -> Result<FrameSidecar, StarMapError> {
    const ZERO: u16 = 32768;
    let mut buf = Vec::with_capacity(frame.len() * 2 + 32);
    write!(buf, "P5\n{} {}\n65535\n", frame.width, frame.height)?;
    for &v in &frame.values {
        let g = (v.round() + ZERO as f64).clamp(0.0, 65535.0) as u16;
        buf.extend_from_slice(&g.to_be_bytes());
    }
    std::fs::write(path, buf)?;
    let side = FrameSidecar {
        theta: frame.theta,
        t_start_us: frame.t_start,
        integration_us: frame.integration,
        mode: frame.mode,
        splat: frame.splat,
        width: frame.width,
        height: frame.height,
        pad: frame.pad,
        zero_level: ZERO,
        out_of_bounds: frame.out_of_bounds,
    };
    let mut side_path = path.as_os_str().to_owned();
    side_path.push(".json");
    std::fs::write(side_path, serde_json::to_string_pretty(&side)? + "\n")?;
    Ok(side)
}

//! Plate solving and pixel/world projection.
//!
//! The calibration model maps a pixel `p` to standard coordinates about the
//! field centre `X_cw` as `xi_eta = omega * (R (p - c) + d)` (arcsec), where
//! `c` is the image centre, then de-projects gnomonically to RA/Dec.

mod calibrate;
mod index;
mod quad;
mod solve;

pub use calibrate::{
    calibrate_mpmi, calibrate_spsi, mpmi_windows, solve_frame, MountTrack, MpmiConfig, MpmiResult, MpmiWindow,
    SpsiProjector,
};
pub use index::{build_index, IndexConfig, QuadIndex};
pub use quad::{quad_code, QuadCode, QuadHash};
pub use solve::{solve_field, solve_field_detailed, FieldRegion, SolveHints, SolveOutcome, SolverConfig};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::SensorGeometry;
use crate::sky::{self, RaDec};

#[derive(Debug, Error)]
pub enum AstrometryError {
    #[error("too few stars: {have} < {need}")]
    TooFewStars { have: usize, need: usize },
    #[error("too few sources: {have} < 4")]
    TooFewSources { have: usize },
    #[error("no verified hypothesis ({tried} tried)")]
    Unsolved { tried: usize },
    #[error("timestamp {t_us} us outside mount track [{start}, {end}]")]
    OutsideTrack { t_us: u64, start: u64, end: u64 },
    #[error("no window solved out of {}", windows.len())]
    NoWindowSolved { windows: Vec<MpmiWindow> },
    #[error("invalid mount track: {0}")]
    InvalidTrack(String),
    #[error(transparent)]
    Sources(#[from] crate::sourcefind::ClusterError),
    #[error("invalid catalog entry {id}: {reason}")]
    InvalidCatalog { id: u64, reason: String },
    #[error("catalog i/o: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    StarMap(#[from] crate::starmap::StarMapError),
}

/// One catalog entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogStar {
    pub id: u64,
    #[serde(rename = "ra_deg")]
    pub ra: f64,
    #[serde(rename = "dec_deg")]
    pub dec: f64,
    pub mag: f64,
}

impl CatalogStar {
    pub fn position(&self) -> RaDec {
        RaDec {
            ra: self.ra,
            dec: self.dec,
        }
    }

    fn validate(&self) -> Result<(), AstrometryError> {
        if !(0.0..360.0).contains(&self.ra) || !(-90.0..=90.0).contains(&self.dec) || !self.mag.is_finite() {
            return Err(AstrometryError::InvalidCatalog {
                id: self.id,
                reason: format!("ra {} dec {} mag {}", self.ra, self.dec, self.mag),
            });
        }
        Ok(())
    }
}

pub fn read_catalog(path: &Path) -> Result<Vec<CatalogStar>, AstrometryError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let star: CatalogStar = rec?;
        star.validate()?;
        out.push(star);
    }
    Ok(out)
}

pub fn write_catalog(stars: &[CatalogStar], path: &Path) -> Result<(), AstrometryError> {
    let mut w = csv::Writer::from_path(path)?;
    for s in stars {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

/// Catalog stars within `radius_deg` of `center`.
pub fn stars_in_cone(catalog: &[CatalogStar], center: RaDec, radius_deg: f64) -> Vec<CatalogStar> {
    catalog
        .iter()
        .filter(|s| sky::separation_deg(center, s.position()) <= radius_deg)
        .copied()
        .collect()
}

/// Rotation by `angle` (radians), optionally composed with a y-mirror.
pub fn rotation_matrix(angle: f64, mirrored: bool) -> [[f64; 2]; 2] {
    let (s, c) = angle.sin_cos();
    if mirrored {
        [[c, s], [s, -c]]
    } else {
        [[c, -s], [s, c]]
    }
}

/// Pixel-to-world mapping parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSolution {
    /// Row-major 2x2 orthonormal matrix.
    pub rotation: [[f64; 2]; 2],
    /// Arcsec per pixel.
    pub pixel_scale: f64,
    /// Offset of the field centre from the image centre, in pixels along the world axes.
    pub translation: [f64; 2],
    pub field_center: RaDec,
    /// Pixel coordinates of the image centre `c`.
    pub image_center: [f64; 2],
    /// Arcsec.
    pub rms_residual: f64,
    pub n_matched: usize,
}

impl CalibrationSolution {
    pub fn new(
        rotation: [[f64; 2]; 2],
        pixel_scale: f64,
        translation: [f64; 2],
        field_center: RaDec,
        geometry: SensorGeometry,
    ) -> Self {
        CalibrationSolution {
            rotation,
            pixel_scale,
            translation,
            field_center,
            image_center: geometry.center(),
            rms_residual: 0.0,
            n_matched: 0,
        }
    }

    pub fn determinant(&self) -> f64 {
        let r = self.rotation;
        r[0][0] * r[1][1] - r[0][1] * r[1][0]
    }

    /// Rotation angle of the proper part of `R`, radians.
    pub fn rotation_angle(&self) -> f64 {
        self.rotation[1][0].atan2(self.rotation[0][0])
    }

    pub fn is_mirrored(&self) -> bool {
        self.determinant() < 0.0
    }

    /// Standard coordinates (arcsec) about `field_center` of a pixel.
    pub fn pixel_to_standard(&self, p: [f64; 2]) -> [f64; 2] {
        let q = [p[0] - self.image_center[0], p[1] - self.image_center[1]];
        let r = self.rotation;
        [
            self.pixel_scale * (r[0][0] * q[0] + r[0][1] * q[1] + self.translation[0]),
            self.pixel_scale * (r[1][0] * q[0] + r[1][1] * q[1] + self.translation[1]),
        ]
    }

    pub fn standard_to_pixel(&self, s: [f64; 2]) -> [f64; 2] {
        let v = [
            s[0] / self.pixel_scale - self.translation[0],
            s[1] / self.pixel_scale - self.translation[1],
        ];
        let r = self.rotation;
        [
            self.image_center[0] + r[0][0] * v[0] + r[1][0] * v[1],
            self.image_center[1] + r[0][1] * v[0] + r[1][1] * v[1],
        ]
    }

    /// World position of the image centre pixel.
    pub fn image_center_world(&self) -> RaDec {
        pixel_to_world(self.image_center, self)
    }
}

pub fn pixel_to_world(p: [f64; 2], sol: &CalibrationSolution) -> RaDec {
    sky::deproject(sol.field_center, sol.pixel_to_standard(p))
}

/// `None` when `w` lies on or beyond the tangent plane's horizon.
pub fn world_to_pixel(w: RaDec, sol: &CalibrationSolution) -> Option<[f64; 2]> {
    sky::project(sol.field_center, w).map(|s| sol.standard_to_pixel(s))
}

pub fn read_solution(path: &Path) -> Result<CalibrationSolution, AstrometryError> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

pub fn write_solution(sol: &CalibrationSolution, path: &Path) -> Result<(), AstrometryError> {
    std::fs::write(path, serde_json::to_string_pretty(sol)? + "\n")?;
    Ok(())
}

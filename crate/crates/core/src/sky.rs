//! Spherical helpers: gnomonic (tangent-plane) projection and separations.
//!
//! Standard coordinates are in arcseconds with xi pointing east and eta north.

use serde::{Deserialize, Serialize};

pub const ARCSEC_PER_DEG: f64 = 3600.0;
const ARCSEC_PER_RAD: f64 = 180.0 * 3600.0 / std::f64::consts::PI;

/// Right ascension and declination in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaDec {
    pub ra: f64,
    pub dec: f64,
}

impl RaDec {
    pub fn new(ra: f64, dec: f64) -> Self {
        RaDec { ra: wrap_ra(ra), dec }
    }
}

pub fn wrap_ra(ra: f64) -> f64 {
    let r = ra.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Gnomonic projection of `world` about `center`. `None` for points on or
/// behind the tangent plane's horizon.
pub fn project(center: RaDec, world: RaDec) -> Option<[f64; 2]> {
    let (a0, d0) = (center.ra.to_radians(), center.dec.to_radians());
    let (a, d) = (world.ra.to_radians(), world.dec.to_radians());
    let da = a - a0;
    let cos_c = d0.sin() * d.sin() + d0.cos() * d.cos() * da.cos();
    if cos_c <= 1e-12 {
        return None;
    }
    let xi = d.cos() * da.sin() / cos_c;
    let eta = (d0.cos() * d.sin() - d0.sin() * d.cos() * da.cos()) / cos_c;
    Some([xi * ARCSEC_PER_RAD, eta * ARCSEC_PER_RAD])
}

/// Inverse gnomonic projection.
pub fn deproject(center: RaDec, std: [f64; 2]) -> RaDec {
    let (a0, d0) = (center.ra.to_radians(), center.dec.to_radians());
    let xi = std[0] / ARCSEC_PER_RAD;
    let eta = std[1] / ARCSEC_PER_RAD;
    let denom = d0.cos() - eta * d0.sin();
    let ra = a0 + xi.atan2(denom);
    let dec = (d0.sin() + eta * d0.cos()).atan2((xi * xi + denom * denom).sqrt());
    RaDec::new(ra.to_degrees(), dec.to_degrees())
}

/// Great-circle separation in degrees (haversine form).
pub fn separation_deg(a: RaDec, b: RaDec) -> f64 {
    let (a1, d1) = (a.ra.to_radians(), a.dec.to_radians());
    let (a2, d2) = (b.ra.to_radians(), b.dec.to_radians());
    let h = ((d2 - d1) / 2.0).sin().powi(2) + d1.cos() * d2.cos() * ((a2 - a1) / 2.0).sin().powi(2);
    (2.0 * h.sqrt().min(1.0).asin()).to_degrees()
}

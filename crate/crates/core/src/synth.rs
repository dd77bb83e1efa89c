//! Synthetic star-field event generator with per-event ground truth.
//!
//! The mount points at `M(t)`, moving in RA/Dec at a constant rate from
//! `field_center`. The camera sees standard coordinates about `M(t)`, shifted
//! by a fixed mount offset plus optional wind jitter:
//! `pixel = c + R^T ((std(M(t), star) - offset - J(t)) / omega)`.
//!
//! Each star emits ON events ahead of its PSF centre and OFF events behind it
//! (Rayleigh along-track, Gaussian across-track) at a rate
//! `gain * 10^(-0.4 mag) * (1 - exp(-|u| / u_c))` where `u` is the pixel
//! speed. OFF events are scaled by `on_off_asymmetry` and may be delayed to
//! form a wake.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::astrometry::{rotation_matrix, CalibrationSolution, CatalogStar, MountTrack};
use crate::event::{Event, EventStream, Polarity, SensorGeometry};
use crate::sky::{self, RaDec, ARCSEC_PER_DEG};

/// Expected events in a window above which a star counts as detectable.
pub const DETECTABLE_EVENTS: f64 = 30.0;

/// Label for noise events in [`GroundTruth::labels`].
pub const LABEL_NOISE: i64 = -1;
/// Label for hot-pixel events.
pub const LABEL_HOT: i64 = -2;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("star {separation_deg:.3} deg from centre exceeds the 2 deg narrow-field limit")]
    OutOfField { separation_deg: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneStar {
    pub ra: f64,
    pub dec: f64,
    pub mag: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HotPixel {
    pub x: u16,
    pub y: u16,
    /// Events per second.
    pub rate: f64,
}

/// Random-walk jitter on the pointing centre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindConfig {
    /// Standard deviation of each step per axis, arcsec.
    pub step_arcsec: f64,
    #[serde(default = "default_tick")]
    pub tick_s: f64,
    #[serde(default)]
    pub start_s: f64,
    #[serde(default)]
    pub end_s: Option<f64>,
}

fn default_tick() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub stars: Vec<SceneStar>,
    /// Mount rate in deg/s: `[along RA on the sky, along Dec]`.
    pub slew_velocity: [f64; 2],
    pub duration_s: f64,
    pub field_center: RaDec,
    pub pixel_scale: f64,
    #[serde(default = "default_psf")]
    pub psf_sigma: f64,
    /// Events per pixel per second.
    #[serde(default = "default_noise")]
    pub noise_rate: f64,
    #[serde(default)]
    pub hot_pixels: Vec<HotPixel>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub rotation_deg: f64,
    #[serde(default)]
    pub mirrored: bool,
    #[serde(default)]
    pub geometry: SensorGeometry,
    /// Events per second for a magnitude-0 star at saturated speed.
    #[serde(default = "default_gain")]
    pub gain: f64,
    #[serde(default = "default_asym")]
    pub on_off_asymmetry: f64,
    /// Mean OFF-event delay in microseconds; 0 disables the wake.
    #[serde(default)]
    pub wake_delay_us: f64,
    #[serde(default)]
    pub wind: Option<WindConfig>,
    /// Residual emission as a fraction of flux, independent of motion.
    #[serde(default)]
    pub scintillation: f64,
    #[serde(default = "default_jitter")]
    pub timestamp_jitter_us: f64,
    /// Speed (px/s) below which a moving star produces little contrast
    /// change: the rise term of [`SyntheticScene::motion_gain`].
    #[serde(default = "default_bandwidth")]
    pub bandwidth_speed: f64,
    /// Speed (px/s) above which pixel response limits the event yield: the
    /// roll-off term of [`SyntheticScene::motion_gain`].
    #[serde(default = "default_rolloff")]
    pub rolloff_speed: f64,
    /// Constant pointing error of the mount, arcsec on the sky.
    #[serde(default)]
    pub mount_offset_arcsec: [f64; 2],
}

fn default_psf() -> f64 {
    1.0
}
fn default_noise() -> f64 {
    0.002
}
fn default_gain() -> f64 {
    1e6
}
fn default_asym() -> f64 {
    0.7
}
fn default_jitter() -> f64 {
    500.0
}
fn default_bandwidth() -> f64 {
    0.25
}
fn default_rolloff() -> f64 {
    100.0
}

impl SyntheticScene {
    /// A scene with defaults for everything but the essentials.
    pub fn new(stars: Vec<SceneStar>, field_center: RaDec, slew_velocity: [f64; 2], duration_s: f64) -> Self {
        SyntheticScene {
            stars,
            slew_velocity,
            duration_s,
            field_center,
            pixel_scale: 1.584,
            psf_sigma: default_psf(),
            noise_rate: default_noise(),
            hot_pixels: Vec::new(),
            seed: 0,
            rotation_deg: 0.0,
            mirrored: false,
            geometry: SensorGeometry::gen4_hd(),
            gain: default_gain(),
            on_off_asymmetry: default_asym(),
            wake_delay_us: 0.0,
            wind: None,
            scintillation: 0.0,
            timestamp_jitter_us: default_jitter(),
            bandwidth_speed: default_bandwidth(),
            rolloff_speed: default_rolloff(),
            mount_offset_arcsec: [0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidScene(m.to_string()));
        if !(self.pixel_scale > 0.0) {
            return bad("pixel_scale must be > 0");
        }
        if !(self.psf_sigma > 0.0) {
            return bad("psf_sigma must be > 0");
        }
        if !(self.duration_s > 0.0) {
            return bad("duration must be > 0");
        }
        if !(self.noise_rate >= 0.0)
            || !(self.gain >= 0.0)
            || !(self.on_off_asymmetry >= 0.0)
            || !(self.wake_delay_us >= 0.0)
            || !(self.scintillation >= 0.0)
            || !(self.timestamp_jitter_us >= 0.0)
            || self.hot_pixels.iter().any(|h| !(h.rate >= 0.0))
        {
            return bad("rates must be >= 0");
        }
        if !(self.bandwidth_speed > 0.0) || !(self.rolloff_speed > 0.0) {
            return bad("bandwidth_speed and rolloff_speed must be > 0");
        }
        if self.field_center.dec.abs() > 80.0 {
            return bad("field centre must lie within 80 deg of the equator");
        }
        if self.geometry.validate().is_err() {
            return bad("invalid geometry");
        }
        if self.hot_pixels.iter().any(|h| !self.geometry.contains(h.x as i64, h.y as i64)) {
            return bad("hot pixel outside sensor");
        }
        if let Some(w) = &self.wind {
            if !(w.step_arcsec >= 0.0) || !(w.tick_s > 0.0) {
                return bad("wind step must be >= 0 and tick > 0");
            }
        }
        Ok(())
    }

    pub fn duration_us(&self) -> u64 {
        (self.duration_s * 1e6).round() as u64
    }

    /// Catalog entries for every scene star, ids equal to star indices.
    pub fn catalog(&self) -> Vec<CatalogStar> {
        self.stars
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let p = RaDec::new(s.ra, s.dec);
                CatalogStar {
                    id: i as u64,
                    ra: p.ra,
                    dec: p.dec,
                    mag: s.mag,
                }
            })
            .collect()
    }

    /// Reported mount centre at time `t` seconds.
    /// Sets the starting pointing so that the mount passes `target` at the
    /// stream midpoint.
    pub fn center_midpoint_on(&mut self, target: RaDec) {
        let h = 0.5 * self.duration_s;
        let dec0 = target.dec - self.slew_velocity[1] * h;
        let ra0 = target.ra - self.slew_velocity[0] * h / target.dec.to_radians().cos();
        self.field_center = RaDec::new(ra0, dec0);
    }

    /// Fraction of the flux turned into events by a star moving at `speed`
    /// px/s: `(1 - exp(-u/u_c)) / (1 + u/u_r)`. Slow stars barely change
    /// pixel intensity; fast ones outrun the pixel response.
    pub fn motion_gain(&self, speed: f64) -> f64 {
        (1.0 - (-speed / self.bandwidth_speed).exp()) / (1.0 + speed / self.rolloff_speed)
    }

    pub fn mount_center(&self, t: f64) -> RaDec {
        let dec = self.field_center.dec + self.slew_velocity[1] * t;
        let ra = self.field_center.ra + self.slew_velocity[0] * t / dec.to_radians().cos();
        RaDec::new(ra, dec)
    }

    /// Pixel-to-sky rotation `R`.
    pub fn rotation(&self) -> [[f64; 2]; 2] {
        rotation_matrix(self.rotation_deg.to_radians(), self.mirrored)
    }

    fn flux(&self, mag: f64) -> f64 {
        self.gain * 10f64.powf(-0.4 * mag)
    }
}

/// Star positions scattered uniformly in a square of `half_width_deg`
/// around `center`, magnitudes uniform in `mag_range`.
pub fn random_star_field(
    center: RaDec,
    half_width_deg: [f64; 2],
    n: usize,
    mag_range: (f64, f64),
    seed: u64,
) -> Vec<SceneStar> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let xi = rng.random_range(-half_width_deg[0]..half_width_deg[0]) * ARCSEC_PER_DEG;
            let eta = rng.random_range(-half_width_deg[1]..half_width_deg[1]) * ARCSEC_PER_DEG;
            let w = sky::deproject(center, [xi, eta]);
            SceneStar {
                ra: w.ra,
                dec: w.dec,
                mag: rng.random_range(mag_range.0..mag_range.1),
            }
        })
        .collect()
}

/// Gnomonic projection of `world` into the pixel frame of a camera pointed at
/// `center` with scale `pixel_scale` (arcsec/px) and rotation `rotation` (rad).
pub fn project_star(
    world: RaDec,
    center: RaDec,
    pixel_scale: f64,
    rotation: f64,
    geometry: SensorGeometry,
) -> Result<[f64; 2], SynthError> {
    let sep = sky::separation_deg(center, world);
    if sep >= 2.0 {
        return Err(SynthError::OutOfField { separation_deg: sep });
    }
    let sol = CalibrationSolution::new(rotation_matrix(rotation, false), pixel_scale, [0.0, 0.0], center, geometry);
    let s = sky::project(center, world).expect("within 2 deg");
    Ok(sol.standard_to_pixel(s))
}

/// Everything needed to evaluate the true scene at any time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scene: SyntheticScene,
    /// Apparent star velocity in px/s at the stream midpoint.
    pub field_velocity: [f64; 2],
    /// Origin per event: star index, [`LABEL_NOISE`] or [`LABEL_HOT`].
    pub labels: Vec<i64>,
    /// Cumulative wind offset (arcsec) per tick; empty without wind.
    pub jitter: Vec<[f64; 2]>,
    /// Emitted events per star.
    pub star_counts: Vec<usize>,
    pub warnings: Vec<String>,
}

impl GroundTruth {
    /// Pointing offset (mount offset plus wind) in arcsec at `t` seconds.
    pub fn pointing_offset(&self, t: f64) -> [f64; 2] {
        let o = self.scene.mount_offset_arcsec;
        match (&self.scene.wind, self.jitter.is_empty()) {
            (Some(w), false) => {
                let k = ((t / w.tick_s).floor().max(0.0) as usize).min(self.jitter.len() - 1);
                [o[0] + self.jitter[k][0], o[1] + self.jitter[k][1]]
            }
            _ => o,
        }
    }

    /// Exact calibration of the sensor at `t` seconds, about the reported mount centre.
    pub fn calibration_at(&self, t: f64) -> CalibrationSolution {
        let off = self.pointing_offset(t);
        let s = &self.scene;
        let mut sol = CalibrationSolution::new(
            s.rotation(),
            s.pixel_scale,
            [off[0] / s.pixel_scale, off[1] / s.pixel_scale],
            s.mount_center(t),
            s.geometry,
        );
        sol.n_matched = s.stars.len();
        sol
    }

    /// Continuous pixel position of star `i` at `t` seconds (may lie off-sensor).
    pub fn star_pixel(&self, i: usize, t: f64) -> Option<[f64; 2]> {
        let s = &self.scene.stars[i];
        crate::astrometry::world_to_pixel(RaDec::new(s.ra, s.dec), &self.calibration_at(t))
    }

    /// Reported mount centres at a fixed cadence covering the whole stream.
    pub fn mount_track(&self, cadence_us: u64) -> MountTrack {
        let end = self.scene.duration_us();
        let mut samples = Vec::new();
        let mut t = 0u64;
        loop {
            samples.push((t, self.scene.mount_center(t as f64 * 1e-6)));
            if t >= end {
                break;
            }
            t = (t + cadence_us).min(end);
        }
        MountTrack::new(samples).expect("monotone samples")
    }

    fn in_sensor(&self, p: [f64; 2]) -> bool {
        let g = self.scene.geometry;
        p[0] >= -0.5 && p[1] >= -0.5 && p[0] < g.width as f64 - 0.5 && p[1] < g.height as f64 - 0.5
    }

    /// Sample times (seconds) in `[t0, t1)` with star `i` on the sensor, 1 ms grid.
    fn visible_times(&self, i: usize, t0: f64, t1: f64) -> Vec<f64> {
        let n = (((t1 - t0) / 1e-3).ceil() as usize).max(1);
        (0..n)
            .map(|k| t0 + (k as f64 + 0.5) * (t1 - t0) / n as f64)
            .filter(|&t| self.star_pixel(i, t).is_some_and(|p| self.in_sensor(p)))
            .collect()
    }

    /// Expected number of events from star `i` emitted in `[t0, t1)` seconds.
    pub fn expected_events(&self, i: usize, t0: f64, t1: f64) -> f64 {
        let s = &self.scene;
        let n = (((t1 - t0) / 1e-3).ceil() as usize).max(1);
        let visible = self.visible_times(i, t0, t1).len() as f64 * (t1 - t0) / n as f64;
        let speed = (self.field_velocity[0].powi(2) + self.field_velocity[1].powi(2)).sqrt();
        let g = s.motion_gain(speed);
        s.flux(s.stars[i].mag) * (g * (1.0 + s.on_off_asymmetry) + s.scintillation) * visible
    }

    /// Where star `i` lands in a star map warped by the true field velocity to
    /// reference time `t_ref`, averaged over its visible samples in `[t0, t1)`.
    pub fn warped_position(&self, i: usize, t_ref: f64, t0: f64, t1: f64) -> Option<[f64; 2]> {
        let ts = self.visible_times(i, t0, t1);
        if ts.is_empty() {
            return None;
        }
        let v = self.field_velocity;
        let mut acc = [0.0, 0.0];
        for &t in &ts {
            let p = self.star_pixel(i, t)?;
            acc[0] += p[0] - v[0] * (t - t_ref);
            acc[1] += p[1] - v[1] * (t - t_ref);
        }
        Some([acc[0] / ts.len() as f64, acc[1] / ts.len() as f64])
    }
}

fn apparent_velocity(scene: &SyntheticScene, t: f64) -> [f64; 2] {
    let h = 0.05;
    let anchor = scene.mount_center(t);
    let sol = |tt: f64| {
        CalibrationSolution::new(scene.rotation(), scene.pixel_scale, [0.0, 0.0], scene.mount_center(tt), scene.geometry)
    };
    let a = crate::astrometry::world_to_pixel(anchor, &sol(t - h)).unwrap();
    let b = crate::astrometry::world_to_pixel(anchor, &sol(t + h)).unwrap();
    [(b[0] - a[0]) / (2.0 * h), (b[1] - a[1]) / (2.0 * h)]
}

fn wind_track(scene: &SyntheticScene, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let Some(w) = &scene.wind else {
        return Vec::new();
    };
    let ticks = (scene.duration_s / w.tick_s).ceil() as usize + 1;
    let step = Normal::new(0.0, w.step_arcsec.max(0.0)).expect("finite step");
    let end = w.end_s.unwrap_or(f64::INFINITY);
    let mut track = Vec::with_capacity(ticks);
    let mut cur = [0.0, 0.0];
    for k in 0..ticks {
        track.push(cur);
        let t = k as f64 * w.tick_s;
        if t >= w.start_s && t < end {
            cur[0] += step.sample(rng);
            cur[1] += step.sample(rng);
        }
    }
    track
}

struct Emitter<'a> {
    truth: &'a GroundTruth,
    dir: [f64; 2],
    sigma: f64,
    t_end: u64,
    jitter: Option<Normal<f64>>,
    wake: Option<Exp<f64>>,
}

impl Emitter<'_> {
    /// Offset from the PSF centre: signed Rayleigh along `dir`, Gaussian across;
    /// `along == 0` gives an isotropic Gaussian. Truncated to 3 sigma.
    fn offset(&self, rng: &mut ChaCha8Rng, along: f64) -> [f64; 2] {
        let n = Normal::new(0.0, self.sigma).unwrap();
        loop {
            let (a, c) = if along == 0.0 {
                (n.sample(rng), n.sample(rng))
            } else {
                let u: f64 = rng.random::<f64>();
                let z = self.sigma * (-2.0 * (1.0 - u).ln()).sqrt();
                (along * z, n.sample(rng))
            };
            if a * a + c * c <= 9.0 * self.sigma * self.sigma {
                let d = if along == 0.0 && self.dir == [0.0, 0.0] { [1.0, 0.0] } else { self.dir };
                return [a * d[0] - c * d[1], a * d[1] + c * d[0]];
            }
        }
    }

    fn emit(&self, rng: &mut ChaCha8Rng, star: usize, t: f64, p: Polarity, along: f64, out: &mut Vec<Event>) {
        let Some(c) = self.truth.star_pixel(star, t) else {
            return;
        };
        let o = self.offset(rng, along);
        let x = (c[0] + o[0]).round();
        let y = (c[1] + o[1]).round();
        let mut te = t * 1e6;
        if let (Polarity::Off, Some(w)) = (p, &self.wake) {
            te += w.sample(rng);
        }
        if let Some(j) = &self.jitter {
            te += j.sample(rng);
        }
        let g = self.truth.scene.geometry;
        if te < 0.0 || !g.contains(x as i64, y as i64) {
            return;
        }
        let te = te.floor() as u64;
        if te >= self.t_end {
            return;
        }
        out.push(Event::new(te, x as u16, y as u16, p));
    }
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean).unwrap().sample(rng) as u64
    }
}

/// Generate an event stream and its ground truth. Deterministic in the scene seed.
pub fn synthesize(scene: &SyntheticScene) -> Result<(EventStream, GroundTruth), SynthError> {
    scene.validate()?;
    let n_stars = scene.stars.len() as u64;
    let stream_rng = |k: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(scene.seed);
        r.set_stream(k);
        r
    };
    let jitter = wind_track(scene, &mut stream_rng(n_stars + 2));
    let mut truth = GroundTruth {
        scene: scene.clone(),
        field_velocity: apparent_velocity(scene, scene.duration_s / 2.0),
        labels: Vec::new(),
        jitter,
        star_counts: vec![0; scene.stars.len()],
        warnings: Vec::new(),
    };
    let v = truth.field_velocity;
    let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
    let dir = if speed > 0.0 { [v[0] / speed, v[1] / speed] } else { [0.0, 0.0] };
    let g = scene.motion_gain(speed);
    let t_end = scene.duration_us();
    let emitter = Emitter {
        truth: &truth,
        dir,
        sigma: scene.psf_sigma,
        t_end,
        jitter: (scene.timestamp_jitter_us > 0.0).then(|| Normal::new(0.0, scene.timestamp_jitter_us).unwrap()),
        wake: (scene.wake_delay_us > 0.0).then(|| Exp::new(1.0 / scene.wake_delay_us).unwrap()),
    };

    let per_star: Vec<Vec<Event>> = (0..scene.stars.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(i as u64);
            let f = scene.flux(scene.stars[i].mag);
            let mut out = Vec::new();
            let dur = scene.duration_s;
            let n_on = poisson(&mut rng, f * g * dur);
            let n_off = poisson(&mut rng, f * g * scene.on_off_asymmetry * dur);
            let n_sc = poisson(&mut rng, f * scene.scintillation * dur);
            for _ in 0..n_on {
                let t = rng.random::<f64>() * dur;
                emitter.emit(&mut rng, i, t, Polarity::On, 1.0, &mut out);
            }
            for _ in 0..n_off {
                let t = rng.random::<f64>() * dur;
                emitter.emit(&mut rng, i, t, Polarity::Off, -1.0, &mut out);
            }
            for _ in 0..n_sc {
                let t = rng.random::<f64>() * dur;
                let p = if rng.random::<bool>() { Polarity::On } else { Polarity::Off };
                emitter.emit(&mut rng, i, t, p, 0.0, &mut out);
            }
            out
        })
        .collect();

    let geo = scene.geometry;
    let mut noise = Vec::new();
    {
        let mut rng = stream_rng(n_stars);
        let n = poisson(&mut rng, scene.noise_rate * geo.pixel_count() as f64 * scene.duration_s);
        for _ in 0..n {
            let t = rng.random_range(0..t_end.max(1));
            let x = rng.random_range(0..geo.width) as u16;
            let y = rng.random_range(0..geo.height) as u16;
            let p = if rng.random::<bool>() { Polarity::On } else { Polarity::Off };
            noise.push(Event::new(t, x, y, p));
        }
    }
    let mut hot = Vec::new();
    {
        let mut rng = stream_rng(n_stars + 1);
        for h in &scene.hot_pixels {
            if h.rate <= 0.0 {
                continue;
            }
            let period = 1e6 / h.rate;
            let mut t = rng.random::<f64>() * period;
            let mut on = true;
            while t < t_end as f64 {
                hot.push(Event::new(t as u64, h.x, h.y, if on { Polarity::On } else { Polarity::Off }));
                on = !on;
                t += period;
            }
        }
    }

    let mut tagged: Vec<(Event, i64)> = Vec::new();
    let mut counts = vec![0usize; scene.stars.len()];
    for (i, evs) in per_star.into_iter().enumerate() {
        counts[i] = evs.len();
        tagged.extend(evs.into_iter().map(|e| (e, i as i64)));
    }
    tagged.extend(noise.into_iter().map(|e| (e, LABEL_NOISE)));
    tagged.extend(hot.into_iter().map(|e| (e, LABEL_HOT)));
    tagged.sort_by_key(|(e, _)| e.t);

    let star_total: usize = counts.iter().sum();
    if !scene.stars.is_empty() && star_total == 0 {
        let msg = "no star produced events inside the sensor".to_string();
        log::warn!("{msg}");
        truth.warnings.push(msg);
    }
    truth.star_counts = counts;
    truth.labels = tagged.iter().map(|&(_, l)| l).collect();
    let events = tagged.into_iter().map(|(e, _)| e).collect();
    let stream = EventStream::new(events, geo, Some(scene.pixel_scale)).expect("generator emits valid events");
    Ok((stream, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_star(mag: f64, slew: [f64; 2]) -> SyntheticScene {
        let c = RaDec::new(150.0, 10.0);
        let mut s = SyntheticScene::new(vec![SceneStar { ra: 150.0, dec: 10.0, mag }], c, slew, 2.0);
        s.noise_rate = 0.0;
        s
    }

    #[test]
    fn empty_scene_is_empty() {
        let mut s = one_star(8.0, [0.01, 0.0]);
        s.stars.clear();
        let (stream, truth) = synthesize(&s).unwrap();
        assert!(stream.is_empty());
        assert!(truth.labels.is_empty());
    }

    #[test]
    fn stationary_star_stays_in_psf_support() {
        let mut s = one_star(5.0, [0.0, 0.0]);
        s.scintillation = 0.05;
        let (stream, truth) = synthesize(&s).unwrap();
        assert!(!stream.is_empty());
        let c = truth.star_pixel(0, 0.0).unwrap();
        let r = 3.0 * s.psf_sigma + 0.5f64.sqrt();
        for e in stream.events() {
            let d = ((e.x as f64 - c[0]).powi(2) + (e.y as f64 - c[1]).powi(2)).sqrt();
            assert!(d <= r, "event {e:?} at {d}");
        }
        s.scintillation = 0.0;
        assert!(synthesize(&s).unwrap().0.is_empty());
    }

    #[test]
    fn brighter_star_emits_more() {
        let c = RaDec::new(150.0, 10.0);
        let stars = vec![
            SceneStar { ra: 150.0, dec: 10.0, mag: 5.0 },
            SceneStar { ra: 150.0, dec: 10.05, mag: 10.0 },
        ];
        let mut s = SyntheticScene::new(stars, c, [0.001, 0.0], 2.0);
        s.noise_rate = 0.0;
        let (_, truth) = synthesize(&s).unwrap();
        assert!(truth.star_counts[0] > truth.star_counts[1]);
        assert!(truth.star_counts[1] > 0);
    }

    #[test]
    fn deterministic_and_labelled() {
        let mut s = one_star(7.0, [0.01, 0.003]);
        s.noise_rate = 0.01;
        s.hot_pixels.push(HotPixel { x: 3, y: 4, rate: 10.0 });
        s.wind = Some(WindConfig { step_arcsec: 0.5, tick_s: 0.01, start_s: 0.5, end_s: Some(1.0) });
        s.wake_delay_us = 2000.0;
        let (a, ta) = synthesize(&s).unwrap();
        let (b, tb) = synthesize(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.labels, tb.labels);
        assert_eq!(ta.labels.len(), a.len());
        let stars = ta.labels.iter().filter(|&&l| l >= 0).count();
        let noise = ta.labels.iter().filter(|&&l| l == LABEL_NOISE).count();
        let hot = ta.labels.iter().filter(|&&l| l == LABEL_HOT).count();
        assert_eq!(stars + noise + hot, a.len());
        assert!((19..=20).contains(&hot));
        s.seed = 99;
        assert_ne!(synthesize(&s).unwrap().0, a);
    }

    #[test]
    fn leading_edge_on_trailing_off() {
        let s = one_star(6.0, [0.002, 0.0]);
        let (stream, truth) = synthesize(&s).unwrap();
        let v = truth.field_velocity;
        let (mut on, mut off) = (Vec::new(), Vec::new());
        for (e, &l) in stream.events().iter().zip(&truth.labels) {
            assert_eq!(l, 0);
            let c = truth.star_pixel(0, e.t as f64 * 1e-6).unwrap();
            let along = ((e.x as f64 - c[0]) * v[0] + (e.y as f64 - c[1]) * v[1]) / v[0].hypot(v[1]);
            match e.p {
                Polarity::On => on.push(along),
                Polarity::Off => off.push(along),
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&on) > 0.5 && mean(&off) < -0.5, "{} {}", mean(&on), mean(&off));
        assert!(on.len() > off.len());
    }

    #[test]
    fn velocity_matches_pixel_motion() {
        let s = one_star(8.0, [0.0125, 0.0]);
        let (_, truth) = synthesize(&s).unwrap();
        let speed = truth.field_velocity[0].hypot(truth.field_velocity[1]);
        let want = 0.0125 * 3600.0 / 1.584;
        assert!((speed - want).abs() / want < 1e-3, "{speed} vs {want}");
        let a = truth.star_pixel(0, 0.5).unwrap();
        let b = truth.star_pixel(0, 1.5).unwrap();
        assert!((b[0] - a[0] - truth.field_velocity[0]).abs() < 0.05);
    }

    #[test]
    fn project_star_examples() {
        let g = SensorGeometry::gen4_hd();
        let c = RaDec::new(40.0, 0.0);
        let p = project_star(c, c, 1.584, 0.0, g).unwrap();
        assert_eq!(p, g.center());
        let east = RaDec::new(40.0 + 1.584 / 3600.0, 0.0);
        let p = project_star(east, c, 1.584, 0.0, g).unwrap();
        assert!((p[0] - g.center()[0] - 1.0).abs() < 1e-6 && (p[1] - g.center()[1]).abs() < 1e-9);
        assert!(project_star(RaDec::new(43.0, 0.0), c, 1.584, 0.0, g).is_err());
    }

    #[test]
    fn invalid_scene_rejected() {
        let mut s = one_star(8.0, [0.0, 0.0]);
        s.psf_sigma = 0.0;
        assert!(synthesize(&s).is_err());
    }
}

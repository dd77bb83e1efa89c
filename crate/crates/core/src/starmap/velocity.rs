use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{accumulate, sigma_clip_mask, PolarityMode, SigmaClipParams, StarMapError, VelocityHypothesis};
use crate::event::EventStream;
use crate::sourcefind::connected_components;

/// Frame length and spacing of the tracking frames, microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrationSchedule {
    pub frame_us: u64,
    pub interval_us: u64,
}

impl IntegrationSchedule {
    /// Above 0.07 deg/s.
    pub const FAST: Self = IntegrationSchedule {
        frame_us: 50_000,
        interval_us: 50_000,
    };
    /// Between 0.002 and 0.07 deg/s.
    pub const MEDIUM: Self = IntegrationSchedule {
        frame_us: 50_000,
        interval_us: 250_000,
    };
    /// Below 0.002 deg/s.
    pub const SLOW: Self = IntegrationSchedule {
        frame_us: 50_000,
        interval_us: 2_000_000,
    };

    /// Schedule for a slew speed in deg/s.
    pub fn for_speed(deg_per_s: f64) -> Self {
        let s = deg_per_s.abs();
        if s > 0.07 {
            Self::FAST
        } else if s >= 0.002 {
            Self::MEDIUM
        } else {
            Self::SLOW
        }
    }
}

/// How the tracking schedule is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleSelection {
    /// The first schedule, fastest to slowest, whose own estimate falls in
    /// its speed bracket; the fast-schedule result if none does.
    #[default]
    Auto,
    /// From a known nominal slew speed, deg/s.
    Nominal(f64),
    Fixed(IntegrationSchedule),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub clip: SigmaClipParams,
    /// Blobs with fewer events are ignored.
    pub min_blob_events: usize,
    /// Frames are taken within this distance of the stream midpoint.
    pub half_window_us: u64,
    pub outlier_sigma: f64,
    /// Passes of the outlier clip.
    pub max_clip_iter: usize,
    /// Smallest residual, pixels, at which a track point counts as an outlier.
    pub gate_px: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            clip: SigmaClipParams::default(),
            min_blob_events: 6,
            half_window_us: 3_000_000,
            outlier_sigma: 3.0,
            max_clip_iter: 10,
            gate_px: 3.0,
        }
    }
}

/// Largest blob in one tracking frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackState {
    pub position: [f64; 2],
    /// Area in pixels.
    pub extent: usize,
    /// Frame midpoint, microseconds.
    pub timestamp: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityEstimate {
    pub theta: VelocityHypothesis,
    pub schedule: IntegrationSchedule,
    pub tracks: Vec<TrackState>,
    /// Per-interval velocities, px/s.
    pub intervals: Vec<[f64; 2]>,
    pub rejected: usize,
}

/// Significant 8-connected blobs of one unwarped frame, skipping blobs that
/// touch the sensor border, largest first.
fn frame_blobs(stream: &EventStream, t0: u64, frame_us: u64, cfg: &TrackerConfig) -> Result<Vec<TrackState>, StarMapError> {
    let f = accumulate(stream, VelocityHypothesis::default(), t0, frame_us, PolarityMode::MonoOn)?;
    if f.n_indexed() == 0 {
        return Ok(Vec::new());
    }
    let mask = sigma_clip_mask(&f, cfg.clip.n_sigma, cfg.clip.max_iter)?;
    let mut blobs: Vec<(usize, f64, [f64; 2])> = Vec::new();
    for comp in connected_components(&mask) {
        let touches = comp.iter().any(|&p| {
            let (x, y) = f.coords(p);
            x == 0 || y == 0 || x + 1 == f.width || y + 1 == f.height
        });
        let weight: f64 = comp.iter().map(|&p| f.values[p].abs()).sum();
        if touches || weight < cfg.min_blob_events as f64 {
            continue;
        }
        let cx = comp.iter().map(|&p| f.coords(p).0 as f64 * f.values[p].abs()).sum::<f64>() / weight;
        let cy = comp.iter().map(|&p| f.coords(p).1 as f64 * f.values[p].abs()).sum::<f64>() / weight;
        blobs.push((comp.len(), weight, [cx, cy]));
    }
    // Stable sort keeps raster order among equal blobs.
    blobs.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.total_cmp(&a.1)));
    Ok(blobs
        .into_iter()
        .map(|(area, _, c)| TrackState {
            position: c,
            extent: area,
            timestamp: t0 + frame_us / 2,
        })
        .collect())
}

fn interval(a: &TrackState, b: &TrackState) -> [f64; 2] {
    let dt = (b.timestamp - a.timestamp) as f64 * 1e-6;
    [(b.position[0] - a.position[0]) / dt, (b.position[1] - a.position[1]) / dt]
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Velocity of a track as a line in (t, x, y), with the number of rejected
/// track points.
///
/// The largest blob is often a streak fragment whose centroid jitters along
/// the trail, and the track jumps between stars. Every pair of points
/// proposes a line; the line explaining the most points within
/// `gate_px` plus one streak length wins (longer baseline breaks ties).
/// Its members are refit by least squares, then points further than
/// `outlier_sigma` robust sigmas (at least `gate_px`) are dropped and the
/// rest refit until membership settles.
fn fit_track(tracks: &[TrackState], frame_us: u64, cfg: &TrackerConfig) -> Option<([f64; 2], usize)> {
    let t0 = tracks.first()?.timestamp;
    let ts: Vec<f64> = tracks.iter().map(|s| (s.timestamp - t0) as f64 * 1e-6).collect();
    let frame_s = frame_us as f64 * 1e-6;
    let resid = |v: [f64; 2], a: [f64; 2], k: usize| {
        let p = tracks[k].position;
        (p[0] - a[0] - v[0] * ts[k]).hypot(p[1] - a[1] - v[1] * ts[k])
    };
    let mut best: Option<(usize, f64, [f64; 2], [f64; 2])> = None;
    for i in 0..tracks.len() {
        for j in i + 1..tracks.len() {
            if ts[j] == ts[i] {
                continue;
            }
            let v = interval(&tracks[i], &tracks[j]);
            let a = [tracks[i].position[0] - v[0] * ts[i], tracks[i].position[1] - v[1] * ts[i]];
            let gate = cfg.gate_px + v[0].hypot(v[1]) * frame_s;
            let n = (0..tracks.len()).filter(|&k| resid(v, a, k) <= gate).count();
            let base = ts[j] - ts[i];
            if best.is_none_or(|(bn, bb, _, _)| n > bn || (n == bn && base > bb)) {
                best = Some((n, base, v, a));
            }
        }
    }
    let (_, _, mut v, mut a) = best?;
    let gate = cfg.gate_px + v[0].hypot(v[1]) * frame_s;
    let mut keep: Vec<bool> = (0..tracks.len()).map(|k| resid(v, a, k) <= gate).collect();
    let refit = |keep: &[bool], v: &mut [f64; 2], a: &mut [f64; 2]| -> bool {
        let n = keep.iter().filter(|&&k| k).count();
        if n < 2 {
            return false;
        }
        let tm = ts.iter().zip(keep).filter(|(_, &k)| k).map(|(t, _)| t).sum::<f64>() / n as f64;
        let stt: f64 = ts.iter().zip(keep).filter(|(_, &k)| k).map(|(t, _)| (t - tm).powi(2)).sum();
        if stt == 0.0 {
            return false;
        }
        for c in 0..2 {
            let pm = tracks.iter().zip(keep).filter(|(_, &m)| m).map(|(s, _)| s.position[c]).sum::<f64>() / n as f64;
            let stp: f64 = tracks
                .iter()
                .zip(&ts)
                .zip(keep)
                .filter(|(_, &m)| m)
                .map(|((s, t), _)| (t - tm) * (s.position[c] - pm))
                .sum();
            v[c] = stp / stt;
            a[c] = pm - v[c] * tm;
        }
        true
    };
    refit(&keep, &mut v, &mut a);
    for _ in 0..cfg.max_clip_iter {
        let r: Vec<f64> = (0..tracks.len()).filter(|&k| keep[k]).map(|k| resid(v, a, k)).collect();
        // Median radius of a 2-D isotropic Gaussian is sigma * sqrt(2 ln 2).
        let sigma = median(r) / (2.0 * std::f64::consts::LN_2).sqrt();
        let limit = (cfg.outlier_sigma * sigma).max(cfg.gate_px);
        let next: Vec<bool> = (0..tracks.len()).map(|k| resid(v, a, k) <= limit).collect();
        if next == keep || !refit(&next, &mut v, &mut a) {
            break;
        }
        keep = next;
    }
    Some((v, keep.iter().filter(|&&k| !k).count()))
}

/// Constant field velocity from the motion of the largest blob across
/// unwarped frames within `half_window_us` of the stream midpoint, fitted
/// as a robust line through the track positions.
pub fn estimate_field_velocity(
    stream: &EventStream,
    schedule: IntegrationSchedule,
    cfg: &TrackerConfig,
) -> Result<VelocityEstimate, StarMapError> {
    if schedule.frame_us == 0 || schedule.interval_us == 0 {
        return Err(StarMapError::ZeroIntegration);
    }
    let duration = stream.duration_us();
    if duration < 2 * schedule.frame_us {
        return Err(StarMapError::StreamTooShort {
            duration_us: duration,
            frame_us: schedule.frame_us,
        });
    }
    let mid = duration / 2;
    let lo = mid.saturating_sub(cfg.half_window_us);
    let hi = (mid + cfg.half_window_us).min(duration + 1);
    let mut starts = Vec::new();
    let mut t = lo;
    while t + schedule.frame_us <= hi {
        starts.push(t);
        t += schedule.interval_us;
    }
    let frames: Vec<Vec<TrackState>> = starts
        .par_iter()
        .map(|&t0| frame_blobs(stream, t0, schedule.frame_us, cfg))
        .collect::<Result<_, _>>()?;
    let tracks: Vec<TrackState> = frames.iter().filter_map(|b| b.first().copied()).collect();
    if tracks.len() < 2 {
        return Err(StarMapError::Unobservable { found: tracks.len() });
    }
    let intervals: Vec<[f64; 2]> = tracks.windows(2).map(|w| interval(&w[0], &w[1])).collect();
    let (v, rejected) = fit_track(&tracks, schedule.frame_us, cfg).ok_or(StarMapError::AllRejected(tracks.len()))?;
    Ok(VelocityEstimate {
        theta: VelocityHypothesis::new(v[0], v[1]),
        schedule,
        rejected,
        tracks,
        intervals,
    })
}

/// Picks the schedule per `selection`. `pixel_scale` (arcsec/px) converts
/// pixel speeds into deg/s for the bracket thresholds.
pub fn estimate_field_velocity_auto(
    stream: &EventStream,
    selection: ScheduleSelection,
    pixel_scale: Option<f64>,
    cfg: &TrackerConfig,
) -> Result<VelocityEstimate, StarMapError> {
    match selection {
        ScheduleSelection::Fixed(s) => estimate_field_velocity(stream, s, cfg),
        ScheduleSelection::Nominal(deg) => estimate_field_velocity(stream, IntegrationSchedule::for_speed(deg), cfg),
        ScheduleSelection::Auto => {
            let scale = pixel_scale.or(stream.pixel_scale()).ok_or(StarMapError::UnknownScale)?;
            let mut first: Option<Result<VelocityEstimate, StarMapError>> = None;
            for schedule in [IntegrationSchedule::FAST, IntegrationSchedule::MEDIUM, IntegrationSchedule::SLOW] {
                let est = estimate_field_velocity(stream, schedule, cfg);
                if let Ok(e) = &est {
                    if IntegrationSchedule::for_speed(e.theta.speed() * scale / 3600.0) == schedule {
                        return est;
                    }
                }
                first.get_or_insert(est);
            }
            first.expect("three schedules tried")
        }
    }
}

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::solve::{solve_field_detailed, SolveHints, SolveOutcome, SolverConfig};
use super::{build_index, pixel_to_world, AstrometryError, CalibrationSolution, CatalogStar, IndexConfig};
use crate::event::{Event, EventStream};
use crate::sky::RaDec;
use crate::sourcefind::{find_sources, ClusterParams, EventSource};
use crate::starmap::{
    accumulate, estimate_field_velocity_auto, warp_event, AccumulationFrame, PolarityMode, ScheduleSelection,
    SigmaClipParams, TrackerConfig, VelocityHypothesis,
};

/// Reported mount pointing, strictly increasing in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MountTrack {
    samples: Vec<(u64, RaDec)>,
}

#[derive(Serialize, Deserialize)]
struct TrackRow {
    t_us: u64,
    ra_deg: f64,
    dec_deg: f64,
}

impl MountTrack {
    pub fn new(samples: Vec<(u64, RaDec)>) -> Result<Self, AstrometryError> {
        if samples.is_empty() {
            return Err(AstrometryError::InvalidTrack("no samples".into()));
        }
        if let Some(w) = samples.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(AstrometryError::InvalidTrack(format!("time {} follows {}", w[1].0, w[0].0)));
        }
        Ok(MountTrack { samples })
    }

    /// A single fixed pointing valid for all time.
    pub fn constant(center: RaDec) -> Self {
        MountTrack { samples: vec![(0, center), (u64::MAX, center)] }
    }

    pub fn samples(&self) -> &[(u64, RaDec)] {
        &self.samples
    }

    pub fn span(&self) -> (u64, u64) {
        (self.samples[0].0, self.samples[self.samples.len() - 1].0)
    }

    /// Linearly interpolated centre; RA is unwrapped across 0/360.
    pub fn center_at(&self, t_us: u64) -> Result<RaDec, AstrometryError> {
        let (start, end) = self.span();
        if t_us < start || t_us > end {
            return Err(AstrometryError::OutsideTrack { t_us, start, end });
        }
        let k = self.samples.partition_point(|s| s.0 <= t_us);
        if k == self.samples.len() {
            return Ok(self.samples[k - 1].1);
        }
        let (t0, a) = self.samples[k - 1];
        let (t1, b) = self.samples[k];
        let f = (t_us - t0) as f64 / (t1 - t0) as f64;
        let dra = (b.ra - a.ra + 540.0).rem_euclid(360.0) - 180.0;
        Ok(RaDec::new(a.ra + f * dra, a.dec + f * (b.dec - a.dec)))
    }

    /// CSV with columns `t_us,ra_deg,dec_deg`.
    pub fn read(path: &Path) -> Result<Self, AstrometryError> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut samples = Vec::new();
        for row in rdr.deserialize() {
            let r: TrackRow = row?;
            samples.push((r.t_us, RaDec::new(r.ra_deg, r.dec_deg)));
        }
        Self::new(samples)
    }

    pub fn write(&self, path: &Path) -> Result<(), AstrometryError> {
        let mut w = csv::Writer::from_path(path)?;
        for &(t_us, c) in &self.samples {
            w.serialize(TrackRow { t_us, ra_deg: c.ra, dec_deg: c.dec })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Everything needed to turn one star-map frame into a solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpmiConfig {
    pub window_us: u64,
    pub polarity_mode: PolarityMode,
    pub cluster: ClusterParams,
    pub clip: SigmaClipParams,
    pub solver: SolverConfig,
    pub index: IndexConfig,
    /// Approximate arcsec per pixel; falls back to the stream metadata.
    pub pixel_scale: Option<f64>,
    pub search_radius_deg: f64,
    pub schedule: ScheduleSelection,
    pub tracker: TrackerConfig,
    /// Skips velocity estimation when set.
    pub theta: Option<VelocityHypothesis>,
}

impl Default for MpmiConfig {
    fn default() -> Self {
        MpmiConfig {
            window_us: 3_000_000,
            polarity_mode: PolarityMode::Dual,
            cluster: ClusterParams::default(),
            clip: SigmaClipParams::default(),
            solver: SolverConfig::default(),
            index: IndexConfig::default(),
            pixel_scale: None,
            search_radius_deg: 0.1,
            schedule: ScheduleSelection::Auto,
            tracker: TrackerConfig::default(),
            theta: None,
        }
    }
}

impl MpmiConfig {
    fn scale(&self, stream: &EventStream) -> Result<f64, AstrometryError> {
        self.pixel_scale
            .or(stream.pixel_scale())
            .ok_or(AstrometryError::StarMap(crate::starmap::StarMapError::UnknownScale))
    }

    /// Solver hints for a frame whose reference time has pointing `center`.
    pub fn hints(&self, stream: &EventStream, frame: &AccumulationFrame, center: RaDec) -> Result<SolveHints, AstrometryError> {
        Ok(SolveHints::new(center, self.scale(stream)?, self.search_radius_deg, stream.geometry()).with_frame(frame))
    }
}

/// Detect sources in `frame` and plate-solve them against `catalog`.
pub fn solve_frame(
    frame: &AccumulationFrame,
    stream: &EventStream,
    catalog: &[CatalogStar],
    center: RaDec,
    cfg: &MpmiConfig,
) -> Result<(Vec<EventSource>, SolveOutcome), AstrometryError> {
    let sources = find_sources(frame, stream, &cfg.cluster, &cfg.clip)?;
    let hints = cfg.hints(stream, frame, center)?;
    if sources.len() < 4 {
        return Err(AstrometryError::TooFewSources { have: sources.len() });
    }
    let index = build_index(catalog, center, hints.cone_radius_deg(), &cfg.index)?;
    let outcome = solve_field_detailed(&sources, &index, &hints, &cfg.solver)?;
    Ok((sources, outcome))
}

/// One star-map window of a mosaic calibration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpmiWindow {
    pub index: usize,
    pub t_start: u64,
    pub integration: u64,
    pub n_sources: usize,
    /// `None` flags an unsolved window.
    pub solution: Option<CalibrationSolution>,
    pub error: Option<String>,
}

impl MpmiWindow {
    pub fn solved(&self) -> bool {
        self.solution.is_some()
    }

    pub fn contains(&self, t_us: u64) -> bool {
        t_us >= self.t_start && t_us - self.t_start < self.integration
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpmiResult {
    pub theta: VelocityHypothesis,
    pub windows: Vec<MpmiWindow>,
}

impl MpmiResult {
    pub fn n_solved(&self) -> usize {
        self.windows.iter().filter(|w| w.solved()).count()
    }

    /// World position of an event through the solved window covering its
    /// timestamp, after warping it to that window's reference time.
    pub fn project_event(&self, e: &Event) -> Option<RaDec> {
        let w = self.windows.iter().find(|w| w.contains(e.t))?;
        let sol = w.solution.as_ref()?;
        Some(pixel_to_world(warp_event(e, self.theta, w.t_start), sol))
    }
}

/// Consecutive windows of `window_us` from t = 0; a trailing partial window
/// is kept when at least half as long.
pub fn mpmi_windows(duration_us: u64, window_us: u64) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    let mut t = 0u64;
    let end = duration_us + 1;
    while t < end {
        let len = window_us.min(end - t);
        if len == window_us || 2 * len >= window_us || out.is_empty() {
            out.push((t, len));
        }
        t += window_us;
    }
    out
}

/// Mosaic calibration: star map, sources and a plate solve per window, each
/// hinted by the mount pointing at the window start.
pub fn calibrate_mpmi(
    stream: &EventStream,
    mount: &MountTrack,
    catalog: &[CatalogStar],
    cfg: &MpmiConfig,
) -> Result<MpmiResult, AstrometryError> {
    let theta = match cfg.theta {
        Some(t) => t,
        None => match estimate_field_velocity_auto(stream, cfg.schedule, cfg.pixel_scale, &cfg.tracker) {
            Ok(est) => est.theta,
            Err(e) => {
                log::warn!("velocity estimation failed ({e}); assuming a static field");
                VelocityHypothesis::default()
            }
        },
    };
    let spans = mpmi_windows(stream.duration_us(), cfg.window_us.max(1));
    let windows: Vec<MpmiWindow> = spans
        .iter()
        .enumerate()
        .map(|(index, &(t_start, integration))| {
            let run = || -> Result<(usize, CalibrationSolution), AstrometryError> {
                let frame = accumulate(stream, theta, t_start, integration, cfg.polarity_mode)?;
                let center = mount.center_at(t_start)?;
                let (sources, out) = solve_frame(&frame, stream, catalog, center, cfg)?;
                Ok((sources.len(), out.solution))
            };
            match run() {
                Ok((n, sol)) => MpmiWindow { index, t_start, integration, n_sources: n, solution: Some(sol), error: None },
                Err(e) => {
                    log::info!("window {index} unsolved: {e}");
                    MpmiWindow { index, t_start, integration, n_sources: 0, solution: None, error: Some(e.to_string()) }
                }
            }
        })
        .collect();
    let result = MpmiResult { theta, windows };
    if result.n_solved() == 0 {
        return Err(AstrometryError::NoWindowSolved { windows: result.windows });
    }
    Ok(result)
}

/// Applies one prior solution with the field centre interpolated from the
/// mount track at each timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct SpsiProjector {
    pub prior: CalibrationSolution,
    pub track: MountTrack,
}

impl SpsiProjector {
    pub fn solution_at(&self, t_us: u64) -> Result<CalibrationSolution, AstrometryError> {
        let mut sol = self.prior;
        sol.field_center = self.track.center_at(t_us)?;
        Ok(sol)
    }

    pub fn project(&self, p: [f64; 2], t_us: u64) -> Result<RaDec, AstrometryError> {
        Ok(pixel_to_world(p, &self.solution_at(t_us)?))
    }

    pub fn project_event(&self, e: &Event) -> Result<RaDec, AstrometryError> {
        self.project([e.x as f64, e.y as f64], e.t)
    }
}

/// Checks that `track` spans the stream and builds the projector.
pub fn calibrate_spsi(
    stream: &EventStream,
    prior: CalibrationSolution,
    track: MountTrack,
) -> Result<SpsiProjector, AstrometryError> {
    if let (Some(first), Some(last)) = (stream.events().first(), stream.events().last()) {
        let (start, end) = track.span();
        for t_us in [first.t, last.t] {
            if t_us < start || t_us > end {
                return Err(AstrometryError::OutsideTrack { t_us, start, end });
            }
        }
    }
    Ok(SpsiProjector { prior, track })
}

//! End-to-end processing of one observation: velocity, star map, sources,
//! calibration, matching and the characterization report.
//!
//! Every stage is a free function over in-memory values plus a reader and
//! writer for its artifact, so the CLI subcommands and [`run_pipeline`]
//! produce the same files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::astrometry::{
    build_index, calibrate_mpmi, calibrate_spsi, pixel_to_world, read_catalog, read_solution, solve_field_detailed,
    write_solution, CalibrationSolution, CatalogStar, FieldRegion, IndexConfig, MountTrack, MpmiConfig, SolveHints,
    SolverConfig,
};
use crate::crossmatch::{external_match, internal_match, read_matches, write_matches, MatchFlag, MatchRecord};
use crate::event::{read_stream, EventStream, SensorGeometry, StreamFormat};
use crate::report::{build_report, write_report, CharacterizationReport, ReportInput};
use crate::sky::RaDec;
use crate::sourcefind::{find_sources, read_sources, write_sources, ClusterParams, EventSource};
use crate::starmap::{
    accumulate_with, build_star_map, estimate_field_velocity_auto, write_pgm, AccumulationFrame, FrameSidecar,
    PolarityMode, ScheduleSelection, SigmaClipParams, TrackerConfig, VelocityEstimate, VelocityHypothesis,
};

pub const CONFIG_FILE: &str = "config.json";
pub const VELOCITY_FILE: &str = "velocity.json";
pub const STARMAP_FILE: &str = "starmap.pgm";
pub const SIDECAR_FILE: &str = "starmap.pgm.json";
pub const SOURCES_FILE: &str = "sources.csv";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const SOLUTION_FILE: &str = "solution.json";
pub const MATCHES_FILE: &str = "matches.csv";
pub const MPMI_FILE: &str = "mpmi.json";

/// A stage failure: which stage and why.
#[derive(Debug, Error)]
#[error("{stage}: {cause}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub cause: String,
}

impl PipelineError {
    pub fn new(stage: &'static str, cause: impl std::fmt::Display) -> Self {
        PipelineError {
            stage,
            cause: cause.to_string(),
        }
    }
}

fn at<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::new(stage, e)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMode {
    /// Plate-solve the star map.
    #[default]
    Mpmi,
    /// Reuse a prior solution with the mount-reported centre.
    Spsi,
}

/// A solved observation of the same field used for internal matching.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiblingConfig {
    pub sources: PathBuf,
    pub matches: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportToggles {
    pub star_map_image: bool,
    /// Mosaic calibration over the whole stream, written to `mpmi.json`.
    pub mpmi_windows: bool,
}

impl Default for ReportToggles {
    fn default() -> Self {
        ReportToggles {
            star_map_image: true,
            mpmi_windows: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub events: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Sensor size for CSV event files.
    pub geometry: SensorGeometry,
    pub mode: CalibrationMode,
    pub polarity_mode: PolarityMode,
    pub cluster: ClusterParams,
    pub clip: SigmaClipParams,
    pub schedule: ScheduleSelection,
    pub tracker: TrackerConfig,
    /// Skips velocity estimation when set, px/s.
    pub theta: Option<VelocityHypothesis>,
    pub solver: SolverConfig,
    pub index: IndexConfig,
    /// Approximate arcsec per pixel; falls back to the stream metadata.
    pub pixel_scale: Option<f64>,
    pub search_radius_deg: f64,
    /// Pointing at the star-map start; otherwise read from `mount_track`.
    pub hint_center: Option<RaDec>,
    pub mount_track: Option<PathBuf>,
    pub prior_solution: Option<PathBuf>,
    pub sibling: Option<SiblingConfig>,
    pub match_radius_arcsec: f64,
    pub internal_threshold_px: f64,
    pub field: String,
    pub speed_deg_s: Option<f64>,
    /// Known pixel scale for the error column of the report.
    pub true_pixel_scale: Option<f64>,
    pub report: ReportToggles,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            events: None,
            catalog: None,
            output_dir: PathBuf::from("out"),
            geometry: SensorGeometry::gen4_hd(),
            mode: CalibrationMode::Mpmi,
            polarity_mode: PolarityMode::Dual,
            cluster: ClusterParams::default(),
            clip: SigmaClipParams::default(),
            schedule: ScheduleSelection::Auto,
            tracker: TrackerConfig::default(),
            theta: None,
            solver: SolverConfig::default(),
            index: IndexConfig::default(),
            pixel_scale: None,
            search_radius_deg: 0.1,
            hint_center: None,
            mount_track: None,
            prior_solution: None,
            sibling: None,
            match_radius_arcsec: 4.0,
            internal_threshold_px: 5.0,
            field: "field".to_string(),
            speed_deg_s: None,
            true_pixel_scale: None,
            report: ReportToggles::default(),
        }
    }
}

impl PipelineConfig {
    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read(path).map_err(at("config"))?;
        serde_json::from_slice(&text).map_err(at("config"))
    }

    /// Checks ranges and that every referenced file exists.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::new("config", m));
        let files = [
            ("events", self.events.as_ref()),
            ("catalog", self.catalog.as_ref()),
            ("mount_track", self.mount_track.as_ref()),
            ("prior_solution", self.prior_solution.as_ref()),
            ("sibling.sources", self.sibling.as_ref().map(|s| &s.sources)),
            ("sibling.matches", self.sibling.as_ref().map(|s| &s.matches)),
        ];
        for (name, p) in files {
            if let Some(p) = p {
                if !p.is_file() {
                    return bad(format!("{name} file {} not found", p.display()));
                }
            }
        }
        if self.events.is_none() {
            return bad("no events file".into());
        }
        if self.mode == CalibrationMode::Mpmi && self.catalog.is_none() {
            return bad("mpmi mode needs a catalog".into());
        }
        if self.mode == CalibrationMode::Spsi && (self.prior_solution.is_none() || self.mount_track.is_none()) {
            return bad("spsi mode needs prior_solution and mount_track".into());
        }
        if !(self.search_radius_deg > 0.0) || !(self.match_radius_arcsec > 0.0) || !(self.internal_threshold_px > 0.0) {
            return bad("search radius, match radius and internal threshold must be > 0".into());
        }
        if self.pixel_scale.is_some_and(|s| !(s > 0.0)) {
            return bad("pixel_scale must be > 0".into());
        }
        self.cluster.validate().map_err(at("config"))?;
        Ok(())
    }

    fn mpmi(&self) -> MpmiConfig {
        MpmiConfig {
            polarity_mode: self.polarity_mode,
            cluster: self.cluster,
            clip: self.clip,
            solver: self.solver,
            index: self.index,
            pixel_scale: self.pixel_scale,
            search_radius_deg: self.search_radius_deg,
            schedule: self.schedule,
            tracker: self.tracker,
            theta: self.theta,
            ..MpmiConfig::default()
        }
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path, stage: &'static str) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).map_err(at(stage))? + "\n";
    std::fs::write(path, text).map_err(at(stage))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: &'static str) -> Result<T, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::new(stage, format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(at(stage))
}

/// Reads the event file; an empty stream is an error.
pub fn load_events(path: &Path, geometry: SensorGeometry) -> Result<EventStream, PipelineError> {
    let stream = read_stream(path, StreamFormat::from_path(path), Some(geometry)).map_err(at("ingest"))?;
    if stream.is_empty() {
        return Err(PipelineError::new("ingest", format!("{} holds no events", path.display())));
    }
    Ok(stream)
}

pub fn load_catalog(path: &Path) -> Result<Vec<CatalogStar>, PipelineError> {
    read_catalog(path).map_err(at("catalog"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityRecord {
    pub theta: VelocityHypothesis,
    pub estimate: Option<VelocityEstimate>,
    pub warning: Option<String>,
}

/// Field velocity: configured, estimated, or zero with a warning.
pub fn stage_velocity(stream: &EventStream, cfg: &PipelineConfig) -> VelocityRecord {
    if let Some(theta) = cfg.theta {
        return VelocityRecord {
            theta,
            estimate: None,
            warning: None,
        };
    }
    match estimate_field_velocity_auto(stream, cfg.schedule, cfg.pixel_scale, &cfg.tracker) {
        Ok(est) => VelocityRecord {
            theta: est.theta,
            estimate: Some(est),
            warning: None,
        },
        Err(e) => {
            log::warn!("velocity estimation failed ({e}); assuming a static field");
            VelocityRecord {
                theta: VelocityHypothesis::default(),
                estimate: None,
                warning: Some(e.to_string()),
            }
        }
    }
}

pub fn stage_star_map(stream: &EventStream, theta: VelocityHypothesis, mode: PolarityMode) -> Result<AccumulationFrame, PipelineError> {
    build_star_map(stream, theta, mode).map_err(at("starmap"))
}

/// Writes the velocity record and the star map with its sidecar.
pub fn write_map_artifacts(
    dir: &Path,
    velocity: &VelocityRecord,
    frame: &AccumulationFrame,
) -> Result<FrameSidecar, PipelineError> {
    write_json(velocity, &dir.join(VELOCITY_FILE), "starmap")?;
    write_pgm(frame, &dir.join(STARMAP_FILE)).map_err(at("starmap"))
}

/// Rebuilds the star map described by a sidecar.
pub fn frame_from_sidecar(stream: &EventStream, side: &FrameSidecar) -> Result<AccumulationFrame, PipelineError> {
    accumulate_with(stream, side.theta, side.t_start_us, side.integration_us, side.mode, side.splat).map_err(at("starmap"))
}

pub fn read_sidecar(path: &Path) -> Result<FrameSidecar, PipelineError> {
    read_json(path, "starmap")
}

pub fn stage_sources(frame: &AccumulationFrame, stream: &EventStream, cfg: &PipelineConfig) -> Result<Vec<EventSource>, PipelineError> {
    find_sources(frame, stream, &cfg.cluster, &cfg.clip).map_err(at("sources"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationStatus {
    Solved,
    Spsi,
    InternalMatch,
    Unsolved,
}

impl CalibrationStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            CalibrationStatus::Solved => "solved",
            CalibrationStatus::Spsi => "spsi",
            CalibrationStatus::InternalMatch => "internal_match",
            CalibrationStatus::Unsolved => "unsolved",
        }
    }
}

/// Outcome of the calibration stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub status: CalibrationStatus,
    /// True when the configured mode failed and a fallback ran.
    pub fallback: bool,
    pub solution: Option<CalibrationSolution>,
    pub error: Option<String>,
    pub hypotheses: usize,
    pub catalog_in_field: usize,
}

impl CalibrationRecord {
    /// 0 when the configured calibration succeeded, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if !self.fallback && matches!(self.status, CalibrationStatus::Solved | CalibrationStatus::Spsi) {
            0
        } else {
            2
        }
    }
}

/// Pointing at `t_us`: the configured hint, else the mount track.
pub fn hint_center(cfg: &PipelineConfig, t_us: u64) -> Result<RaDec, PipelineError> {
    if let Some(c) = cfg.hint_center {
        return Ok(c);
    }
    let path = cfg
        .mount_track
        .as_ref()
        .ok_or_else(|| PipelineError::new("solve", "no hint_center and no mount_track"))?;
    let track = MountTrack::read(path).map_err(at("solve"))?;
    track.center_at(t_us).map_err(at("solve"))
}

fn spsi_solution(cfg: &PipelineConfig, stream: &EventStream, t_us: u64) -> Result<CalibrationSolution, PipelineError> {
    let (Some(prior), Some(track)) = (&cfg.prior_solution, &cfg.mount_track) else {
        return Err(PipelineError::new("solve", "spsi needs prior_solution and mount_track"));
    };
    let prior = read_solution(prior).map_err(at("solve"))?;
    let track = MountTrack::read(track).map_err(at("solve"))?;
    let proj = calibrate_spsi(stream, prior, track).map_err(at("solve"))?;
    proj.solution_at(t_us).map_err(at("solve"))
}

/// Plate-solves the sources of the star map described by `side`, or applies
/// the prior in SPSI mode. A failed plate solve falls back to SPSI when a
/// prior is configured and no sibling is.
pub fn stage_calibrate(
    sources: &[EventSource],
    side: &FrameSidecar,
    stream: &EventStream,
    catalog: &[CatalogStar],
    cfg: &PipelineConfig,
) -> Result<CalibrationRecord, PipelineError> {
    let t0 = side.t_start_us;
    if cfg.mode == CalibrationMode::Spsi {
        return Ok(CalibrationRecord {
            status: CalibrationStatus::Spsi,
            fallback: false,
            solution: Some(spsi_solution(cfg, stream, t0)?),
            error: None,
            hypotheses: 0,
            catalog_in_field: 0,
        });
    }
    let scale = cfg
        .pixel_scale
        .or(stream.pixel_scale())
        .ok_or_else(|| PipelineError::new("solve", "pixel scale unknown: set pixel_scale"))?;
    let center = hint_center(cfg, t0)?;
    let geometry = stream.geometry();
    let mut hints = SolveHints::new(center, scale, cfg.search_radius_deg, geometry);
    hints.region = FieldRegion {
        velocity: [side.theta.vx, side.theta.vy],
        span_s: side.integration_us as f64 * 1e-6,
        ..FieldRegion::sensor(geometry)
    };
    let attempt = if sources.len() < 4 {
        Err(format!("too few sources: {} < 4", sources.len()))
    } else {
        build_index(catalog, center, hints.cone_radius_deg(), &cfg.index)
            .and_then(|index| solve_field_detailed(sources, &index, &hints, &cfg.solver))
            .map_err(|e| e.to_string())
    };
    match attempt {
        Ok(out) => Ok(CalibrationRecord {
            status: CalibrationStatus::Solved,
            fallback: false,
            solution: Some(out.solution),
            error: None,
            hypotheses: out.hypotheses,
            catalog_in_field: out.catalog_in_field,
        }),
        Err(error) => {
            log::info!("plate solve failed: {error}");
            let spsi = cfg.sibling.is_none() && cfg.prior_solution.is_some() && cfg.mount_track.is_some();
            let solution = if spsi { Some(spsi_solution(cfg, stream, t0)?) } else { None };
            Ok(CalibrationRecord {
                status: if spsi { CalibrationStatus::Spsi } else { CalibrationStatus::Unsolved },
                fallback: true,
                solution,
                error: Some(error),
                hypotheses: 0,
                catalog_in_field: 0,
            })
        }
    }
}

pub fn write_calibration(dir: &Path, rec: &CalibrationRecord) -> Result<(), PipelineError> {
    write_json(rec, &dir.join(CALIBRATION_FILE), "solve")?;
    if let Some(sol) = &rec.solution {
        write_solution(sol, &dir.join(SOLUTION_FILE)).map_err(at("solve"))?;
    }
    Ok(())
}

pub fn read_calibration(path: &Path) -> Result<CalibrationRecord, PipelineError> {
    read_json(path, "solve")
}

/// Catalog matches through the solution, else anchor-relative matches to
/// the sibling observation, else nothing. Returns the records and whether
/// the sibling path was taken.
pub fn stage_match(
    sources: &[EventSource],
    calibration: &CalibrationRecord,
    catalog: &[CatalogStar],
    cfg: &PipelineConfig,
) -> Result<(Vec<MatchRecord>, bool), PipelineError> {
    if let Some(sol) = &calibration.solution {
        let world: Vec<(usize, RaDec)> = sources.iter().map(|s| (s.id, pixel_to_world(s.weighted_centroid, sol))).collect();
        return Ok((external_match(&world, catalog, cfg.match_radius_arcsec), false));
    }
    let Some(sib) = &cfg.sibling else {
        return Ok((Vec::new(), false));
    };
    let sib_sources = read_sources(&sib.sources).map_err(at("match"))?;
    let sib_matches = read_matches(&sib.matches).map_err(at("match"))?;
    let pairs = internal_match(&sib_sources, sources, cfg.internal_threshold_px).map_err(at("match"))?;
    let records = sources
        .iter()
        .map(|s| {
            let pair = pairs.iter().find(|p| p.unsolved_id == s.id);
            let known = pair.and_then(|p| sib_matches.iter().find(|m| m.source_id == p.solved_id && m.flags == MatchFlag::Matched));
            match (pair, known) {
                (Some(p), Some(m)) => MatchRecord {
                    source_id: s.id,
                    catalog_id: m.catalog_id,
                    sep: p.offset_distance,
                    mag: m.mag,
                    flags: MatchFlag::Matched,
                },
                _ => MatchRecord {
                    source_id: s.id,
                    catalog_id: None,
                    sep: pair.map_or(f64::INFINITY, |p| p.offset_distance),
                    mag: None,
                    flags: MatchFlag::Spurious,
                },
            }
        })
        .collect();
    Ok((records, true))
}

pub fn write_match_table(dir: &Path, records: &[MatchRecord]) -> Result<(), PipelineError> {
    write_matches(records, &dir.join(MATCHES_FILE)).map_err(at("match"))
}

/// Status shown in the report: the calibration status, upgraded to
/// `internal_match` when an unsolved field was matched through a sibling.
pub fn report_status(calibration: &CalibrationRecord, via_sibling: bool) -> CalibrationStatus {
    if calibration.solution.is_none() && via_sibling {
        CalibrationStatus::InternalMatch
    } else {
        calibration.status
    }
}

pub fn stage_report(
    side: &FrameSidecar,
    geometry: SensorGeometry,
    sources: &[EventSource],
    matches: &[MatchRecord],
    calibration: &CalibrationRecord,
    status: CalibrationStatus,
    catalog: &[CatalogStar],
    cfg: &PipelineConfig,
) -> CharacterizationReport {
    build_report(&ReportInput {
        field: &cfg.field,
        speed_deg_s: cfg.speed_deg_s,
        polarity_mode: side.mode,
        status: status.as_str(),
        theta: side.theta,
        window_s: side.integration_us as f64 * 1e-6,
        geometry,
        sources,
        matches,
        solution: calibration.solution.as_ref(),
        catalog,
        true_pixel_scale: cfg.true_pixel_scale,
    })
}

pub fn write_report_files(dir: &Path, report: &CharacterizationReport) -> Result<(), PipelineError> {
    write_report(report, dir).map_err(at("report"))
}

/// What [`run_pipeline`] produced.
#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub report: CharacterizationReport,
    pub calibration: CalibrationRecord,
}

impl PipelineOutcome {
    pub fn exit_code(&self) -> i32 {
        self.calibration.exit_code()
    }
}

/// Runs every stage in order and writes all artifacts to `output_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(at("output"))?;
    write_json(cfg, &dir.join(CONFIG_FILE), "output")?;

    let stream = load_events(cfg.events.as_deref().expect("validated"), cfg.geometry)?;
    let catalog = match &cfg.catalog {
        Some(p) => load_catalog(p)?,
        None => Vec::new(),
    };

    let velocity = stage_velocity(&stream, cfg);
    let frame = stage_star_map(&stream, velocity.theta, cfg.polarity_mode)?;
    let side = if cfg.report.star_map_image {
        write_map_artifacts(dir, &velocity, &frame)?
    } else {
        write_json(&velocity, &dir.join(VELOCITY_FILE), "starmap")?;
        let tmp = dir.join(STARMAP_FILE);
        let side = write_pgm(&frame, &tmp).map_err(at("starmap"))?;
        std::fs::remove_file(&tmp).map_err(at("starmap"))?;
        side
    };

    let sources = stage_sources(&frame, &stream, cfg)?;
    write_sources(&sources, &dir.join(SOURCES_FILE)).map_err(at("sources"))?;

    let calibration = stage_calibrate(&sources, &side, &stream, &catalog, cfg)?;
    write_calibration(dir, &calibration)?;

    if cfg.report.mpmi_windows {
        let track = match &cfg.mount_track {
            Some(p) => MountTrack::read(p).map_err(at("mpmi"))?,
            None => MountTrack::constant(hint_center(cfg, 0)?),
        };
        let mut mcfg = cfg.mpmi();
        mcfg.theta = Some(velocity.theta);
        let windows = match calibrate_mpmi(&stream, &track, &catalog, &mcfg) {
            Ok(r) => r.windows,
            Err(crate::astrometry::AstrometryError::NoWindowSolved { windows }) => windows,
            Err(e) => return Err(PipelineError::new("mpmi", e)),
        };
        write_json(&windows, &dir.join(MPMI_FILE), "mpmi")?;
    }

    let (matches, via_sibling) = stage_match(&sources, &calibration, &catalog, cfg)?;
    write_match_table(dir, &matches)?;

    let status = report_status(&calibration, via_sibling);
    let report = stage_report(&side, stream.geometry(), &sources, &matches, &calibration, status, &catalog, cfg);
    write_report_files(dir, &report)?;
    Ok(PipelineOutcome { report, calibration })
}

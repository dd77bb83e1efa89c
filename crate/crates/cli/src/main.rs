use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use evastro::event::{write_stream, StreamFormat};
use evastro::pipeline::{self, CalibrationMode, PipelineConfig, SiblingConfig};
use evastro::report::{read_report, scan_budget, write_long_csv};
use evastro::sourcefind::{read_sources, write_sources};
use evastro::starmap::{PolarityMode, VelocityHypothesis};
use evastro::synth::{synthesize, SyntheticScene};
use evastro::{astrometry, crossmatch, RaDec, SensorGeometry};

#[derive(Parser)]
#[command(name = "evastro", version, about = "Event-camera star maps, source finding and astrometric calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic event stream from a scene description.
    Synth(SynthArgs),
    /// Estimate the field velocity and write the star map.
    Map(PipelineArgs),
    /// Detect sources in the star map.
    Find(PipelineArgs),
    /// Calibrate the star map against the catalog.
    Solve(PipelineArgs),
    /// Match sources to the catalog or to a solved sibling.
    Match(PipelineArgs),
    /// Write the characterization report, or merge reports into one CSV.
    Report(ReportArgs),
    /// Run every stage.
    Run(PipelineArgs),
    /// Time to sweep a sky region.
    ScanBudget(ScanArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Event file; `.csv` selects text, anything else binary.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Catalog of the scene's stars.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Reported mount centres.
    #[arg(long)]
    track: Option<PathBuf>,
    #[arg(long, default_value_t = 500_000)]
    track_cadence_us: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Mpmi,
    Spsi,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolarityArg {
    Dual,
    MonoOn,
}

/// Flags overriding the JSON config. Stage subcommands read and write the
/// standard artifact names in the output directory.
#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    polarity_mode: Option<PolarityArg>,
    /// Known field velocity `vx,vy` in px/s; skips estimation.
    #[arg(long, value_delimiter = ',')]
    theta: Option<Vec<f64>>,
    #[arg(long)]
    pixel_scale: Option<f64>,
    #[arg(long)]
    search_radius_deg: Option<f64>,
    /// Pointing hint `ra,dec` in degrees.
    #[arg(long, value_delimiter = ',')]
    hint_center: Option<Vec<f64>>,
    #[arg(long)]
    mount_track: Option<PathBuf>,
    #[arg(long)]
    prior_solution: Option<PathBuf>,
    #[arg(long, requires = "sibling_matches")]
    sibling_sources: Option<PathBuf>,
    #[arg(long, requires = "sibling_sources")]
    sibling_matches: Option<PathBuf>,
    #[arg(long)]
    match_radius_arcsec: Option<f64>,
    #[arg(long)]
    internal_threshold_px: Option<f64>,
    #[arg(long)]
    field: Option<String>,
    #[arg(long)]
    speed_deg_s: Option<f64>,
    #[arg(long)]
    true_pixel_scale: Option<f64>,
}

impl PipelineArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::read(p)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = &self.$f { c.$f = v.clone(); })* };
            (opt $($f:ident),*) => { $(if let Some(v) = &self.$f { c.$f = Some(v.clone()); })* };
        }
        set!(match_radius_arcsec, internal_threshold_px, field, search_radius_deg);
        set!(opt events, catalog, pixel_scale, mount_track, prior_solution, speed_deg_s, true_pixel_scale);
        if let Some(d) = &self.out_dir {
            c.output_dir = d.clone();
        }
        if self.width.is_some() || self.height.is_some() {
            let w = self.width.unwrap_or(c.geometry.width);
            let h = self.height.unwrap_or(c.geometry.height);
            c.geometry = SensorGeometry::new(w, h)?;
        }
        if let Some(m) = self.mode {
            c.mode = match m {
                ModeArg::Mpmi => CalibrationMode::Mpmi,
                ModeArg::Spsi => CalibrationMode::Spsi,
            };
        }
        if let Some(p) = self.polarity_mode {
            c.polarity_mode = match p {
                PolarityArg::Dual => PolarityMode::Dual,
                PolarityArg::MonoOn => PolarityMode::MonoOn,
            };
        }
        let pair = |v: &Vec<f64>, name: &str| match v.as_slice() {
            [a, b] => Ok((*a, *b)),
            _ => anyhow::bail!("--{name} takes two comma-separated numbers"),
        };
        if let Some(t) = &self.theta {
            let t = pair(t, "theta")?;
            c.theta = Some(VelocityHypothesis::new(t.0, t.1));
        }
        if let Some(h) = &self.hint_center {
            let h = pair(h, "hint-center")?;
            c.hint_center = Some(RaDec::new(h.0, h.1));
        }
        if let (Some(sources), Some(matches)) = (&self.sibling_sources, &self.sibling_matches) {
            c.sibling = Some(SiblingConfig {
                sources: sources.clone(),
                matches: matches.clone(),
            });
        }
        Ok(c)
    }
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Report files to merge into one long-format CSV instead.
    #[arg(long, num_args = 1.., requires = "merged")]
    merge: Vec<PathBuf>,
    #[arg(long)]
    merged: Option<PathBuf>,
}

#[derive(Args)]
struct ScanArgs {
    /// Slew speed, deg/s.
    #[arg(long)]
    speed: f64,
    /// Region area, square degrees.
    #[arg(long, default_value_t = 1.0)]
    region: f64,
    #[arg(long, default_value_t = 1.584)]
    pixel_scale: f64,
    #[arg(long, default_value_t = 1280)]
    width: u32,
    #[arg(long, default_value_t = 720)]
    height: u32,
}

fn events_path(cfg: &PipelineConfig) -> Result<&Path> {
    cfg.events.as_deref().context("no events file: pass --events")
}

fn catalog_of(cfg: &PipelineConfig) -> Result<Vec<evastro::CatalogStar>> {
    Ok(match &cfg.catalog {
        Some(p) => pipeline::load_catalog(p)?,
        None => Vec::new(),
    })
}

fn prepare(cfg: &PipelineConfig) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    Ok(&cfg.output_dir)
}

fn synth(a: &SynthArgs) -> Result<i32> {
    let scene: SyntheticScene = serde_json::from_slice(&std::fs::read(&a.scene)?).context("scene file")?;
    let (stream, truth) = synthesize(&scene)?;
    write_stream(&stream, &a.out, StreamFormat::from_path(&a.out))?;
    if let Some(p) = &a.truth {
        std::fs::write(p, serde_json::to_string(&truth)? + "\n")?;
    }
    if let Some(p) = &a.catalog {
        astrometry::write_catalog(&scene.catalog(), p)?;
    }
    if let Some(p) = &a.track {
        truth.mount_track(a.track_cadence_us).write(p)?;
    }
    for w in &truth.warnings {
        log::warn!("{w}");
    }
    Ok(0)
}

fn map(cfg: &PipelineConfig) -> Result<i32> {
    let dir = prepare(cfg)?;
    let stream = pipeline::load_events(events_path(cfg)?, cfg.geometry)?;
    let velocity = pipeline::stage_velocity(&stream, cfg);
    let frame = pipeline::stage_star_map(&stream, velocity.theta, cfg.polarity_mode)?;
    pipeline::write_map_artifacts(dir, &velocity, &frame)?;
    Ok(0)
}

fn find(cfg: &PipelineConfig) -> Result<i32> {
    let dir = prepare(cfg)?;
    let stream = pipeline::load_events(events_path(cfg)?, cfg.geometry)?;
    let side = pipeline::read_sidecar(&dir.join(pipeline::SIDECAR_FILE))?;
    let frame = pipeline::frame_from_sidecar(&stream, &side)?;
    let sources = pipeline::stage_sources(&frame, &stream, cfg)?;
    write_sources(&sources, &dir.join(pipeline::SOURCES_FILE))?;
    Ok(0)
}

fn solve(cfg: &PipelineConfig) -> Result<i32> {
    let dir = prepare(cfg)?;
    let stream = pipeline::load_events(events_path(cfg)?, cfg.geometry)?;
    let side = pipeline::read_sidecar(&dir.join(pipeline::SIDECAR_FILE))?;
    let sources = read_sources(&dir.join(pipeline::SOURCES_FILE))?;
    let catalog = catalog_of(cfg)?;
    let rec = pipeline::stage_calibrate(&sources, &side, &stream, &catalog, cfg)?;
    pipeline::write_calibration(dir, &rec)?;
    Ok(rec.exit_code())
}

fn match_stage(cfg: &PipelineConfig) -> Result<i32> {
    let dir = prepare(cfg)?;
    let sources = read_sources(&dir.join(pipeline::SOURCES_FILE))?;
    let rec = pipeline::read_calibration(&dir.join(pipeline::CALIBRATION_FILE))?;
    let catalog = catalog_of(cfg)?;
    let (matches, _) = pipeline::stage_match(&sources, &rec, &catalog, cfg)?;
    pipeline::write_match_table(dir, &matches)?;
    Ok(rec.exit_code())
}

fn report(a: &ReportArgs) -> Result<i32> {
    if let Some(out) = &a.merged {
        let mut rows = Vec::new();
        for p in &a.merge {
            rows.extend(read_report(p).with_context(|| p.display().to_string())?.long_rows());
        }
        write_long_csv(&rows, out)?;
        return Ok(0);
    }
    let cfg = a.pipeline.config()?;
    let dir = prepare(&cfg)?;
    let side = pipeline::read_sidecar(&dir.join(pipeline::SIDECAR_FILE))?;
    let geometry = SensorGeometry::new(
        (side.width - 2 * side.pad[0]) as u32,
        (side.height - 2 * side.pad[1]) as u32,
    )?;
    let sources = read_sources(&dir.join(pipeline::SOURCES_FILE))?;
    let matches = crossmatch::read_matches(&dir.join(pipeline::MATCHES_FILE))?;
    let rec = pipeline::read_calibration(&dir.join(pipeline::CALIBRATION_FILE))?;
    let catalog = catalog_of(&cfg)?;
    let via_sibling = rec.solution.is_none() && cfg.sibling.is_some();
    let status = pipeline::report_status(&rec, via_sibling);
    let rep = pipeline::stage_report(&side, geometry, &sources, &matches, &rec, status, &catalog, &cfg);
    pipeline::write_report_files(dir, &rep)?;
    Ok(rec.exit_code())
}

fn run(cfg: &PipelineConfig) -> Result<i32> {
    let out = pipeline::run_pipeline(cfg)?;
    let s = &out.report.summary;
    println!(
        "{}: {} sources, {} matched, status {}",
        out.report.field, s.detected, s.matched, out.report.status
    );
    Ok(out.exit_code())
}

fn scan(a: &ScanArgs) -> Result<i32> {
    let g = SensorGeometry::new(a.width, a.height)?;
    let b = scan_budget(a.speed, a.region, a.pixel_scale, g)?;
    println!("{}", serde_json::to_string(&b)?);
    Ok(0)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Map(a) => map(&a.config()?),
        Command::Find(a) => find(&a.config()?),
        Command::Solve(a) => solve(&a.config()?),
        Command::Match(a) => match_stage(&a.config()?),
        Command::Report(a) => report(a),
        Command::Run(a) => run(&a.config()?),
        Command::ScanBudget(a) => scan(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors exit with 1; 2 is reserved for unsolved fields.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

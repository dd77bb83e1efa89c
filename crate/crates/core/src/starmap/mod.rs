//! Motion-compensated star maps: event warping, accumulation, sigma-clip
//! masking and field-velocity estimation by tracking the largest blob.

mod clip;
mod export;
mod velocity;
mod warp;

pub use clip::{sigma_clip_mask, Mask, SigmaClipParams};
pub use export::{write_pgm, FrameSidecar};
pub use velocity::{
    estimate_field_velocity, estimate_field_velocity_auto, IntegrationSchedule, ScheduleSelection, TrackState,
    TrackerConfig, VelocityEstimate,
};
pub use warp::{
    accumulate, accumulate_with, build_star_map, star_map_window, warp_event, warp_point, AccumulationFrame, PolarityMode,
    Splat, VelocityHypothesis, STAR_MAP_INTEGRATION_US,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StarMapError {
    #[error("integration time must be > 0")]
    ZeroIntegration,
    #[error("invalid velocity hypothesis ({0}, {1})")]
    InvalidVelocity(f64, f64),
    #[error("invalid sigma-clip parameters: n_sigma {n_sigma}, max_iter {max_iter}")]
    InvalidClip { n_sigma: f64, max_iter: usize },
    #[error("stream of {duration_us} us is shorter than two frames of {frame_us} us")]
    StreamTooShort { duration_us: u64, frame_us: u64 },
    #[error("velocity unobservable: blob found in {found} frame(s), need 2")]
    Unobservable { found: usize },
    #[error("all {0} interval estimates rejected as outliers")]
    AllRejected(usize),
    #[error("pixel scale unknown; cannot choose an integration schedule")]
    UnknownScale,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

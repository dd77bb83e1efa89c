//! Event-camera star-field processing: motion-compensated star maps, source
//! detection, plate solving and catalog association.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod astrometry;
pub mod crossmatch;
pub mod event;
pub mod sky;
pub mod sourcefind;
pub mod starmap;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use astrometry::{CalibrationSolution, CatalogStar, QuadHash};
pub use event::{Event, EventStream, Polarity, SensorGeometry};
pub use sky::RaDec;
pub use sourcefind::{ClusterParams, EventSource};
pub use starmap::{AccumulationFrame, PolarityMode, VelocityHypothesis};
pub use synth::{GroundTruth, SyntheticScene};

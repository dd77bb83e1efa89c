//! Event data model: single change events, sensor geometry and validated streams.

mod io;

pub use io::{
    read_binary, read_csv, read_stream, read_stream_report, write_binary, write_csv, write_stream,
    RecordError, StreamFormat,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while building, reading or writing event streams.
#[derive(Debug, Error)]
pub enum EventError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record at {location}: {reason}")]
    Malformed { location: String, reason: String },
    #[error("timestamp regression at {location}: {t} < {prev}")]
    TimestampRegression { location: String, prev: u64, t: u64 },
    #[error("coordinate out of bounds at {location}: ({x}, {y}) outside {width}x{height}")]
    OutOfBounds {
        location: String,
        x: i64,
        y: i64,
        width: u32,
        height: u32,
    },
    #[error("invalid sensor geometry {width}x{height}")]
    InvalidGeometry { width: u32, height: u32 },
    #[error("bad binary header: {0}")]
    BadHeader(String),
    #[error("csv input needs a sensor geometry")]
    MissingGeometry,
    #[error("invalid time slice: t0 {t0} > t1 {t1}")]
    InvalidSlice { t0: u64, t1: u64 },
}

/// Sign of the log-intensity change that triggered an event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    On,
    Off,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }

    pub fn from_sign(p: i64) -> Option<Self> {
        match p {
            1 => Some(Polarity::On),
            -1 => Some(Polarity::Off),
            _ => None,
        }
    }
}

/// A single change event. `t` is in microseconds since stream start.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: Polarity) -> Self {
        Event { t, x, y, p }
    }
}

/// Pixel dimensions of the sensor array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorGeometry {
    pub width: u32,
    pub height: u32,
    /// Pixel pitch in micrometres; metadata only.
    #[serde(default = "default_pitch")]
    pub pixel_pitch_um: f64,
}

fn default_pitch() -> f64 {
    4.86
}

impl SensorGeometry {
    pub fn new(width: u32, height: u32) -> Result<Self, EventError> {
        if width == 0 || height == 0 || width > u16::MAX as u32 || height > u16::MAX as u32 {
            return Err(EventError::InvalidGeometry { width, height });
        }
        Ok(SensorGeometry {
            width,
            height,
            pixel_pitch_um: default_pitch(),
        })
    }

    /// The 1280x720 Gen 4 HD array.
    pub fn gen4_hd() -> Self {
        SensorGeometry {
            width: 1280,
            height: 720,
            pixel_pitch_um: default_pitch(),
        }
    }

    pub fn validate(&self) -> Result<(), EventError> {
        SensorGeometry::new(self.width, self.height).map(|_| ())
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64
    }

    /// Geometric centre of the pixel grid, in pixel coordinates.
    pub fn center(&self) -> [f64; 2] {
        [
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        ]
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

impl Default for SensorGeometry {
    fn default() -> Self {
        SensorGeometry::gen4_hd()
    }
}

/// A validated, time-ordered event sequence. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    geometry: SensorGeometry,
    pixel_scale: Option<f64>,
}

impl EventStream {
    /// Validates ordering and bounds.
    pub fn new(
        events: Vec<Event>,
        geometry: SensorGeometry,
        pixel_scale: Option<f64>,
    ) -> Result<Self, EventError> {
        geometry.validate()?;
        let mut prev = 0u64;
        for (i, e) in events.iter().enumerate() {
            if !geometry.contains(e.x as i64, e.y as i64) {
                return Err(EventError::OutOfBounds {
                    location: format!("event {i}"),
                    x: e.x as i64,
                    y: e.y as i64,
                    width: geometry.width,
                    height: geometry.height,
                });
            }
            if e.t < prev {
                return Err(EventError::TimestampRegression {
                    location: format!("event {i}"),
                    prev,
                    t: e.t,
                });
            }
            prev = e.t;
        }
        Ok(EventStream {
            events,
            geometry,
            pixel_scale,
        })
    }

    pub fn empty(geometry: SensorGeometry) -> Self {
        EventStream {
            events: Vec::new(),
            geometry,
            pixel_scale: None,
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn pixel_scale(&self) -> Option<f64> {
        self.pixel_scale
    }

    pub fn with_pixel_scale(mut self, scale: Option<f64>) -> Self {
        self.pixel_scale = scale;
        self
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Timestamp of the last event (streams start at t = 0).
    pub fn duration_us(&self) -> u64 {
        self.events.last().map_or(0, |e| e.t)
    }

    /// Index range of events with `t0 <= t < t1`.
    pub fn time_range(&self, t0: u64, t1: u64) -> std::ops::Range<usize> {
        let lo = self.events.partition_point(|e| e.t < t0);
        let hi = self.events.partition_point(|e| e.t < t1).max(lo);
        lo..hi
    }

    /// Events with `t0 <= t < t1`, order preserved.
    pub fn slice_time(&self, t0: u64, t1: u64) -> Result<EventStream, EventError> {
        if t0 > t1 {
            return Err(EventError::InvalidSlice { t0, t1 });
        }
        let r = self.time_range(t0, t1);
        Ok(EventStream {
            events: self.events[r].to_vec(),
            geometry: self.geometry,
            pixel_scale: self.pixel_scale,
        })
    }
}

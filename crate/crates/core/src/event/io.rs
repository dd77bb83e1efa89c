//! CSV and binary event file formats.
//!
//! CSV: optional `t_us,x,y,p` header, one event per line, `p` in {1, -1}.
//! Binary: 16-byte header (`EVST`, version u16, width u16, height u16,
//! reserved u16, pixel scale u32 in micro-arcsec, 0 = unknown) followed by
//! packed 13-byte little-endian records (u64 t, u16 x, u16 y, i8 p).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Event, EventError, EventStream, Polarity, SensorGeometry};

const MAGIC: &[u8; 4] = b"EVST";
const VERSION: u16 = 1;
const RECORD_LEN: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamFormat {
    Csv,
    Binary,
}

impl StreamFormat {
    /// Guess from the file extension; anything but `.csv` is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => StreamFormat::Csv,
            _ => StreamFormat::Binary,
        }
    }
}

/// A record skipped by lenient ingestion.
#[derive(Debug)]
pub struct RecordError {
    pub index: usize,
    pub error: EventError,
}

/// Strict read: the first bad record aborts.
pub fn read_stream(
    path: &Path,
    format: StreamFormat,
    geometry: Option<SensorGeometry>,
) -> Result<EventStream, EventError> {
    let file = BufReader::new(File::open(path)?);
    match format {
        StreamFormat::Csv => read_csv(file, geometry.ok_or(EventError::MissingGeometry)?, true)
            .map(|(s, _)| s),
        StreamFormat::Binary => read_binary(file, true).map(|(s, _)| s),
    }
}

/// Lenient read: bad records are skipped and returned alongside the stream,
/// so `records == events + errors`.
pub fn read_stream_report(
    path: &Path,
    format: StreamFormat,
    geometry: Option<SensorGeometry>,
) -> Result<(EventStream, Vec<RecordError>), EventError> {
    let file = BufReader::new(File::open(path)?);
    match format {
        StreamFormat::Csv => read_csv(file, geometry.ok_or(EventError::MissingGeometry)?, false),
        StreamFormat::Binary => read_binary(file, false),
    }
}

pub fn write_stream(stream: &EventStream, path: &Path, format: StreamFormat) -> Result<(), EventError> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        StreamFormat::Csv => write_csv(stream, &mut w)?,
        StreamFormat::Binary => write_binary(stream, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

struct Checker {
    geometry: SensorGeometry,
    prev: u64,
    strict: bool,
    events: Vec<Event>,
    errors: Vec<RecordError>,
    records: usize,
}

impl Checker {
    fn push(&mut self, location: String, raw: Result<(u64, i64, i64, i64), String>) -> Result<(), EventError> {
        let index = self.records;
        self.records += 1;
        let res = raw
            .map_err(|reason| EventError::Malformed {
                location: location.clone(),
                reason,
            })
            .and_then(|(t, x, y, p)| {
                let p = Polarity::from_sign(p).ok_or_else(|| EventError::Malformed {
                    location: location.clone(),
                    reason: format!("polarity {p} not in {{1, -1}}"),
                })?;
                if !self.geometry.contains(x, y) {
                    return Err(EventError::OutOfBounds {
                        location: location.clone(),
                        x,
                        y,
                        width: self.geometry.width,
                        height: self.geometry.height,
                    });
                }
                if t < self.prev {
                    return Err(EventError::TimestampRegression {
                        location: location.clone(),
                        prev: self.prev,
                        t,
                    });
                }
                Ok(Event::new(t, x as u16, y as u16, p))
            });
        match res {
            Ok(e) => {
                self.prev = e.t;
                self.events.push(e);
                Ok(())
            }
            Err(error) if self.strict => Err(error),
            Err(error) => {
                self.errors.push(RecordError { index, error });
                Ok(())
            }
        }
    }

    fn finish(self, pixel_scale: Option<f64>) -> (EventStream, Vec<RecordError>) {
        let stream = EventStream {
            events: self.events,
            geometry: self.geometry,
            pixel_scale,
        };
        (stream, self.errors)
    }
}

fn parse_csv_line(line: &str) -> Result<(u64, i64, i64, i64), String> {
    let mut it = line.split(',').map(str::trim);
    let mut field = |name: &str| it.next().ok_or_else(|| format!("missing field {name}"));
    let t = field("t_us")?;
    let x = field("x")?;
    let y = field("y")?;
    let p = field("p")?;
    if it.next().is_some() {
        return Err("too many fields".into());
    }
    let t = t.parse::<u64>().map_err(|e| format!("t_us {t:?}: {e}"))?;
    let x = x.parse::<i64>().map_err(|e| format!("x {x:?}: {e}"))?;
    let y = y.parse::<i64>().map_err(|e| format!("y {y:?}: {e}"))?;
    let p = p.parse::<i64>().map_err(|e| format!("p {p:?}: {e}"))?;
    Ok((t, x, y, p))
}

pub fn read_csv<R: BufRead>(
    reader: R,
    geometry: SensorGeometry,
    strict: bool,
) -> Result<(EventStream, Vec<RecordError>), EventError> {
    geometry.validate()?;
    let mut c = Checker {
        geometry,
        prev: 0,
        strict,
        events: Vec::new(),
        errors: Vec::new(),
        records: 0,
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || (i == 0 && trimmed.starts_with("t_us")) {
            continue;
        }
        c.push(format!("line {}", i + 1), parse_csv_line(trimmed))?;
    }
    Ok(c.finish(None))
}

pub fn write_csv<W: Write>(stream: &EventStream, w: &mut W) -> Result<(), EventError> {
    writeln!(w, "t_us,x,y,p")?;
    for e in stream.events() {
        writeln!(w, "{},{},{},{}", e.t, e.x, e.y, e.p.sign())?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(
    mut reader: R,
    strict: bool,
) -> Result<(EventStream, Vec<RecordError>), EventError> {
    let mut header = [0u8; 16];
    reader
        .read_exact(&mut header)
        .map_err(|e| EventError::BadHeader(e.to_string()))?;
    if &header[0..4] != MAGIC {
        return Err(EventError::BadHeader("magic mismatch".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(EventError::BadHeader(format!("unsupported version {version}")));
    }
    let width = u16::from_le_bytes([header[6], header[7]]) as u32;
    let height = u16::from_le_bytes([header[8], header[9]]) as u32;
    let scale_uas = u32::from_le_bytes([header[12], header[13], header[14], header[15]]);
    let geometry = SensorGeometry::new(width, height)?;
    let pixel_scale = (scale_uas > 0).then(|| scale_uas as f64 / 1e6);

    let mut c = Checker {
        geometry,
        prev: 0,
        strict,
        events: Vec::new(),
        errors: Vec::new(),
        records: 0,
    };
    let mut rec = [0u8; RECORD_LEN];
    let mut offset = 16usize;
    loop {
        let mut filled = 0;
        while filled < RECORD_LEN {
            let n = reader.read(&mut rec[filled..])?;
            if n == 0 {
                break;
            }
            filled += n;
        }
        if filled == 0 {
            break;
        }
        let location = format!("byte offset {offset}");
        if filled < RECORD_LEN {
            c.push(location, Err(format!("truncated record ({filled} of {RECORD_LEN} bytes)")))?;
            break;
        }
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes([rec[8], rec[9]]) as i64;
        let y = u16::from_le_bytes([rec[10], rec[11]]) as i64;
        let p = rec[12] as i8 as i64;
        c.push(location, Ok((t, x, y, p)))?;
        offset += RECORD_LEN;
    }
    Ok(c.finish(pixel_scale))
}

pub fn write_binary<W: Write>(stream: &EventStream, w: &mut W) -> Result<(), EventError> {
    let g = stream.geometry();
    let mut header = [0u8; 16];
    header[0..4].copy_from_slice(MAGIC);
    header[4..6].copy_from_slice(&VERSION.to_le_bytes());
    header[6..8].copy_from_slice(&(g.width as u16).to_le_bytes());
    header[8..10].copy_from_slice(&(g.height as u16).to_le_bytes());
    let scale_uas = stream
        .pixel_scale()
        .map_or(0, |s| (s * 1e6).round().clamp(0.0, u32::MAX as f64) as u32);
    header[12..16].copy_from_slice(&scale_uas.to_le_bytes());
    w.write_all(&header)?;
    let mut rec = [0u8; RECORD_LEN];
    for e in stream.events() {
        rec[0..8].copy_from_slice(&e.t.to_le_bytes());
        rec[8..10].copy_from_slice(&e.x.to_le_bytes());
        rec[10..12].copy_from_slice(&e.y.to_le_bytes());
        rec[12] = e.p.sign() as u8;
        w.write_all(&rec)?;
    }
    Ok(())
}

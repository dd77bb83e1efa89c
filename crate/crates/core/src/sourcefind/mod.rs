//! Source detection on star maps: connectivity for extended sources,
//! spatio-temporal DBSCAN for point sources, and per-source features.

mod components;
mod dbscan;
mod features;

pub(crate) use components::link_pixels;
pub use components::connected_components;
pub use dbscan::{dbscan, dbscan_cluster, Label};
pub use features::extract_features;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::EventStream;
use crate::starmap::{sigma_clip_mask, AccumulationFrame, SigmaClipParams, StarMapError};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("invalid cluster parameters: {0}")]
    InvalidParams(String),
    #[error("{n} points exceed the extended threshold {limit}")]
    TooManyPoints { n: usize, limit: usize },
    #[error(transparent)]
    StarMap(#[from] StarMapError),
    #[error("source table: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    /// Neighbourhood radius in scaled `(x, y, t)` space, pixels.
    pub epsilon: f64,
    /// Neighbours (self included) needed for a core point.
    pub min_points: usize,
    /// Pixels per second along the time axis.
    pub time_scale: f64,
    /// Components with more member events than this skip DBSCAN.
    pub extended_threshold: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            epsilon: 3.0,
            min_points: 6,
            time_scale: 1.0,
            extended_threshold: 10_000,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if !(self.epsilon > 0.0) || self.min_points < 1 || !(self.time_scale >= 0.0) {
            return Err(ClusterError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Point,
    Extended,
}

/// A detected source. Centroids are in sensor pixel coordinates at the
/// star map's reference time.
#[derive(Clone, Debug, PartialEq)]
pub struct EventSource {
    pub id: usize,
    pub kind: SourceKind,
    /// Indices into the stream; empty when loaded from a table.
    pub member_events: Vec<u32>,
    pub weighted_centroid: [f64; 2],
    pub geometric_centroid: [f64; 2],
    pub area: usize,
    pub equivalent_diameter: f64,
    pub extent: f64,
    /// Events per second over the integration window.
    pub event_rate: f64,
    pub on_count: usize,
    pub off_count: usize,
}

impl EventSource {
    pub fn n_events(&self) -> usize {
        self.on_count + self.off_count
    }

    /// `|geometric - weighted|` in pixels.
    pub fn com_error(&self) -> f64 {
        (self.geometric_centroid[0] - self.weighted_centroid[0]).hypot(self.geometric_centroid[1] - self.weighted_centroid[1])
    }

    pub fn on_off_ratio(&self) -> f64 {
        if self.off_count == 0 {
            f64::INFINITY
        } else {
            self.on_count as f64 / self.off_count as f64
        }
    }
}

/// Find sources in a star map.
///
/// Significant pixels come from a sigma clip of `|H|`. Their 8-connected
/// components holding more than `extended_threshold` events become extended
/// sources. Events on the remaining significant pixels are clustered with
/// DBSCAN at `(x, y, (t - t_start) * time_scale)`; since no two events in
/// pixels more than `epsilon` apart can be neighbours, DBSCAN runs
/// independently on each group of pixels chained within `epsilon`, which
/// gives the same labels as one global run. Sources are returned brightest
/// first with ids in that order.
pub fn find_sources(
    frame: &AccumulationFrame,
    stream: &EventStream,
    params: &ClusterParams,
    clip: &SigmaClipParams,
) -> Result<Vec<EventSource>, ClusterError> {
    params.validate()?;
    let mask = sigma_clip_mask(frame, clip.n_sigma, clip.max_iter)?;
    let mut sources = Vec::new();
    let mut remaining = Vec::with_capacity(mask.len());
    let count = |pixels: &[usize]| pixels.iter().map(|&p| frame.events_at(p).len()).sum::<usize>();
    let members_of = |pixels: &[usize]| -> Vec<u32> {
        let mut m: Vec<u32> = pixels.iter().flat_map(|&p| frame.events_at(p).iter().copied()).collect();
        m.sort_unstable();
        m
    };

    for comp in connected_components(&mask) {
        if count(&comp) > params.extended_threshold {
            let mut s = extract_features(&members_of(&comp), frame, stream);
            s.kind = SourceKind::Extended;
            sources.push(s);
        } else {
            remaining.extend(comp);
        }
    }
    remaining.sort_unstable();

    let r = params.epsilon.floor() as i64;
    let e2 = params.epsilon * params.epsilon;
    let reach: Vec<(i64, i64)> = (-r..=0)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| (dy < 0 || dx < 0) && ((dx * dx + dy * dy) as f64) <= e2)
        .collect();
    let mut groups = link_pixels(frame.width, frame.height, &remaining, &reach).groups();
    for g in groups.iter_mut() {
        for k in g.iter_mut() {
            *k = remaining[*k];
        }
    }

    let events = stream.events();
    for group in groups {
        if count(&group) > params.extended_threshold {
            // Too dense for DBSCAN: fall back to connectivity inside the group.
            let sub = crate::starmap::Mask::new(frame.width, frame.height, group);
            for comp in connected_components(&sub) {
                let mut s = extract_features(&members_of(&comp), frame, stream);
                s.kind = SourceKind::Extended;
                sources.push(s);
            }
            continue;
        }
        let mut idx = Vec::new();
        let mut pts = Vec::new();
        for &p in &group {
            let (x, y) = frame.coords(p);
            for &i in frame.events_at(p) {
                let t = (events[i as usize].t as f64 - frame.t_start as f64) * 1e-6 * params.time_scale;
                idx.push(i);
                pts.push([x as f64, y as f64, t]);
            }
        }
        let labels = dbscan_cluster(&pts, params)?;
        let n_clusters = labels
            .iter()
            .filter_map(|l| match l {
                Label::Cluster(c) => Some(*c as usize + 1),
                Label::Noise => None,
            })
            .max()
            .unwrap_or(0);
        let mut clusters: Vec<Vec<u32>> = vec![Vec::new(); n_clusters];
        for (k, l) in labels.iter().enumerate() {
            if let Label::Cluster(c) = l {
                clusters[*c as usize].push(idx[k]);
            }
        }
        for mut c in clusters {
            c.sort_unstable();
            sources.push(extract_features(&c, frame, stream));
        }
    }

    sources.sort_by(|a, b| {
        b.member_events
            .len()
            .cmp(&a.member_events.len())
            .then(a.weighted_centroid[1].total_cmp(&b.weighted_centroid[1]))
            .then(a.weighted_centroid[0].total_cmp(&b.weighted_centroid[0]))
    });
    for (i, s) in sources.iter_mut().enumerate() {
        s.id = i;
    }
    Ok(sources)
}

#[derive(Debug, Serialize, Deserialize)]
struct SourceRow {
    id: usize,
    kind: SourceKind,
    weighted_x: f64,
    weighted_y: f64,
    geometric_x: f64,
    geometric_y: f64,
    area: usize,
    equivalent_diameter: f64,
    extent: f64,
    event_rate: f64,
    on_count: usize,
    off_count: usize,
    n_events: usize,
}

pub fn write_sources(sources: &[EventSource], path: &Path) -> Result<(), ClusterError> {
    let mut w = csv::Writer::from_path(path)?;
    for s in sources {
        w.serialize(SourceRow {
            id: s.id,
            kind: s.kind,
            weighted_x: s.weighted_centroid[0],
            weighted_y: s.weighted_centroid[1],
            geometric_x: s.geometric_centroid[0],
            geometric_y: s.geometric_centroid[1],
            area: s.area,
            equivalent_diameter: s.equivalent_diameter,
            extent: s.extent,
            event_rate: s.event_rate,
            on_count: s.on_count,
            off_count: s.off_count,
            n_events: s.n_events(),
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_sources(path: &Path) -> Result<Vec<EventSource>, ClusterError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: SourceRow = row?;
        out.push(EventSource {
            id: row.id,
            kind: row.kind,
            member_events: Vec::new(),
            weighted_centroid: [row.weighted_x, row.weighted_y],
            geometric_centroid: [row.geometric_x, row.geometric_y],
            area: row.area,
            equivalent_diameter: row.equivalent_diameter,
            extent: row.extent,
            event_rate: row.event_rate,
            on_count: row.on_count,
            off_count: row.off_count,
        });
    }
    Ok(out)
}

//! Characterization reports: per-source feature rows joined with catalog
//! matches, per-field aggregates, centre-of-mass offsets, scan budgets and
//! long-format plot data.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::astrometry::{world_to_pixel, CalibrationSolution, CatalogStar};
use crate::crossmatch::{MatchFlag, MatchRecord};
use crate::event::SensorGeometry;
use crate::sky::ARCSEC_PER_DEG;
use crate::sourcefind::{EventSource, SourceKind};
use crate::starmap::{PolarityMode, VelocityHypothesis};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no matched sources")]
    NoMatches,
    #[error("invalid scan parameters: {0}")]
    InvalidScan(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Spearman rank correlation with average ranks for ties. `None` for fewer
/// than two pairs or a constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    };
    let (rx, ry) = (rank(&x[..n]), rank(&y[..n]));
    let m = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let (a, b) = (rx[k] - m, ry[k] - m);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Unit vector of the mount slew in the pixel frame: opposite to the
/// apparent star motion.
pub fn slew_direction(theta: VelocityHypothesis) -> Option<[f64; 2]> {
    let s = theta.speed();
    (s > 0.0).then(|| [-theta.vx / s, -theta.vy / s])
}

/// Centre-of-mass offsets of one matched source, pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComOffset {
    pub source_id: usize,
    pub catalog_id: u64,
    /// Weighted centroid minus the catalog position.
    pub offset: [f64; 2],
    /// Component of `offset` along the slew direction.
    pub along_slew: Option<f64>,
    pub geometric_minus_weighted: [f64; 2],
    pub equivalent_diameter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComOffsetStats {
    pub polarity_mode: PolarityMode,
    pub per_source: Vec<ComOffset>,
    pub mean_offset: [f64; 2],
    /// Mean length of the per-source offsets.
    pub mean_offset_magnitude: f64,
    pub mean_along_slew: Option<f64>,
    pub mean_geometric_minus_weighted: [f64; 2],
    /// Rank correlation of `|geometric - weighted|` with equivalent diameter.
    pub spearman_com_vs_diameter: Option<f64>,
}

/// Offsets of every matched source whose catalog star projects through
/// `solution`.
pub fn report_com_offsets(
    matches: &[MatchRecord],
    sources: &[EventSource],
    solution: &CalibrationSolution,
    catalog: &[CatalogStar],
    slew_direction: Option<[f64; 2]>,
    polarity_mode: PolarityMode,
) -> Result<ComOffsetStats, ReportError> {
    let by_id: std::collections::HashMap<u64, &CatalogStar> = catalog.iter().map(|c| (c.id, c)).collect();
    let mut per_source = Vec::new();
    for m in matches.iter().filter(|m| m.flags == MatchFlag::Matched) {
        let (Some(cid), Some(src)) = (m.catalog_id, sources.iter().find(|s| s.id == m.source_id)) else {
            continue;
        };
        let Some(star) = by_id.get(&cid) else { continue };
        let Some(p) = world_to_pixel(star.position(), solution) else { continue };
        let w = src.weighted_centroid;
        let offset = [w[0] - p[0], w[1] - p[1]];
        per_source.push(ComOffset {
            source_id: src.id,
            catalog_id: cid,
            offset,
            along_slew: slew_direction.map(|d| offset[0] * d[0] + offset[1] * d[1]),
            geometric_minus_weighted: [src.geometric_centroid[0] - w[0], src.geometric_centroid[1] - w[1]],
            equivalent_diameter: src.equivalent_diameter,
        });
    }
    if per_source.is_empty() {
        return Err(ReportError::NoMatches);
    }
    let n = per_source.len() as f64;
    let mean2 = |f: &dyn Fn(&ComOffset) -> [f64; 2]| {
        let s = per_source.iter().fold([0.0, 0.0], |a, c| {
            let v = f(c);
            [a[0] + v[0], a[1] + v[1]]
        });
        [s[0] / n, s[1] / n]
    };
    let mean_offset = mean2(&|c| c.offset);
    let mean_geometric_minus_weighted = mean2(&|c| c.geometric_minus_weighted);
    let mean_offset_magnitude = per_source.iter().map(|c| c.offset[0].hypot(c.offset[1])).sum::<f64>() / n;
    let mean_along_slew = slew_direction.map(|_| per_source.iter().filter_map(|c| c.along_slew).sum::<f64>() / n);
    let com: Vec<f64> = per_source
        .iter()
        .map(|c| c.geometric_minus_weighted[0].hypot(c.geometric_minus_weighted[1]))
        .collect();
    let dia: Vec<f64> = per_source.iter().map(|c| c.equivalent_diameter).collect();
    Ok(ComOffsetStats {
        polarity_mode,
        spearman_com_vs_diameter: spearman(&com, &dia),
        per_source,
        mean_offset,
        mean_offset_magnitude,
        mean_along_slew,
        mean_geometric_minus_weighted,
    })
}

/// Mean offset vectors grouped by polarity mode.
pub fn mean_offsets_by_mode(stats: &[ComOffsetStats]) -> Vec<(PolarityMode, [f64; 2])> {
    let mut out: Vec<(PolarityMode, [f64; 2], usize)> = Vec::new();
    for s in stats {
        for c in &s.per_source {
            match out.iter_mut().find(|e| e.0 == s.polarity_mode) {
                Some(e) => {
                    e.1[0] += c.offset[0];
                    e.1[1] += c.offset[1];
                    e.2 += 1;
                }
                None => out.push((s.polarity_mode, c.offset, 1)),
            }
        }
    }
    out.into_iter()
        .map(|(m, s, k)| (m, [s[0] / k as f64, s[1] / k as f64]))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanBudget {
    /// Sky width covered by one pass, degrees.
    pub swath_deg: f64,
    pub seconds: f64,
}

/// Time to sweep `region_deg2` at `speed` deg/s with a swath equal to the
/// sensor's long axis.
pub fn scan_budget(
    speed: f64,
    region_deg2: f64,
    pixel_scale: f64,
    geometry: SensorGeometry,
) -> Result<ScanBudget, ReportError> {
    if !(speed > 0.0) || !speed.is_finite() {
        return Err(ReportError::InvalidScan(format!("speed {speed} deg/s")));
    }
    if !(pixel_scale > 0.0) || !(region_deg2 >= 0.0) {
        return Err(ReportError::InvalidScan(format!("scale {pixel_scale}, region {region_deg2}")));
    }
    let swath_deg = geometry.width.max(geometry.height) as f64 * pixel_scale / ARCSEC_PER_DEG;
    Ok(ScanBudget {
        swath_deg,
        seconds: region_deg2 / (swath_deg * speed),
    })
}

/// One source of a characterization report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceRow {
    pub source_id: usize,
    pub kind: SourceKind,
    pub matched: bool,
    pub catalog_id: Option<u64>,
    pub magnitude: Option<f64>,
    /// Arcsec for catalog matches, pixels for matches through a sibling.
    pub sep: Option<f64>,
    pub in_fov: bool,
    pub event_rate: f64,
    pub equivalent_diameter: f64,
    pub extent: f64,
    pub area: usize,
    pub on_count: usize,
    pub off_count: usize,
    /// `None` when there are no OFF events.
    pub on_off_ratio: Option<f64>,
    pub weighted_x: f64,
    pub weighted_y: f64,
    pub geometric_x: f64,
    pub geometric_y: f64,
    pub com_error: f64,
    /// Weighted centroid minus catalog position, pixels.
    pub catalog_offset_x: Option<f64>,
    pub catalog_offset_y: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub detected: usize,
    /// Sources inside the sensor footprint at the star-map midpoint.
    pub detected_in_fov: usize,
    pub matched: usize,
    pub matched_in_fov: usize,
    pub spurious: usize,
    /// Faintest matched magnitude.
    pub limiting_magnitude: Option<f64>,
    pub pixel_scale: Option<f64>,
    pub pixel_scale_error: Option<f64>,
    pub mean_com_offset: Option<[f64; 2]>,
    pub mean_com_offset_along_slew: Option<f64>,
    pub spearman_rate_vs_magnitude: Option<f64>,
    pub spearman_diameter_vs_magnitude: Option<f64>,
    pub spearman_com_vs_diameter: Option<f64>,
}

impl FieldSummary {
    /// Aggregates derived only from `rows` and the solution.
    pub fn from_rows(
        rows: &[SourceRow],
        solution: Option<&CalibrationSolution>,
        true_pixel_scale: Option<f64>,
        slew_direction: Option<[f64; 2]>,
    ) -> Self {
        let matched: Vec<&SourceRow> = rows.iter().filter(|r| r.matched).collect();
        let limiting_magnitude = matched.iter().filter_map(|r| r.magnitude).reduce(f64::max);
        let offs: Vec<[f64; 2]> = rows
            .iter()
            .filter_map(|r| Some([r.catalog_offset_x?, r.catalog_offset_y?]))
            .collect();
        let mean_com_offset = (!offs.is_empty()).then(|| {
            let n = offs.len() as f64;
            [offs.iter().map(|o| o[0]).sum::<f64>() / n, offs.iter().map(|o| o[1]).sum::<f64>() / n]
        });
        let with_mag: Vec<&&SourceRow> = matched.iter().filter(|r| r.magnitude.is_some()).collect();
        let mags: Vec<f64> = with_mag.iter().map(|r| r.magnitude.unwrap()).collect();
        let rates: Vec<f64> = with_mag.iter().map(|r| r.event_rate).collect();
        let dias: Vec<f64> = with_mag.iter().map(|r| r.equivalent_diameter).collect();
        let all_com: Vec<f64> = rows.iter().map(|r| r.com_error).collect();
        let all_dia: Vec<f64> = rows.iter().map(|r| r.equivalent_diameter).collect();
        let pixel_scale = solution.map(|s| s.pixel_scale);
        FieldSummary {
            detected: rows.len(),
            detected_in_fov: rows.iter().filter(|r| r.in_fov).count(),
            matched: matched.len(),
            matched_in_fov: matched.iter().filter(|r| r.in_fov).count(),
            spurious: rows.len() - matched.len(),
            limiting_magnitude,
            pixel_scale,
            pixel_scale_error: pixel_scale.zip(true_pixel_scale).map(|(a, b)| (a - b).abs()),
            mean_com_offset,
            mean_com_offset_along_slew: mean_com_offset.zip(slew_direction).map(|(m, d)| m[0] * d[0] + m[1] * d[1]),
            spearman_rate_vs_magnitude: spearman(&rates, &mags),
            spearman_diameter_vs_magnitude: spearman(&dias, &mags),
            spearman_com_vs_diameter: spearman(&all_com, &all_dia),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationReport {
    pub field: String,
    pub speed_deg_s: Option<f64>,
    pub polarity_mode: PolarityMode,
    /// `solved`, `spsi`, `internal_match` or `unsolved`.
    pub status: String,
    pub theta: VelocityHypothesis,
    pub solution: Option<CalibrationSolution>,
    pub summary: FieldSummary,
    pub sources: Vec<SourceRow>,
}

/// Inputs joined into a report.
pub struct ReportInput<'a> {
    pub field: &'a str,
    pub speed_deg_s: Option<f64>,
    pub polarity_mode: PolarityMode,
    pub status: &'a str,
    pub theta: VelocityHypothesis,
    /// Star-map integration, seconds.
    pub window_s: f64,
    pub geometry: SensorGeometry,
    pub sources: &'a [EventSource],
    pub matches: &'a [MatchRecord],
    pub solution: Option<&'a CalibrationSolution>,
    pub catalog: &'a [CatalogStar],
    pub true_pixel_scale: Option<f64>,
}

pub fn build_report(input: &ReportInput) -> CharacterizationReport {
    let by_id: std::collections::HashMap<u64, &CatalogStar> = input.catalog.iter().map(|c| (c.id, c)).collect();
    let half = input.window_s / 2.0;
    let (w, h) = (input.geometry.width as f64, input.geometry.height as f64);
    let rows: Vec<SourceRow> = input
        .sources
        .iter()
        .map(|s| {
            let m = input.matches.iter().find(|m| m.source_id == s.id);
            let matched = m.is_some_and(|m| m.flags == MatchFlag::Matched);
            let catalog_id = m.and_then(|m| m.catalog_id);
            let star_px = catalog_id
                .filter(|_| matched)
                .and_then(|id| by_id.get(&id))
                .zip(input.solution)
                .and_then(|(c, sol)| world_to_pixel(c.position(), sol));
            let mx = s.weighted_centroid[0] + input.theta.vx * half;
            let my = s.weighted_centroid[1] + input.theta.vy * half;
            SourceRow {
                source_id: s.id,
                kind: s.kind,
                matched,
                catalog_id,
                magnitude: m.and_then(|m| m.mag).filter(|_| matched),
                sep: m.filter(|_| matched).map(|m| m.sep),
                in_fov: mx >= -0.5 && my >= -0.5 && mx < w - 0.5 && my < h - 0.5,
                event_rate: s.event_rate,
                equivalent_diameter: s.equivalent_diameter,
                extent: s.extent,
                area: s.area,
                on_count: s.on_count,
                off_count: s.off_count,
                on_off_ratio: (s.off_count > 0).then(|| s.on_off_ratio()),
                weighted_x: s.weighted_centroid[0],
                weighted_y: s.weighted_centroid[1],
                geometric_x: s.geometric_centroid[0],
                geometric_y: s.geometric_centroid[1],
                com_error: s.com_error(),
                catalog_offset_x: star_px.map(|p| s.weighted_centroid[0] - p[0]),
                catalog_offset_y: star_px.map(|p| s.weighted_centroid[1] - p[1]),
            }
        })
        .collect();
    let summary = FieldSummary::from_rows(&rows, input.solution, input.true_pixel_scale, slew_direction(input.theta));
    CharacterizationReport {
        field: input.field.to_string(),
        speed_deg_s: input.speed_deg_s,
        polarity_mode: input.polarity_mode,
        status: input.status.to_string(),
        theta: input.theta,
        solution: input.solution.copied(),
        summary,
        sources: rows,
    }
}

/// One observation of one feature, keyed for plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub field: String,
    pub speed: Option<f64>,
    pub polarity_mode: PolarityMode,
    pub source_id: Option<usize>,
    pub magnitude: Option<f64>,
    pub feature: String,
    pub value: f64,
}

impl CharacterizationReport {
    /// Long-format rows: per-source features, then field aggregates with an
    /// empty source id.
    pub fn long_rows(&self) -> Vec<LongRow> {
        let row = |source_id: Option<usize>, magnitude: Option<f64>, feature: &str, value: f64| LongRow {
            field: self.field.clone(),
            speed: self.speed_deg_s,
            polarity_mode: self.polarity_mode,
            source_id,
            magnitude,
            feature: feature.to_string(),
            value,
        };
        let mut out = Vec::new();
        for r in &self.sources {
            let id = Some(r.source_id);
            let feats = [
                ("event_rate", Some(r.event_rate)),
                ("equivalent_diameter", Some(r.equivalent_diameter)),
                ("extent", Some(r.extent)),
                ("on_off_ratio", r.on_off_ratio),
                ("com_error", Some(r.com_error)),
                ("catalog_offset_x", r.catalog_offset_x),
                ("catalog_offset_y", r.catalog_offset_y),
            ];
            for (name, v) in feats {
                if let Some(v) = v {
                    out.push(row(id, r.magnitude, name, v));
                }
            }
        }
        let s = &self.summary;
        let aggs = [
            ("detected", Some(s.detected as f64)),
            ("detected_in_fov", Some(s.detected_in_fov as f64)),
            ("matched", Some(s.matched as f64)),
            ("matched_in_fov", Some(s.matched_in_fov as f64)),
            ("spurious", Some(s.spurious as f64)),
            ("limiting_magnitude", s.limiting_magnitude),
            ("pixel_scale_error", s.pixel_scale_error),
        ];
        for (name, v) in aggs {
            if let Some(v) = v {
                out.push(row(None, None, name, v));
            }
        }
        out
    }
}

pub fn write_long_csv(rows: &[LongRow], path: &Path) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json`, `report_sources.csv` and `features_long.csv`.
pub fn write_report(report: &CharacterizationReport, dir: &Path) -> Result<(), ReportError> {
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;
    let mut w = csv::Writer::from_path(dir.join("report_sources.csv"))?;
    for r in &report.sources {
        w.serialize(r)?;
    }
    w.flush()?;
    write_long_csv(&report.long_rows(), &dir.join("features_long.csv"))
}

pub fn read_report(path: &Path) -> Result<CharacterizationReport, ReportError> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

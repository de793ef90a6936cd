//! Extraction of THW-triggered scenarios from highD-style track files.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::{build_grid_frame, GridConfig, Rect, SceneFrame, Visibility};
use super::{ScenarioDataset, ScenarioTensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Row {
    frame: i64,
    id: u64,
    x: f64,
    y: f64,
    width: f64,
    height: f64,
    x_velocity: Option<f64>,
    preceding_id: u64,
    thw: f64,
}

impl Row {
    fn center(&self) -> (f64, f64) {
        (self.x + self.width / 2.0, self.y + self.height / 2.0)
    }
}

/// Where and when a scenario was triggered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trigger {
    pub track_id: u64,
    pub frame: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub tracks: usize,
    pub triggers: Vec<Trigger>,
    pub skipped_insufficient_history: usize,
    pub without_trigger: usize,
}

struct Columns {
    index: HashMap<String, usize>,
}

impl Columns {
    fn new(headers: &csv::StringRecord) -> Self {
        Columns {
            index: headers
                .iter()
                .enumerate()
                .map(|(n, h)| (h.trim().to_string(), n))
                .collect(),
        }
    }

    fn require(&self, name: &str, path: &Path) -> Result<usize> {
        self.index.get(name).copied().ok_or_else(|| Error::Schema {
            path: path.to_path_buf(),
            msg: format!("missing required column {name:?}"),
        })
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{other:?}"),
        },
    }
}

fn field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    col: usize,
    name: &str,
    path: &Path,
) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    let raw = rec.get(col).unwrap_or("");
    raw.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("column {name:?}: cannot parse {raw:?}"),
    })
}

struct Meta {
    frame_rate: f64,
    /// Lane-marking y coordinates per carriageway.
    markings: Vec<Vec<f64>>,
}

fn read_meta(path: &Path) -> Result<Meta> {
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols = Columns::new(&headers);
    let rate_col = cols.require("frameRate", path)?;
    let rec = match rdr.records().next() {
        Some(r) => r.map_err(|e| csv_error(path, e))?,
        None => {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                msg: "recording meta file has no data row".into(),
            })
        }
    };
    let frame_rate: f64 = field(&rec, rate_col, "frameRate", path)?;
    if !(frame_rate.is_finite() && frame_rate > 0.0) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: rec.position().map_or(0, |p| p.line()),
            msg: format!("frameRate must be positive, got {frame_rate}"),
        });
    }
    let mut markings = Vec::new();
    for name in ["upperLaneMarkings", "lowerLaneMarkings"] {
        if let Some(&c) = cols.index.get(name) {
            let raw = rec.get(c).unwrap_or("");
            let ys: std::result::Result<Vec<f64>, _> = raw
                .split(';')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse())
                .collect();
            let ys = ys.map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: rec.position().map_or(0, |p| p.line()),
                msg: format!("column {name:?}: cannot parse {raw:?}"),
            })?;
            if ys.len() >= 2 {
                markings.push(ys);
            }
        }
    }
    Ok(Meta {
        frame_rate,
        markings,
    })
}

fn read_tracks(path: &Path) -> Result<Vec<Row>> {
    if std::fs::metadata(path)
        .map_err(|e| Error::io(path, e))?
        .len()
        == 0
    {
        return Ok(vec![]);
    }
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols = Columns::new(&headers);
    let c_frame = cols.require("frame", path)?;
    let c_id = cols.require("id", path)?;
    let c_x = cols.require("x", path)?;
    let c_y = cols.require("y", path)?;
    let c_w = cols.require("width", path)?;
    let c_h = cols.require("height", path)?;
    let c_prec = cols.require("precedingId", path)?;
    let c_thw = cols.require("thw", path)?;
    cols.require("laneId", path)?;
    let c_vx = cols.index.get("xVelocity").copied();

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = Row {
            frame: field(&rec, c_frame, "frame", path)?,
            id: field(&rec, c_id, "id", path)?,
            x: field(&rec, c_x, "x", path)?,
            y: field(&rec, c_y, "y", path)?,
            width: field(&rec, c_w, "width", path)?,
            height: field(&rec, c_h, "height", path)?,
            x_velocity: c_vx
                .map(|c| field(&rec, c, "xVelocity", path))
                .transpose()?,
            preceding_id: field(&rec, c_prec, "precedingId", path)?,
            thw: field(&rec, c_thw, "thw", path)?,
        };
        let finite = [row.x, row.y, row.width, row.height, row.thw]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: rec.position().map_or(0, |p| p.line()),
                msg: "non-finite value".into(),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Driving direction along image x: +1 or -1.
fn direction(track: &[Row]) -> f64 {
    let v: Option<f64> = track.iter().map(|r| r.x_velocity).sum();
    let d = match v {
        Some(v) => v,
        None => track.last().unwrap().x - track.first().unwrap().x,
    };
    if d < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Scans every track for its first frame with a leader and `0 < THW < threshold`,
/// and rasterises the ego-centric history ending there.
///
/// Grids are fixed to the ego pose at the trigger frame. History frames are
/// `round(k * dt * frameRate)` frames back; tracks without that much history
/// are skipped and counted.
pub fn ingest_highd(
    tracks_file: &Path,
    recording_meta_file: &Path,
    config: &GridConfig,
    thw_threshold: f64,
) -> Result<(ScenarioDataset, IngestReport)> {
    config.validate()?;
    let meta = read_meta(recording_meta_file)?;
    let rows = read_tracks(tracks_file)?;

    let mut tracks: BTreeMap<u64, Vec<Row>> = BTreeMap::new();
    let mut by_frame: HashMap<i64, Vec<Row>> = HashMap::new();
    for r in &rows {
        tracks.entry(r.id).or_default().push(*r);
        by_frame.entry(r.frame).or_default().push(*r);
    }
    for t in tracks.values_mut() {
        t.sort_by_key(|r| r.frame);
    }
    let directions: HashMap<u64, f64> = tracks.iter().map(|(&id, t)| (id, direction(t))).collect();
    let (road_x_min, road_x_max) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.x), hi.max(r.x + r.width))
        });

    let offsets: Vec<i64> = (0..config.n_timesteps)
        .rev()
        .map(|k| (k as f64 * config.dt * meta.frame_rate).round() as i64)
        .collect();

    let mut report = IngestReport {
        tracks: tracks.len(),
        ..Default::default()
    };
    let mut tensors = Vec::new();
    for (&id, track) in &tracks {
        let Some(trigger) = track
            .iter()
            .find(|r| r.preceding_id != 0 && r.thw > 0.0 && r.thw < thw_threshold)
        else {
            report.without_trigger += 1;
            continue;
        };
        let ego_at: HashMap<i64, &Row> = track.iter().map(|r| (r.frame, r)).collect();
        let history: Option<Vec<&Row>> = offsets
            .iter()
            .map(|off| ego_at.get(&(trigger.frame - off)).copied())
            .collect();
        let Some(history) = history else {
            report.skipped_insufficient_history += 1;
            continue;
        };

        let s = directions[&id];
        let (x0, y0) = trigger.center();
        let to_ego = |r: &Row| {
            let (cx, cy) = r.center();
            Rect::new(s * (cx - x0), -s * (cy - y0), r.width, r.height)
        };
        let (vx_a, vx_b) = (s * (road_x_min - x0), s * (road_x_max - x0));
        let (vy_min, vy_max) = meta
            .markings
            .iter()
            .find(|m| {
                let (lo, hi) = m
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                        (a.min(v), b.max(v))
                    });
                y0 >= lo && y0 <= hi
            })
            .map(|m| {
                let (lo, hi) = m
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                        (a.min(v), b.max(v))
                    });
                let (a, b) = (-s * (lo - y0), -s * (hi - y0));
                (a.min(b), a.max(b))
            })
            .unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        let visibility = Visibility {
            x_min: vx_a.min(vx_b),
            x_max: vx_a.max(vx_b),
            y_min: vy_min,
            y_max: vy_max,
        };

        let mut frames = Vec::with_capacity(history.len());
        for ego_row in &history {
            let objects = by_frame[&ego_row.frame]
                .iter()
                .filter(|r| r.id != id && directions[&r.id] == s)
                .map(to_ego)
                .collect();
            let scene = SceneFrame {
                ego: to_ego(ego_row),
                objects,
                visibility,
            };
            frames.push(build_grid_frame(&scene, config)?);
        }
        tensors.push(ScenarioTensor::new(id, frames)?);
        report.triggers.push(Trigger {
            track_id: id,
            frame: trigger.frame,
        });
    }

    let dataset = ScenarioDataset {
        grid: *config,
        class_names: vec![],
        labeled_classes: vec![],
        labeled: vec![],
        unlabeled: tensors,
        unlabeled_truth: None,
    };
    Ok((dataset, report))
}

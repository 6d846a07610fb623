//! Ingestion and indexing of highD-style `tracks.csv` recordings.
//!
//! The reader is single pass: rows are decoded one at a time from the
//! underlying reader and appended to the owning vehicle's sample buffer, so
//! memory is bounded by the decoded samples rather than the raw text.

use crate::interval::FrameInterval;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read, Write};
use thiserror::Error;

pub type VehicleId = u32;

/// Default sampling rate of the drone recordings.
pub const DEFAULT_FRAME_RATE: f64 = 25.0;

/// Speeds below this magnitude carry no reliable direction information.
const DIRECTION_DEADBAND: f64 = 0.1;

/// Columns that must be present in the header row.
pub const REQUIRED_COLUMNS: [&str; 11] = [
    "frame",
    "id",
    "x",
    "y",
    "width",
    "height",
    "xVelocity",
    "yVelocity",
    "xAcceleration",
    "yAcceleration",
    "laneId",
];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: column `{column}` has unparseable value `{value}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: column `{column}` {reason}")]
    InvalidValue {
        row: usize,
        column: String,
        reason: String,
    },
    #[error("vehicle {vehicle_id}: {detail}")]
    Integrity { vehicle_id: VehicleId, detail: String },
    #[error("no data rows")]
    NoDataRows,
    #[error("vehicle {0} not found")]
    NotFound(VehicleId),
    #[error("frames {start}..{end} outside trajectory range {range}")]
    Range {
        start: u32,
        end: u32,
        range: FrameInterval,
    },
    #[error("invalid recording config: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One row of the recording.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    pub frame: u32,
    /// Upper-left corner of the bounding box, image frame (y grows downward).
    pub x: f64,
    pub y: f64,
    /// Extent along x (vehicle length on an x-aligned road).
    pub width: f64,
    /// Extent along y.
    pub height: f64,
    pub x_velocity: f64,
    pub y_velocity: f64,
    pub x_acceleration: f64,
    pub y_acceleration: f64,
    pub lane_id: u32,
}

impl TrackSample {
    /// Bounding-box center along x.
    pub fn center_x(&self) -> f64 {
        self.x + self.width / 2.0
    }

    pub fn speed(&self) -> f64 {
        self.x_velocity.abs()
    }
}

/// Direction of travel along the x axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TravelDirection {
    /// Driving towards +x.
    Positive,
    /// Driving towards -x.
    Negative,
}

impl TravelDirection {
    pub fn sign(self) -> f64 {
        match self {
            TravelDirection::Positive => 1.0,
            TravelDirection::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    vehicle_id: VehicleId,
    samples: Vec<TrackSample>,
    direction: Option<TravelDirection>,
}

impl Trajectory {
    /// Builds a trajectory from samples sorted by frame with unit steps.
    pub fn new(vehicle_id: VehicleId, samples: Vec<TrackSample>) -> Result<Self, StoreError> {
        if samples.is_empty() {
            return Err(StoreError::Integrity {
                vehicle_id,
                detail: "trajectory has no samples".into(),
            });
        }
        for pair in samples.windows(2) {
            if pair[1].frame != pair[0].frame + 1 {
                return Err(StoreError::Integrity {
                    vehicle_id,
                    detail: format!(
                        "non-contiguous frames {} -> {}",
                        pair[0].frame, pair[1].frame
                    ),
                });
            }
        }
        let direction = median_direction(&samples);
        if let Some(dir) = direction {
            let reversed = samples
                .iter()
                .find(|s| s.x_velocity.abs() >= DIRECTION_DEADBAND && s.x_velocity.signum() != dir.sign());
            if let Some(s) = reversed {
                return Err(StoreError::Integrity {
                    vehicle_id,
                    detail: format!("direction of travel reverses at frame {}", s.frame),
                });
            }
        }
        Ok(Self {
            vehicle_id,
            samples,
            direction,
        })
    }

    pub fn vehicle_id(&self) -> VehicleId {
        self.vehicle_id
    }

    pub fn samples(&self) -> &[TrackSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first_frame(&self) -> u32 {
        self.samples[0].frame
    }

    pub fn last_frame(&self) -> u32 {
        self.samples[self.samples.len() - 1].frame
    }

    pub fn frame_range(&self) -> FrameInterval {
        FrameInterval {
            start: self.first_frame(),
            end: self.last_frame(),
        }
    }

    /// Sign of the median x velocity; `None` when the median is exactly zero.
    pub fn direction(&self) -> Option<TravelDirection> {
        self.direction
    }

    pub fn sample_at(&self, frame: u32) -> Option<&TrackSample> {
        let first = self.first_frame();
        if frame < first {
            return None;
        }
        self.samples.get((frame - first) as usize)
    }

    /// Borrowed samples for an inclusive frame interval.
    pub fn samples_in(&self, window: FrameInterval) -> Result<&[TrackSample], StoreError> {
        let range = self.frame_range();
        if !range.contains_interval(&window) {
            return Err(StoreError::Range {
                start: window.start,
                end: window.end,
                range,
            });
        }
        let first = self.first_frame();
        Ok(&self.samples[(window.start - first) as usize..=(window.end - first) as usize])
    }

    /// Owned sub-trajectory inclusive of both endpoints.
    pub fn slice(&self, frame_start: u32, frame_end: u32) -> Result<Trajectory, StoreError> {
        let range = self.frame_range();
        let window = FrameInterval::new(frame_start, frame_end).ok_or(StoreError::Range {
            start: frame_start,
            end: frame_end,
            range,
        })?;
        let samples = self.samples_in(window)?.to_vec();
        Ok(Trajectory {
            vehicle_id: self.vehicle_id,
            samples,
            // travel direction is a whole-trajectory property
            direction: self.direction,
        })
    }
}

fn median_direction(samples: &[TrackSample]) -> Option<TravelDirection> {
    let mut v: Vec<f64> = samples.iter().map(|s| s.x_velocity).collect();
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let median = *m;
    if median > 0.0 {
        Some(TravelDirection::Positive)
    } else if median < 0.0 {
        Some(TravelDirection::Negative)
    } else {
        None
    }
}

/// Frames shared by both trajectories.
pub fn coexistence_window(a: &Trajectory, b: &Trajectory) -> Option<FrameInterval> {
    a.frame_range().intersect(&b.frame_range())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingConfig {
    pub frame_rate: f64,
    pub recording_id: String,
}

impl Default for RecordingConfig {
    fn default() -> Self {
        Self {
            frame_rate: DEFAULT_FRAME_RATE,
            recording_id: "recording".into(),
        }
    }
}

impl RecordingConfig {
    pub fn new(recording_id: impl Into<String>, frame_rate: f64) -> Self {
        Self {
            frame_rate,
            recording_id: recording_id.into(),
        }
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(StoreError::Config(format!(
                "frame_rate must be positive, got {}",
                self.frame_rate
            )));
        }
        Ok(())
    }
}

/// Immutable, id-indexed collection of trajectories from one recording.
#[derive(Debug, Clone)]
pub struct TrajectoryStore {
    config: RecordingConfig,
    trajectories: Vec<Trajectory>,
    index: HashMap<VehicleId, usize>,
    row_count: usize,
}

impl TrajectoryStore {
    pub fn from_trajectories(
        config: RecordingConfig,
        mut trajectories: Vec<Trajectory>,
    ) -> Result<Self, StoreError> {
        config.validate()?;
        trajectories.sort_by_key(|t| t.vehicle_id);
        let mut index = HashMap::with_capacity(trajectories.len());
        for (i, t) in trajectories.iter().enumerate() {
            if index.insert(t.vehicle_id, i).is_some() {
                return Err(StoreError::Integrity {
                    vehicle_id: t.vehicle_id,
                    detail: "duplicate trajectory".into(),
                });
            }
        }
        let row_count = trajectories.iter().map(Trajectory::len).sum();
        Ok(Self {
            config,
            trajectories,
            index,
            row_count,
        })
    }

    pub fn config(&self) -> &RecordingConfig {
        &self.config
    }

    pub fn frame_rate(&self) -> f64 {
        self.config.frame_rate
    }

    pub fn recording_id(&self) -> &str {
        &self.config.recording_id
    }

    pub fn get(&self, vehicle_id: VehicleId) -> Result<&Trajectory, StoreError> {
        self.index
            .get(&vehicle_id)
            .map(|&i| &self.trajectories[i])
            .ok_or(StoreError::NotFound(vehicle_id))
    }

    /// Trajectories in ascending vehicle id order.
    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Total number of samples, equal to the number of parsed data rows.
    pub fn row_count(&self) -> usize {
        self.row_count
    }

    /// Hull of all trajectories' frame ranges.
    pub fn frame_range(&self) -> Option<FrameInterval> {
        self.trajectories
            .iter()
            .map(Trajectory::frame_range)
            .reduce(|a, b| a.hull(&b))
    }

    /// Writes the in-schema columns back out, floats in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), StoreError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(REQUIRED_COLUMNS)?;
        for t in &self.trajectories {
            for s in &t.samples {
                w.write_record([
                    s.frame.to_string(),
                    t.vehicle_id.to_string(),
                    float_field(s.x),
                    float_field(s.y),
                    float_field(s.width),
                    float_field(s.height),
                    float_field(s.x_velocity),
                    float_field(s.y_velocity),
                    float_field(s.x_acceleration),
                    float_field(s.y_acceleration),
                    s.lane_id.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn float_field(v: f64) -> String {
    let s = v.to_string();
    if s.contains(['.', 'e', 'N', 'i']) {
        s
    } else {
        format!("{s}.0")
    }
}

struct ColumnMap {
    idx: [usize; REQUIRED_COLUMNS.len()],
}

impl ColumnMap {
    fn from_headers(headers: &csv::ByteRecord) -> Result<Self, StoreError> {
        let mut idx = [0usize; REQUIRED_COLUMNS.len()];
        for (slot, name) in REQUIRED_COLUMNS.iter().enumerate() {
            idx[slot] = headers
                .iter()
                .position(|h| trim_bom(h) == name.as_bytes())
                .ok_or_else(|| StoreError::MissingColumn((*name).to_string()))?;
        }
        Ok(Self { idx })
    }
}

fn trim_bom(h: &[u8]) -> &[u8] {
    h.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(h).trim_ascii()
}

fn field<'r>(record: &'r csv::ByteRecord, map: &ColumnMap, slot: usize) -> &'r str {
    record
        .get(map.idx[slot])
        .and_then(|b| std::str::from_utf8(b).ok())
        .unwrap_or("")
        .trim()
}

fn parse_num<T: std::str::FromStr>(
    record: &csv::ByteRecord,
    map: &ColumnMap,
    slot: usize,
    row: usize,
) -> Result<T, StoreError> {
    let raw = field(record, map, slot);
    raw.parse::<T>().map_err(|_| StoreError::Parse {
        row,
        column: REQUIRED_COLUMNS[slot].to_string(),
        value: raw.to_string(),
    })
}

fn parse_f64(
    record: &csv::ByteRecord,
    map: &ColumnMap,
    slot: usize,
    row: usize,
) -> Result<f64, StoreError> {
    let v: f64 = parse_num(record, map, slot, row)?;
    if !v.is_finite() {
        return Err(StoreError::Parse {
            row,
            column: REQUIRED_COLUMNS[slot].to_string(),
            value: field(record, map, slot).to_string(),
        });
    }
    Ok(v)
}

/// Parses a `tracks.csv` stream into a store. Extra columns are ignored;
/// `row` numbers in errors count data rows from 1.
pub fn parse_tracks_csv<R: Read>(
    reader: R,
    config: RecordingConfig,
) -> Result<TrajectoryStore, StoreError> {
    config.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .buffer_capacity(1 << 20)
        .from_reader(reader);
    let map = ColumnMap::from_headers(rdr.byte_headers()?)?;

    let mut groups: HashMap<VehicleId, Vec<TrackSample>> = HashMap::new();
    // ids in first-seen order, for deterministic error reporting
    let mut order: Vec<VehicleId> = Vec::new();
    let mut record = csv::ByteRecord::new();
    let mut row = 0usize;
    while rdr.read_byte_record(&mut record)? {
        row += 1;
        let sample = TrackSample {
            frame: parse_num(&record, &map, 0, row)?,
            x: parse_f64(&record, &map, 2, row)?,
            y: parse_f64(&record, &map, 3, row)?,
            width: parse_f64(&record, &map, 4, row)?,
            height: parse_f64(&record, &map, 5, row)?,
            x_velocity: parse_f64(&record, &map, 6, row)?,
            y_velocity: parse_f64(&record, &map, 7, row)?,
            x_acceleration: parse_f64(&record, &map, 8, row)?,
            y_acceleration: parse_f64(&record, &map, 9, row)?,
            lane_id: parse_num(&record, &map, 10, row)?,
        };
        let id: VehicleId = parse_num(&record, &map, 1, row)?;
        if sample.width <= 0.0 || sample.height <= 0.0 {
            return Err(StoreError::InvalidValue {
                row,
                column: if sample.width <= 0.0 { "width" } else { "height" }.into(),
                reason: "must be positive".into(),
            });
        }
        if sample.lane_id < 1 {
            return Err(StoreError::InvalidValue {
                row,
                column: "laneId".into(),
                reason: "must be at least 1".into(),
            });
        }
        groups
            .entry(id)
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push(sample);
    }
    if row == 0 {
        return Err(StoreError::NoDataRows);
    }

    let mut trajectories = Vec::with_capacity(order.len());
    for id in order {
        let mut samples = groups.remove(&id).expect("grouped id");
        if !samples.windows(2).all(|w| w[0].frame < w[1].frame) {
            samples.sort_by_key(|s| s.frame);
        }
        trajectories.push(Trajectory::new(id, samples)?);
    }
    let store = TrajectoryStore::from_trajectories(config, trajectories)?;
    debug_assert_eq!(store.row_count(), row);
    log::debug!(
        "parsed {} rows into {} trajectories",
        store.row_count(),
        store.len()
    );
    Ok(store)
}

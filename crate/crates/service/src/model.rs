use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use stull_core::evaluation::SyntheticSpec;
use stull_core::persist::PointFormat;
use stull_core::{GeoPoint, IndexConfig, SampleBatch, SpatialRect, TimeRange};

/// Wire form of a point; the hour of day is derived on arrival.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointDto {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub t: i64,
}

impl From<&GeoPoint> for PointDto {
    fn from(p: &GeoPoint) -> Self {
        PointDto {
            id: p.id,
            x: p.x,
            y: p.y,
            t: p.t,
        }
    }
}

impl From<PointDto> for GeoPoint {
    fn from(p: PointDto) -> Self {
        GeoPoint::new(p.id, p.x, p.y, p.t)
    }
}

/// Where a dataset's points come from. Paths are read on the server.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic { spec: SyntheticSpec },
    File {
        path: PathBuf,
        #[serde(default)]
        format: Option<PointFormat>,
    },
    /// A saved index file; its own configuration applies.
    Index { path: PathBuf },
    Points { points: Vec<PointDto> },
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct DatasetConfig {
    /// Required for every source except `index`.
    #[serde(default)]
    pub index: Option<IndexConfig>,
    #[serde(default)]
    pub build_seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateDataset {
    pub source: DatasetSource,
    #[serde(default)]
    pub config: DatasetConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetPhase {
    Building,
    Ready,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStatus {
    pub id: String,
    pub status: DatasetPhase,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<IndexConfig>,
    pub point_count: usize,
    pub bin_count: usize,
    /// Bumped by every applied insert.
    pub version: u64,
    pub open_sessions: usize,
    pub pending_insert: bool,
}

#[derive(Debug, Clone, Deserialize)]
pub struct InsertRequest {
    pub points: Vec<PointDto>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InsertStatus {
    Applied,
    Pending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertResponse {
    pub status: InsertStatus,
    pub points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins_touched: Option<usize>,
    /// Sessions the insert waits for.
    pub open_sessions: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    #[default]
    Stull,
    RandomPath,
    FixedBuffer,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SessionRequest {
    /// Defaults to the dataset extent.
    #[serde(default)]
    pub rect: Option<SpatialRect>,
    /// Defaults to all time.
    #[serde(default)]
    pub time: Option<TimeRange>,
    pub updates_per_level: u32,
    #[serde(default)]
    pub sampler: SamplerKind,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub dataset: String,
    pub sampler: SamplerKind,
    pub seed: u64,
    pub rect: SpatialRect,
    pub time: TimeRange,
    pub theta: f64,
    pub total_updates: u32,
    pub updates_delivered: u32,
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextResponse {
    pub points: Vec<PointDto>,
    pub update_number: u32,
    pub fraction_complete: f64,
    pub exhausted: bool,
}

impl From<&SampleBatch> for NextResponse {
    fn from(b: &SampleBatch) -> Self {
        NextResponse {
            points: b.points.iter().map(PointDto::from).collect(),
            update_number: b.update_number,
            fraction_complete: b.fraction_complete,
            exhausted: b.exhausted,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct GridParams {
    pub rows: Option<usize>,
    pub cols: Option<usize>,
}

/// Raw counts of delivered points per cell over the session's rectangle,
/// with their max-normalized values. Row 0 is the bottom row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResponse {
    pub rows: usize,
    pub cols: usize,
    pub extent: SpatialRect,
    pub counts: Vec<u64>,
    pub values: Vec<f64>,
    pub points_delivered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoursResponse {
    pub counts: [u64; 24],
    pub values: [f64; 24],
    pub points_delivered: u64,
}

//! Temporal-bin + quad-pyramid index with proportionally-sized sample buffers.
//!
//! Points are split into equal-width temporal bins. Each bin owns a pyramid of
//! `height` levels whose leaves keep every point in a shuffled circular array
//! cut into `height` segments. Segment `i` of each leaf is copied into the
//! sample buffer of the leaf's level-`i` ancestor, so every non-leaf level
//! caches a `1/height` fraction of the bin's points.

mod invariants;
mod pyramid;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{GeoPoint, GridGeometry, Query, SpatialRect, TimeRange};

pub use invariants::InvariantViolation;
pub use pyramid::{segment_bounds, CircularArray, Pyramid, TemporalBin};

/// Largest supported pyramid height. A height-`H` pyramid has `4^(H-1)`
/// leaves per bin.
pub const MAX_HEIGHT: u8 = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("invalid rectangle {0:?}: bounds must be finite with min < max")]
    InvalidRect(SpatialRect),
    #[error("invalid time range [{start}, {end})")]
    InvalidTimeRange { start: i64, end: i64 },
    #[error("pyramid height {0} outside 2..={MAX_HEIGHT}")]
    InvalidHeight(u8),
    #[error("bin interval must be positive, got {0}")]
    InvalidBinInterval(i64),
    #[error("point {id} has non-finite coordinates")]
    NonFinite { id: u64 },
    #[error("point {id} at ({x}, {y}) lies outside the index extent")]
    OutsideExtent { id: u64, x: f64, y: f64 },
    #[error("point {id} has timestamp {t} before the index origin {origin}")]
    BeforeOrigin { id: u64, t: i64, origin: i64 },
    #[error("point {id} has timestamp {t} beyond the addressable bin range")]
    TimeOverflow { id: u64, t: i64 },
    #[error("duplicate point id {0}")]
    DuplicateId(u64),
}

/// Static layout of an index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    /// Pyramid height `H`; the per-level fraction is `1/H`.
    pub height: u8,
    /// Seconds per temporal bin.
    pub bin_interval: i64,
    /// Start of the first bin.
    pub origin_time: i64,
    pub extent: SpatialRect,
}

impl IndexConfig {
    pub fn validate(&self) -> Result<(), IndexError> {
        if !(2..=MAX_HEIGHT).contains(&self.height) {
            return Err(IndexError::InvalidHeight(self.height));
        }
        if self.bin_interval <= 0 {
            return Err(IndexError::InvalidBinInterval(self.bin_interval));
        }
        self.extent.validate()
    }

    /// `1/H`.
    pub fn alpha(&self) -> f64 {
        1.0 / self.height as f64
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry::new(self.extent, self.height)
    }

    pub fn bin_range(&self, index: u64) -> TimeRange {
        let start = self.origin_time + index as i64 * self.bin_interval;
        TimeRange {
            start,
            end: start + self.bin_interval,
        }
    }

    pub(crate) fn bin_of(&self, p: &GeoPoint) -> Result<u64, IndexError> {
        if p.t < self.origin_time {
            return Err(IndexError::BeforeOrigin {
                id: p.id,
                t: p.t,
                origin: self.origin_time,
            });
        }
        let offset = p
            .t
            .checked_sub(self.origin_time)
            .ok_or(IndexError::TimeOverflow { id: p.id, t: p.t })?;
        let index = offset / self.bin_interval;
        // the bin's end must stay representable
        (index + 1)
            .checked_mul(self.bin_interval)
            .and_then(|e| e.checked_add(self.origin_time))
            .ok_or(IndexError::TimeOverflow { id: p.id, t: p.t })?;
        Ok(index as u64)
    }

    /// Checks a batch the way `build` and `insert` would, without touching an
    /// index: finite coordinates inside the extent, timestamps at or after the
    /// origin, ids unique within the batch.
    pub fn validate_points(&self, points: &[GeoPoint]) -> Result<(), IndexError> {
        self.assign_bins(points).map(drop)
    }

    /// Validates a batch of points and returns each point's bin ordinal.
    pub(crate) fn assign_bins(&self, points: &[GeoPoint]) -> Result<Vec<u64>, IndexError> {
        let mut seen = HashSet::with_capacity(points.len());
        points
            .iter()
            .map(|p| {
                self.check_point(p)?;
                if !seen.insert(p.id) {
                    return Err(IndexError::DuplicateId(p.id));
                }
                self.bin_of(p)
            })
            .collect()
    }

    pub(crate) fn check_point(&self, p: &GeoPoint) -> Result<(), IndexError> {
        if !p.x.is_finite() || !p.y.is_finite() {
            return Err(IndexError::NonFinite { id: p.id });
        }
        if !self.extent.contains_closed(p.x, p.y) {
            return Err(IndexError::OutsideExtent {
                id: p.id,
                x: p.x,
                y: p.y,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InsertReport {
    pub bins_touched: usize,
    pub points_inserted: usize,
    pub elapsed: Duration,
}

/// The full index: configuration plus the non-empty temporal bins, keyed by
/// their ordinal from `origin_time`.
#[derive(Debug, Clone, PartialEq)]
pub struct StullIndex {
    config: IndexConfig,
    geometry: GridGeometry,
    bins: BTreeMap<u64, TemporalBin>,
}

impl StullIndex {
    pub fn empty(config: IndexConfig) -> Result<Self, IndexError> {
        config.validate()?;
        Ok(StullIndex {
            geometry: config.geometry(),
            config,
            bins: BTreeMap::new(),
        })
    }

    /// Builds an index over `points`. Deterministic for a given seed.
    pub fn build(points: &[GeoPoint], config: IndexConfig, seed: u64) -> Result<Self, IndexError> {
        let mut index = StullIndex::empty(config)?;
        let bin_ids = index.config.assign_bins(points)?;
        let touched = index.route(points, &bin_ids);
        for bin in touched {
            index.rebuild_bin(bin, seed);
        }
        Ok(index)
    }

    pub(crate) fn from_parts(config: IndexConfig, bins: BTreeMap<u64, TemporalBin>) -> Self {
        StullIndex {
            geometry: config.geometry(),
            config,
            bins,
        }
    }

    /// Appends points and rebuilds every sample buffer of each bin that
    /// received points. Other bins are left untouched.
    pub fn insert(&mut self, points: &[GeoPoint], seed: u64) -> Result<InsertReport, IndexError> {
        let start = Instant::now();
        let bin_ids = self.config.assign_bins(points)?;
        let touched = self.route(points, &bin_ids);
        let bins_touched = touched.len();
        for bin in touched {
            self.rebuild_bin(bin, seed);
        }
        Ok(InsertReport {
            bins_touched,
            points_inserted: points.len(),
            elapsed: start.elapsed(),
        })
    }

    /// Re-runs buffer construction on every bin with a fresh seed. The point
    /// set is unchanged; only leaf and buffer orders change.
    pub fn reshuffle(&mut self, seed: u64) {
        let ids: Vec<u64> = self.bins.keys().copied().collect();
        for bin in ids {
            self.rebuild_bin(bin, seed);
        }
    }

    fn route(&mut self, points: &[GeoPoint], bin_ids: &[u64]) -> Vec<u64> {
        let mut touched = BTreeSet::new();
        for (p, &bin) in points.iter().zip(bin_ids) {
            touched.insert(bin);
            let entry = self.bins.entry(bin).or_insert_with(|| TemporalBin {
                index: bin,
                range: self.config.bin_range(bin),
                pyramid: Pyramid::new(&self.geometry),
            });
            let leaf = self.geometry.leaf_of(p.x, p.y);
            entry.pyramid.push(leaf, *p);
        }
        touched.into_iter().collect()
    }

    fn rebuild_bin(&mut self, bin: u64, seed: u64) {
        let geometry = self.geometry;
        if let Some(b) = self.bins.get_mut(&bin) {
            b.pyramid.rebuild_buffers(&geometry, bin, seed);
        }
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn height(&self) -> u8 {
        self.config.height
    }

    pub fn bins(&self) -> impl Iterator<Item = &TemporalBin> {
        self.bins.values()
    }

    pub fn bin(&self, index: u64) -> Option<&TemporalBin> {
        self.bins.get(&index)
    }

    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    pub fn point_count(&self) -> usize {
        self.bins.values().map(TemporalBin::count).sum()
    }

    /// Bins whose time range intersects `time`, in temporal order.
    pub fn bins_overlapping(&self, time: &TimeRange) -> impl Iterator<Item = &TemporalBin> {
        let time = *time;
        self.bins
            .values()
            .filter(move |b| b.range.intersects(&time))
    }

    /// All indexed points, bin by bin, leaf by leaf.
    pub fn points(&self) -> impl Iterator<Item = &GeoPoint> {
        self.bins
            .values()
            .flat_map(|b| b.pyramid.leaves.iter().flat_map(|l| l.data.iter()))
    }

    /// Deepest pyramid level at which a single cell contains the query's
    /// rectangle clipped to the extent. Always at least 1.
    pub fn level_of_query(&self, q: &Query) -> u8 {
        self.geometry.lowest_containing_level(&q.rect)
    }

    /// Cells at `level` that overlap the query rectangle, row-major.
    pub fn overlapping_cells(&self, level: u8, q: &Query) -> Vec<usize> {
        assert!((1..=self.height()).contains(&level), "level {level} out of range");
        match self.geometry.span(&q.rect) {
            Some(span) => self.geometry.cells_in_span(&span, level),
            None => Vec::new(),
        }
    }

    /// Brute-force scan: every indexed point satisfying `q`.
    pub fn scan(&self, q: &Query) -> Vec<GeoPoint> {
        let filter = q.filter(&self.config.extent);
        self.points().filter(|p| filter.matches(p)).copied().collect()
    }

    /// SHA-256 over the serialized form of one bin.
    pub fn bin_checksum(&self, index: u64) -> Option<[u8; 32]> {
        let bin = self.bins.get(&index)?;
        let mut buf = Vec::new();
        crate::persist::encode_bin(&mut buf, bin).expect("writing to a Vec cannot fail");
        Some(Sha256::digest(&buf).into())
    }

    pub fn check_invariants(&self) -> Result<(), InvariantViolation> {
        invariants::check(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn unit_config(height: u8) -> IndexConfig {
        IndexConfig {
            height,
            bin_interval: 3_600,
            origin_time: 0,
            extent: SpatialRect::new(0.0, 0.0, 1.0, 1.0).unwrap(),
        }
    }

    fn grid_points(n: usize, t: i64) -> Vec<GeoPoint> {
        // deterministic low-discrepancy layout
        (0..n)
            .map(|i| {
                let x = (i as f64 * 0.618_033_988_75).fract();
                let y = (i as f64 * 0.754_877_666_25).fract();
                GeoPoint::new(i as u64, x, y, t + (i as i64 % 600))
            })
            .collect()
    }

    #[test]
    fn empty_input_builds_empty_index() {
        let idx = StullIndex::build(&[], unit_config(4), 1).unwrap();
        assert_eq!(idx.bin_count(), 0);
        assert_eq!(idx.point_count(), 0);
        idx.check_invariants().unwrap();
    }

    #[test]
    fn thousand_points_split_evenly_across_levels() {
        let pts = grid_points(1000, 0);
        let idx = StullIndex::build(&pts, unit_config(4), 7).unwrap();
        let bin = idx.bins().next().unwrap();
        let pyr = bin.pyramid();
        let per_level: Vec<usize> = (1..4u8)
            .map(|l| pyr.buffers_at(l).iter().map(Vec::len).sum())
            .collect();
        let seg4: usize = pyr.leaves().iter().map(|l| l.segment(4).len()).sum();
        // direct count of what the remainder rule assigns, leaf by leaf
        let expected: Vec<usize> = (1..=4)
            .map(|s| {
                pyr.leaves()
                    .iter()
                    .map(|l| {
                        let b = segment_bounds(l.len(), 4);
                        (b[s] - b[s - 1]) as usize
                    })
                    .sum()
            })
            .collect();
        assert_eq!(per_level, expected[..3].to_vec());
        assert_eq!(seg4, expected[3]);
        assert_eq!(per_level.iter().sum::<usize>() + seg4, 1000);
        let floor: usize = pyr.leaves().iter().map(|l| l.len() / 4).sum();
        let ceil: usize = pyr.leaves().iter().map(|l| l.len().div_ceil(4)).sum();
        for &n in &expected {
            assert!((floor..=ceil).contains(&n));
        }
        // remainders go to the leading segments, so level 1 is never lighter
        assert!(expected.windows(2).all(|w| w[0] >= w[1]));
        idx.check_invariants().unwrap();
    }

    #[test]
    fn thousand_points_in_one_leaf_split_exactly() {
        let pts: Vec<GeoPoint> = (0..1000)
            .map(|i| GeoPoint::new(i, 0.01 + (i as f64) * 1e-5, 0.01, 5))
            .collect();
        let idx = StullIndex::build(&pts, unit_config(4), 7).unwrap();
        let pyr = idx.bins().next().unwrap().pyramid();
        for l in 1..4u8 {
            let total: usize = pyr.buffers_at(l).iter().map(Vec::len).sum();
            assert_eq!(total, 250);
        }
        let seg4: usize = pyr.leaves().iter().map(|l| l.segment(4).len()).sum();
        assert_eq!(seg4, 250);
    }

    #[test]
    fn rejects_points_outside_extent_by_id() {
        let mut pts = grid_points(10, 0);
        pts.push(GeoPoint::new(99, 1.5, 0.5, 0));
        match StullIndex::build(&pts, unit_config(4), 1) {
            Err(IndexError::OutsideExtent { id, .. }) => assert_eq!(id, 99),
            other => panic!("unexpected {other:?}"),
        }
        let nan = [GeoPoint::new(3, f64::NAN, 0.5, 0)];
        assert_eq!(
            StullIndex::build(&nan, unit_config(4), 1).unwrap_err(),
            IndexError::NonFinite { id: 3 }
        );
        let early = [GeoPoint::new(4, 0.5, 0.5, -1)];
        assert!(matches!(
            StullIndex::build(&early, unit_config(4), 1),
            Err(IndexError::BeforeOrigin { id: 4, .. })
        ));
    }

    #[test]
    fn extent_max_edge_points_are_indexed() {
        let pts = [GeoPoint::new(1, 1.0, 1.0, 0), GeoPoint::new(2, 0.0, 0.0, 0)];
        let idx = StullIndex::build(&pts, unit_config(3), 1).unwrap();
        assert_eq!(idx.point_count(), 2);
        let full = Query::everything(idx.config().extent);
        assert_eq!(idx.scan(&full).len(), 2);
    }

    #[test]
    fn builds_are_deterministic_per_seed() {
        let pts = grid_points(2000, 0);
        let a = StullIndex::build(&pts, unit_config(4), 11).unwrap();
        let b = StullIndex::build(&pts, unit_config(4), 11).unwrap();
        let c = StullIndex::build(&pts, unit_config(4), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn insert_of_nothing_is_a_no_op() {
        let pts = grid_points(100, 0);
        let mut idx = StullIndex::build(&pts, unit_config(4), 1).unwrap();
        let before = idx.clone();
        let report = idx.insert(&[], 9).unwrap();
        assert_eq!(report.bins_touched, 0);
        assert_eq!(idx, before);
    }

    #[test]
    fn insert_spanning_two_bins_touches_two() {
        let mut pts = Vec::new();
        for b in 0..4 {
            pts.extend(grid_points(500, b * 3_600).into_iter().map(|mut p| {
                p.id += b as u64 * 10_000;
                p
            }));
        }
        let mut idx = StullIndex::build(&pts, unit_config(4), 1).unwrap();
        let untouched: Vec<_> = [0u64, 3].iter().map(|&b| idx.bin_checksum(b)).collect();
        let new: Vec<GeoPoint> = grid_points(100, 0)
            .into_iter()
            .map(|mut p| {
                p.id += 1_000_000;
                p.t = if p.id % 2 == 0 { 3_600 + 10 } else { 7_200 + 10 };
                p.hour = crate::geometry::hour_of_day(p.t);
                p
            })
            .collect();
        let report = idx.insert(&new, 5).unwrap();
        assert_eq!(report.bins_touched, 2);
        assert_eq!(idx.point_count(), 2100);
        let after: Vec<_> = [0u64, 3].iter().map(|&b| idx.bin_checksum(b)).collect();
        assert_eq!(untouched, after);
        idx.check_invariants().unwrap();
    }

    #[test]
    fn insert_appends_new_tail_bins() {
        let pts = grid_points(100, 0);
        let mut idx = StullIndex::build(&pts, unit_config(4), 1).unwrap();
        let late = [GeoPoint::new(5_000, 0.3, 0.3, 10 * 3_600 + 1)];
        let report = idx.insert(&late, 2).unwrap();
        assert_eq!(report.bins_touched, 1);
        assert_eq!(idx.bin_count(), 2);
        assert!(idx.bin(10).is_some());
        idx.check_invariants().unwrap();
    }

    #[test]
    fn level_of_full_extent_is_root() {
        let idx = StullIndex::empty(unit_config(4)).unwrap();
        assert_eq!(idx.level_of_query(&Query::everything(idx.config().extent)), 1);
    }

    #[test]
    fn overlapping_cells_counts() {
        let idx = StullIndex::empty(unit_config(4)).unwrap();
        let full = Query::everything(idx.config().extent);
        assert_eq!(idx.overlapping_cells(1, &full), vec![0]);
        assert_eq!(idx.overlapping_cells(4, &full).len(), 64);
        let quadrant = Query::new(
            SpatialRect::new(0.55, 0.1, 0.9, 0.45).unwrap(),
            TimeRange::all(),
        );
        assert_eq!(idx.overlapping_cells(2, &quadrant), vec![1]);
        assert_eq!(idx.overlapping_cells(1, &quadrant), vec![0]);
    }
}

//! Points, rectangles, time ranges, queries, and the dyadic cell grid shared
//! by every index in the crate.

use serde::{Deserialize, Serialize};

use crate::index::IndexError;

const SECONDS_PER_DAY: i64 = 86_400;
const SECONDS_PER_HOUR: i64 = 3_600;

/// One spatiotemporal record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    /// Seconds since the Unix epoch.
    pub t: i64,
    /// Hour of day (UTC) derived from `t`.
    pub hour: u8,
}

impl GeoPoint {
    pub fn new(id: u64, x: f64, y: f64, t: i64) -> Self {
        GeoPoint {
            id,
            x,
            y,
            t,
            hour: hour_of_day(t),
        }
    }
}

/// UTC hour of day for an epoch timestamp, valid for negative timestamps too.
pub fn hour_of_day(t: i64) -> u8 {
    (t.rem_euclid(SECONDS_PER_DAY) / SECONDS_PER_HOUR) as u8
}

/// Axis-aligned rectangle. Containment is half-open, `[min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialRect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl SpatialRect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self, IndexError> {
        let rect = SpatialRect {
            min_x,
            min_y,
            max_x,
            max_y,
        };
        rect.validate()?;
        Ok(rect)
    }

    pub fn validate(&self) -> Result<(), IndexError> {
        let finite = [self.min_x, self.min_y, self.max_x, self.max_y]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.min_x >= self.max_x || self.min_y >= self.max_y {
            return Err(IndexError::InvalidRect(*self));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.min_x <= x && x < self.max_x && self.min_y <= y && y < self.max_y
    }

    /// Containment with the max edges closed; used for the global extent.
    pub fn contains_closed(&self, x: f64, y: f64) -> bool {
        self.min_x <= x && x <= self.max_x && self.min_y <= y && y <= self.max_y
    }

    pub fn intersects(&self, other: &SpatialRect) -> bool {
        self.min_x < other.max_x
            && other.min_x < self.max_x
            && self.min_y < other.max_y
            && other.min_y < self.max_y
    }

    pub fn contains_rect(&self, other: &SpatialRect) -> bool {
        self.min_x <= other.min_x
            && other.max_x <= self.max_x
            && self.min_y <= other.min_y
            && other.max_y <= self.max_y
    }

    pub fn intersection(&self, other: &SpatialRect) -> Option<SpatialRect> {
        if !self.intersects(other) {
            return None;
        }
        Some(SpatialRect {
            min_x: self.min_x.max(other.min_x),
            min_y: self.min_y.max(other.min_y),
            max_x: self.max_x.min(other.max_x),
            max_y: self.max_y.min(other.max_y),
        })
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Half-open time interval `[start, end)` in epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: i64,
    pub end: i64,
}

impl TimeRange {
    pub fn new(start: i64, end: i64) -> Result<Self, IndexError> {
        if start >= end {
            return Err(IndexError::InvalidTimeRange { start, end });
        }
        Ok(TimeRange { start, end })
    }

    /// Range covering every representable timestamp.
    pub fn all() -> Self {
        TimeRange {
            start: i64::MIN,
            end: i64::MAX,
        }
    }

    pub fn contains(&self, t: i64) -> bool {
        self.start <= t && t < self.end
    }

    pub fn intersects(&self, other: &TimeRange) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn covers(&self, other: &TimeRange) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

/// A spatial rectangle plus a time range. A point satisfies the query when it
/// lies in both.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub rect: SpatialRect,
    pub time: TimeRange,
}

impl Query {
    pub fn new(rect: SpatialRect, time: TimeRange) -> Self {
        Query { rect, time }
    }

    /// Query over the whole extent and all time.
    pub fn everything(extent: SpatialRect) -> Self {
        Query {
            rect: extent,
            time: TimeRange::all(),
        }
    }

    /// Resolves the query against an index extent. Query edges that reach the
    /// extent's max edges become closed so that boundary points match.
    pub fn filter(&self, extent: &SpatialRect) -> QueryFilter {
        let close = |max: f64, edge: f64| if max >= edge { max.next_up() } else { max };
        QueryFilter {
            min_x: self.rect.min_x,
            min_y: self.rect.min_y,
            end_x: close(self.rect.max_x, extent.max_x),
            end_y: close(self.rect.max_y, extent.max_y),
            time: self.time,
        }
    }
}

/// Point predicate for a query resolved against an extent. Upper bounds are
/// exclusive; closed edges are stored as the next float up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryFilter {
    min_x: f64,
    min_y: f64,
    end_x: f64,
    end_y: f64,
    time: TimeRange,
}

impl QueryFilter {
    /// Evaluated without short-circuiting, which keeps scans over shuffled
    /// buffers free of unpredictable branches.
    #[inline]
    pub fn matches(&self, p: &GeoPoint) -> bool {
        self.matches_space(p.x, p.y) & (self.time.start <= p.t) & (p.t < self.time.end)
    }

    #[inline]
    pub fn matches_space(&self, x: f64, y: f64) -> bool {
        (self.min_x <= x) & (x < self.end_x) & (self.min_y <= y) & (y < self.end_y)
    }

    pub fn time(&self) -> TimeRange {
        self.time
    }
}

/// Inclusive range of cell coordinates at one grid level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellSpan {
    pub x0: u32,
    pub x1: u32,
    pub y0: u32,
    pub y1: u32,
}

impl CellSpan {
    pub fn shifted(&self, by: u32) -> CellSpan {
        CellSpan {
            x0: self.x0 >> by,
            x1: self.x1 >> by,
            y0: self.y0 >> by,
            y1: self.y1 >> by,
        }
    }

    pub fn is_single(&self) -> bool {
        self.x0 == self.x1 && self.y0 == self.y1
    }

    pub fn cell_count(&self) -> usize {
        ((self.x1 - self.x0 + 1) as usize) * ((self.y1 - self.y0 + 1) as usize)
    }

    /// Cells whose every point lies inside the span's source rectangle: the
    /// strict interior, excluding boundary rows and columns.
    pub fn contains_interior(&self, cx: u32, cy: u32) -> bool {
        self.x0 < cx && cx < self.x1 && self.y0 < cy && cy < self.y1
    }

    pub fn contains(&self, cx: u32, cy: u32) -> bool {
        self.x0 <= cx && cx <= self.x1 && self.y0 <= cy && cy <= self.y1
    }

    /// Whether every leaf under cell `(cx, cy)`, `shift` levels above the
    /// leaves, lies in this leaf-level span.
    pub fn holds_cell(&self, shift: u32, cx: u32, cy: u32) -> bool {
        let (lo_x, lo_y) = (cx << shift, cy << shift);
        let (hi_x, hi_y) = (lo_x + (1 << shift) - 1, lo_y + (1 << shift) - 1);
        self.x0 <= lo_x && hi_x <= self.x1 && self.y0 <= lo_y && hi_y <= self.y1
    }
}

/// Quadrant-recursive grid over an extent. Level 1 is a single cell; level `l`
/// has `2^(l-1)` cells per side. Cell ids are row-major, `cy * side + cx`.
///
/// Points are routed with dyadic midpoint comparisons on normalized
/// coordinates, so the routing agrees exactly with [`GridGeometry::span`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    extent: SpatialRect,
    levels: u8,
}

impl GridGeometry {
    pub fn new(extent: SpatialRect, levels: u8) -> Self {
        debug_assert!((1..=16).contains(&levels));
        GridGeometry { extent, levels }
    }

    pub fn extent(&self) -> &SpatialRect {
        &self.extent
    }

    pub fn levels(&self) -> u8 {
        self.levels
    }

    pub fn side(&self, level: u8) -> u32 {
        1u32 << (level - 1)
    }

    pub fn cells_at(&self, level: u8) -> usize {
        let side = self.side(level) as usize;
        side * side
    }

    pub fn cell_id(&self, level: u8, cx: u32, cy: u32) -> usize {
        cy as usize * self.side(level) as usize + cx as usize
    }

    pub fn cell_coords(&self, level: u8, id: usize) -> (u32, u32) {
        let side = self.side(level) as usize;
        ((id % side) as u32, (id / side) as u32)
    }

    /// Ancestor of a leaf at `level`, as a cell id.
    pub fn ancestor(&self, leaf: usize, level: u8) -> usize {
        let (cx, cy) = self.cell_coords(self.levels, leaf);
        let shift = (self.levels - level) as u32;
        self.cell_id(level, cx >> shift, cy >> shift)
    }

    fn normalize_x(&self, x: f64) -> f64 {
        ((x - self.extent.min_x) / self.extent.width()).clamp(0.0, 1.0)
    }

    fn normalize_y(&self, y: f64) -> f64 {
        ((y - self.extent.min_y) / self.extent.height()).clamp(0.0, 1.0)
    }

    /// Descends from the root one level at a time, choosing the half on each
    /// axis by comparing against the cell midpoint.
    fn descend(&self, f: f64) -> u32 {
        let mut c = 0u32;
        let mut scale = 1.0f64;
        for _ in 1..self.levels {
            scale *= 2.0;
            c <<= 1;
            let mid = (c as f64 + 1.0) / scale;
            if f >= mid {
                c |= 1;
            }
        }
        c
    }

    /// Leaf coordinates of a point; the extent's max edges route into the
    /// last row/column.
    pub fn leaf_coords(&self, x: f64, y: f64) -> (u32, u32) {
        (
            self.descend(self.normalize_x(x)),
            self.descend(self.normalize_y(y)),
        )
    }

    pub fn leaf_of(&self, x: f64, y: f64) -> usize {
        let (cx, cy) = self.leaf_coords(x, y);
        self.cell_id(self.levels, cx, cy)
    }

    /// Leaf coordinate of the last position strictly below `v` (or the last
    /// cell when `v` reaches the max edge).
    fn upper_coord(&self, v: f64, min: f64, max: f64, normalize: impl Fn(f64) -> f64) -> u32 {
        if v >= max {
            return self.side(self.levels) - 1;
        }
        let below = v.next_down().max(min);
        self.descend(normalize(below))
    }

    /// Leaf-level span of cells that can hold points of `rect`, or `None` when
    /// the rectangle misses the extent.
    pub fn span(&self, rect: &SpatialRect) -> Option<CellSpan> {
        let e = &self.extent;
        let overlaps = rect.min_x <= e.max_x
            && rect.max_x > e.min_x
            && rect.min_y <= e.max_y
            && rect.max_y > e.min_y;
        if !overlaps {
            return None;
        }
        let x0 = self.descend(self.normalize_x(rect.min_x));
        let y0 = self.descend(self.normalize_y(rect.min_y));
        let x1 = self.upper_coord(rect.max_x, e.min_x, e.max_x, |v| self.normalize_x(v));
        let y1 = self.upper_coord(rect.max_y, e.min_y, e.max_y, |v| self.normalize_y(v));
        Some(CellSpan { x0, x1, y0, y1 })
    }

    /// Leaf-level span of cells whose routed points all pass the spatial part
    /// of `filter`, or `None`. Routing is monotone, so a column qualifies when
    /// the float just below the low edge routes to an earlier column (or the
    /// edge sits at or below the extent) and the exclusive high edge routes to
    /// a later one (or lies past the extent).
    pub fn covered_span(&self, filter: &QueryFilter) -> Option<CellSpan> {
        let e = &self.extent;
        let side = self.side(self.levels);
        let axis = |lo: f64, end: f64, min: f64, max: f64, norm: &dyn Fn(f64) -> f64| {
            let first = if lo <= min { 0 } else { self.descend(norm(lo.next_down())) + 1 };
            let stop = if end > max {
                side
            } else if end <= min {
                0
            } else {
                self.descend(norm(end))
            };
            (first < stop).then(|| (first, stop - 1))
        };
        let (x0, x1) = axis(filter.min_x, filter.end_x, e.min_x, e.max_x, &|v| self.normalize_x(v))?;
        let (y0, y1) = axis(filter.min_y, filter.end_y, e.min_y, e.max_y, &|v| self.normalize_y(v))?;
        Some(CellSpan { x0, x1, y0, y1 })
    }

    /// Span at an arbitrary level.
    pub fn span_at(&self, rect: &SpatialRect, level: u8) -> Option<CellSpan> {
        self.span(rect)
            .map(|s| s.shifted((self.levels - level) as u32))
    }

    /// Cell ids at `level` inside a leaf-level span, row-major.
    pub fn cells_in_span(&self, span: &CellSpan, level: u8) -> Vec<usize> {
        let s = span.shifted((self.levels - level) as u32);
        let mut out = Vec::with_capacity(s.cell_count());
        for cy in s.y0..=s.y1 {
            for cx in s.x0..=s.x1 {
                out.push(self.cell_id(level, cx, cy));
            }
        }
        out
    }

    /// Geometric rectangle of a cell.
    pub fn cell_rect(&self, level: u8, cx: u32, cy: u32) -> SpatialRect {
        let side = self.side(level) as f64;
        let e = &self.extent;
        SpatialRect {
            min_x: e.min_x + e.width() * (cx as f64 / side),
            max_x: e.min_x + e.width() * ((cx + 1) as f64 / side),
            min_y: e.min_y + e.height() * (cy as f64 / side),
            max_y: e.min_y + e.height() * ((cy + 1) as f64 / side),
        }
    }

    /// Deepest level at which a single cell holds every point of `rect`.
    pub fn lowest_containing_level(&self, rect: &SpatialRect) -> u8 {
        let Some(span) = self.span(rect) else {
            return 1;
        };
        (1..=self.levels)
            .rev()
            .find(|&l| span.shifted((self.levels - l) as u32).is_single())
            .unwrap_or(1)
    }
}

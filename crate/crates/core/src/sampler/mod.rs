//! Incremental unbiased sample retrieval.
//!
//! A [`SamplingSession`] keeps one [`BinCursor`] per temporal bin the query
//! touches. Each cursor starts at a uniformly random pyramid level and walks
//! the levels in rotation, reading `U` consecutive windows from every eligible
//! source (sample buffers, or leaf segments at the bottom level) before moving
//! on. Every query-matching point is delivered exactly once over `H·U`
//! updates, and after `k` updates each one has been delivered with
//! probability `k/(H·U)`.
//!
//! Window boundaries are `⌊(len·(w−1) + r)/U⌋ .. ⌊(len·w + r)/U⌋` where `r`
//! is drawn uniformly from `0..U` for each level visit. The windows always
//! partition the source exactly, and the random offset makes every window's
//! expected size exactly `len/U`, so short sources stay unbiased.

pub mod oracle;

use std::borrow::Borrow;
use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CellSpan, GeoPoint, Query, QueryFilter};
use crate::index::StullIndex;
use crate::rng;

pub use oracle::{delivery_schedule, selection_probability_oracle};

const SESSION_STREAM: u64 = 0x5E55_1011;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SamplingError {
    #[error("updates per level must be at least 1")]
    InvalidUpdatesPerLevel,
    #[error("start level {level} outside 1..={height}")]
    InvalidStartLevel { level: u8, height: u8 },
    #[error("window offset {offset} must be below updates per level {updates_per_level}")]
    InvalidWindowOffset { offset: u32, updates_per_level: u32 },
    #[error("sampling session is exhausted")]
    Exhausted,
}

/// Per-session sampling parameters. `θ = 1/(H·U)` is the fraction of the
/// matching points delivered by each update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// `U`: updates spent on each pyramid level.
    pub updates_per_level: u32,
    pub master_seed: u64,
}

impl SamplingConfig {
    pub fn new(updates_per_level: u32, master_seed: u64) -> Self {
        SamplingConfig {
            updates_per_level,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.updates_per_level == 0 {
            return Err(SamplingError::InvalidUpdatesPerLevel);
        }
        Ok(())
    }

    pub fn theta(&self, height: u8) -> f64 {
        1.0 / (height as f64 * self.updates_per_level as f64)
    }

    /// Updates needed to exhaust a session, `1/θ`.
    pub fn total_updates(&self, height: u8) -> u32 {
        height as u32 * self.updates_per_level
    }
}

/// Pins the random choices of a session; used to enumerate outcomes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionOptions {
    pub start_level: Option<u8>,
    pub window_offset: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CursorMode {
    /// Start level is at or below `l_Q`: walk sample buffers, then leaf
    /// segment `H`.
    BufferWalk,
    /// Start level is above `l_Q`: read leaf segments only.
    LeafOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Buffer { cell: usize, covered: bool },
    Segment { leaf: usize, covered: bool },
}

/// Index range of window `w` (1-based) out of `parts` over `len` items.
pub fn window(len: usize, w: u32, parts: u32, offset: u32) -> Range<usize> {
    let len = len as u64;
    let parts = parts as u64;
    let off = offset as u64;
    let lo = (len * (w as u64 - 1) + off) / parts;
    let hi = (len * w as u64 + off) / parts;
    lo as usize..hi as usize
}

/// Retrieval state for one temporal bin.
#[derive(Debug, Clone)]
pub struct BinCursor {
    bin: u64,
    start_level: u8,
    level: u8,
    /// 1-based number of the next update.
    update: u32,
    mode: CursorMode,
    sources: Vec<Source>,
    offset: u32,
    pinned_offset: Option<u32>,
    /// Query time range covers the whole bin.
    time_covered: bool,
    rng: ChaCha8Rng,
    done: bool,
}

impl BinCursor {
    pub fn bin(&self) -> u64 {
        self.bin
    }

    /// `l_r`.
    pub fn start_level(&self) -> u8 {
        self.start_level
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn mode(&self) -> CursorMode {
        self.mode
    }

    pub fn next_update(&self) -> u32 {
        self.update
    }

    /// Within-level chunk index `u0` of the next update, 1-based.
    pub fn chunk(&self, updates_per_level: u32) -> u32 {
        (self.update - 1) % updates_per_level + 1
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn reads_buffers(&self, height: u8) -> bool {
        self.mode == CursorMode::BufferWalk && self.level < height
    }

    fn fill_sources(
        &mut self,
        index: &StullIndex,
        span: &CellSpan,
        covered: Option<&CellSpan>,
        updates_per_level: u32,
    ) {
        let height = index.height();
        let geometry = index.geometry();
        let bin = index.bin(self.bin).expect("cursor bins exist");
        let pyr = bin.pyramid();
        let is_covered = |level: u8, cell: usize| {
            let (cx, cy) = geometry.cell_coords(level, cell);
            self.time_covered && covered.is_some_and(|c| c.holds_cell(u32::from(height - level), cx, cy))
        };
        let mut sources = std::mem::take(&mut self.sources);
        sources.clear();
        if self.reads_buffers(height) {
            for cell in geometry.cells_in_span(span, self.level) {
                if !pyr.buffer(self.level, cell).is_empty() {
                    let covered = is_covered(self.level, cell);
                    sources.push(Source::Buffer { cell, covered });
                }
            }
        } else {
            let s = self.level as usize;
            for leaf in geometry.cells_in_span(span, height) {
                if !pyr.leaf(leaf).segment(s).is_empty() {
                    let covered = is_covered(height, leaf);
                    sources.push(Source::Segment { leaf, covered });
                }
            }
        }
        self.sources = sources;
        self.offset = match self.pinned_offset {
            Some(r) => r,
            None => self.rng.random_range(0..updates_per_level),
        };
    }

    fn step(
        &mut self,
        index: &StullIndex,
        span: &CellSpan,
        covered: Option<&CellSpan>,
        filter: &QueryFilter,
        updates_per_level: u32,
        out: &mut Vec<GeoPoint>,
    ) {
        let height = index.height();
        let u0 = self.chunk(updates_per_level);
        if u0 == 1 {
            self.fill_sources(index, span, covered, updates_per_level);
        }
        let pyr = index.bin(self.bin).expect("cursor bins exist").pyramid();
        let level = self.level;
        let source = |src: &Source| match *src {
            Source::Buffer { cell, .. } => pyr.buffer(level, cell),
            Source::Segment { leaf, .. } => pyr.leaf(leaf).segment(level as usize),
        };
        let upper: usize = self
            .sources
            .iter()
            .map(|s| window(source(s).len(), u0, updates_per_level, self.offset).len())
            .sum();
        out.reserve(upper);
        for src in &self.sources {
            let data = source(src);
            let w = window(data.len(), u0, updates_per_level, self.offset);
            match *src {
                Source::Buffer { covered: true, .. } | Source::Segment { covered: true, .. } => {
                    out.extend_from_slice(&data[w])
                }
                _ => compact_matches(out, &data[w], filter),
            }
        }
        self.update += 1;
        if u0 == updates_per_level {
            self.sources.clear();
            self.level = 1 + self.level % height;
            if self.level == self.start_level {
                self.done = true;
            }
        }
    }
}

/// Appends the points of `src` that pass `filter`. Copies everything, then
/// compacts in place with a data-dependent index instead of a branch.
fn compact_matches(out: &mut Vec<GeoPoint>, src: &[GeoPoint], filter: &QueryFilter) {
    let base = out.len();
    out.extend_from_slice(src);
    let mut kept = base;
    for i in base..out.len() {
        let p = out[i];
        out[kept] = p;
        kept += usize::from(filter.matches(&p));
    }
    out.truncate(kept);
}

/// Points delivered by one incremental update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub points: Vec<GeoPoint>,
    pub update_number: u32,
    pub fraction_complete: f64,
    pub exhausted: bool,
}

/// Incremental retrieval over one query. Holds the index by any borrow
/// (`&StullIndex`, `Arc<StullIndex>`, ...).
#[derive(Debug, Clone)]
pub struct SamplingSession<I: Borrow<StullIndex>> {
    index: I,
    query: Query,
    filter: QueryFilter,
    span: Option<CellSpan>,
    covered: Option<CellSpan>,
    level_of_query: u8,
    cursors: Vec<BinCursor>,
    config: SamplingConfig,
    delivered: u32,
    total: u32,
}

impl<I: Borrow<StullIndex>> SamplingSession<I> {
    pub fn open(index: I, query: Query, config: SamplingConfig) -> Result<Self, SamplingError> {
        Self::open_with(index, query, config, SessionOptions::default())
    }

    pub fn open_with(
        index: I,
        query: Query,
        config: SamplingConfig,
        options: SessionOptions,
    ) -> Result<Self, SamplingError> {
        config.validate()?;
        let idx = index.borrow();
        let height = idx.height();
        if let Some(level) = options.start_level {
            if !(1..=height).contains(&level) {
                return Err(SamplingError::InvalidStartLevel { level, height });
            }
        }
        if let Some(offset) = options.window_offset {
            if offset >= config.updates_per_level {
                return Err(SamplingError::InvalidWindowOffset {
                    offset,
                    updates_per_level: config.updates_per_level,
                });
            }
        }
        let extent = idx.config().extent;
        let filter = query.filter(&extent);
        let span = idx.geometry().span(&query.rect);
        let covered = idx.geometry().covered_span(&filter);
        let level_of_query = idx.level_of_query(&query);
        let cursors: Vec<BinCursor> = match span {
            None => Vec::new(),
            Some(_) => idx
                .bins_overlapping(&query.time)
                .map(|bin| {
                    let mut rng = rng::stream(config.master_seed, &[SESSION_STREAM, bin.index()]);
                    let drawn = rng.random_range(1..=height);
                    let start = options.start_level.unwrap_or(drawn);
                    let mode = if start >= level_of_query {
                        CursorMode::BufferWalk
                    } else {
                        CursorMode::LeafOnly
                    };
                    BinCursor {
                        bin: bin.index(),
                        start_level: start,
                        level: start,
                        update: 1,
                        mode,
                        sources: Vec::new(),
                        offset: 0,
                        pinned_offset: options.window_offset,
                        time_covered: query.time.covers(&bin.range()),
                        rng,
                        done: false,
                    }
                })
                .collect(),
        };
        let total = if cursors.is_empty() {
            0
        } else {
            config.total_updates(height)
        };
        Ok(SamplingSession {
            index,
            query,
            filter,
            span,
            covered,
            level_of_query,
            cursors,
            config,
            delivered: 0,
            total,
        })
    }

    pub fn index(&self) -> &StullIndex {
        self.index.borrow()
    }

    pub fn query(&self) -> &Query {
        &self.query
    }

    pub fn config(&self) -> &SamplingConfig {
        &self.config
    }

    /// `l_Q` for this session's query.
    pub fn level_of_query(&self) -> u8 {
        self.level_of_query
    }

    pub fn cursors(&self) -> &[BinCursor] {
        &self.cursors
    }

    pub fn theta(&self) -> f64 {
        self.config.theta(self.index().height())
    }

    pub fn updates_delivered(&self) -> u32 {
        self.delivered
    }

    pub fn total_updates(&self) -> u32 {
        self.total
    }

    pub fn is_exhausted(&self) -> bool {
        self.delivered >= self.total
    }

    /// Runs one incremental update across every bin cursor.
    pub fn next_update(&mut self) -> Result<SampleBatch, SamplingError> {
        if self.is_exhausted() {
            return Err(SamplingError::Exhausted);
        }
        let index = self.index.borrow();
        let span = self.span.expect("sessions with cursors have a span");
        let mut points = Vec::new();
        for cursor in &mut self.cursors {
            cursor.step(
                index,
                &span,
                self.covered.as_ref(),
                &self.filter,
                self.config.updates_per_level,
                &mut points,
            );
        }
        self.delivered += 1;
        debug_assert_eq!(
            self.is_exhausted(),
            self.cursors.iter().all(BinCursor::is_done)
        );
        Ok(SampleBatch {
            points,
            update_number: self.delivered,
            fraction_complete: (self.delivered as f64 / self.total as f64).min(1.0),
            exhausted: self.is_exhausted(),
        })
    }
}

/// Common driver interface over STULL and the baseline samplers.
pub trait IncrementalSampler {
    fn next_update(&mut self) -> Result<SampleBatch, SamplingError>;
    fn is_exhausted(&self) -> bool;
    fn total_updates(&self) -> u32;
}

impl<I: Borrow<StullIndex>> IncrementalSampler for SamplingSession<I> {
    fn next_update(&mut self) -> Result<SampleBatch, SamplingError> {
        SamplingSession::next_update(self)
    }

    fn is_exhausted(&self) -> bool {
        SamplingSession::is_exhausted(self)
    }

    fn total_updates(&self) -> u32 {
        SamplingSession::total_updates(self)
    }
}

impl<S: IncrementalSampler + ?Sized> IncrementalSampler for Box<S> {
    fn next_update(&mut self) -> Result<SampleBatch, SamplingError> {
        (**self).next_update()
    }

    fn is_exhausted(&self) -> bool {
        (**self).is_exhausted()
    }

    fn total_updates(&self) -> u32 {
        (**self).total_updates()
    }
}

/// Opens a session and drains it.
pub fn run_to_completion<I: Borrow<StullIndex>>(
    index: I,
    query: Query,
    config: SamplingConfig,
) -> Result<Vec<SampleBatch>, SamplingError> {
    let mut session = SamplingSession::open(index, query, config)?;
    let mut batches = Vec::with_capacity(session.total_updates() as usize);
    while !session.is_exhausted() {
        batches.push(session.next_update()?);
    }
    Ok(batches)
}

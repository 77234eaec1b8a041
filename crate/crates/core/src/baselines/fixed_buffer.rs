//! Fixed-size sample buffers over the same quad pyramid the STULL index uses.
//! Every non-leaf cell caches `min(B, n)` points drawn uniformly from its
//! subtree, whatever its population. Reading equal chunks from cells of
//! different sizes over-represents the sparse ones, which is the bias this
//! baseline exists to exhibit.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};

use crate::geometry::{GeoPoint, GridGeometry, Query};
use crate::index::{IndexConfig, IndexError};
use crate::rng;
use crate::sampler::{window, SampleBatch, SamplingError};

/// Buffer size used in the published comparison.
pub const DEFAULT_BUFFER_SIZE: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
struct FixedPyramid {
    leaves: Vec<Vec<GeoPoint>>,
    /// `buffers[l - 1][cell]` for levels `1..depth`.
    buffers: Vec<Vec<Vec<GeoPoint>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedBufferIndex {
    config: IndexConfig,
    geometry: GridGeometry,
    buffer_size: usize,
    bins: BTreeMap<u64, FixedPyramid>,
}

/// Window selector: chunk `index` (1-based) of `count` equal parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub index: u32,
    pub count: u32,
}

impl Chunk {
    pub const WHOLE: Chunk = Chunk { index: 1, count: 1 };
}

impl FixedBufferIndex {
    pub fn build(
        points: &[GeoPoint],
        config: IndexConfig,
        buffer_size: usize,
        seed: u64,
    ) -> Result<Self, IndexError> {
        config.validate()?;
        let bin_ids = config.assign_bins(points)?;
        let geometry = config.geometry();
        let depth = geometry.levels();
        let mut bins: BTreeMap<u64, FixedPyramid> = BTreeMap::new();
        for (p, b) in points.iter().zip(bin_ids) {
            let pyr = bins.entry(b).or_insert_with(|| FixedPyramid {
                leaves: vec![Vec::new(); geometry.cells_at(depth)],
                buffers: Vec::new(),
            });
            pyr.leaves[geometry.leaf_of(p.x, p.y)].push(*p);
        }
        for (&b, pyr) in bins.iter_mut() {
            pyr.buffers = (1..depth)
                .map(|level| {
                    let mut members: Vec<Vec<usize>> = vec![Vec::new(); geometry.cells_at(level)];
                    for leaf in 0..pyr.leaves.len() {
                        members[geometry.ancestor(leaf, level)].push(leaf);
                    }
                    members
                        .iter()
                        .enumerate()
                        .map(|(cell, leaves)| {
                            let mut rng = rng::stream(seed, &[b, level as u64, cell as u64]);
                            draw_buffer(&pyr.leaves, leaves, buffer_size, &mut rng)
                        })
                        .collect()
                })
                .collect();
        }
        Ok(FixedBufferIndex {
            config,
            geometry,
            buffer_size,
            bins,
        })
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn buffer_size(&self) -> usize {
        self.buffer_size
    }

    pub fn depth(&self) -> u8 {
        self.geometry.levels()
    }

    pub fn bin_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.bins.keys().copied()
    }

    /// Buffer of a non-leaf cell, or the full point list of a leaf.
    pub fn cell_points(&self, bin: u64, level: u8, cell: usize) -> &[GeoPoint] {
        let pyr = &self.bins[&bin];
        if level == self.depth() {
            &pyr.leaves[cell]
        } else {
            &pyr.buffers[level as usize - 1][cell]
        }
    }

    pub fn subtree_count(&self, bin: u64, level: u8, cell: usize) -> usize {
        let pyr = &self.bins[&bin];
        (0..pyr.leaves.len())
            .filter(|&leaf| self.geometry.ancestor(leaf, level) == cell)
            .map(|leaf| pyr.leaves[leaf].len())
            .sum()
    }

    pub fn overlapping_cells(&self, level: u8, q: &Query) -> Vec<usize> {
        match self.geometry.span(&q.rect) {
            Some(span) => self.geometry.cells_in_span(&span, level),
            None => Vec::new(),
        }
    }

    fn bins_for(&self, q: &Query) -> Vec<u64> {
        self.bins
            .keys()
            .copied()
            .filter(|&b| self.config.bin_range(b).intersects(&q.time))
            .collect()
    }
}

fn draw_buffer(
    leaves: &[Vec<GeoPoint>],
    members: &[usize],
    size: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<GeoPoint> {
    let mut prefix = Vec::with_capacity(members.len() + 1);
    prefix.push(0usize);
    for &leaf in members {
        prefix.push(prefix.last().unwrap() + leaves[leaf].len());
    }
    let n = *prefix.last().unwrap();
    let take = size.min(n);
    let mut out: Vec<GeoPoint> = index::sample(rng, n, take)
        .into_iter()
        .map(|i| {
            let k = prefix.partition_point(|&start| start <= i) - 1;
            leaves[members[k]][i - prefix[k]]
        })
        .collect();
    out.shuffle(rng);
    out
}

/// Union of the query-filtered `chunk` of every buffer at `level` that
/// overlaps the query. At the leaf level the leaves themselves are read.
pub fn fixedbuffer_sample(index: &FixedBufferIndex, q: &Query, level: u8, chunk: Chunk) -> Vec<GeoPoint> {
    assert!((1..=index.depth()).contains(&level), "level {level} out of range");
    let filter = q.filter(&index.config.extent);
    let cells = index.overlapping_cells(level, q);
    let mut out = Vec::new();
    for b in index.bins_for(q) {
        for &cell in &cells {
            let data = index.cell_points(b, level, cell);
            let w = window(data.len(), chunk.index, chunk.count, 0);
            out.extend(data[w].iter().filter(|p| filter.matches(p)));
        }
    }
    out
}

struct CellReader {
    bin: u64,
    cell: usize,
    pos: usize,
    delivered: usize,
}

/// Incremental fixed-buffer retrieval. Each bin's budget for an update is
/// split evenly across the overlapping cells at the deepest buffered level,
/// regardless of how many points each cell holds.
pub struct FixedBufferSession {
    index: Arc<FixedBufferIndex>,
    query: Query,
    level: u8,
    readers: Vec<CellReader>,
    /// `(bin, matching points, readers in this bin)`.
    bins: Vec<(u64, u64, usize)>,
    total_updates: u32,
    delivered: u32,
}

impl FixedBufferSession {
    pub fn open(index: Arc<FixedBufferIndex>, query: Query, total_updates: u32) -> Result<Self, SamplingError> {
        if total_updates == 0 {
            return Err(SamplingError::InvalidUpdatesPerLevel);
        }
        let level = index.depth() - 1;
        let filter = query.filter(&index.config.extent);
        let cells = index.overlapping_cells(level, &query);
        let leaf_cells = index.overlapping_cells(index.depth(), &query);
        let mut readers = Vec::new();
        let mut bins = Vec::new();
        for b in index.bins_for(&query) {
            let pyr = &index.bins[&b];
            let matching = leaf_cells
                .iter()
                .flat_map(|&l| pyr.leaves[l].iter())
                .filter(|p| filter.matches(p))
                .count() as u64;
            let before = readers.len();
            readers.extend(
                cells
                    .iter()
                    .filter(|&&c| !pyr.buffers[level as usize - 1][c].is_empty())
                    .map(|&cell| CellReader {
                        bin: b,
                        cell,
                        pos: 0,
                        delivered: 0,
                    }),
            );
            bins.push((b, matching, readers.len() - before));
        }
        let total_updates = if bins.is_empty() { 0 } else { total_updates };
        Ok(FixedBufferSession {
            index,
            query,
            level,
            readers,
            bins,
            total_updates,
            delivered: 0,
        })
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn is_exhausted(&self) -> bool {
        self.delivered >= self.total_updates
    }

    pub fn total_updates(&self) -> u32 {
        self.total_updates
    }

    pub fn next_update(&mut self) -> Result<SampleBatch, SamplingError> {
        if self.is_exhausted() {
            return Err(SamplingError::Exhausted);
        }
        let filter = self.query.filter(&self.index.config.extent);
        let u = self.delivered as u64 + 1;
        let t = self.total_updates as u64;
        let mut points = Vec::new();
        let mut start = 0usize;
        for &(_, matching, n_readers) in &self.bins {
            if n_readers == 0 {
                continue;
            }
            let target = (matching * u / t) as usize;
            let per_cell = target.div_ceil(n_readers);
            for reader in &mut self.readers[start..start + n_readers] {
                let buf = self.index.cell_points(reader.bin, self.level, reader.cell);
                while reader.delivered < per_cell && reader.pos < buf.len() {
                    let p = buf[reader.pos];
                    reader.pos += 1;
                    if filter.matches(&p) {
                        points.push(p);
                        reader.delivered += 1;
                    }
                }
            }
            start += n_readers;
        }
        self.delivered += 1;
        Ok(SampleBatch {
            points,
            update_number: self.delivered,
            fraction_complete: self.delivered as f64 / self.total_updates as f64,
            exhausted: self.is_exhausted(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{SpatialRect, TimeRange};

    fn config(height: u8) -> IndexConfig {
        IndexConfig {
            height,
            bin_interval: 1_000,
            origin_time: 0,
            extent: SpatialRect::new(0.0, 0.0, 1.0, 1.0).unwrap(),
        }
    }

    #[test]
    fn buffers_hold_min_of_size_and_population() {
        let mut pts = Vec::new();
        for i in 0..3000u64 {
            pts.push(GeoPoint::new(i, 0.1 + (i as f64 * 0.37).fract() * 0.3, 0.2, 5));
        }
        for i in 0..40u64 {
            pts.push(GeoPoint::new(10_000 + i, 0.9, 0.9, 5));
        }
        let idx = FixedBufferIndex::build(&pts, config(3), 500, 1).unwrap();
        assert_eq!(idx.cell_points(0, 1, 0).len(), 500);
        // level-2 quadrants: bottom-left has 3000, top-right 40
        assert_eq!(idx.cell_points(0, 2, 0).len(), 500);
        assert_eq!(idx.cell_points(0, 2, 3).len(), 40);
        assert_eq!(idx.subtree_count(0, 2, 3), 40);
        let ids: std::collections::HashSet<u64> =
            idx.cell_points(0, 2, 0).iter().map(|p| p.id).collect();
        assert_eq!(ids.len(), 500);
        assert!(ids.iter().all(|&id| id < 3000));
    }

    #[test]
    fn symmetric_cells_show_no_bias() {
        // two mirrored quadrants, identical sizes and match rates
        let mut pts = Vec::new();
        for i in 0..2000u64 {
            let fx = (i as f64 * 0.618_033_988_75).fract() * 0.5;
            let fy = (i as f64 * 0.754_877_666_25).fract() * 0.5;
            pts.push(GeoPoint::new(i, fx, fy, 1));
            pts.push(GeoPoint::new(100_000 + i, fx + 0.5, fy, 1));
        }
        let q = Query::new(SpatialRect::new(0.0, 0.0, 1.0, 0.2).unwrap(), TimeRange::all());
        let truth = pts.iter().filter(|p| p.y < 0.2).count() as f64 / pts.len() as f64;
        let trials = 400;
        let mut mean = 0.0;
        for seed in 0..trials {
            let idx = FixedBufferIndex::build(&pts, config(3), 500, seed).unwrap();
            let hits = fixedbuffer_sample(&idx, &q, 2, Chunk::WHOLE).len();
            mean += hits as f64 / 1000.0;
        }
        mean /= trials as f64;
        assert!((mean - truth).abs() < 0.005, "mean {mean} truth {truth}");
    }

    #[test]
    fn session_splits_budget_evenly_across_cells() {
        let mut pts = Vec::new();
        for i in 0..4000u64 {
            pts.push(GeoPoint::new(i, 0.05 + (i as f64 * 0.37).fract() * 0.4, 0.1, 5));
        }
        for i in 0..400u64 {
            pts.push(GeoPoint::new(10_000 + i, 0.55 + (i as f64 * 0.37).fract() * 0.4, 0.1, 5));
        }
        let idx = Arc::new(FixedBufferIndex::build(&pts, config(3), 1024, 1).unwrap());
        let q = Query::everything(idx.config().extent);
        let mut s = FixedBufferSession::open(idx, q, 10).unwrap();
        let b = s.next_update().unwrap();
        // 10% of 4400 = 440, split 220/220 between the two populated cells
        let dense = b.points.iter().filter(|p| p.id < 10_000).count();
        assert_eq!(b.points.len(), 440);
        assert_eq!(dense, 220);
    }
}

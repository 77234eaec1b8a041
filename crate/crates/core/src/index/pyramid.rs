use rand::seq::SliceRandom;

use crate::geometry::{GeoPoint, GridGeometry, TimeRange};
use crate::rng;

/// A leaf's point store. After buffer construction the order is a random
/// permutation of the leaf's points, partitioned into `height` segments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CircularArray {
    pub(crate) data: Vec<GeoPoint>,
    /// `height + 1` offsets; segment `s` (1-based) is `bounds[s-1]..bounds[s]`.
    pub(crate) bounds: Vec<u32>,
}

impl CircularArray {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.data
    }

    pub fn segment_bounds(&self) -> &[u32] {
        &self.bounds
    }

    pub fn segment_count(&self) -> usize {
        self.bounds.len().saturating_sub(1)
    }

    /// Segment `s`, 1-based.
    pub fn segment(&self, s: usize) -> &[GeoPoint] {
        let lo = self.bounds[s - 1] as usize;
        let hi = self.bounds[s] as usize;
        &self.data[lo..hi]
    }

    pub(crate) fn reset_bounds(&mut self, height: usize) {
        self.bounds = segment_bounds(self.data.len(), height);
    }
}

/// Offsets splitting `len` items into `parts` segments whose sizes differ by
/// at most one; the first `len % parts` segments carry the extra item.
pub fn segment_bounds(len: usize, parts: usize) -> Vec<u32> {
    let base = len / parts;
    let extra = len % parts;
    let mut bounds = Vec::with_capacity(parts + 1);
    let mut acc = 0usize;
    bounds.push(0);
    for s in 0..parts {
        acc += base + usize::from(s < extra);
        bounds.push(acc as u32);
    }
    bounds
}

/// Quad pyramid of one temporal bin. Level 1 is the root, level `height`
/// holds the leaves. Every non-leaf cell owns a sample buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    pub(crate) height: u8,
    pub(crate) leaves: Vec<CircularArray>,
    /// `buffers[l - 1][cell]` for levels `1..height`.
    pub(crate) buffers: Vec<Vec<Vec<GeoPoint>>>,
}

impl Pyramid {
    pub fn new(geometry: &GridGeometry) -> Self {
        let height = geometry.levels();
        let h = height as usize;
        let leaves = (0..geometry.cells_at(height))
            .map(|_| CircularArray {
                data: Vec::new(),
                bounds: vec![0; h + 1],
            })
            .collect();
        let buffers = (1..height)
            .map(|l| vec![Vec::new(); geometry.cells_at(l)])
            .collect();
        Pyramid {
            height,
            leaves,
            buffers,
        }
    }

    pub fn height(&self) -> u8 {
        self.height
    }

    pub fn leaves(&self) -> &[CircularArray] {
        &self.leaves
    }

    pub fn leaf(&self, id: usize) -> &CircularArray {
        &self.leaves[id]
    }

    /// Sample buffer of a non-leaf cell.
    pub fn buffer(&self, level: u8, cell: usize) -> &[GeoPoint] {
        &self.buffers[level as usize - 1][cell]
    }

    pub fn buffers_at(&self, level: u8) -> &[Vec<GeoPoint>] {
        &self.buffers[level as usize - 1]
    }

    pub fn point_count(&self) -> usize {
        self.leaves.iter().map(CircularArray::len).sum()
    }

    pub(crate) fn push(&mut self, leaf: usize, p: GeoPoint) {
        self.leaves[leaf].data.push(p);
    }

    /// Empties every sample buffer, shuffles each leaf, copies leaf segment
    /// `i` into the buffer of the leaf's level-`i` ancestor for
    /// `i < height`, then shuffles every buffer. Segment `height` stays in
    /// the leaf.
    pub(crate) fn rebuild_buffers(&mut self, geometry: &GridGeometry, bin: u64, seed: u64) {
        let h = self.height as usize;
        for level in &mut self.buffers {
            for buf in level.iter_mut() {
                buf.clear();
            }
        }
        for (leaf_id, leaf) in self.leaves.iter_mut().enumerate() {
            if !leaf.data.is_empty() {
                let mut rng = rng::stream(seed, &[bin, h as u64, leaf_id as u64]);
                leaf.data.shuffle(&mut rng);
            }
            leaf.reset_bounds(h);
            for level in 1..self.height {
                let segment = leaf.segment(level as usize);
                if segment.is_empty() {
                    continue;
                }
                let ancestor = geometry.ancestor(leaf_id, level);
                self.buffers[level as usize - 1][ancestor].extend_from_slice(segment);
            }
        }
        for (i, level) in self.buffers.iter_mut().enumerate() {
            for (cell, buf) in level.iter_mut().enumerate() {
                if buf.len() > 1 {
                    let mut rng = rng::stream(seed, &[bin, i as u64 + 1, cell as u64]);
                    buf.shuffle(&mut rng);
                }
            }
        }
    }
}

/// One fixed-width time slice of the index and its pyramid.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalBin {
    pub(crate) index: u64,
    pub(crate) range: TimeRange,
    pub(crate) pyramid: Pyramid,
}

impl TemporalBin {
    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn range(&self) -> TimeRange {
        self.range
    }

    pub fn pyramid(&self) -> &Pyramid {
        &self.pyramid
    }

    pub fn count(&self) -> usize {
        self.pyramid.point_count()
    }
}

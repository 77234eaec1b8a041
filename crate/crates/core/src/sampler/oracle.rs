//! Exact selection probabilities by enumeration.
//!
//! The randomness in retrieval comes from three places: the start level
//! (uniform over `1..=H`), the shuffles done at build time, and the window
//! offset drawn per level visit. This module enumerates the start levels and
//! window offsets explicitly and accounts for the shuffles in closed form: a
//! uniformly shuffled leaf of `m` points puts a given point in segment `s`
//! with probability `|seg_s|/m`, and a uniformly shuffled source of length
//! `n` puts it at any position with probability `1/n`.
//!
//! The visiting order is re-derived here from the level-rotation rule rather
//! than taken from [`super::SamplingSession`], so the two can be checked
//! against each other.

use std::collections::{BTreeMap, HashMap};

use num_rational::Ratio;

use crate::geometry::Query;
use crate::index::{segment_bounds, StullIndex};

/// `(level, window)` pairs read by a cursor starting at `start_level`, in
/// update order, for the first `k` updates (capped at one full rotation).
pub fn delivery_schedule(start_level: u8, height: u8, updates_per_level: u32, k: u32) -> Vec<(u8, u32)> {
    let h = height as u32;
    let k = k.min(h * updates_per_level);
    (0..k)
        .map(|j| {
            let level = ((start_level as u32 - 1 + j / updates_per_level) % h) + 1;
            (level as u8, j % updates_per_level + 1)
        })
        .collect()
}

/// Expected size of window `w` over a source of length `n`, averaged over the
/// `U` equally likely offsets, divided by `n`.
fn window_share(n: u64, w: u32, parts: u32) -> Ratio<u64> {
    if n == 0 {
        return Ratio::from_integer(0);
    }
    let parts = parts as u64;
    let w = w as u64;
    let total: u64 = (0..parts)
        .map(|r| (n * w + r) / parts - (n * (w - 1) + r) / parts)
        .sum();
    Ratio::new(total, parts * n)
}

/// Exact probability that each query-matching point has been delivered after
/// `k` updates, keyed by point id. Intended for small instances.
pub fn selection_probability_oracle(
    index: &StullIndex,
    query: &Query,
    updates_per_level: u32,
    k: u32,
) -> BTreeMap<u64, Ratio<u64>> {
    let height = index.height();
    let h = height as usize;
    let geometry = index.geometry();
    let filter = query.filter(&index.config().extent);
    let level_of_query = index.level_of_query(query);
    let mut out = BTreeMap::new();

    for bin in index.bins_overlapping(&query.time) {
        let pyr = bin.pyramid();
        let seg_len = |m: usize, s: usize| -> u64 {
            let b = segment_bounds(m, h);
            (b[s] - b[s - 1]) as u64
        };
        // buffer lengths follow from leaf sizes alone
        let mut buffer_len: HashMap<(u8, usize), u64> = HashMap::new();
        for (leaf_id, leaf) in pyr.leaves().iter().enumerate() {
            for level in 1..height {
                *buffer_len
                    .entry((level, geometry.ancestor(leaf_id, level)))
                    .or_default() += seg_len(leaf.len(), level as usize);
            }
        }

        for (leaf_id, leaf) in pyr.leaves().iter().enumerate() {
            let m = leaf.len() as u64;
            for p in leaf.points().iter().filter(|p| filter.matches(p)) {
                let mut total = Ratio::from_integer(0u64);
                for start in 1..=height {
                    let buffer_walk = start >= level_of_query;
                    for (s, w) in delivery_schedule(start, height, updates_per_level, k) {
                        let in_segment = Ratio::new(seg_len(leaf.len(), s as usize), m);
                        let source = if buffer_walk && s < height {
                            buffer_len[&(s, geometry.ancestor(leaf_id, s))]
                        } else {
                            seg_len(leaf.len(), s as usize)
                        };
                        total += in_segment * window_share(source, w, updates_per_level);
                    }
                }
                out.insert(p.id, total / Ratio::from_integer(height as u64));
            }
        }
    }
    out
}

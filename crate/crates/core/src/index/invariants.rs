use std::collections::HashSet;

use thiserror::Error;

use super::pyramid::segment_bounds;
use super::StullIndex;
use crate::geometry::GeoPoint;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("index invariant violated in bin {bin}: {detail}")]
pub struct InvariantViolation {
    pub bin: u64,
    pub detail: String,
}

fn fail<T>(bin: u64, detail: impl Into<String>) -> Result<T, InvariantViolation> {
    Err(InvariantViolation {
        bin,
        detail: detail.into(),
    })
}

/// Checks partition, segment balance, buffer provenance and proportionality
/// for every bin.
pub(super) fn check(index: &StullIndex) -> Result<(), InvariantViolation> {
    let geometry = index.geometry();
    let height = index.height();
    let h = height as usize;
    let extent = index.config().extent;
    let mut ids = HashSet::with_capacity(index.point_count());

    for (&key, bin) in &index.bins {
        if key != bin.index || bin.range != index.config().bin_range(key) {
            return fail(key, "bin key, index and range disagree");
        }
        let pyr = &bin.pyramid;
        if pyr.height != height
            || pyr.leaves.len() != geometry.cells_at(height)
            || pyr.buffers.len() != h - 1
        {
            return fail(key, "pyramid shape does not match the configured height");
        }
        for (l, cells) in pyr.buffers.iter().enumerate() {
            if cells.len() != geometry.cells_at(l as u8 + 1) {
                return fail(key, format!("level {} has {} cells", l + 1, cells.len()));
            }
        }

        // expected[l - 1][cell]: segment-l points of every descendant leaf
        let mut expected: Vec<Vec<Vec<GeoPoint>>> = (1..height)
            .map(|l| vec![Vec::new(); geometry.cells_at(l)])
            .collect();
        let mut descendants: Vec<Vec<(usize, usize)>> = (1..height)
            .map(|l| vec![(0, 0); geometry.cells_at(l)])
            .collect();

        for (leaf_id, leaf) in pyr.leaves.iter().enumerate() {
            if leaf.bounds != segment_bounds(leaf.len(), h) {
                return fail(
                    key,
                    format!("leaf {leaf_id} has unbalanced segment bounds {:?}", leaf.bounds),
                );
            }
            for p in &leaf.data {
                if !ids.insert(p.id) {
                    return fail(key, format!("point id {} indexed twice", p.id));
                }
                if !bin.range.contains(p.t) {
                    return fail(key, format!("point {} outside the bin's time range", p.id));
                }
                if !extent.contains_closed(p.x, p.y) || geometry.leaf_of(p.x, p.y) != leaf_id {
                    return fail(key, format!("point {} stored in the wrong leaf", p.id));
                }
            }
            for level in 1..height {
                let anc = geometry.ancestor(leaf_id, level);
                expected[level as usize - 1][anc].extend_from_slice(leaf.segment(level as usize));
                let d = &mut descendants[level as usize - 1][anc];
                d.0 += leaf.len();
                d.1 += 1;
            }
        }

        for level in 1..height {
            let li = level as usize - 1;
            for (cell, buf) in pyr.buffers[li].iter().enumerate() {
                let mut want = std::mem::take(&mut expected[li][cell]);
                if want.len() != buf.len() {
                    return fail(
                        key,
                        format!(
                            "level {level} cell {cell} buffer holds {} points, leaves supply {}",
                            buf.len(),
                            want.len()
                        ),
                    );
                }
                let mut got = buf.clone();
                got.sort_by_key(|p| p.id);
                want.sort_by_key(|p| p.id);
                if got != want {
                    return fail(
                        key,
                        format!("level {level} cell {cell} buffer is not its leaves' segment {level}"),
                    );
                }
                let (n, leaves) = descendants[li][cell];
                let lo = (n / h).saturating_sub(leaves);
                let hi = n.div_ceil(h) + leaves;
                if buf.len() < lo || buf.len() > hi {
                    return fail(
                        key,
                        format!(
                            "level {level} cell {cell} buffer size {} outside [{lo}, {hi}]",
                            buf.len()
                        ),
                    );
                }
            }
        }
    }
    Ok(())
}

//! Tree-traversal sampling over per-bin quad-trees. Points live only in the
//! leaves; each draw descends from the root choosing children in proportion
//! to how many query-matching points they hold.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use rand::seq::index as sample_index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{CellSpan, GeoPoint, GridGeometry, Query, QueryFilter};
use crate::index::{IndexConfig, IndexError};
use crate::rng;
use crate::sampler::{SampleBatch, SamplingError};

pub const DEFAULT_LEAF_CAPACITY: usize = 64;

#[derive(Debug, Clone, PartialEq)]
struct Node {
    level: u8,
    cx: u32,
    cy: u32,
    count: u64,
    /// Index of the first of four children, or 0 for a leaf.
    first_child: u32,
    points: Vec<GeoPoint>,
}

impl Node {
    fn is_leaf(&self) -> bool {
        self.first_child == 0
    }
}

/// One bin's quad-tree. Node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadTree {
    nodes: Vec<Node>,
}

impl QuadTree {
    fn build(points: Vec<GeoPoint>, geometry: &GridGeometry, leaf_capacity: usize) -> Self {
        let max_depth = geometry.levels();
        let mut nodes = vec![Node {
            level: 1,
            cx: 0,
            cy: 0,
            count: points.len() as u64,
            first_child: 0,
            points: Vec::new(),
        }];
        let mut stack = vec![(0usize, points)];
        while let Some((id, pts)) = stack.pop() {
            let level = nodes[id].level;
            if pts.len() <= leaf_capacity || level == max_depth {
                nodes[id].points = pts;
                continue;
            }
            let (cx, cy) = (nodes[id].cx, nodes[id].cy);
            let shift = (max_depth - level - 1) as u32;
            let mut parts: [Vec<GeoPoint>; 4] = Default::default();
            for p in pts {
                let (lx, ly) = geometry.leaf_coords(p.x, p.y);
                let dx = ((lx >> shift) & 1) as usize;
                let dy = ((ly >> shift) & 1) as usize;
                parts[dy * 2 + dx].push(p);
            }
            let first = nodes.len();
            nodes[id].first_child = first as u32;
            for (q, part) in parts.into_iter().enumerate() {
                nodes.push(Node {
                    level: level + 1,
                    cx: cx * 2 + (q % 2) as u32,
                    cy: cy * 2 + (q / 2) as u32,
                    count: part.len() as u64,
                    first_child: 0,
                    points: Vec::new(),
                });
                stack.push((first + q, part));
            }
        }
        QuadTree { nodes }
    }

    pub fn count(&self) -> u64 {
        self.nodes[0].count
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> u8 {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(1)
    }

    fn children(&self, id: usize) -> std::ops::Range<usize> {
        let first = self.nodes[id].first_child as usize;
        first..first + 4
    }

    /// Subtree counts equal the sum of the children's counts everywhere.
    pub fn counts_consistent(&self) -> bool {
        self.nodes.iter().enumerate().all(|(id, n)| {
            if n.is_leaf() {
                n.count == n.points.len() as u64
            } else {
                n.points.is_empty()
                    && self.children(id).map(|c| self.nodes[c].count).sum::<u64>() == n.count
            }
        })
    }
}

/// Per-bin quad-trees with points stored only in leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadTreeIndex {
    config: IndexConfig,
    geometry: GridGeometry,
    bins: BTreeMap<u64, QuadTree>,
}

impl QuadTreeIndex {
    /// `config.height` is the maximum tree depth.
    pub fn build(
        points: &[GeoPoint],
        config: IndexConfig,
        leaf_capacity: usize,
    ) -> Result<Self, IndexError> {
        config.validate()?;
        let bin_ids = config.assign_bins(points)?;
        let mut grouped: BTreeMap<u64, Vec<GeoPoint>> = BTreeMap::new();
        for (p, b) in points.iter().zip(bin_ids) {
            grouped.entry(b).or_default().push(*p);
        }
        let geometry = config.geometry();
        let capacity = leaf_capacity.max(1);
        let bins = grouped
            .into_iter()
            .map(|(b, pts)| (b, QuadTree::build(pts, &geometry, capacity)))
            .collect();
        Ok(QuadTreeIndex {
            config,
            geometry,
            bins,
        })
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn trees(&self) -> impl Iterator<Item = (u64, &QuadTree)> {
        self.bins.iter().map(|(&b, t)| (b, t))
    }

    pub fn point_count(&self) -> u64 {
        self.bins.values().map(QuadTree::count).sum()
    }
}

/// Query-specific weights: matching points per node, plus the matching
/// positions inside leaves that only partly overlap the query.
#[derive(Debug)]
struct TreeWeights {
    bin: u64,
    weights: Vec<u64>,
    partial: HashMap<usize, Vec<u32>>,
}

struct Weigher<'a> {
    tree: &'a QuadTree,
    span: CellSpan,
    max_depth: u8,
    filter: &'a QueryFilter,
    time_covered: bool,
}

impl Weigher<'_> {
    fn run(&self, bin: u64) -> TreeWeights {
        let mut out = TreeWeights {
            bin,
            weights: vec![0; self.tree.nodes.len()],
            partial: HashMap::new(),
        };
        self.weigh(0, &mut out);
        out
    }

    /// Every point below a fully covered node matches.
    fn fill(&self, id: usize, out: &mut TreeWeights) {
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            out.weights[n] = self.tree.nodes[n].count;
            if !self.tree.nodes[n].is_leaf() {
                stack.extend(self.tree.children(n));
            }
        }
    }

    fn weigh(&self, id: usize, out: &mut TreeWeights) -> u64 {
        let node = &self.tree.nodes[id];
        let span = self.span.shifted((self.max_depth - node.level) as u32);
        if node.count == 0 || !span.contains(node.cx, node.cy) {
            return 0;
        }
        let w = if self.time_covered && span.contains_interior(node.cx, node.cy) {
            self.fill(id, out);
            node.count
        } else if node.is_leaf() {
            let hits: Vec<u32> = node
                .points
                .iter()
                .enumerate()
                .filter(|(_, p)| self.filter.matches(p))
                .map(|(i, _)| i as u32)
                .collect();
            let n = hits.len() as u64;
            if n != node.count {
                out.partial.insert(id, hits);
            }
            n
        } else {
            self.tree.children(id).map(|c| self.weigh(c, out)).sum()
        };
        out.weights[id] = w;
        w
    }
}

/// Matching-point weights of a query over a quad-tree index.
struct Prepared {
    trees: Vec<TreeWeights>,
    total: u64,
}

impl Prepared {
    fn new(index: &QuadTreeIndex, q: &Query) -> Self {
        let filter = q.filter(&index.config.extent);
        let mut trees = Vec::new();
        if let Some(span) = index.geometry.span(&q.rect) {
            for (&b, tree) in &index.bins {
                let range = index.config.bin_range(b);
                if !range.intersects(&q.time) {
                    continue;
                }
                let weigher = Weigher {
                    tree,
                    span,
                    max_depth: index.geometry.levels(),
                    filter: &filter,
                    time_covered: q.time.covers(&range),
                };
                let tw = weigher.run(b);
                if tw.weights[0] > 0 {
                    trees.push(tw);
                }
            }
        }
        let total = trees.iter().map(|t| t.weights[0]).sum();
        Prepared { trees, total }
    }

    /// One root-to-leaf descent; returns a uniformly chosen matching point.
    fn draw(&self, index: &QuadTreeIndex, rng: &mut ChaCha8Rng) -> GeoPoint {
        let mut r = rng.random_range(0..self.total);
        let tw = self
            .trees
            .iter()
            .find(|t| {
                if r < t.weights[0] {
                    true
                } else {
                    r -= t.weights[0];
                    false
                }
            })
            .expect("weights sum to total");
        let tree = &index.bins[&tw.bin];
        let mut id = 0usize;
        loop {
            let node = &tree.nodes[id];
            let mut pick = rng.random_range(0..tw.weights[id]);
            if node.is_leaf() {
                let pos = match tw.partial.get(&id) {
                    Some(hits) => hits[pick as usize] as usize,
                    None => pick as usize,
                };
                return node.points[pos];
            }
            id = tree
                .children(id)
                .find(|&c| {
                    if pick < tw.weights[c] {
                        true
                    } else {
                        pick -= tw.weights[c];
                        false
                    }
                })
                .expect("child weights sum to parent");
        }
    }

    fn matches(&self, index: &QuadTreeIndex) -> Vec<GeoPoint> {
        let mut out = Vec::with_capacity(self.total as usize);
        for tw in &self.trees {
            let tree = &index.bins[&tw.bin];
            for (id, node) in tree.nodes.iter().enumerate() {
                if !node.is_leaf() || tw.weights[id] == 0 {
                    continue;
                }
                match tw.partial.get(&id) {
                    Some(hits) => out.extend(hits.iter().map(|&i| node.points[i as usize])),
                    None => out.extend_from_slice(&node.points),
                }
            }
        }
        out
    }
}

/// Draws `n` distinct matching points. Asking for at least as many points as
/// match returns every match.
pub fn randompath_sample(index: &QuadTreeIndex, q: &Query, n: usize, seed: u64) -> Vec<GeoPoint> {
    let prepared = Prepared::new(index, q);
    let mut rng = rng::stream(seed, &[0x7A7B]);
    let mut chosen = HashSet::new();
    draw_distinct(index, &prepared, n, &mut chosen, &mut rng)
}

fn draw_distinct(
    index: &QuadTreeIndex,
    prepared: &Prepared,
    n: usize,
    chosen: &mut HashSet<u64>,
    rng: &mut ChaCha8Rng,
) -> Vec<GeoPoint> {
    let remaining = prepared.total as usize - chosen.len();
    let n = n.min(remaining);
    if n == 0 {
        return Vec::new();
    }
    if n * 2 > remaining {
        // rejection would mostly hit duplicates; pick straight from the rest
        let rest: Vec<GeoPoint> = prepared
            .matches(index)
            .into_iter()
            .filter(|p| !chosen.contains(&p.id))
            .collect();
        let picked: Vec<GeoPoint> = sample_index::sample(rng, rest.len(), n)
            .into_iter()
            .map(|i| rest[i])
            .collect();
        chosen.extend(picked.iter().map(|p| p.id));
        return picked;
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = prepared.draw(index, rng);
        if chosen.insert(p.id) {
            out.push(p);
        }
    }
    out
}

/// Incremental RandomPath retrieval with the same per-update point budget as
/// a STULL session of equal `H·U`.
pub struct RandomPathSession {
    index: Arc<QuadTreeIndex>,
    prepared: Prepared,
    total_updates: u32,
    delivered: u32,
    chosen: HashSet<u64>,
    rng: ChaCha8Rng,
}

impl RandomPathSession {
    pub fn open(
        index: Arc<QuadTreeIndex>,
        query: Query,
        total_updates: u32,
        seed: u64,
    ) -> Result<Self, SamplingError> {
        if total_updates == 0 {
            return Err(SamplingError::InvalidUpdatesPerLevel);
        }
        let overlaps = index.geometry.span(&query.rect).is_some()
            && index
                .bins
                .keys()
                .any(|&b| index.config.bin_range(b).intersects(&query.time));
        let prepared = Prepared::new(&index, &query);
        Ok(RandomPathSession {
            index,
            prepared,
            total_updates: if overlaps { total_updates } else { 0 },
            delivered: 0,
            chosen: HashSet::new(),
            rng: rng::stream(seed, &[0x7A7C]),
        })
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
        let m = self.prepared.total;
        let t = self.total_updates as u64;
        let u = self.delivered as u64 + 1;
        let budget = (m * u / t - m * (u - 1) / t) as usize;
        let points = draw_distinct(&self.index, &self.prepared, budget, &mut self.chosen, &mut self.rng);
        self.delivered += 1;
        Ok(SampleBatch {
            points,
            update_number: self.delivered,
            fraction_complete: self.delivered as f64 / self.total_updates as f64,
            exhausted: self.is_exhausted(),
        })
    }
}

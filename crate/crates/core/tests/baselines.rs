mod common;

use std::collections::HashSet;
use std::sync::Arc;

use common::{config, rect, uniform_points, unit};
use proptest::prelude::*;
use rand::Rng;
use stull_core::baselines::{
    fixedbuffer_sample, randompath_sample, Chunk, FixedBufferIndex, QuadTreeIndex, RandomPathSession,
    DEFAULT_LEAF_CAPACITY,
};
use stull_core::evaluation::{bench_sampler, WARMUP_RUNS};
use stull_core::{rng, GeoPoint, Query, SamplingConfig, SamplingSession, StullIndex, TimeRange};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn quadtree_counts_are_consistent(n in 0usize..3_000, cap in 1usize..64, seed: u64) {
        let pts = uniform_points(n, unit(), 3_000, 0, seed);
        let qt = QuadTreeIndex::build(&pts, config(5, 1_000), cap).unwrap();
        prop_assert_eq!(qt.point_count(), n as u64);
        for (_, tree) in qt.trees() {
            prop_assert!(tree.counts_consistent());
            prop_assert!(tree.depth() <= 5);
        }
    }

    #[test]
    fn randompath_returns_distinct_matches(n in 0usize..400, seed: u64) {
        let pts = uniform_points(1_500, unit(), 2_000, 0, 3);
        let qt = QuadTreeIndex::build(&pts, config(4, 1_000), 16).unwrap();
        let q = Query::new(rect(0.2, 0.1, 0.7, 0.8), TimeRange::new(100, 1_800).unwrap());
        let truth: HashSet<u64> = pts.iter().filter(|p| q.rect.contains(p.x, p.y) && q.time.contains(p.t)).map(|p| p.id).collect();
        let got = randompath_sample(&qt, &q, n, seed);
        let ids: HashSet<u64> = got.iter().map(|p| p.id).collect();
        prop_assert_eq!(ids.len(), got.len());
        prop_assert_eq!(got.len(), n.min(truth.len()));
        prop_assert!(ids.is_subset(&truth));
    }
}

#[test]
fn randompath_edge_counts() {
    let pts = uniform_points(1_000, unit(), 100, 0, 1);
    let qt = QuadTreeIndex::build(&pts, config(4, 1_000), 8).unwrap();
    let q = Query::everything(unit());
    assert!(randompath_sample(&qt, &q, 0, 1).is_empty());
    let all: HashSet<u64> = randompath_sample(&qt, &q, 1_000, 1).iter().map(|p| p.id).collect();
    assert_eq!(all.len(), 1_000);
    assert_eq!(randompath_sample(&qt, &q, 5_000, 1).len(), 1_000);
}

#[test]
fn randompath_inclusion_is_uniform() {
    const REPS: u64 = 10_000;
    // clustered, so descents pass through very unequal subtrees
    let mut pts = uniform_points(700, rect(0.0, 0.0, 0.2, 0.2), 100, 0, 1);
    pts.extend(uniform_points(300, unit(), 100, 700, 2));
    let qt = QuadTreeIndex::build(&pts, config(4, 1_000), 8).unwrap();
    let q = Query::everything(unit());
    let mut hits = vec![0u64; pts.len()];
    for rep in 0..REPS {
        for p in randompath_sample(&qt, &q, 100, rep) {
            hits[p.id as usize] += 1;
        }
    }
    let p = 0.1;
    let sigma = (p * (1.0 - p) / REPS as f64).sqrt();
    let worst = hits.iter().map(|&h| (h as f64 / REPS as f64 - p).abs() / sigma).fold(0.0, f64::max);
    assert!(worst <= 4.0, "worst deviation {worst:.2} sigma");
}

/// Two sibling level-2 cells along the bottom row; each has `n` points of
/// which a fraction `p` fall in its left half.
fn siblings(na: usize, pa: f64, nb: usize, pb: f64, seed: u64) -> (Vec<GeoPoint>, impl Fn(&GeoPoint) -> bool) {
    let part = |n: usize, p: f64, x0: f64, id0: u64, s: u64| {
        let inside = (n as f64 * p).round() as usize;
        let mut v = uniform_points(inside, rect(x0, 0.0, x0 + 0.25, 0.5), 10, id0, s);
        v.extend(uniform_points(n - inside, rect(x0 + 0.25, 0.0, x0 + 0.5, 0.5), 10, id0 + inside as u64, s + 1));
        v
    };
    let mut pts = part(na, pa, 0.0, 0, seed);
    pts.extend(part(nb, pb, 0.5, na as u64, seed + 2));
    let in_q = |p: &GeoPoint| (p.x < 0.25) || (0.5 <= p.x && p.x < 0.75);
    (pts, in_q)
}

#[test]
fn fixed_buffers_weight_cells_equally() {
    const B: usize = 200;
    const DRAWS: u64 = 300;
    let mut r = rng::stream(17, &[]);
    let bottom = Query::new(rect(0.0, 0.0, 1.0, 0.5), TimeRange::all());
    for case in 0..12u64 {
        let (na, nb) = (r.random_range(B..6 * B), r.random_range(B..6 * B));
        let (pa, pb) = (r.random_range(0.05..0.95), r.random_range(0.05..0.95));
        let (pts, in_q) = siblings(na, pa, nb, pb, case * 10);
        let (pa, pb) = (
            pts[..na].iter().filter(|p| in_q(p)).count() as f64 / na as f64,
            pts[na..].iter().filter(|p| in_q(p)).count() as f64 / nb as f64,
        );
        let (mut matched, mut total) = (0usize, 0usize);
        for seed in 0..DRAWS {
            let idx = FixedBufferIndex::build(&pts, config(3, 100), B, seed).unwrap();
            let sample = fixedbuffer_sample(&idx, &bottom, 2, Chunk::WHOLE);
            total += sample.len();
            matched += sample.iter().filter(|p| in_q(p)).count();
        }
        assert_eq!(total, 2 * B * DRAWS as usize);
        let got = matched as f64 / total as f64;
        let cell_weighted = (pa + pb) / 2.0;
        let data_weighted = (na as f64 * pa + nb as f64 * pb) / (na + nb) as f64;
        // hypergeometric draws, so the binomial bound is conservative
        let sigma = (cell_weighted * (1.0 - cell_weighted) / total as f64).sqrt();
        assert!((got - cell_weighted).abs() <= 4.0 * sigma, "case {case}: {got} vs {cell_weighted}");
        if (cell_weighted - data_weighted).abs() > 10.0 * sigma {
            assert!((got - data_weighted).abs() > 4.0 * sigma, "case {case}: bias not visible");
        }
    }
}

#[test]
fn fig2_layout_reproduces_the_45_percent_arithmetic() {
    // cell A: 2000 points, 1000 in Q; cell B: 4000 points, 1600 in Q
    let (pts, in_q) = siblings(2_000, 0.5, 4_000, 0.4, 1);
    let bottom = Query::new(rect(0.0, 0.0, 1.0, 0.5), TimeRange::all());
    let truth = pts.iter().filter(|p| in_q(p)).count() as f64 / pts.len() as f64;
    assert!((truth - 2_600.0 / 6_000.0).abs() < 1e-12);
    let (mut matched, mut total) = (0usize, 0usize);
    for seed in 0..2_000 {
        let idx = FixedBufferIndex::build(&pts, config(3, 100), 500, seed).unwrap();
        let s = fixedbuffer_sample(&idx, &bottom, 2, Chunk::WHOLE);
        total += s.len();
        matched += s.iter().filter(|p| in_q(p)).count();
    }
    let got = matched as f64 / total as f64;
    assert!((got - 0.45).abs() < 0.005, "got {got}");
}

#[test]
fn stull_updates_are_much_cheaper_than_randompath() {
    let pts = uniform_points(400_000, unit(), 86_400, 0, 7);
    let cfg = config(4, 86_400);
    let q = Query::everything(unit());
    let (h, u) = (4u32, 5u32);
    let stull = Arc::new(StullIndex::build(&pts, cfg, 1).unwrap());
    let qt = Arc::new(QuadTreeIndex::build(&pts, cfg, DEFAULT_LEAF_CAPACITY).unwrap());
    let s = bench_sampler(
        |run| SamplingSession::open(stull.clone(), q, SamplingConfig::new(u, run)).unwrap(),
        WARMUP_RUNS,
        5,
    );
    let rp = bench_sampler(
        |run| RandomPathSession::open(qt.clone(), q, h * u, run).unwrap(),
        1,
        3,
    );
    let ratio = s.per_update.median_ms / rp.per_update.median_ms;
    assert!(ratio <= 0.6, "stull {:.3} ms vs randompath {:.3} ms per update", s.per_update.median_ms, rp.per_update.median_ms);
}

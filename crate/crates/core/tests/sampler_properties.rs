mod common;

use std::collections::{BTreeMap, HashSet};

use common::{config, rect, uniform_points, unit};
use num_rational::Ratio;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use stull_core::sampler::{run_to_completion, selection_probability_oracle, CursorMode};
use stull_core::{
    rng, GeoPoint, Query, SamplingConfig, SamplingError, SamplingSession, SessionOptions, SpatialRect, StullIndex,
    TimeRange,
};

/// Plain linear filter, written independently of the library's query code.
fn brute_force(points: &[GeoPoint], q: &Query, extent: &SpatialRect) -> HashSet<u64> {
    let in_axis = |v: f64, lo: f64, hi: f64, edge: f64| lo <= v && (v < hi || (hi >= edge && v <= edge));
    points
        .iter()
        .filter(|p| {
            in_axis(p.x, q.rect.min_x, q.rect.max_x, extent.max_x)
                && in_axis(p.y, q.rect.min_y, q.rect.max_y, extent.max_y)
                && q.time.start <= p.t
                && p.t < q.time.end
        })
        .map(|p| p.id)
        .collect()
}

fn grid_points(n_side: u64, t_span: i64) -> Vec<GeoPoint> {
    // includes points on the extent's max edges
    (0..n_side * n_side)
        .map(|i| {
            let (a, b) = (i % n_side, i / n_side);
            GeoPoint::new(i, a as f64 / (n_side - 1) as f64, b as f64 / (n_side - 1) as f64, (i as i64 * 37) % t_span)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sessions_exhaust_to_the_brute_force_result(
        x0 in -0.1f64..1.1, x1 in -0.1f64..1.1, y0 in -0.1f64..1.1, y1 in -0.1f64..1.1,
        t0 in 0i64..3_000, dt in 1i64..3_000,
        height in 2u8..=5, u in 1u32..=4, seed: u64,
    ) {
        prop_assume!((x0 - x1).abs() > 1e-6 && (y0 - y1).abs() > 1e-6);
        let mut pts = uniform_points(3_000, unit(), 3_000, 0, 5);
        pts.extend(grid_points(11, 3_000).into_iter().map(|p| GeoPoint { id: p.id + 10_000, ..p }));
        let index = StullIndex::build(&pts, config(height, 1_000), seed).unwrap();
        let q = Query::new(rect(x0, y0, x1, y1), TimeRange::new(t0, t0 + dt).unwrap());
        let mut s = SamplingSession::open(&index, q, SamplingConfig::new(u, seed)).unwrap();
        let mut seen = HashSet::new();
        let mut last = 0.0;
        while !s.is_exhausted() {
            let b = s.next_update().unwrap();
            prop_assert!(b.fraction_complete > last);
            last = b.fraction_complete;
            for p in b.points {
                prop_assert!(seen.insert(p.id), "duplicate {}", p.id);
            }
        }
        prop_assert_eq!(s.next_update(), Err(SamplingError::Exhausted));
        prop_assert_eq!(seen, brute_force(&pts, &q, &unit()));
    }
}

#[test]
fn enumerated_layout_delivers_exactly_k_theta_of_a_full_query() {
    // Averaged over every start level and window offset, a fixed layout must
    // deliver k*theta of the matching points in expectation.
    let pts = uniform_points(2_345, unit(), 3_000, 0, 8);
    let q = Query::everything(unit());
    for (height, u) in [(2u8, 1u32), (3, 2), (4, 3)] {
        let index = StullIndex::build(&pts, config(height, 1_000), 2).unwrap();
        let total = height as u32 * u;
        for k in 1..=total {
            let mut delivered = 0u64;
            for start in 1..=height {
                for offset in 0..u {
                    let options = SessionOptions {
                        start_level: Some(start),
                        window_offset: Some(offset),
                    };
                    let mut s = SamplingSession::open_with(&index, q, SamplingConfig::new(u, 0), options).unwrap();
                    for _ in 0..k {
                        delivered += s.next_update().unwrap().points.len() as u64;
                    }
                }
            }
            let mean = Ratio::new(delivered, height as u64 * u as u64);
            assert_eq!(mean, Ratio::new(k as u64 * pts.len() as u64, total as u64), "H={height} U={u} k={k}");
        }
    }
}

/// Three bins with unequal populations.
fn three_bins() -> (StullIndex, Query) {
    let mut pts = uniform_points(500, unit(), 1_000, 0, 1);
    pts.extend(uniform_points(300, unit(), 1_000, 1_000, 2).into_iter().map(|p| GeoPoint { t: p.t + 1_000, ..p }));
    pts.extend(uniform_points(200, unit(), 1_000, 2_000, 3).into_iter().map(|p| GeoPoint { t: p.t + 2_000, ..p }));
    let index = StullIndex::build(&pts, config(4, 1_000), 0).unwrap();
    assert_eq!(index.bin_count(), 3);
    // inside one level-2 quadrant, so both cursor modes occur
    (index, Query::new(rect(0.05, 0.05, 0.45, 0.4), TimeRange::all()))
}

#[test]
fn multi_bin_probabilities_are_exact() {
    let (index, q) = three_bins();
    assert_eq!(index.level_of_query(&q), 2);
    let matching = brute_force(&index.points().copied().collect::<Vec<_>>(), &q, &unit());
    for u in [1u32, 2] {
        let total = 4 * u;
        for k in 1..=total {
            let probs = selection_probability_oracle(&index, &q, u, k);
            assert_eq!(probs.keys().copied().collect::<HashSet<_>>(), matching);
            let want = Ratio::new(k as u64, total as u64);
            assert!(probs.values().all(|p| *p == want), "U={u} k={k}");
        }
    }
}

fn frequency_check(hits: &[u64], trials: u64, p: f64) -> (f64, f64) {
    let n = trials as f64;
    let sigma = (p * (1.0 - p) / n).sqrt();
    let worst = hits.iter().map(|&h| (h as f64 / n - p).abs() / sigma).fold(0.0, f64::max);
    let chi2: f64 = hits.iter().map(|&h| (h as f64 - n * p).powi(2) / (n * p * (1.0 - p))).sum();
    let pval = ChiSquared::new((hits.len() - 1) as f64).unwrap().sf(chi2);
    (worst, pval)
}

#[test]
fn multi_bin_frequencies_are_uniform_after_one_update_and_one_level() {
    const TRIALS: u64 = 100_000;
    let (mut index, q) = three_bins();
    let u = 5;
    let slot: BTreeMap<u64, usize> = index.scan(&q).iter().enumerate().map(|(i, p)| (p.id, i)).collect();
    let mut first = vec![0u64; slot.len()];
    let mut level = vec![0u64; slot.len()];
    for trial in 0..TRIALS {
        index.reshuffle(rng::derive_seed(5, &[trial]));
        let mut s = SamplingSession::open(&index, q, SamplingConfig::new(u, rng::derive_seed(6, &[trial]))).unwrap();
        for k in 1..=u {
            for p in s.next_update().unwrap().points {
                let i = slot[&p.id];
                if k == 1 {
                    first[i] += 1;
                }
                level[i] += 1;
            }
        }
    }
    let (worst, pval) = frequency_check(&first, TRIALS, 0.05);
    assert!(worst <= 4.0 && pval > 0.001, "first update: {worst:.2} sigma, p = {pval:.4}");
    let (worst, pval) = frequency_check(&level, TRIALS, 0.25);
    assert!(worst <= 4.0 && pval > 0.001, "first level: {worst:.2} sigma, p = {pval:.4}");
}

#[test]
fn run_to_completion_examples() {
    let pts = uniform_points(10_000, unit(), 2_000, 0, 12);
    let index = StullIndex::build(&pts, config(2, 1_000), 1).unwrap();
    let everything = Query::everything(unit());
    assert_eq!(run_to_completion(&index, everything, SamplingConfig::new(1, 0)).unwrap().len(), 2);

    let outside = Query::new(unit(), TimeRange::new(50_000, 60_000).unwrap());
    assert!(run_to_completion(&index, outside, SamplingConfig::new(3, 0)).unwrap().is_empty());
    let nothing = Query::new(rect(0.2, 0.2, 0.2 + 1e-12, 0.2 + 1e-12), TimeRange::all());
    let batches = run_to_completion(&index, nothing, SamplingConfig::new(3, 0)).unwrap();
    assert!(batches.iter().all(|b| b.points.is_empty()));

    let q = Query::new(rect(0.13, 0.4, 0.77, 0.93), TimeRange::new(300, 1_700).unwrap());
    let index = StullIndex::build(&pts, config(5, 1_000), 1).unwrap();
    let ids: Vec<u64> = run_to_completion(&index, q, SamplingConfig::new(4, 9))
        .unwrap()
        .into_iter()
        .flat_map(|b| b.points)
        .map(|p| p.id)
        .collect();
    let set: HashSet<u64> = ids.iter().copied().collect();
    assert_eq!(set.len(), ids.len());
    assert_eq!(set, brute_force(&pts, &q, &unit()));
}

#[test]
fn cursors_follow_bins_and_modes() {
    let pts = uniform_points(4_000, unit(), 4_000, 0, 2);
    let index = StullIndex::build(&pts, config(4, 1_000), 1).unwrap();
    let s = SamplingSession::open(&index, Query::everything(unit()), SamplingConfig::new(1, 3)).unwrap();
    assert_eq!(s.cursors().len(), 4);
    assert!(s.cursors().iter().all(|c| (1..=4).contains(&c.start_level())));
    let narrow = Query::new(unit(), TimeRange::new(1_200, 1_300).unwrap());
    assert_eq!(SamplingSession::open(&index, narrow, SamplingConfig::new(1, 3)).unwrap().cursors().len(), 1);

    // one level-3 cell holds the query: l_Q = 3
    let deep = Query::new(rect(0.3, 0.3, 0.45, 0.45), TimeRange::all());
    let forced = SessionOptions {
        start_level: Some(2),
        window_offset: None,
    };
    let s = SamplingSession::open_with(&index, deep, SamplingConfig::new(1, 3), forced).unwrap();
    assert_eq!(s.level_of_query(), 3);
    assert!(s.cursors().iter().all(|c| c.mode() == CursorMode::LeafOnly));
}

#[test]
fn same_seed_replays_and_sessions_cross_threads() {
    let pts = uniform_points(5_000, unit(), 2_000, 0, 4);
    let index = std::sync::Arc::new(StullIndex::build(&pts, config(3, 1_000), 1).unwrap());
    let q = Query::new(rect(0.1, 0.1, 0.9, 0.6), TimeRange::all());
    let mut a = SamplingSession::open(index.clone(), q, SamplingConfig::new(2, 42)).unwrap();
    let first = a.next_update().unwrap();
    // an idle session moves to another thread and carries on
    let rest = std::thread::spawn(move || {
        let mut v = Vec::new();
        while !a.is_exhausted() {
            v.push(a.next_update().unwrap());
        }
        v
    })
    .join()
    .unwrap();
    let replay = run_to_completion(index, q, SamplingConfig::new(2, 42)).unwrap();
    assert_eq!(replay[0], first);
    assert_eq!(&replay[1..], &rest[..]);
}

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::report::MetricRecord;
use crate::geometry::Query;
use crate::index::StullIndex;
use crate::rng;
use crate::sampler::{IncrementalSampler, SamplingConfig, SamplingSession};

/// Unmeasured runs before timing starts.
pub const WARMUP_RUNS: usize = 3;

/// Distribution of a set of timings, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl TimingSummary {
    pub fn from_durations(samples: &[Duration]) -> TimingSummary {
        if samples.is_empty() {
            return TimingSummary {
                mean_ms: 0.0,
                median_ms: 0.0,
                p90_ms: 0.0,
                p99_ms: 0.0,
                max_ms: 0.0,
            };
        }
        let mut ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        let rank = |p: f64| ms[((p * ms.len() as f64).ceil() as usize).clamp(1, ms.len()) - 1];
        let median = if ms.len() % 2 == 1 {
            ms[ms.len() / 2]
        } else {
            (ms[ms.len() / 2 - 1] + ms[ms.len() / 2]) / 2.0
        };
        TimingSummary {
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            median_ms: median,
            p90_ms: rank(0.90),
            p99_ms: rank(0.99),
            max_ms: ms[ms.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub repetitions: usize,
    pub updates_per_run: u32,
    pub points_per_update: f64,
    /// Over every individual update of every measured run.
    pub per_update: TimingSummary,
    /// Wall time of a whole run, from open to exhaustion.
    pub total: TimingSummary,
}

impl LatencyReport {
    pub fn records(&self, sampler: &str, dataset: &str, theta: f64, seed: u64) -> Vec<MetricRecord> {
        let rec = |metric: &str, value: f64| MetricRecord {
            metric: metric.to_string(),
            sampler: sampler.to_string(),
            dataset: dataset.to_string(),
            theta,
            seed,
            value,
        };
        let u = &self.per_update;
        let t = &self.total;
        vec![
            rec("update_mean_ms", u.mean_ms),
            rec("update_median_ms", u.median_ms),
            rec("update_p90_ms", u.p90_ms),
            rec("update_p99_ms", u.p99_ms),
            rec("update_max_ms", u.max_ms),
            rec("run_mean_ms", t.mean_ms),
            rec("run_median_ms", t.median_ms),
            rec("points_per_update", self.points_per_update),
        ]
    }
}

/// Times complete runs of sessions produced by `open(run)`. The first
/// `warmup` runs are discarded.
pub fn bench_sampler<S, F>(mut open: F, warmup: usize, repetitions: usize) -> LatencyReport
where
    S: IncrementalSampler,
    F: FnMut(u64) -> S,
{
    let mut per_update = Vec::new();
    let mut totals = Vec::with_capacity(repetitions);
    let mut points = 0usize;
    let mut updates_per_run = 0;
    for run in 0..warmup + repetitions {
        let measured = run >= warmup;
        let start = Instant::now();
        let mut session = open(run as u64);
        updates_per_run = session.total_updates();
        while !session.is_exhausted() {
            let t0 = Instant::now();
            let batch = session.next_update().expect("session not exhausted");
            let dt = t0.elapsed();
            if measured {
                per_update.push(dt);
                points += batch.points.len();
            }
            std::hint::black_box(&batch);
        }
        if measured {
            totals.push(start.elapsed());
        }
    }
    LatencyReport {
        repetitions,
        updates_per_run,
        points_per_update: if per_update.is_empty() {
            0.0
        } else {
            points as f64 / per_update.len() as f64
        },
        per_update: TimingSummary::from_durations(&per_update),
        total: TimingSummary::from_durations(&totals),
    }
}

/// Per-update latency of STULL retrieval for one query. Each run uses a
/// seed derived from `cfg.master_seed` and the run number.
pub fn bench_retrieval(index: &StullIndex, q: &Query, cfg: &SamplingConfig, repetitions: usize) -> LatencyReport {
    bench_sampler(
        |run| {
            let seed = rng::derive_seed(cfg.master_seed, &[run]);
            SamplingSession::open(index, *q, SamplingConfig::new(cfg.updates_per_level, seed))
                .expect("valid sampling config")
        },
        WARMUP_RUNS,
        repetitions,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GeoPoint, SpatialRect};
    use crate::index::IndexConfig;

    #[test]
    fn summary_percentiles() {
        let d: Vec<Duration> = (1..=100).map(Duration::from_millis).collect();
        let s = TimingSummary::from_durations(&d);
        assert!((s.mean_ms - 50.5).abs() < 1e-9);
        assert!((s.median_ms - 50.5).abs() < 1e-9);
        assert!((s.p90_ms - 90.0).abs() < 1e-9);
        assert!((s.p99_ms - 99.0).abs() < 1e-9);
        assert!((s.max_ms - 100.0).abs() < 1e-9);
    }

    #[test]
    fn report_counts_updates_and_points() {
        let config = IndexConfig {
            height: 3,
            bin_interval: 100,
            origin_time: 0,
            extent: SpatialRect::new(0.0, 0.0, 1.0, 1.0).unwrap(),
        };
        let pts: Vec<GeoPoint> = (0..600)
            .map(|i| GeoPoint::new(i, (i as f64 * 0.618).fract(), (i as f64 * 0.754).fract(), 5))
            .collect();
        let index = StullIndex::build(&pts, config, 1).unwrap();
        let q = Query::everything(config.extent);
        let r = bench_retrieval(&index, &q, &SamplingConfig::new(2, 9), 4);
        assert_eq!(r.repetitions, 4);
        assert_eq!(r.updates_per_run, 6);
        assert!((r.points_per_update - 100.0).abs() < 1e-9);
        assert_eq!(r.records("stull", "d", 1.0 / 6.0, 9).len(), 8);
    }
}

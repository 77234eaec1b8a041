use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context};
use stull_core::baselines::{
    FixedBufferIndex, FixedBufferSession, QuadTreeIndex, RandomPathSession, DEFAULT_BUFFER_SIZE, DEFAULT_LEAF_CAPACITY,
};
use stull_core::evaluation::{
    bench_sampler, default_bandwidth, generate_synthetic, hourly_histogram, kde_grid, rmse_hourly, rmse_masked,
    MetricRecord, ReportWriter, SyntheticSpec,
};
use stull_core::persist::{load_index, read_points, save_index, write_points, AppConfig, EvalDefaults, PointFormat};
use stull_core::{
    rng, GeoPoint, IncrementalSampler, IndexConfig, Query, SamplingConfig, SamplingSession, SpatialRect, StullIndex,
    TimeRange,
};

use crate::{Format, Mode, QueryArgs, Sampler};

fn load_points(path: &Path, format: Option<Format>) -> anyhow::Result<Vec<GeoPoint>> {
    let format = format.map_or_else(|| PointFormat::from_path(path), PointFormat::from);
    let (points, report) = read_points(path, format).with_context(|| format!("reading {}", path.display()))?;
    if report.rejected > 0 {
        tracing::warn!(rejected = report.rejected, first = ?report.reasons.first(), "rows rejected");
    }
    if points.is_empty() {
        tracing::warn!(path = %path.display(), "no rows accepted");
    }
    tracing::info!(accepted = report.accepted, elapsed_ms = report.elapsed.as_millis() as u64, "read points");
    Ok(points)
}

fn open_index(path: &Path) -> anyhow::Result<StullIndex> {
    let t = Instant::now();
    let index = load_index(path).with_context(|| format!("loading {}", path.display()))?;
    tracing::info!(points = index.point_count(), bins = index.bin_count(), elapsed_ms = t.elapsed().as_millis() as u64, "loaded index");
    Ok(index)
}

fn query(index: &StullIndex, args: &QueryArgs) -> Query {
    Query::new(args.rect.unwrap_or(index.config().extent), args.time.unwrap_or(TimeRange::all()))
}

fn eval_defaults(config: Option<&Path>) -> anyhow::Result<EvalDefaults> {
    match config {
        Some(p) => Ok(AppConfig::load(p).with_context(|| format!("loading {}", p.display()))?.evaluation),
        None => Ok(EvalDefaults::default()),
    }
}

/// Quad tree and fixed-buffer indexes over the same points, built on demand.
struct Baselines {
    points: Vec<GeoPoint>,
    config: IndexConfig,
    seed: u64,
    quadtree: Option<Arc<QuadTreeIndex>>,
    fixed: Option<Arc<FixedBufferIndex>>,
}

impl Baselines {
    fn new(index: &StullIndex, seed: u64) -> Self {
        Baselines {
            points: index.points().copied().collect(),
            config: *index.config(),
            seed,
            quadtree: None,
            fixed: None,
        }
    }

    fn quadtree(&mut self) -> anyhow::Result<Arc<QuadTreeIndex>> {
        if self.quadtree.is_none() {
            self.quadtree = Some(Arc::new(QuadTreeIndex::build(&self.points, self.config, DEFAULT_LEAF_CAPACITY)?));
        }
        Ok(self.quadtree.clone().unwrap())
    }

    fn fixed(&mut self) -> anyhow::Result<Arc<FixedBufferIndex>> {
        if self.fixed.is_none() {
            self.fixed = Some(Arc::new(FixedBufferIndex::build(&self.points, self.config, DEFAULT_BUFFER_SIZE, self.seed)?));
        }
        Ok(self.fixed.clone().unwrap())
    }

    fn open<'a>(
        &mut self,
        sampler: Sampler,
        index: &'a StullIndex,
        q: Query,
        cfg: SamplingConfig,
    ) -> anyhow::Result<Box<dyn IncrementalSampler + 'a>> {
        let total = cfg.total_updates(index.height());
        Ok(match sampler {
            Sampler::Stull => Box::new(SamplingSession::open(index, q, cfg)?),
            Sampler::Randompath => Box::new(RandomPathSession::open(self.quadtree()?, q, total, cfg.master_seed)?),
            Sampler::Fixedbuffer => Box::new(FixedBufferSession::open(self.fixed()?, q, total)?),
        })
    }
}

fn write_reports(report: &ReportWriter, csv: Option<&Path>, summary: Option<&Path>) -> anyhow::Result<()> {
    match csv {
        Some(p) => report.write_csv(BufWriter::new(File::create(p)?))?,
        None => report.write_csv(io::stdout().lock())?,
    }
    if let Some(p) = summary {
        let mut w = BufWriter::new(File::create(p)?);
        report.write_summary_json(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

pub fn generate(
    mode: Mode,
    count: usize,
    extent: SpatialRect,
    time_start: i64,
    time_span: i64,
    seed: u64,
    out: &Path,
) -> anyhow::Result<()> {
    let mut spec = match mode {
        Mode::Clustered => SyntheticSpec::clustered(count, extent, seed),
        Mode::Scattered => SyntheticSpec::scattered(count, extent, seed),
    };
    spec.time_start = time_start;
    spec.time_span = time_span;
    let points = generate_synthetic(&spec)?;
    write_points(out, &points, PointFormat::from_path(out))?;
    println!("wrote {} points to {}", points.len(), out.display());
    Ok(())
}

pub fn build(config: &Path, input: &Path, format: Option<Format>, out: &Path) -> anyhow::Result<()> {
    let cfg = AppConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    let points = load_points(input, format)?;
    let t = Instant::now();
    let index = StullIndex::build(&points, cfg.index, cfg.build_seed)?;
    let elapsed = t.elapsed();
    save_index(&index, out)?;
    println!(
        "built {} points in {} bins (H={}) in {:.1} ms; wrote {}",
        index.point_count(),
        index.bin_count(),
        index.height(),
        elapsed.as_secs_f64() * 1e3,
        out.display()
    );
    Ok(())
}

pub fn insert(index_path: &Path, input: &Path, format: Option<Format>, seed: u64, out: Option<&Path>) -> anyhow::Result<()> {
    let mut index = open_index(index_path)?;
    let points = load_points(input, format)?;
    let report = index.insert(&points, seed)?;
    let out = out.unwrap_or(index_path);
    save_index(&index, out)?;
    println!(
        "inserted {} points into {} bins in {:.1} ms; index now holds {}; wrote {}",
        report.points_inserted,
        report.bins_touched,
        report.elapsed.as_secs_f64() * 1e3,
        index.point_count(),
        out.display()
    );
    Ok(())
}

pub fn check(path: &Path) -> anyhow::Result<()> {
    let index = open_index(path)?;
    index.check_invariants()?;
    let c = index.config();
    println!("ok: {} points, {} bins, H={}, bin interval {} s", index.point_count(), index.bin_count(), c.height, c.bin_interval);
    for bin in index.bins() {
        let r = bin.range();
        println!("bin {:>6}  [{}, {})  {} points", bin.index(), r.start, r.end, bin.count());
    }
    Ok(())
}

pub fn sample(
    index_path: &Path,
    args: &QueryArgs,
    updates_per_level: u32,
    sampler: Sampler,
    seed: u64,
    limit: Option<u32>,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let index = open_index(index_path)?;
    let q = query(&index, args);
    let cfg = SamplingConfig::new(updates_per_level, seed);
    let mut baselines = Baselines::new(&index, seed);
    let mut session = baselines.open(sampler, &index, q, cfg)?;
    let limit = limit.unwrap_or(u32::MAX);
    let mut delivered = Vec::new();
    let mut stdout = io::stdout().lock();
    writeln!(stdout, "update\tpoints\ttotal\tfraction\tms")?;
    while !session.is_exhausted() {
        let t = Instant::now();
        let batch = session.next_update()?;
        let ms = t.elapsed().as_secs_f64() * 1e3;
        delivered.extend_from_slice(&batch.points);
        writeln!(
            stdout,
            "{}\t{}\t{}\t{:.4}\t{:.3}",
            batch.update_number,
            batch.points.len(),
            delivered.len(),
            batch.fraction_complete,
            ms
        )?;
        if batch.update_number >= limit {
            break;
        }
    }
    if let Some(p) = out {
        write_points(p, &delivered, PointFormat::from_path(p))?;
    }
    Ok(())
}

pub struct EvalOptions {
    pub updates_per_level: u32,
    pub fractions: Vec<f64>,
    pub seeds: u64,
    pub samplers: Vec<Sampler>,
    pub label: String,
}

/// Update counts at which each fraction of a session has been delivered.
fn stages(fractions: &[f64], total: u32) -> anyhow::Result<Vec<(f64, u32)>> {
    fractions
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f <= 1.0) {
                bail!("fractions must lie in (0, 1], got {f}");
            }
            Ok((f, ((f * total as f64).round() as u32).clamp(1, total)))
        })
        .collect()
}

pub fn eval(
    index_path: &Path,
    config: Option<&Path>,
    args: &QueryArgs,
    opts: &EvalOptions,
    csv: Option<&Path>,
    summary: Option<&Path>,
) -> anyhow::Result<()> {
    let defaults = eval_defaults(config)?;
    let index = open_index(index_path)?;
    let q = query(&index, args);
    let extent = index.config().extent;
    let area = q.rect.intersection(&extent).context("query rectangle lies outside the index extent")?;
    let bandwidth = defaults.bandwidth.unwrap_or_else(|| default_bandwidth(&area));
    let (rows, cols) = (defaults.grid_rows, defaults.grid_cols);

    let exact = index.scan(&q);
    if exact.is_empty() {
        bail!("the query matches no points");
    }
    let exact_kde = kde_grid(&exact, &area, rows, cols, bandwidth)?;
    let exact_hours = hourly_histogram(&exact);
    let total = SamplingConfig::new(opts.updates_per_level, 0).total_updates(index.height());
    let stages = stages(&opts.fractions, total)?;

    let mut report = ReportWriter::new();
    let mut baselines = Baselines::new(&index, 0);
    for &sampler in &opts.samplers {
        for s in 0..opts.seeds {
            let seed = rng::derive_seed(s, &[opts.updates_per_level as u64]);
            let mut session = baselines.open(sampler, &index, q, SamplingConfig::new(opts.updates_per_level, seed))?;
            let mut delivered = Vec::new();
            let mut done = 0;
            for &(fraction, k) in &stages {
                while done < k && !session.is_exhausted() {
                    delivered.extend(session.next_update()?.points);
                    done += 1;
                }
                let rec = |metric: &str, value: f64| MetricRecord {
                    metric: metric.into(),
                    sampler: sampler.name().into(),
                    dataset: opts.label.clone(),
                    theta: fraction,
                    seed,
                    value,
                };
                let kde = kde_grid(&delivered, &area, rows, cols, bandwidth)?;
                report.push(rec("kde_rmse", rmse_masked(&kde, &exact_kde, defaults.mask_threshold)?));
                report.push(rec("hourly_rmse", rmse_hourly(&hourly_histogram(&delivered), &exact_hours)?));
                report.push(rec("sample_size", delivered.len() as f64));
            }
        }
        tracing::info!(sampler = sampler.name(), "evaluated");
    }
    write_reports(&report, csv, summary)
}

#[allow(clippy::too_many_arguments)]
pub fn bench(
    index_path: &Path,
    config: Option<&Path>,
    args: &QueryArgs,
    budgets: &[u32],
    samplers: &[Sampler],
    seed: u64,
    label: &str,
    csv: Option<&Path>,
    summary: Option<&Path>,
) -> anyhow::Result<()> {
    let defaults = eval_defaults(config)?;
    let index = open_index(index_path)?;
    let q = query(&index, args);
    let mut baselines = Baselines::new(&index, seed);
    // Build baseline indexes before timing anything.
    if samplers.contains(&Sampler::Randompath) {
        baselines.quadtree()?;
    }
    if samplers.contains(&Sampler::Fixedbuffer) {
        baselines.fixed()?;
    }
    let mut report = ReportWriter::new();
    for &u in budgets {
        if u == 0 {
            bail!("updates per level must be at least 1");
        }
        let theta = SamplingConfig::new(u, seed).theta(index.height());
        for &sampler in samplers {
            // Opening fails only on bad parameters, so one check covers every run.
            baselines.open(sampler, &index, q, SamplingConfig::new(u, seed))?;
            let latency = bench_sampler(
                |run| {
                    let cfg = SamplingConfig::new(u, rng::derive_seed(seed, &[run]));
                    baselines.open(sampler, &index, q, cfg).expect("parameters checked above")
                },
                defaults.warmup,
                defaults.repetitions,
            );
            tracing::info!(sampler = sampler.name(), u, median_ms = latency.per_update.median_ms, "benchmarked");
            report.extend(latency.records(sampler.name(), label, theta, seed));
        }
    }
    write_reports(&report, csv, summary)
}

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

/// One row of the long-format metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub sampler: String,
    pub dataset: String,
    pub theta: f64,
    pub seed: u64,
    pub value: f64,
}

/// Per-group aggregate in the JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub metric: String,
    pub sampler: String,
    pub dataset: String,
    pub theta: f64,
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Accumulates records; writes them as CSV with header
/// `metric,sampler,dataset,theta,seed,value` and summarizes them as JSON
/// (one entry per metric/sampler/dataset/theta, aggregated over seeds).
#[derive(Debug, Default, Clone)]
pub struct ReportWriter {
    records: Vec<MetricRecord>,
}

impl ReportWriter {
    pub fn new() -> Self {
        ReportWriter::default()
    }

    pub fn push(&mut self, record: MetricRecord) {
        self.records.push(record);
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = MetricRecord>) {
        self.records.extend(records);
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        if self.records.is_empty() {
            w.write_record(["metric", "sampler", "dataset", "theta", "seed", "value"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> Vec<SummaryEntry> {
        let mut groups: BTreeMap<(String, String, String, u64), Vec<f64>> = BTreeMap::new();
        for r in &self.records {
            groups
                .entry((r.metric.clone(), r.sampler.clone(), r.dataset.clone(), r.theta.to_bits()))
                .or_default()
                .push(r.value);
        }
        groups
            .into_iter()
            .map(|((metric, sampler, dataset, theta), v)| SummaryEntry {
                metric,
                sampler,
                dataset,
                theta: f64::from_bits(theta),
                n: v.len(),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                min: v.iter().copied().fold(f64::INFINITY, f64::min),
                max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
            .collect()
    }

    pub fn write_summary_json<W: Write>(&self, out: W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(out, &self.summary())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(seed: u64, value: f64) -> MetricRecord {
        MetricRecord {
            metric: "kde_rmse".into(),
            sampler: "stull".into(),
            dataset: "clustered".into(),
            theta: 0.05,
            seed,
            value,
        }
    }

    #[test]
    fn csv_layout() {
        let mut w = ReportWriter::new();
        w.push(rec(1, 0.5));
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "metric,sampler,dataset,theta,seed,value\nkde_rmse,stull,clustered,0.05,1,0.5\n"
        );
        let mut buf = Vec::new();
        ReportWriter::new().write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "metric,sampler,dataset,theta,seed,value\n");
    }

    #[test]
    fn summary_groups_over_seeds() {
        let mut w = ReportWriter::new();
        w.extend([rec(1, 1.0), rec(2, 3.0)]);
        let s = w.summary();
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].n, s[0].mean, s[0].min, s[0].max), (2, 2.0, 1.0, 3.0));
    }
}

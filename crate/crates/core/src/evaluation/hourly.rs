use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::geometry::GeoPoint;

/// Per-hour point shares, scaled so the busiest hour is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourHistogram {
    pub counts: [u64; 24],
    pub values: [f64; 24],
}

impl HourHistogram {
    pub fn from_counts(counts: [u64; 24]) -> Self {
        let max = counts.iter().copied().max().unwrap_or(0);
        let mut values = [0.0; 24];
        if max > 0 {
            for (v, &c) in values.iter_mut().zip(&counts) {
                *v = c as f64 / max as f64;
            }
        }
        HourHistogram { counts, values }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, points: &[GeoPoint]) {
        for p in points {
            self.counts[p.hour as usize] += 1;
        }
        *self = HourHistogram::from_counts(self.counts);
    }
}

impl Default for HourHistogram {
    fn default() -> Self {
        HourHistogram::from_counts([0; 24])
    }
}

pub fn hourly_histogram(points: &[GeoPoint]) -> HourHistogram {
    let mut counts = [0u64; 24];
    for p in points {
        counts[p.hour as usize] += 1;
    }
    HourHistogram::from_counts(counts)
}

/// RMSE across the 24 normalized bins. Errors when both inputs are empty.
pub fn rmse_hourly(a: &HourHistogram, b: &HourHistogram) -> Result<f64, EvalError> {
    if a.total() == 0 && b.total() == 0 {
        return Err(EvalError::EmptyMask);
    }
    let sum: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / 24.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_hour_fills_one_bin() {
        let pts: Vec<GeoPoint> = (0..10).map(|i| GeoPoint::new(i, 0.0, 0.0, 5 * 3600 + i as i64)).collect();
        let h = hourly_histogram(&pts);
        for (i, v) in h.values.iter().enumerate() {
            assert_eq!(*v, if i == 5 { 1.0 } else { 0.0 });
        }
        assert_eq!(rmse_hourly(&h, &h).unwrap(), 0.0);
    }

    #[test]
    fn incremental_add_matches_batch() {
        let pts: Vec<GeoPoint> = (0..500).map(|i| GeoPoint::new(i, 0.0, 0.0, i as i64 * 977)).collect();
        let mut h = HourHistogram::default();
        h.add(&pts[..123]);
        h.add(&pts[123..]);
        assert_eq!(h, hourly_histogram(&pts));
    }

    #[test]
    fn empty_inputs() {
        let e = hourly_histogram(&[]);
        assert_eq!(e.values, [0.0; 24]);
        assert_eq!(rmse_hourly(&e, &e), Err(EvalError::EmptyMask));
        let one = hourly_histogram(&[GeoPoint::new(0, 0.0, 0.0, 0)]);
        assert!((rmse_hourly(&e, &one).unwrap() - (1.0f64 / 24.0).sqrt()).abs() < 1e-12);
    }
}

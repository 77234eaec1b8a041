use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::geometry::{GeoPoint, SpatialRect};
use crate::rng;

/// Gaussian draws outside the extent are retried this many times before the
/// point is clamped onto the extent.
const MAX_REDRAWS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticMode {
    /// A few heavy Gaussian hotspots.
    Clustered,
    /// Many light hotspots over a uniform floor.
    Scattered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub x: f64,
    pub y: f64,
    /// Standard deviation on each axis.
    pub spread: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub mode: SyntheticMode,
    pub count: usize,
    pub extent: SpatialRect,
    /// Explicit hotspots; when empty, a mode-specific set is drawn from the
    /// seed.
    #[serde(default)]
    pub clusters: Vec<Cluster>,
    /// Share of points drawn uniformly over the extent.
    #[serde(default)]
    pub uniform_fraction: f64,
    pub time_start: i64,
    /// Timestamps fall in `time_start .. time_start + time_span`.
    pub time_span: i64,
    /// Relative weight of each hour of day; empty means flat.
    #[serde(default)]
    pub hour_profile: Vec<f64>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn clustered(count: usize, extent: SpatialRect, seed: u64) -> Self {
        SyntheticSpec {
            mode: SyntheticMode::Clustered,
            count,
            extent,
            clusters: Vec::new(),
            uniform_fraction: 0.0,
            time_start: 0,
            time_span: 30 * 86_400,
            hour_profile: Vec::new(),
            seed,
        }
    }

    pub fn scattered(count: usize, extent: SpatialRect, seed: u64) -> Self {
        SyntheticSpec {
            mode: SyntheticMode::Scattered,
            uniform_fraction: 0.3,
            ..SyntheticSpec::clustered(count, extent, seed)
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidParameter(m));
        if self.extent.validate().is_err() {
            return bad("extent must be a non-empty finite rectangle".into());
        }
        if self.time_span <= 0 {
            return bad(format!("time_span must be positive, got {}", self.time_span));
        }
        if self.time_start.checked_add(self.time_span).is_none() {
            return bad("time range overflows".into());
        }
        if !(0.0..=1.0).contains(&self.uniform_fraction) {
            return bad(format!("uniform_fraction must be in [0, 1], got {}", self.uniform_fraction));
        }
        for c in &self.clusters {
            if !(c.spread > 0.0 && c.spread.is_finite()) || !(c.weight > 0.0 && c.weight.is_finite()) {
                return bad(format!("cluster {c:?} needs positive spread and weight"));
            }
            if !c.x.is_finite() || !c.y.is_finite() {
                return bad(format!("cluster {c:?} has a non-finite centre"));
            }
        }
        if !self.hour_profile.is_empty() {
            if self.hour_profile.len() != 24 {
                return bad(format!("hour_profile needs 24 entries, got {}", self.hour_profile.len()));
            }
            if self.hour_profile.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
                || self.hour_profile.iter().all(|&w| w == 0.0)
            {
                return bad("hour_profile weights must be non-negative and not all zero".into());
            }
        }
        Ok(())
    }

    fn default_clusters(&self, rng: &mut impl Rng) -> Vec<Cluster> {
        let e = &self.extent;
        let d = e.diagonal();
        let (k, spread, skew) = match self.mode {
            SyntheticMode::Clustered => (4, (0.015 * d, 0.035 * d), 3.0),
            SyntheticMode::Scattered => (300, (0.004 * d, 0.01 * d), 0.5),
        };
        (0..k)
            .map(|_| Cluster {
                x: e.min_x + e.width() * rng.random_range(0.1..0.9),
                y: e.min_y + e.height() * rng.random_range(0.1..0.9),
                spread: rng.random_range(spread.0..spread.1),
                weight: (skew * rng.random::<f64>()).exp(),
            })
            .collect()
    }
}

/// Deterministic point set for a spec; ids run from 0.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<GeoPoint>, EvalError> {
    spec.validate()?;
    if spec.count == 0 {
        return Ok(Vec::new());
    }
    let mut rng = rng::stream(spec.seed, &[0x5717]);
    let clusters = if spec.clusters.is_empty() {
        spec.default_clusters(&mut rng)
    } else {
        spec.clusters.clone()
    };
    let pick = WeightedIndex::new(clusters.iter().map(|c| c.weight)).expect("validated weights");
    let hour_max = spec.hour_profile.iter().copied().fold(0.0, f64::max);
    let e = spec.extent;
    let std = Normal::new(0.0, 1.0).expect("unit normal");

    let mut out = Vec::with_capacity(spec.count);
    for id in 0..spec.count as u64 {
        let (x, y) = if rng.random::<f64>() < spec.uniform_fraction {
            (
                e.min_x + e.width() * rng.random::<f64>(),
                e.min_y + e.height() * rng.random::<f64>(),
            )
        } else {
            let c = clusters[pick.sample(&mut rng)];
            let mut xy = None;
            for _ in 0..MAX_REDRAWS {
                let x = c.x + c.spread * std.sample(&mut rng);
                let y = c.y + c.spread * std.sample(&mut rng);
                if e.contains_closed(x, y) {
                    xy = Some((x, y));
                    break;
                }
            }
            xy.unwrap_or((c.x.clamp(e.min_x, e.max_x), c.y.clamp(e.min_y, e.max_y)))
        };
        let t = loop {
            let t = spec.time_start + rng.random_range(0..spec.time_span);
            if hour_max == 0.0 {
                break t;
            }
            let h = crate::geometry::hour_of_day(t) as usize;
            if rng.random::<f64>() * hour_max < spec.hour_profile[h] {
                break t;
            }
        };
        out.push(GeoPoint::new(id, x, y, t));
    }
    Ok(out)
}

#![allow(dead_code)]

use rand::Rng;
use stull_core::{rng, GeoPoint, IndexConfig, SpatialRect};

pub fn unit() -> SpatialRect {
    SpatialRect::new(0.0, 0.0, 1.0, 1.0).unwrap()
}

pub fn config(height: u8, bin_interval: i64) -> IndexConfig {
    IndexConfig {
        height,
        bin_interval,
        origin_time: 0,
        extent: unit(),
    }
}

pub fn uniform_points(n: usize, rect: SpatialRect, t_span: i64, id0: u64, seed: u64) -> Vec<GeoPoint> {
    let mut r = rng::stream(seed, &[n as u64]);
    (0..n as u64)
        .map(|i| {
            GeoPoint::new(
                id0 + i,
                rect.min_x + rect.width() * r.random::<f64>(),
                rect.min_y + rect.height() * r.random::<f64>(),
                r.random_range(0..t_span),
            )
        })
        .collect()
}

pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> SpatialRect {
    SpatialRect::new(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1)).unwrap()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

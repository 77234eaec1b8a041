use std::str::FromStr;

use anyhow::{bail, Context};
use stull_core::{SpatialRect, TimeRange};

fn numbers<T: FromStr>(s: &str, n: usize, what: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != n {
        bail!("{what} needs {n} comma-separated numbers, got {s:?}");
    }
    parts
        .iter()
        .map(|p| p.parse::<T>().with_context(|| format!("bad number {p:?} in {what}")))
        .collect()
}

/// `min_x,min_y,max_x,max_y`
pub fn parse_rect(s: &str) -> anyhow::Result<SpatialRect> {
    let v: Vec<f64> = numbers(s, 4, "rectangle")?;
    Ok(SpatialRect::new(v[0], v[1], v[2], v[3])?)
}

/// `start,end` in epoch seconds, end exclusive.
pub fn parse_time(s: &str) -> anyhow::Result<TimeRange> {
    let v: Vec<i64> = numbers(s, 2, "time range")?;
    Ok(TimeRange::new(v[0], v[1])?)
}

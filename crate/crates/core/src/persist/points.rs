//! CSV and NDJSON point files. CSV files need a header naming `id`, `x`,
//! `y` and `t` (any order, other columns ignored); NDJSON lines are objects
//! with those keys. Bad rows are counted and skipped.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::PersistError;
use crate::geometry::GeoPoint;

/// Rejection reasons kept in a report.
const MAX_REASONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointFormat {
    Csv,
    Ndjson,
}

impl PointFormat {
    /// Guesses from the extension; anything but `.ndjson`/`.jsonl` is CSV.
    pub fn from_path(path: &Path) -> PointFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ndjson" | "jsonl") => PointFormat::Ndjson,
            _ => PointFormat::Csv,
        }
    }
}

impl FromStr for PointFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(PointFormat::Csv),
            "ndjson" | "jsonl" => Ok(PointFormat::Ndjson),
            other => Err(format!("unknown point format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// The first few rejection reasons, prefixed with the line number.
    pub reasons: Vec<String>,
    pub elapsed: Duration,
}

impl IngestReport {
    fn reject(&mut self, line: usize, reason: impl std::fmt::Display) {
        self.rejected += 1;
        if self.reasons.len() < MAX_REASONS {
            self.reasons.push(format!("line {line}: {reason}"));
        }
    }

    /// True when nothing was accepted, which callers may want to warn about.
    pub fn is_empty(&self) -> bool {
        self.accepted == 0
    }
}

#[derive(Deserialize)]
struct RawPoint {
    id: u64,
    x: f64,
    y: f64,
    t: i64,
}

fn check(p: RawPoint) -> Result<GeoPoint, String> {
    if !p.x.is_finite() || !p.y.is_finite() {
        return Err(format!("non-finite coordinate ({}, {})", p.x, p.y));
    }
    Ok(GeoPoint::new(p.id, p.x, p.y, p.t))
}

pub fn read_points(path: impl AsRef<Path>, format: PointFormat) -> Result<(Vec<GeoPoint>, IngestReport), PersistError> {
    read_points_from(File::open(path)?, format)
}

pub fn read_points_from<R: Read>(input: R, format: PointFormat) -> Result<(Vec<GeoPoint>, IngestReport), PersistError> {
    let start = Instant::now();
    let (points, mut report) = match format {
        PointFormat::Csv => read_csv(input)?,
        PointFormat::Ndjson => read_ndjson(input)?,
    };
    report.elapsed = start.elapsed();
    Ok((points, report))
}

fn read_csv<R: Read>(input: R) -> Result<(Vec<GeoPoint>, IngestReport), PersistError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(input);
    let mut report = IngestReport::default();
    let mut points = Vec::new();
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Ok((points, report));
    }
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| PersistError::Io(io::Error::new(io::ErrorKind::InvalidData, format!("CSV header lacks column {name:?}"))))
    };
    let cols = [col("id")?, col("x")?, col("y")?, col("t")?];
    let mut record = csv::StringRecord::new();
    loop {
        let line = reader.position().line() as usize;
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => return Err(e.into()),
            Err(e) => {
                report.rows_read += 1;
                report.reject(line, e);
                continue;
            }
        }
        report.rows_read += 1;
        let field = |i: usize| record.get(cols[i]).ok_or("missing field");
        let parsed = (|| -> Result<GeoPoint, String> {
            let id = field(0)?.parse::<u64>().map_err(|e| format!("id: {e}"))?;
            let x = field(1)?.parse::<f64>().map_err(|e| format!("x: {e}"))?;
            let y = field(2)?.parse::<f64>().map_err(|e| format!("y: {e}"))?;
            let t = field(3)?.parse::<i64>().map_err(|e| format!("t: {e}"))?;
            check(RawPoint { id, x, y, t })
        })();
        match parsed {
            Ok(p) => {
                report.accepted += 1;
                points.push(p);
            }
            Err(reason) => report.reject(line, reason),
        }
    }
    Ok((points, report))
}

fn read_ndjson<R: Read>(input: R) -> Result<(Vec<GeoPoint>, IngestReport), PersistError> {
    let mut report = IngestReport::default();
    let mut points = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        report.rows_read += 1;
        match serde_json::from_str::<RawPoint>(&line).map_err(|e| e.to_string()).and_then(check) {
            Ok(p) => {
                report.accepted += 1;
                points.push(p);
            }
            Err(reason) => report.reject(i + 1, reason),
        }
    }
    Ok((points, report))
}

pub fn write_points(path: impl AsRef<Path>, points: &[GeoPoint], format: PointFormat) -> Result<(), PersistError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_points_to(&mut out, points, format)?;
    out.flush()?;
    Ok(())
}

/// Floats are written in shortest round-trip form, so reading the output
/// back yields identical points.
pub fn write_points_to<W: Write>(out: &mut W, points: &[GeoPoint], format: PointFormat) -> Result<(), PersistError> {
    match format {
        PointFormat::Csv => {
            writeln!(out, "id,x,y,t")?;
            for p in points {
                writeln!(out, "{},{:?},{:?},{}", p.id, p.x, p.y, p.t)?;
            }
        }
        PointFormat::Ndjson => {
            for p in points {
                writeln!(out, r#"{{"id":{},"x":{:?},"y":{:?},"t":{}}}"#, p.id, p.x, p.y, p.t)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input() {
        let (p, r) = read_points_from(&b""[..], PointFormat::Csv).unwrap();
        assert!(p.is_empty());
        assert!(r.is_empty());
        let (p, r) = read_points_from(&b""[..], PointFormat::Ndjson).unwrap();
        assert!(p.is_empty());
        assert_eq!(r.rows_read, 0);
    }

    #[test]
    fn csv_rejects_bad_rows_and_ignores_extra_columns() {
        let data = "id,x,y,t,label\n1,0.5,0.25,3600,a\n2,abc,0.1,0,b\n3,NaN,0.1,0\n4,0.1,0.2,7200\n5,0.1\n";
        let (p, r) = read_points_from(data.as_bytes(), PointFormat::Csv).unwrap();
        assert_eq!(p.iter().map(|p| p.id).collect::<Vec<_>>(), vec![1, 4]);
        assert_eq!(p[0], GeoPoint::new(1, 0.5, 0.25, 3600));
        assert_eq!((r.rows_read, r.accepted, r.rejected), (5, 2, 3));
        assert!(r.reasons[0].starts_with("line 3: x:"), "{:?}", r.reasons);
        assert_eq!(r.reasons.len(), 3);
    }

    #[test]
    fn csv_columns_in_any_order() {
        let data = "t,y,x,id\n10,2.5,1.5,7\n";
        let (p, _) = read_points_from(data.as_bytes(), PointFormat::Csv).unwrap();
        assert_eq!(p, vec![GeoPoint::new(7, 1.5, 2.5, 10)]);
        assert!(read_points_from("a,b\n1,2\n".as_bytes(), PointFormat::Csv).is_err());
    }

    #[test]
    fn reasons_are_capped() {
        let mut data = String::from("id,x,y,t\n");
        for i in 0..25 {
            data.push_str(&format!("{i},bad,0,0\n"));
        }
        let (_, r) = read_points_from(data.as_bytes(), PointFormat::Csv).unwrap();
        assert_eq!(r.rejected, 25);
        assert_eq!(r.reasons.len(), MAX_REASONS);
    }

    #[test]
    fn round_trip_both_formats() {
        let pts: Vec<GeoPoint> = (0..100)
            .map(|i| GeoPoint::new(i, (i as f64).sqrt() * 0.1, -1.0 / (i as f64 + 3.0), i as i64 * 3_001 - 50_000))
            .collect();
        for format in [PointFormat::Csv, PointFormat::Ndjson] {
            let mut buf = Vec::new();
            write_points_to(&mut buf, &pts, format).unwrap();
            let (back, r) = read_points_from(&buf[..], format).unwrap();
            assert_eq!(back, pts);
            assert_eq!(r.rejected, 0);
        }
    }

    #[test]
    fn ndjson_rejects_bad_lines() {
        let data = "{\"id\":1,\"x\":0.5,\"y\":0.5,\"t\":0}\n\nnot json\n{\"id\":2,\"x\":0.5}\n";
        let (p, r) = read_points_from(data.as_bytes(), PointFormat::Ndjson).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!((r.rows_read, r.rejected), (3, 2));
        assert!(r.reasons[0].starts_with("line 3:"));
    }
}

//! Binary index container. All integers and floats are little-endian; floats
//! are stored as their IEEE-754 bit patterns so a save/load/save cycle is
//! byte-identical. The layout is documented in `docs/index-format.md`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::PersistError;
use crate::geometry::{GeoPoint, SpatialRect, TimeRange};
use crate::index::{CircularArray, IndexConfig, Pyramid, StullIndex, TemporalBin};

pub const MAGIC: &[u8; 8] = b"STULLIDX";
pub const FORMAT_VERSION: u32 = 1;

fn write_point<W: Write>(w: &mut W, p: &GeoPoint) -> io::Result<()> {
    w.write_u64::<LE>(p.id)?;
    w.write_u64::<LE>(p.x.to_bits())?;
    w.write_u64::<LE>(p.y.to_bits())?;
    w.write_i64::<LE>(p.t)
}

fn write_len<W: Write>(w: &mut W, len: usize) -> io::Result<()> {
    let len = u32::try_from(len).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "array longer than u32::MAX"))?;
    w.write_u32::<LE>(len)
}

/// Serializes one temporal bin: ordinal, time range, every leaf (length,
/// segment bounds, points in stored order), then every buffer level by
/// level in cell order.
pub fn encode_bin<W: Write>(w: &mut W, bin: &TemporalBin) -> io::Result<()> {
    w.write_u64::<LE>(bin.index)?;
    w.write_i64::<LE>(bin.range.start)?;
    w.write_i64::<LE>(bin.range.end)?;
    for leaf in &bin.pyramid.leaves {
        write_len(w, leaf.data.len())?;
        for &b in &leaf.bounds {
            w.write_u32::<LE>(b)?;
        }
        for p in &leaf.data {
            write_point(w, p)?;
        }
    }
    for level in &bin.pyramid.buffers {
        for buf in level {
            write_len(w, buf.len())?;
            for p in buf {
                write_point(w, p)?;
            }
        }
    }
    Ok(())
}

pub fn encode_index<W: Write>(w: &mut W, index: &StullIndex) -> io::Result<()> {
    let c = index.config();
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(FORMAT_VERSION)?;
    w.write_u8(c.height)?;
    w.write_i64::<LE>(c.bin_interval)?;
    w.write_i64::<LE>(c.origin_time)?;
    for v in [c.extent.min_x, c.extent.min_y, c.extent.max_x, c.extent.max_y] {
        w.write_u64::<LE>(v.to_bits())?;
    }
    w.write_u64::<LE>(index.bin_count() as u64)?;
    for bin in index.bins() {
        encode_bin(w, bin)?;
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn eof(e: io::Error) -> PersistError {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            PersistError::Truncated
        } else {
            PersistError::Io(e)
        }
    }

    fn u8(&mut self) -> Result<u8, PersistError> {
        self.buf.read_u8().map_err(Self::eof)
    }

    fn u32(&mut self) -> Result<u32, PersistError> {
        self.buf.read_u32::<LE>().map_err(Self::eof)
    }

    fn u64(&mut self) -> Result<u64, PersistError> {
        self.buf.read_u64::<LE>().map_err(Self::eof)
    }

    fn i64(&mut self) -> Result<i64, PersistError> {
        self.buf.read_i64::<LE>().map_err(Self::eof)
    }

    fn f64(&mut self) -> Result<f64, PersistError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn point(&mut self) -> Result<GeoPoint, PersistError> {
        let id = self.u64()?;
        let x = self.f64()?;
        let y = self.f64()?;
        let t = self.i64()?;
        Ok(GeoPoint::new(id, x, y, t))
    }

    /// Reads a length prefix and checks the remaining input can hold that
    /// many records, so corrupt lengths fail before allocating.
    fn len(&mut self, record: usize) -> Result<usize, PersistError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(record) > self.buf.len() {
            return Err(PersistError::Truncated);
        }
        Ok(n)
    }
}

const POINT_BYTES: usize = 32;

fn corrupt(msg: impl Into<String>) -> PersistError {
    PersistError::Corrupt(msg.into())
}

pub fn decode_index(bytes: &[u8]) -> Result<StullIndex, PersistError> {
    let mut r = Reader { buf: bytes };
    let mut magic = [0u8; 8];
    r.buf.read_exact(&mut magic).map_err(Reader::eof)?;
    if &magic != MAGIC {
        return Err(PersistError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(PersistError::UnsupportedVersion(version));
    }
    let height = r.u8()?;
    let bin_interval = r.i64()?;
    let origin_time = r.i64()?;
    let extent = SpatialRect {
        min_x: r.f64()?,
        min_y: r.f64()?,
        max_x: r.f64()?,
        max_y: r.f64()?,
    };
    let config = IndexConfig {
        height,
        bin_interval,
        origin_time,
        extent,
    };
    config.validate()?;
    let geometry = config.geometry();
    let h = height as usize;

    let bin_count = r.u64()?;
    let mut bins = BTreeMap::new();
    let mut prev: Option<u64> = None;
    for _ in 0..bin_count {
        let index = r.u64()?;
        if prev.is_some_and(|p| p >= index) {
            return Err(corrupt(format!("bin {index} out of order")));
        }
        prev = Some(index);
        let range = TimeRange {
            start: r.i64()?,
            end: r.i64()?,
        };
        if range != config.bin_range(index) {
            return Err(corrupt(format!("bin {index} has range {range:?}")));
        }
        let mut pyramid = Pyramid::new(&geometry);
        for leaf in pyramid.leaves.iter_mut() {
            let n = r.len(POINT_BYTES)?;
            let bounds = (0..=h).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            if bounds[0] != 0 || bounds[h] as usize != n || bounds.windows(2).any(|w| w[0] > w[1]) {
                return Err(corrupt(format!("bin {index}: bad segment bounds {bounds:?} for {n} points")));
            }
            let data = (0..n).map(|_| r.point()).collect::<Result<Vec<_>, _>>()?;
            *leaf = CircularArray { data, bounds };
        }
        for level in pyramid.buffers.iter_mut() {
            for buf in level.iter_mut() {
                let n = r.len(POINT_BYTES)?;
                *buf = (0..n).map(|_| r.point()).collect::<Result<Vec<_>, _>>()?;
            }
        }
        bins.insert(index, TemporalBin { index, range, pyramid });
    }
    if !r.buf.is_empty() {
        return Err(corrupt(format!("{} trailing bytes", r.buf.len())));
    }
    Ok(StullIndex::from_parts(config, bins))
}

pub fn save_index(index: &StullIndex, path: impl AsRef<Path>) -> Result<(), PersistError> {
    let mut buf = Vec::new();
    encode_index(&mut buf, index)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<StullIndex, PersistError> {
    decode_index(&fs::read(path)?)
}

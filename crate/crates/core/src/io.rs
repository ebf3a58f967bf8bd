//! File formats: bit-packed spike tensors (SPKT), weight containers (SPKW)
//! and DVS event CSV ingestion.
//!
//! SPKT layout, all integers little-endian u32:
//!
//! ```text
//! "SPKT" version T C H W payload
//! ```
//!
//! The payload holds `ceil(T*C*H*W / 8)` bytes; bit `i` of the flat
//! row-major `(T, C, H, W)` index lives in byte `i / 8` at bit `i % 8`.
//!
//! SPKW layout:
//!
//! ```text
//! "SPKW" version weight_bits n_tensors
//!   { ndims dim_0 .. dim_{ndims-1} values (one two's complement byte each) } * n_tensors
//! ```

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ConfigError, PrecisionMode};
use crate::tensor::{ShapeError, SpikeTensor, WeightTensor};

pub const SPKT_MAGIC: &[u8; 4] = b"SPKT";
pub const SPKW_MAGIC: &[u8; 4] = b"SPKW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file: needed {needed} more bytes")]
    Truncated { needed: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("malformed event on line {line}: {message}")]
    MalformedEvent { line: u64, message: String },
    #[error("event on line {line} at ({x}, {y}) lies outside the {width}x{height} sensor")]
    OutOfBounds {
        line: u64,
        x: u64,
        y: u64,
        width: usize,
        height: usize,
    },
    #[error("weight {value} in tensor {tensor} does not fit {bits}-bit two's complement")]
    WeightRange { tensor: usize, value: i32, bits: u32 },
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(IoError::Truncated {
            needed: (self.pos + n).saturating_sub(self.buf.len()),
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<(), IoError> {
        let got = self.take(4)?;
        if got != want {
            return Err(IoError::BadMagic {
                expected: String::from_utf8_lossy(want).into(),
                found: String::from_utf8_lossy(got).into(),
            });
        }
        Ok(())
    }

    fn version(&mut self) -> Result<(), IoError> {
        match self.u32()? {
            FORMAT_VERSION => Ok(()),
            v => Err(IoError::UnsupportedVersion(v)),
        }
    }

    fn finish(&self) -> Result<(), IoError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(IoError::TrailingBytes(n)),
        }
    }
}

pub fn encode_spikes(s: &SpikeTensor) -> Vec<u8> {
    let (t, c, h, w) = s.dims();
    let mut out = Vec::with_capacity(24 + s.len().div_ceil(8));
    out.extend_from_slice(SPKT_MAGIC);
    for v in [FORMAT_VERSION, t as u32, c as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut payload = vec![0u8; s.len().div_ceil(8)];
    for i in 0..s.len() {
        if s.get_flat(i) {
            payload[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&payload);
    out
}

pub fn decode_spikes(bytes: &[u8]) -> Result<SpikeTensor, IoError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    c.magic(SPKT_MAGIC)?;
    c.version()?;
    let dims = [c.u32()?, c.u32()?, c.u32()?, c.u32()?].map(|d| d as usize);
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or(IoError::Truncated { needed: usize::MAX })?;
    let payload = c.take(n.div_ceil(8))?;
    c.finish()?;
    let mut s = SpikeTensor::zeros(dims[0], dims[1], dims[2], dims[3]);
    for i in 0..n {
        if payload[i / 8] >> (i % 8) & 1 == 1 {
            s.set_flat(i, true);
        }
    }
    Ok(s)
}

pub fn read_spikes(path: impl AsRef<Path>) -> Result<SpikeTensor, IoError> {
    let path = path.as_ref();
    decode_spikes(&fs::read(path).map_err(io_err(path))?)
}

pub fn write_spikes(path: impl AsRef<Path>, s: &SpikeTensor) -> Result<(), IoError> {
    let path = path.as_ref();
    fs::write(path, encode_spikes(s)).map_err(io_err(path))
}

pub fn encode_weights(p: PrecisionMode, tensors: &[WeightTensor]) -> Result<Vec<u8>, IoError> {
    let mut out = Vec::new();
    out.extend_from_slice(SPKW_MAGIC);
    for v in [FORMAT_VERSION, p.weight_bits(), tensors.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (i, w) in tensors.iter().enumerate() {
        out.extend_from_slice(&(w.dims().len() as u32).to_le_bytes());
        for &d in w.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in w.values() {
            if !(p.weight_min()..=p.weight_max()).contains(&v) {
                return Err(IoError::WeightRange {
                    tensor: i,
                    value: v,
                    bits: p.weight_bits(),
                });
            }
            out.push(v as i8 as u8);
        }
    }
    Ok(out)
}

pub fn decode_weights(bytes: &[u8]) -> Result<(PrecisionMode, Vec<WeightTensor>), IoError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    c.magic(SPKW_MAGIC)?;
    c.version()?;
    let bits = c.u32()?;
    let p = PrecisionMode::new(bits)?;
    let n = c.u32()? as usize;
    let mut tensors = Vec::with_capacity(n.min(64));
    for i in 0..n {
        let nd = c.u32()? as usize;
        let dims: Vec<usize> = (0..nd).map(|_| c.u32().map(|d| d as usize)).collect::<Result<_, _>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or(IoError::Truncated { needed: usize::MAX })?;
        let values: Vec<i32> = c.take(len)?.iter().map(|&b| b as i8 as i32).collect();
        if let Some(&v) = values.iter().find(|&&v| !(p.weight_min()..=p.weight_max()).contains(&v)) {
            return Err(IoError::WeightRange {
                tensor: i,
                value: v,
                bits,
            });
        }
        tensors.push(WeightTensor::new(dims, values)?);
    }
    c.finish()?;
    Ok((p, tensors))
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<(PrecisionMode, Vec<WeightTensor>), IoError> {
    let path = path.as_ref();
    decode_weights(&fs::read(path).map_err(io_err(path))?)
}

pub fn write_weights(path: impl AsRef<Path>, p: PrecisionMode, tensors: &[WeightTensor]) -> Result<(), IoError> {
    let path = path.as_ref();
    fs::write(path, encode_weights(p, tensors)?).map_err(io_err(path))
}

/// One DVS event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t_us: u64,
    pub x: u64,
    pub y: u64,
    pub polarity: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Binning {
    pub width: usize,
    pub height: usize,
    pub timesteps: usize,
    pub window_us: u64,
    /// Events a pixel needs within one bin to spike; 1 is OR binning.
    pub min_count: u32,
}

/// Bin events into a `(T, 2, H, W)` tensor with channel = polarity. Bin `t`
/// covers `[t * window_us, (t + 1) * window_us)`; later events are dropped.
/// Timestamps must not decrease in file order.
pub fn ingest_events<R: Read>(input: R, b: &Binning) -> Result<SpikeTensor, IoError> {
    assert!(b.window_us > 0 && b.min_count > 0, "window and count threshold must be positive");
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers().map_err(|e| IoError::MalformedEvent {
        line: 1,
        message: e.to_string(),
    })?;
    if !header.is_empty() && header.iter().collect::<Vec<_>>() != ["t_us", "x", "y", "polarity"] {
        return Err(IoError::MalformedEvent {
            line: 1,
            message: format!("expected header t_us,x,y,polarity, found {}", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut counts = vec![0u32; b.timesteps * 2 * b.height * b.width];
    let mut last_t = 0u64;
    let mut raw = csv::StringRecord::new();
    loop {
        let line = rdr.position().line() + 1;
        let more = rdr.read_record(&mut raw).map_err(|e| IoError::MalformedEvent {
            line: e.position().map_or(line, |p| p.line()),
            message: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line = raw.position().map_or(line, |p| p.line());
        let ev: EventRecord = raw.deserialize(Some(rdr.headers().unwrap())).map_err(|e| IoError::MalformedEvent {
            line,
            message: e.to_string(),
        })?;
        if ev.polarity > 1 {
            return Err(IoError::MalformedEvent {
                line,
                message: format!("polarity must be 0 or 1, found {}", ev.polarity),
            });
        }
        if ev.t_us < last_t {
            return Err(IoError::MalformedEvent {
                line,
                message: format!("timestamp {} precedes the previous event at {last_t}", ev.t_us),
            });
        }
        last_t = ev.t_us;
        if ev.x >= b.width as u64 || ev.y >= b.height as u64 {
            return Err(IoError::OutOfBounds {
                line,
                x: ev.x,
                y: ev.y,
                width: b.width,
                height: b.height,
            });
        }
        let t = ev.t_us / b.window_us;
        if t >= b.timesteps as u64 {
            continue;
        }
        let i = ((t as usize * 2 + ev.polarity as usize) * b.height + ev.y as usize) * b.width + ev.x as usize;
        counts[i] = counts[i].saturating_add(1);
    }
    let mut out = SpikeTensor::zeros(b.timesteps, 2, b.height, b.width);
    for (i, &n) in counts.iter().enumerate() {
        if n >= b.min_count {
            out.set_flat(i, true);
        }
    }
    Ok(out)
}

pub fn ingest_events_file(path: impl AsRef<Path>, b: &Binning) -> Result<SpikeTensor, IoError> {
    let path = path.as_ref();
    ingest_events(fs::File::open(path).map_err(io_err(path))?, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::gen_spikes;

    fn bins(t: usize) -> Binning {
        Binning {
            width: 4,
            height: 3,
            timesteps: t,
            window_us: 1000,
            min_count: 1,
        }
    }

    #[test]
    fn spkt_layout() {
        let mut s = SpikeTensor::zeros(1, 1, 3, 3);
        s.set(0, 0, 0, 0, true);
        s.set(0, 0, 2, 2, true);
        let b = encode_spikes(&s);
        assert_eq!(&b[..4], b"SPKT");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..24], &[1, 0, 0, 0, 1, 0, 0, 0, 3, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&b[24..], &[0b0000_0001, 0b0000_0001]);
        assert_eq!(decode_spikes(&b).unwrap(), s);
    }

    #[test]
    fn spkt_rejects_bad_input() {
        let b = encode_spikes(&gen_spikes((2, 3, 5, 7), 0.5, 1));
        assert!(matches!(decode_spikes(&b[..b.len() - 1]), Err(IoError::Truncated { .. })));
        let mut long = b.clone();
        long.push(0);
        assert!(matches!(decode_spikes(&long), Err(IoError::TrailingBytes(1))));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(decode_spikes(&bad), Err(IoError::BadMagic { .. })));
        let mut ver = b;
        ver[4] = 9;
        assert!(matches!(decode_spikes(&ver), Err(IoError::UnsupportedVersion(9))));
    }

    #[test]
    fn weights_round_trip() {
        let p = PrecisionMode::W6;
        let a = WeightTensor::new(vec![2, 1, 1, 3], vec![-32, 31, 0, -1, 5, 7]).unwrap();
        let b = WeightTensor::new(vec![3, 2], vec![1, 2, 3, 4, 5, -6]).unwrap();
        let bytes = encode_weights(p, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(decode_weights(&bytes).unwrap(), (p, vec![a, b]));
        let wide = WeightTensor::new(vec![1, 1], vec![40]).unwrap();
        assert!(matches!(encode_weights(p, &[wide]), Err(IoError::WeightRange { value: 40, .. })));
    }

    #[test]
    fn empty_event_file() {
        let s = ingest_events("t_us,x,y,polarity\n".as_bytes(), &bins(3)).unwrap();
        assert_eq!((s.dims(), s.count_ones()), ((3, 2, 3, 4), 0));
        let s = ingest_events("".as_bytes(), &bins(2)).unwrap();
        assert_eq!(s.count_ones(), 0);
    }

    #[test]
    fn single_event() {
        let s = ingest_events("t_us,x,y,polarity\n0,1,2,1\n".as_bytes(), &bins(2)).unwrap();
        assert_eq!(s.count_ones(), 1);
        assert!(s.get(0, 1, 2, 1));
    }

    #[test]
    fn or_binning_and_threshold() {
        let csv = "t_us,x,y,polarity\n10,3,0,0\n999,3,0,0\n1000,3,0,0\n5000,0,0,0\n";
        let s = ingest_events(csv.as_bytes(), &bins(2)).unwrap();
        assert_eq!(s.count_ones(), 2);
        assert!(s.get(0, 0, 0, 3) && s.get(1, 0, 0, 3));
        let s = ingest_events(csv.as_bytes(), &Binning { min_count: 2, ..bins(2) }).unwrap();
        assert_eq!(s.count_ones(), 1);
        assert!(s.get(0, 0, 0, 3));
    }

    #[test]
    fn event_errors_carry_lines() {
        let e = ingest_events("t_us,x,y,polarity\n0,0,0,0\n5,a,0,0\n".as_bytes(), &bins(1)).unwrap_err();
        assert!(matches!(e, IoError::MalformedEvent { line: 3, .. }), "{e}");
        let e = ingest_events("t_us,x,y,polarity\n0,4,0,0\n".as_bytes(), &bins(1)).unwrap_err();
        assert!(matches!(e, IoError::OutOfBounds { line: 2, x: 4, .. }), "{e}");
        let e = ingest_events("t_us,x,y,polarity\n9,0,0,0\n8,0,0,0\n".as_bytes(), &bins(1)).unwrap_err();
        assert!(matches!(e, IoError::MalformedEvent { line: 3, .. }), "{e}");
        let e = ingest_events("t_us,x,y,polarity\n0,0,0,2\n".as_bytes(), &bins(1)).unwrap_err();
        assert!(matches!(e, IoError::MalformedEvent { line: 2, .. }), "{e}");
        let e = ingest_events("time,x,y,p\n".as_bytes(), &bins(1)).unwrap_err();
        assert!(matches!(e, IoError::MalformedEvent { line: 1, .. }), "{e}");
        let e = ingest_events("t_us,x,y,polarity\n0,0,0\n".as_bytes(), &bins(1)).unwrap_err();
        assert!(matches!(e, IoError::MalformedEvent { line: 2, .. }), "{e}");
    }
}

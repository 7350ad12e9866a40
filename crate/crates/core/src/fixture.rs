//! Seeded tensor generation and fixture files.
//!
//! Binary layout: the magic `VMQT`, then `C`, `H`, `W`, `bits` as
//! little-endian `u32`, then the row-major payload with one byte per value
//! (`bits ≤ 8`) or two little-endian bytes.
//!
//! CSV layout: a `channels,height,width,bits` header, the dimension record,
//! then one record of `W` values per `(channel, row)`.

use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::packing::{PackingError, QuantTensor};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("malformed fixture: {0}")]
    Format(String),
    #[error(transparent)]
    Packing(#[from] PackingError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub const MAGIC: [u8; 4] = *b"VMQT";

/// Uniform values over `[0, 2^bits)` from a ChaCha8 stream seeded with `seed`.
pub fn random_tensor(
    seed: u64,
    channels: usize,
    height: usize,
    width: usize,
    bits: u32,
) -> Result<QuantTensor, PackingError> {
    if !(1..=16).contains(&bits) {
        return Err(PackingError::InvalidBits(bits, 16));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = ((1u32 << bits) - 1) as u16;
    let data = (0..channels * height * width).map(|_| rng.gen_range(0..=max)).collect();
    QuantTensor::new(channels, height, width, bits, data)
}

/// Every value at `2^bits − 1`.
pub fn all_max_tensor(channels: usize, height: usize, width: usize, bits: u32) -> Result<QuantTensor, PackingError> {
    if !(1..=16).contains(&bits) {
        return Err(PackingError::InvalidBits(bits, 16));
    }
    let max = ((1u32 << bits) - 1) as u16;
    QuantTensor::new(channels, height, width, bits, vec![max; channels * height * width])
}

fn malformed(msg: impl Into<String>) -> FixtureError {
    FixtureError::Format(msg.into())
}

pub fn write_binary<W: Write>(mut out: W, t: &QuantTensor) -> Result<(), FixtureError> {
    let mut buf = Vec::with_capacity(20 + 2 * t.data().len());
    buf.extend_from_slice(&MAGIC);
    for d in [t.channels(), t.height(), t.width()] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&t.bits().to_le_bytes());
    if t.bits() <= 8 {
        buf.extend(t.data().iter().map(|&v| v as u8));
    } else {
        buf.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
    }
    Ok(out.write_all(&buf)?)
}

pub fn read_binary<R: Read>(mut input: R) -> Result<QuantTensor, FixtureError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || bytes[..4] != MAGIC {
        return Err(malformed("missing VMQT header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (c, h, w, bits) = (word(0) as usize, word(1) as usize, word(2) as usize, word(3));
    let n = c.checked_mul(h).and_then(|x| x.checked_mul(w)).ok_or_else(|| malformed("dimensions overflow"))?;
    let payload = &bytes[20..];
    let width = if bits <= 8 { 1 } else { 2 };
    if payload.len() != n * width {
        return Err(malformed(format!("payload has {} bytes, expected {}", payload.len(), n * width)));
    }
    let data = if width == 1 {
        payload.iter().map(|&b| u16::from(b)).collect()
    } else {
        payload.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect()
    };
    Ok(QuantTensor::new(c, h, w, bits, data)?)
}

pub fn write_csv<W: Write>(out: W, t: &QuantTensor) -> Result<(), FixtureError> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(["channels", "height", "width", "bits"])?;
    w.write_record([t.channels(), t.height(), t.width(), t.bits() as usize].map(|v| v.to_string()))?;
    for row in t.data().chunks(t.width()) {
        w.write_record(row.iter().map(u16::to_string))?;
    }
    Ok(w.flush()?)
}

pub fn read_csv<R: Read>(input: R) -> Result<QuantTensor, FixtureError> {
    let mut r = csv::ReaderBuilder::new().flexible(true).has_headers(true).from_reader(input);
    let mut records = r.records();
    let dims = records.next().ok_or_else(|| malformed("missing dimension record"))??;
    let dims: Vec<usize> = dims
        .iter()
        .map(|f| f.trim().parse().map_err(|_| malformed(format!("bad dimension {f:?}"))))
        .collect::<Result<_, _>>()?;
    let [c, h, w, bits] = dims[..] else {
        return Err(malformed("dimension record needs 4 fields"));
    };
    let mut data = Vec::with_capacity(c * h * w);
    for rec in records {
        let rec = rec?;
        if rec.len() != w {
            return Err(malformed(format!("row has {} values, expected {w}", rec.len())));
        }
        for f in rec.iter() {
            data.push(f.trim().parse::<u16>().map_err(|_| malformed(format!("bad value {f:?}")))?);
        }
    }
    Ok(QuantTensor::new(c, h, w, bits as u32, data)?)
}

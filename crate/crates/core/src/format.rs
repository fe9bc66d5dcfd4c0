//! Canonical on-disk event format.
//!
//! Layout (little-endian):
//!
//! ```text
//! header  16 bytes : b"EVT1" | u16 width | u16 height | u32 record count | u32 duration_us
//! record  13 bytes : u16 x | u16 y | u8 polarity | u64 t_us
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::event::{Event, EventSample, Polarity, SensorGeometry};

pub const MAGIC: &[u8; 4] = b"EVT1";
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 13;

pub fn encode(sample: &EventSample) -> Result<Vec<u8>> {
    let count = u32::try_from(sample.events.len())
        .map_err(|_| Error::Config("too many events for the canonical format".into()))?;
    let duration = u32::try_from(sample.duration_us)
        .map_err(|_| Error::Config("duration does not fit in u32 microseconds".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * sample.events.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&sample.geometry.width.to_le_bytes());
    out.extend_from_slice(&sample.geometry.height.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&duration.to_le_bytes());
    for e in &sample.events {
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p as u8);
        out.extend_from_slice(&e.t.to_le_bytes());
    }
    Ok(out)
}

/// Decodes a canonical buffer. The label is not part of the format; it
/// comes from the dataset manifest.
pub fn decode(bytes: &[u8], label: Option<u32>) -> Result<EventSample> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Parse(format!(
            "truncated header: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Parse("bad magic, expected EVT1".into()));
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]);
    let height = u16::from_le_bytes([bytes[6], bytes[7]]);
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let duration = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as u64;
    let body = &bytes[HEADER_LEN..];
    if body.len() != count * RECORD_LEN {
        return Err(Error::Parse(format!(
            "header declares {count} records but body holds {} bytes",
            body.len()
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::Parse("zero-sized geometry".into()));
    }
    let geometry = SensorGeometry { width, height };
    let events = body
        .chunks_exact(RECORD_LEN)
        .map(|r| {
            let p = match r[4] {
                0 => Polarity::Off,
                1 => Polarity::On,
                other => return Err(Error::Parse(format!("bad polarity byte {other}"))),
            };
            Ok(Event {
                x: u16::from_le_bytes([r[0], r[1]]),
                y: u16::from_le_bytes([r[2], r[3]]),
                p,
                t: u64::from_le_bytes(r[5..13].try_into().unwrap()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sample = EventSample::new(events, geometry, label, duration)?;
    sample.duration_us = duration.max(sample.duration_us);
    Ok(sample)
}

pub fn write_sample(path: &Path, sample: &EventSample) -> Result<()> {
    let bytes = encode(sample)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_sample(path: &Path, label: Option<u32>) -> Result<EventSample> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes, label)
}

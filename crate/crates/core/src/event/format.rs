//! Event file formats.
//!
//! * CSV: optional header `t_us,u,v,p`, one event per row, `p` in {-1, 1}
//!   (legacy {0, 1} is accepted, 0 mapping to -1).
//! * Binary: 16-byte header `EVST`, u16 width, u16 height, 8 reserved bytes,
//!   then packed little-endian 13-byte records (u64 t_us, u16 u, u16 v, i8 p).

use super::{Event, EventStream, Micros, Polarity, SensorGeometry};
use crate::error::{Error, Result};
use std::io::Write;
use std::path::Path;

pub const BINARY_MAGIC: &[u8; 4] = b"EVST";
pub const BINARY_HEADER_LEN: usize = 16;
pub const BINARY_RECORD_LEN: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormatTag {
    Csv,
    Binary,
}

impl FormatTag {
    /// Guesses the format from a file extension (`.csv`, otherwise binary).
    pub fn from_path(path: &Path) -> FormatTag {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FormatTag::Csv,
            _ => FormatTag::Binary,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ParseOptions {
    /// Geometry for CSV input; binary input carries its own.
    pub geometry: SensorGeometry,
    /// Out-of-order timestamps within this many microseconds of the running
    /// maximum are re-sorted; larger regressions are rejected.
    pub sort_slack_us: Micros,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            geometry: SensorGeometry::default(),
            sort_slack_us: 0,
        }
    }
}

pub fn parse_event_stream(
    source: &[u8],
    format: FormatTag,
    options: &ParseOptions,
) -> Result<EventStream> {
    let (geometry, records) = match format {
        FormatTag::Csv => (options.geometry, parse_csv(source)?),
        FormatTag::Binary => parse_binary(source)?,
    };
    finish(geometry, records, options.sort_slack_us)
}

struct RawRecord {
    t: Micros,
    u: i64,
    v: i64,
    p: Polarity,
}

fn finish(geometry: SensorGeometry, records: Vec<RawRecord>, slack: Micros) -> Result<EventStream> {
    let mut events = Vec::with_capacity(records.len());
    let mut running_max = 0;
    let mut needs_sort = false;
    for (index, r) in records.into_iter().enumerate() {
        if !geometry.contains(r.u, r.v) {
            return Err(Error::OutOfBounds {
                u: r.u,
                v: r.v,
                width: geometry.width,
                height: geometry.height,
            });
        }
        if index > 0 && r.t < running_max {
            if running_max - r.t > slack {
                return Err(Error::UnsortedInput {
                    index,
                    previous: running_max,
                    current: r.t,
                    slack,
                });
            }
            needs_sort = true;
        }
        running_max = running_max.max(r.t);
        events.push(Event::new(r.t, r.u as u16, r.v as u16, r.p));
    }
    if needs_sort {
        events.sort_by_key(|e| e.t);
    }
    EventStream::new(geometry, events)
}

fn parse_csv(source: &[u8]) -> Result<Vec<RawRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(source);
    let mut out = Vec::new();
    let mut warned_zero = false;
    for (index, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if index == 0 && record.get(0).is_some_and(|f| f.eq_ignore_ascii_case("t_us")) {
            continue;
        }
        if record.len() != 4 {
            return Err(Error::MalformedRecord {
                index,
                reason: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let field = |i: usize| -> Result<i64> {
            record[i].parse::<i64>().map_err(|_| Error::MalformedRecord {
                index,
                reason: format!("field {i} is not an integer: {:?}", &record[i]),
            })
        };
        let t = field(0)?;
        if t < 0 {
            return Err(Error::MalformedRecord {
                index,
                reason: format!("negative timestamp {t}"),
            });
        }
        let p = match field(3)? {
            1 => Polarity::Positive,
            -1 => Polarity::Negative,
            0 => {
                if !warned_zero {
                    log::warn!("polarity 0 found in CSV input; treating as -1");
                    warned_zero = true;
                }
                Polarity::Negative
            }
            other => {
                return Err(Error::MalformedRecord {
                    index,
                    reason: format!("polarity must be -1 or 1, got {other}"),
                })
            }
        };
        out.push(RawRecord {
            t: t as u64,
            u: field(1)?,
            v: field(2)?,
            p,
        });
    }
    Ok(out)
}

fn parse_binary(source: &[u8]) -> Result<(SensorGeometry, Vec<RawRecord>)> {
    if source.len() < BINARY_HEADER_LEN || &source[..4] != BINARY_MAGIC {
        return Err(Error::MalformedRecord {
            index: 0,
            reason: "missing EVST header".into(),
        });
    }
    let width = u16::from_le_bytes([source[4], source[5]]);
    let height = u16::from_le_bytes([source[6], source[7]]);
    let geometry = SensorGeometry::new(width, height)?;
    let body = &source[BINARY_HEADER_LEN..];
    if body.len() % BINARY_RECORD_LEN != 0 {
        return Err(Error::MalformedRecord {
            index: body.len() / BINARY_RECORD_LEN,
            reason: format!("truncated record ({} trailing bytes)", body.len() % BINARY_RECORD_LEN),
        });
    }
    let mut out = Vec::with_capacity(body.len() / BINARY_RECORD_LEN);
    for (index, rec) in body.chunks_exact(BINARY_RECORD_LEN).enumerate() {
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let u = u16::from_le_bytes([rec[8], rec[9]]);
        let v = u16::from_le_bytes([rec[10], rec[11]]);
        let p = Polarity::from_sign(rec[12] as i8).ok_or_else(|| Error::MalformedRecord {
            index,
            reason: format!("polarity byte {}", rec[12] as i8),
        })?;
        out.push(RawRecord {
            t,
            u: u as i64,
            v: v as i64,
            p,
        });
    }
    Ok((geometry, out))
}

pub fn write_csv<W: Write>(stream: &EventStream, out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["t_us", "u", "v", "p"])?;
    for e in stream.events() {
        writer.write_record(&[
            e.t.to_string(),
            e.u.to_string(),
            e.v.to_string(),
            e.p.sign().to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_binary<W: Write>(stream: &EventStream, mut out: W) -> Result<()> {
    let g = stream.geometry();
    let mut header = [0u8; BINARY_HEADER_LEN];
    header[..4].copy_from_slice(BINARY_MAGIC);
    header[4..6].copy_from_slice(&g.width.to_le_bytes());
    header[6..8].copy_from_slice(&g.height.to_le_bytes());
    out.write_all(&header)?;
    let mut buf = Vec::with_capacity(stream.len() * BINARY_RECORD_LEN);
    for e in stream.events() {
        buf.extend_from_slice(&e.t.to_le_bytes());
        buf.extend_from_slice(&e.u.to_le_bytes());
        buf.extend_from_slice(&e.v.to_le_bytes());
        buf.push(e.p.sign() as u8);
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

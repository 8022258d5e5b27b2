//! Sensor artifact removal: hot pixels and global event bursts.

use crate::error::{Error, Result};
use crate::event::{EventStream, Micros, Pixel, SensorGeometry};
use std::io::{Read, Write};

/// Pixels excluded from every later stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelMask {
    geometry: SensorGeometry,
    masked: Vec<bool>,
}

impl PixelMask {
    pub fn empty(geometry: SensorGeometry) -> Self {
        PixelMask {
            geometry,
            masked: vec![false; geometry.pixel_count()],
        }
    }

    pub fn from_pixels<I: IntoIterator<Item = Pixel>>(
        geometry: SensorGeometry,
        pixels: I,
    ) -> Result<Self> {
        let mut mask = PixelMask::empty(geometry);
        for p in pixels {
            if !geometry.contains(p.u as i64, p.v as i64) {
                return Err(Error::OutOfBounds {
                    u: p.u as i64,
                    v: p.v as i64,
                    width: geometry.width,
                    height: geometry.height,
                });
            }
            mask.masked[geometry.index(p.u, p.v)] = true;
        }
        Ok(mask)
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn contains(&self, p: Pixel) -> bool {
        self.geometry.contains(p.u as i64, p.v as i64) && self.masked[self.geometry.index(p.u, p.v)]
    }

    #[inline]
    pub fn is_masked_index(&self, index: usize) -> bool {
        self.masked[index]
    }

    pub fn len(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.masked.iter().any(|&m| m)
    }

    /// Masked pixels in row-major order.
    pub fn pixels(&self) -> Vec<Pixel> {
        self.masked
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| self.geometry.pixel_at(i))
            .collect()
    }

    /// Removes events that fall on masked pixels.
    pub fn apply(&self, stream: &EventStream) -> Result<EventStream> {
        if stream.geometry() != self.geometry {
            return Err(Error::GeometryMismatch {
                left: self.geometry.as_tuple(),
                right: stream.geometry().as_tuple(),
            });
        }
        Ok(stream.filter(|e| !self.masked[self.geometry.index(e.u, e.v)]))
    }

    /// CSV with one `u,v` row per masked pixel.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["u", "v"])?;
        for p in self.pixels() {
            w.write_record(&[p.u.to_string(), p.v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(geometry: SensorGeometry, input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let mut pixels = Vec::new();
        for (index, rec) in reader.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| -> Result<u16> {
                rec.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::MalformedRecord {
                        index,
                        reason: format!("bad mask coordinate in column {i}"),
                    })
            };
            pixels.push(Pixel::new(parse(0)?, parse(1)?));
        }
        PixelMask::from_pixels(geometry, pixels)
    }
}

/// Default artifact-removal parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreprocessParams {
    pub hot_pixel_k_sigma: f64,
    pub burst_bin_us: Micros,
    pub burst_ratio: f64,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            hot_pixel_k_sigma: 5.0,
            burst_bin_us: 1_000,
            burst_ratio: 10.0,
        }
    }
}

/// Masks every pixel whose event total exceeds `mean + k_sigma * std` of the
/// per-pixel totals (population statistics over the whole sensor).
pub fn detect_hot_pixels(stream: &EventStream, k_sigma: f64) -> Result<PixelMask> {
    if k_sigma.is_nan() || k_sigma <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "k_sigma must be positive, got {k_sigma}"
        )));
    }
    if stream.is_empty() {
        return Err(Error::EmptyStream);
    }
    let geometry = stream.geometry();
    let counts = stream.pixel_counts();
    let n = counts.len() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    let var = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    let mut mask = PixelMask::empty(geometry);
    if std == 0.0 || k_sigma.is_infinite() {
        return Ok(mask);
    }
    let threshold = mean + k_sigma * std;
    for (i, &c) in counts.iter().enumerate() {
        if c as f64 > threshold {
            mask.masked[i] = true;
        }
    }
    Ok(mask)
}

/// Drops every event in a time bin whose count exceeds `ratio` times the
/// median count of the non-empty bins. Bins start at the first event.
pub fn remove_bursts(stream: &EventStream, bin_us: Micros, ratio: f64) -> Result<EventStream> {
    if bin_us == 0 {
        return Err(Error::InvalidParameter("burst bin must be positive".into()));
    }
    if ratio.is_nan() || ratio <= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "burst ratio must exceed 1, got {ratio}"
        )));
    }
    let (first, last) = match (stream.first_time(), stream.last_time()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::EmptyStream),
    };
    let bin_of = |t: Micros| ((t - first) / bin_us) as usize;
    let mut bins = vec![0u64; bin_of(last) + 1];
    for e in stream.events() {
        bins[bin_of(e.t)] += 1;
    }
    let mut occupied: Vec<u64> = bins.iter().copied().filter(|&c| c > 0).collect();
    occupied.sort_unstable();
    let m = occupied.len();
    let median = if m % 2 == 1 {
        occupied[m / 2] as f64
    } else {
        (occupied[m / 2 - 1] + occupied[m / 2]) as f64 / 2.0
    };
    let threshold = ratio * median;
    let bursts = bins.iter().filter(|&&c| c as f64 > threshold).count();
    if bursts > 0 {
        log::info!("removing {bursts} burst bins (threshold {threshold:.1} events/bin)");
    }
    Ok(stream.filter(|e| bins[bin_of(e.t)] as f64 <= threshold))
}

//! Events, event streams and the frames accumulated from them.

mod format;
mod frames;

pub use format::{parse_event_stream, write_binary, write_csv, FormatTag, ParseOptions};
pub use frames::{
    build_frames_fixed_count, build_frames_fixed_time, read_windows_csv, EventFrame, FrameSeries,
    Regime,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Timestamp in microseconds.
pub type Micros = u64;

/// Sensor width and height in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorGeometry {
    pub width: u16,
    pub height: u16,
}

impl SensorGeometry {
    /// DAVIS346 resolution.
    pub const DAVIS346: SensorGeometry = SensorGeometry {
        width: 346,
        height: 260,
    };

    pub fn new(width: u16, height: u16) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "sensor geometry must be positive, got {width}x{height}"
            )));
        }
        Ok(SensorGeometry { width, height })
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn contains(&self, u: i64, v: i64) -> bool {
        u >= 0 && v >= 0 && u < self.width as i64 && v < self.height as i64
    }

    /// Row-major index of `(u, v)`.
    #[inline]
    pub fn index(&self, u: u16, v: u16) -> usize {
        v as usize * self.width as usize + u as usize
    }

    #[inline]
    pub fn pixel_at(&self, index: usize) -> Pixel {
        let w = self.width as usize;
        Pixel {
            u: (index % w) as u16,
            v: (index / w) as u16,
        }
    }

    pub fn as_tuple(&self) -> (u16, u16) {
        (self.width, self.height)
    }
}

impl Default for SensorGeometry {
    fn default() -> Self {
        Self::DAVIS346
    }
}

/// A pixel coordinate, `u` horizontal and `v` vertical.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub u: u16,
    pub v: u16,
}

impl Pixel {
    pub fn new(u: u16, v: u16) -> Self {
        Pixel { u, v }
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        let du = self.u as f64 - other.u as f64;
        let dv = self.v as f64 - other.v as f64;
        (du * du + dv * dv).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn from_sign(p: i8) -> Option<Self> {
        match p {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }
}

/// A single brightness change reported by the sensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: Micros,
    pub u: u16,
    pub v: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: Micros, u: u16, v: u16, p: Polarity) -> Self {
        Event { t, u, v, p }
    }

    pub fn pixel(&self) -> Pixel {
        Pixel::new(self.u, self.v)
    }
}

/// Events from one sensor, ordered by non-decreasing timestamp.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    geometry: SensorGeometry,
    events: Vec<Event>,
}

impl EventStream {
    /// Validates bounds and ordering.
    pub fn new(geometry: SensorGeometry, events: Vec<Event>) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if !geometry.contains(e.u as i64, e.v as i64) {
                return Err(Error::OutOfBounds {
                    u: e.u as i64,
                    v: e.v as i64,
                    width: geometry.width,
                    height: geometry.height,
                });
            }
            if i > 0 && events[i - 1].t > e.t {
                return Err(Error::UnsortedInput {
                    index: i,
                    previous: events[i - 1].t,
                    current: e.t,
                    slack: 0,
                });
            }
        }
        Ok(EventStream { geometry, events })
    }

    pub fn empty(geometry: SensorGeometry) -> Self {
        EventStream {
            geometry,
            events: Vec::new(),
        }
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn first_time(&self) -> Option<Micros> {
        self.events.first().map(|e| e.t)
    }

    pub fn last_time(&self) -> Option<Micros> {
        self.events.last().map(|e| e.t)
    }

    /// Keeps the events matching `keep`, preserving order.
    pub fn filter<F: FnMut(&Event) -> bool>(&self, mut keep: F) -> EventStream {
        EventStream {
            geometry: self.geometry,
            events: self.events.iter().copied().filter(|e| keep(e)).collect(),
        }
    }

    /// Applies `warp` to every timestamp. `warp` must be non-decreasing.
    pub fn warp_time<F: Fn(Micros) -> Micros>(&self, warp: F) -> Result<EventStream> {
        let events = self
            .events
            .iter()
            .map(|e| Event { t: warp(e.t), ..*e })
            .collect();
        EventStream::new(self.geometry, events)
    }

    /// Splits into (positive, negative) streams, each keeping input order.
    pub fn split_polarity(&self) -> (EventStream, EventStream) {
        let (pos, neg): (Vec<Event>, Vec<Event>) = self
            .events
            .iter()
            .partition(|e| e.p == Polarity::Positive);
        (
            EventStream {
                geometry: self.geometry,
                events: pos,
            },
            EventStream {
                geometry: self.geometry,
                events: neg,
            },
        )
    }

    /// Per-pixel event totals, row-major.
    pub fn pixel_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.geometry.pixel_count()];
        for e in &self.events {
            counts[self.geometry.index(e.u, e.v)] += 1;
        }
        counts
    }
}

/// Free-function form of [`EventStream::split_polarity`].
pub fn split_polarity(stream: &EventStream) -> (EventStream, EventStream) {
    stream.split_polarity()
}

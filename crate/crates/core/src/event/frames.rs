use super::{EventStream, Micros, SensorGeometry};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// How events are grouped into frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    /// Windows of `tau_us` microseconds.
    FixedTime { tau_us: Micros },
    /// Blocks of exactly `n` consecutive events.
    FixedCount { n: usize },
}

/// Per-pixel event counts over the half-open interval `[t_start, t_end)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventFrame {
    geometry: SensorGeometry,
    counts: Vec<u32>,
    t_start: Micros,
    t_end: Micros,
    partial: bool,
}

impl EventFrame {
    fn zeroed(geometry: SensorGeometry, t_start: Micros, t_end: Micros) -> Self {
        EventFrame {
            geometry,
            counts: vec![0; geometry.pixel_count()],
            t_start,
            t_end,
            partial: false,
        }
    }

    /// Builds a frame from a row-major count grid.
    pub fn from_counts(
        geometry: SensorGeometry,
        counts: Vec<u32>,
        t_start: Micros,
        t_end: Micros,
    ) -> Result<Self> {
        if counts.len() != geometry.pixel_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} counts for a {}x{} sensor",
                counts.len(),
                geometry.width,
                geometry.height
            )));
        }
        if t_start >= t_end {
            return Err(Error::InvalidParameter(format!(
                "frame interval [{t_start}, {t_end}) is empty"
            )));
        }
        Ok(EventFrame {
            geometry,
            counts,
            t_start,
            t_end,
            partial: false,
        })
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    #[inline]
    pub fn count(&self, u: u16, v: u16) -> u32 {
        self.counts[self.geometry.index(u, v)]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn t_start(&self) -> Micros {
        self.t_start
    }

    pub fn t_end(&self) -> Micros {
        self.t_end
    }

    pub fn midpoint(&self) -> f64 {
        (self.t_start as f64 + self.t_end as f64) / 2.0
    }

    /// True for a trailing fixed-time window that extends past the stream.
    pub fn is_partial(&self) -> bool {
        self.partial
    }

    /// Moves every count by `(du, dv)`; counts leaving the sensor are dropped.
    pub fn shifted(&self, du: i32, dv: i32) -> EventFrame {
        let g = self.geometry;
        let (w, h) = (g.width as i64, g.height as i64);
        let mut counts = vec![0u32; self.counts.len()];
        let (du, dv) = (du as i64, dv as i64);
        for v in 0..h {
            let tv = v + dv;
            if tv < 0 || tv >= h {
                continue;
            }
            for u in 0..w {
                let tu = u + du;
                if tu < 0 || tu >= w {
                    continue;
                }
                counts[(tv * w + tu) as usize] = self.counts[(v * w + u) as usize];
            }
        }
        EventFrame {
            counts,
            ..self.clone()
        }
    }
}

/// Temporally contiguous frames built from one stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameSeries {
    geometry: SensorGeometry,
    regime: Regime,
    frames: Vec<EventFrame>,
    discarded_events: usize,
}

impl FrameSeries {
    /// Wraps externally built frames. Frames must share `geometry` and be contiguous.
    pub fn new(geometry: SensorGeometry, regime: Regime, frames: Vec<EventFrame>) -> Result<Self> {
        for (k, f) in frames.iter().enumerate() {
            if f.geometry != geometry {
                return Err(Error::GeometryMismatch {
                    left: geometry.as_tuple(),
                    right: f.geometry.as_tuple(),
                });
            }
            if k > 0 && frames[k - 1].t_end != f.t_start {
                return Err(Error::InvalidParameter(format!(
                    "frame {k} starts at {} but frame {} ends at {}",
                    f.t_start,
                    k - 1,
                    frames[k - 1].t_end
                )));
            }
        }
        Ok(FrameSeries {
            geometry,
            regime,
            frames,
            discarded_events: 0,
        })
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn frames(&self) -> &[EventFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Events left over after the last complete fixed-count block.
    pub fn discarded_events(&self) -> usize {
        self.discarded_events
    }

    /// Drops a trailing partial window, if any.
    pub fn without_partial(mut self) -> FrameSeries {
        if self.frames.last().is_some_and(|f| f.partial) {
            self.frames.pop();
        }
        self
    }

    pub fn map_frames<F: Fn(&EventFrame) -> EventFrame>(&self, f: F) -> FrameSeries {
        FrameSeries {
            frames: self.frames.iter().map(f).collect(),
            ..self.clone()
        }
    }

    /// Debug export: `frame_idx,u,v,count` for every non-zero cell.
    pub fn write_triplets_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["frame_idx", "u", "v", "count"])?;
        for (k, frame) in self.frames.iter().enumerate() {
            for (i, &c) in frame.counts.iter().enumerate() {
                if c > 0 {
                    let p = self.geometry.pixel_at(i);
                    w.write_record(&[k.to_string(), p.u.to_string(), p.v.to_string(), c.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `frame_idx,t_start_us,t_end_us,partial` per frame.
    pub fn write_windows_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["frame_idx", "t_start_us", "t_end_us", "partial"])?;
        for (k, f) in self.frames.iter().enumerate() {
            w.write_record(&[
                k.to_string(),
                f.t_start.to_string(),
                f.t_end.to_string(),
                (f.partial as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn windows(&self) -> Vec<(Micros, Micros)> {
        self.frames.iter().map(|f| (f.t_start, f.t_end)).collect()
    }
}

/// Reads the output of [`FrameSeries::write_windows_csv`].
pub fn read_windows_csv<R: Read>(input: R) -> Result<Vec<(Micros, Micros)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for (index, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| -> Result<u64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::MalformedRecord {
                    index,
                    reason: format!("bad window field {i}"),
                })
        };
        out.push((field(1)?, field(2)?));
    }
    Ok(out)
}

/// Accumulates events into windows `[t0 + k*tau, t0 + (k+1)*tau)`.
///
/// `t0` defaults to the first event time. Windows without events are kept as
/// all-zero frames, so frame index stays affine in time. The last window is
/// flagged partial when it extends past the final event.
pub fn build_frames_fixed_time(
    stream: &EventStream,
    tau_us: Micros,
    t0: Option<Micros>,
) -> Result<FrameSeries> {
    if tau_us == 0 {
        return Err(Error::InvalidParameter("tau must be positive".into()));
    }
    let (first, last) = match (stream.first_time(), stream.last_time()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::EmptyStream),
    };
    let t0 = t0.unwrap_or(first);
    if t0 > first {
        return Err(Error::InvalidParameter(format!(
            "t0 = {t0} is after the first event at {first}"
        )));
    }
    let span_end = last + 1;
    let n_frames = (span_end - t0).div_ceil(tau_us) as usize;
    let geometry = stream.geometry();
    let mut frames: Vec<EventFrame> = (0..n_frames)
        .map(|k| {
            let start = t0 + k as u64 * tau_us;
            let mut f = EventFrame::zeroed(geometry, start, start + tau_us);
            f.partial = f.t_end > span_end;
            f
        })
        .collect();
    for e in stream.events() {
        let k = ((e.t - t0) / tau_us) as usize;
        frames[k].counts[geometry.index(e.u, e.v)] += 1;
    }
    Ok(FrameSeries {
        geometry,
        regime: Regime::FixedTime { tau_us },
        frames,
        discarded_events: 0,
    })
}

/// Splits the stream into consecutive blocks of exactly `n` events.
///
/// A trailing block shorter than `n` is dropped; its size is reported by
/// [`FrameSeries::discarded_events`]. Frame intervals run from the end of the
/// previous frame to one microsecond past the block's last event.
pub fn build_frames_fixed_count(stream: &EventStream, n: usize) -> Result<FrameSeries> {
    if n == 0 {
        return Err(Error::InvalidParameter("N must be at least 1".into()));
    }
    if stream.is_empty() {
        return Err(Error::EmptyStream);
    }
    let geometry = stream.geometry();
    let events = stream.events();
    let mut frames = Vec::with_capacity(events.len() / n);
    let mut t_start = events[0].t;
    for block in events.chunks_exact(n) {
        let last = block[n - 1].t;
        let t_end = (last + 1).max(t_start + 1);
        let mut frame = EventFrame::zeroed(geometry, t_start, t_end);
        for e in block {
            frame.counts[geometry.index(e.u, e.v)] += 1;
        }
        frames.push(frame);
        t_start = t_end;
    }
    let discarded = events.len() % n;
    if discarded > 0 {
        log::debug!("fixed-count framing dropped {discarded} trailing events");
    }
    Ok(FrameSeries {
        geometry,
        regime: Regime::FixedCount { n },
        frames,
        discarded_events: discarded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Event, Polarity};

    fn stream_at(times: &[u64], pixels: &[(u16, u16)]) -> EventStream {
        let g = SensorGeometry::new(10, 10).unwrap();
        let events = times
            .iter()
            .zip(pixels.iter().cycle())
            .map(|(&t, &(u, v))| Event::new(t, u, v, Polarity::Positive))
            .collect();
        EventStream::new(g, events).unwrap()
    }

    #[test]
    fn one_window_holds_all() {
        let s = stream_at(&[0, 400_000, 900_000], &[(5, 5)]);
        let f = build_frames_fixed_time(&s, 1_000_000, None).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f.frames()[0].count(5, 5), 3);
        assert!(f.frames()[0].is_partial());
    }

    #[test]
    fn boundary_split() {
        let s = stream_at(&[0, 1_500_000], &[(1, 1)]);
        let f = build_frames_fixed_time(&s, 1_000_000, None).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f.frames()[0].total(), 1);
        assert_eq!(f.frames()[1].total(), 1);
        assert_eq!(f.frames()[1].t_start(), f.frames()[0].t_end());
        assert!(!f.frames()[0].is_partial());
    }

    #[test]
    fn empty_windows_are_zero_frames() {
        let s = stream_at(&[0, 3_200], &[(1, 1)]);
        let f = build_frames_fixed_time(&s, 1_000, None).unwrap();
        assert_eq!(f.len(), 4);
        assert_eq!(f.frames()[1].total(), 0);
        assert_eq!(f.frames()[2].total(), 0);
    }

    #[test]
    fn aligned_span_has_no_partial() {
        let s = stream_at(&[0, 999], &[(1, 1)]);
        let f = build_frames_fixed_time(&s, 1_000, None).unwrap();
        assert_eq!(f.len(), 1);
        assert!(!f.frames()[0].is_partial());
        assert_eq!(f.clone().without_partial().len(), 1);
    }

    #[test]
    fn explicit_t0() {
        let s = stream_at(&[500, 1_200], &[(1, 1)]);
        let f = build_frames_fixed_time(&s, 1_000, Some(0)).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f.frames()[0].t_start(), 0);
        assert!(build_frames_fixed_time(&s, 1_000, Some(600)).is_err());
    }

    #[test]
    fn fixed_time_errors() {
        let g = SensorGeometry::new(2, 2).unwrap();
        assert!(matches!(
            build_frames_fixed_time(&EventStream::empty(g), 10, None),
            Err(Error::EmptyStream)
        ));
        let s = stream_at(&[0], &[(0, 0)]);
        assert!(build_frames_fixed_time(&s, 0, None).is_err());
    }

    #[test]
    fn fixed_count_exact_and_remainder() {
        let times: Vec<u64> = (0..10).collect();
        let s = stream_at(&times, &[(0, 0), (1, 2), (3, 3)]);
        let f = build_frames_fixed_count(&s, 5).unwrap();
        assert_eq!(f.len(), 2);
        assert!(f.frames().iter().all(|fr| fr.total() == 5));
        assert_eq!(f.discarded_events(), 0);

        let times: Vec<u64> = (0..12).collect();
        let s = stream_at(&times, &[(0, 0), (1, 2)]);
        let f = build_frames_fixed_count(&s, 5).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f.discarded_events(), 2);
    }

    #[test]
    fn fixed_count_unit_blocks() {
        let times: Vec<u64> = vec![0, 0, 3, 3, 3, 9];
        let s = stream_at(&times, &[(0, 0), (4, 2), (3, 3)]);
        let f = build_frames_fixed_count(&s, 1).unwrap();
        assert_eq!(f.len(), 6);
        for (frame, e) in f.frames().iter().zip(s.events()) {
            assert_eq!(frame.total(), 1);
            assert_eq!(frame.count(e.u, e.v), 1);
        }
        for w in f.frames().windows(2) {
            assert_eq!(w[0].t_end(), w[1].t_start());
            assert!(w[0].t_start() < w[0].t_end());
        }
    }

    #[test]
    fn fixed_count_errors() {
        let s = stream_at(&[0, 1], &[(0, 0)]);
        assert!(build_frames_fixed_count(&s, 0).is_err());
        let g = SensorGeometry::new(2, 2).unwrap();
        assert!(matches!(
            build_frames_fixed_count(&EventStream::empty(g), 3),
            Err(Error::EmptyStream)
        ));
    }

    #[test]
    fn shift_moves_and_evicts() {
        let g = SensorGeometry::new(4, 3).unwrap();
        let mut counts = vec![0; 12];
        counts[0] = 5;
        let f = EventFrame::from_counts(g, counts, 0, 10).unwrap();
        assert_eq!(f.shifted(0, 0), f);
        let s = f.shifted(1, 1);
        assert_eq!(s.count(1, 1), 5);
        assert_eq!(s.total(), 5);
        assert_eq!(f.shifted(4, 0).total(), 0);
        assert_eq!(f.shifted(-1, 0).total(), 0);
    }

    #[test]
    fn windows_csv_round_trip() {
        let s = stream_at(&[0, 1_500, 2_100], &[(1, 1)]);
        let f = build_frames_fixed_time(&s, 1_000, None).unwrap();
        let mut buf = Vec::new();
        f.write_windows_csv(&mut buf).unwrap();
        assert_eq!(read_windows_csv(buf.as_slice()).unwrap(), f.windows());

        let mut trip = Vec::new();
        f.write_triplets_csv(&mut trip).unwrap();
        let text = String::from_utf8(trip).unwrap();
        assert_eq!(text, "frame_idx,u,v,count\n0,1,1,1\n1,1,1,1\n2,1,1,1\n");
    }
}

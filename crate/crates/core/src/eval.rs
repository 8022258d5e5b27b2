//! Ground-truth association and precision-recall evaluation.
//!
//! Every query is assumed to have a true match somewhere in the reference
//! traverse. At a threshold `theta`, a query is accepted when its best-match
//! distance is `<= theta`; an accepted query is a true positive when that
//! best match lies within the position tolerance, a false positive
//! otherwise, and every rejected query counts as a false negative.

use crate::error::{Error, Result};
use crate::event::{FrameSeries, Micros};
use crate::matching::{best_match, DistanceMatrix};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Mean Earth radius used for the local tangent-plane projection.
const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Time-stamped positions in metres: 1-D arc length, planar, or 3-D.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseTrack {
    dims: usize,
    times: Vec<Micros>,
    positions: Vec<[f64; 3]>,
}

impl PoseTrack {
    pub fn new(dims: usize, samples: Vec<(Micros, [f64; 3])>) -> Result<Self> {
        if !(1..=3).contains(&dims) {
            return Err(Error::InvalidParameter(format!(
                "track dimension must be 1..=3, got {dims}"
            )));
        }
        if samples.is_empty() {
            return Err(Error::InvalidParameter("pose track is empty".into()));
        }
        for (i, w) in samples.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(Error::UnsortedInput {
                    index: i + 1,
                    previous: w[0].0,
                    current: w[1].0,
                    slack: 0,
                });
            }
        }
        let (times, positions) = samples.into_iter().unzip();
        Ok(PoseTrack {
            dims,
            times,
            positions,
        })
    }

    /// Track of arc-length positions along the route.
    pub fn from_arc_length(samples: Vec<(Micros, f64)>) -> Result<Self> {
        PoseTrack::new(1, samples.into_iter().map(|(t, s)| (t, [s, 0.0, 0.0])).collect())
    }

    pub fn from_planar(samples: Vec<(Micros, f64, f64)>) -> Result<Self> {
        PoseTrack::new(2, samples.into_iter().map(|(t, x, y)| (t, [x, y, 0.0])).collect())
    }

    /// Projects latitude/longitude (degrees) onto a local tangent plane
    /// anchored at the first sample.
    pub fn from_geodetic(samples: Vec<(Micros, f64, f64)>) -> Result<Self> {
        let Some(&(_, lat0, lon0)) = samples.first() else {
            return Err(Error::InvalidParameter("pose track is empty".into()));
        };
        let cos_lat0 = lat0.to_radians().cos();
        PoseTrack::from_planar(
            samples
                .into_iter()
                .map(|(t, lat, lon)| {
                    let x = (lon - lon0).to_radians() * cos_lat0 * EARTH_RADIUS_M;
                    let y = (lat - lat0).to_radians() * EARTH_RADIUS_M;
                    (t, x, y)
                })
                .collect(),
        )
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first_time(&self) -> Micros {
        self.times[0]
    }

    pub fn last_time(&self) -> Micros {
        *self.times.last().unwrap()
    }

    pub fn samples(&self) -> impl Iterator<Item = (Micros, [f64; 3])> + '_ {
        self.times.iter().copied().zip(self.positions.iter().copied())
    }

    /// Linear interpolation; `None` outside the track span.
    pub fn interpolate(&self, t: f64) -> Option<[f64; 3]> {
        let first = self.first_time() as f64;
        let last = self.last_time() as f64;
        if !(t >= first && t <= last) {
            return None;
        }
        let upper = self.times.partition_point(|&x| (x as f64) < t);
        if upper == 0 {
            return Some(self.positions[0]);
        }
        let (t0, t1) = (self.times[upper - 1] as f64, self.times[upper] as f64);
        let (a, b) = (self.positions[upper - 1], self.positions[upper]);
        let w = (t - t0) / (t1 - t0);
        Some([
            a[0] + w * (b[0] - a[0]),
            a[1] + w * (b[1] - a[1]),
            a[2] + w * (b[2] - a[2]),
        ])
    }

    /// Reads `t_us,s_m`, `t_us,x_m,y_m`, `t_us,x_m,y_m,z_m` or
    /// `t_us,lat_deg,lon_deg` CSV (header required).
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
        let geodetic = headers.get(1).is_some_and(|h| h.starts_with("lat"));
        let dims = headers.len().saturating_sub(1);
        if !(1..=3).contains(&dims) || headers[0] != "t_us" {
            return Err(Error::MalformedRecord {
                index: 0,
                reason: format!("unsupported track header {headers:?}"),
            });
        }
        let mut samples = Vec::new();
        for (index, rec) in reader.records().enumerate() {
            let rec = rec?;
            let bad = |i: usize| Error::MalformedRecord {
                index: index + 1,
                reason: format!("bad track field {i}"),
            };
            let t: Micros = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad(0))?;
            let mut pos = [0.0; 3];
            for (d, slot) in pos.iter_mut().enumerate().take(dims) {
                *slot = rec
                    .get(d + 1)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad(d + 1))?;
            }
            samples.push((t, pos));
        }
        if geodetic {
            if dims != 2 {
                return Err(Error::MalformedRecord {
                    index: 0,
                    reason: "geodetic tracks need lat and lon columns".into(),
                });
            }
            return PoseTrack::from_geodetic(samples.into_iter().map(|(t, p)| (t, p[0], p[1])).collect());
        }
        PoseTrack::new(dims, samples)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: &[&str] = match self.dims {
            1 => &["t_us", "s_m"],
            2 => &["t_us", "x_m", "y_m"],
            _ => &["t_us", "x_m", "y_m", "z_m"],
        };
        w.write_record(header)?;
        for (t, p) in self.samples() {
            let mut rec = vec![t.to_string()];
            rec.extend(p[..self.dims].iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Which reference frames count as a correct match for each query frame.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    rows: usize,
    cols: usize,
    correct: Vec<bool>,
    tolerance: f64,
}

impl GroundTruth {
    pub fn from_fn<F: Fn(usize, usize) -> bool>(rows: usize, cols: usize, tolerance: f64, f: F) -> Self {
        let mut correct = Vec::with_capacity(rows * cols);
        for j in 0..rows {
            for k in 0..cols {
                correct.push(f(j, k));
            }
        }
        GroundTruth {
            rows,
            cols,
            correct,
            tolerance,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    #[inline]
    pub fn is_correct(&self, j: usize, k: usize) -> bool {
        self.correct[j * self.cols + k]
    }
}

fn positions_at(track: &PoseTrack, windows: &[(Micros, Micros)]) -> Result<Vec<[f64; 3]>> {
    windows
        .iter()
        .map(|&(a, b)| {
            let mid = (a as f64 + b as f64) / 2.0;
            track.interpolate(mid).ok_or(Error::TrackCoverageGap {
                t: mid,
                first: track.first_time(),
                last: track.last_time(),
            })
        })
        .collect()
}

/// Ground truth from frame windows: each window is placed at the track
/// position of its midpoint.
pub fn associate_windows(
    ref_track: &PoseTrack,
    query_track: &PoseTrack,
    ref_windows: &[(Micros, Micros)],
    query_windows: &[(Micros, Micros)],
    tolerance: f64,
) -> Result<GroundTruth> {
    if ref_track.dims() != query_track.dims() {
        return Err(Error::DimensionMismatch(format!(
            "reference track is {}-D, query track is {}-D",
            ref_track.dims(),
            query_track.dims()
        )));
    }
    if tolerance.is_nan() || tolerance < 0.0 {
        return Err(Error::InvalidParameter(format!("tolerance {tolerance}")));
    }
    let refs = positions_at(ref_track, ref_windows)?;
    let queries = positions_at(query_track, query_windows)?;
    Ok(GroundTruth::from_fn(queries.len(), refs.len(), tolerance, |j, k| {
        distance(&queries[j], &refs[k]) <= tolerance
    }))
}

pub fn associate_ground_truth(
    ref_track: &PoseTrack,
    query_track: &PoseTrack,
    ref_frames: &FrameSeries,
    query_frames: &FrameSeries,
    tolerance: f64,
) -> Result<GroundTruth> {
    associate_windows(
        ref_track,
        query_track,
        &ref_frames.windows(),
        &query_frames.windows(),
        tolerance,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl PrPoint {
    fn new(threshold: f64, tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        PrPoint {
            threshold,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            tp,
            fp,
            fn_,
        }
    }

    /// `P >= 0.99`, decided on the integer counts.
    pub fn reaches_99_precision(&self) -> bool {
        self.tp + self.fp > 0 && 100 * self.tp >= 99 * (self.tp + self.fp)
    }
}

/// Threshold sweep in increasing threshold order, ending at `+inf`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub p_at_100r: f64,
    pub r_at_99p: f64,
    pub n_queries: usize,
}

#[derive(Serialize)]
struct Summary {
    p_at_100r: f64,
    r_at_99p: f64,
    n_queries: usize,
}

impl PrCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["threshold", "precision", "recall", "tp", "fp", "fn"])?;
        for p in &self.points {
            w.write_record(&[
                p.threshold.to_string(),
                p.precision.to_string(),
                p.recall.to_string(),
                p.tp.to_string(),
                p.fp.to_string(),
                p.fn_.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `{p_at_100r, r_at_99p, n_queries}`.
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&Summary {
            p_at_100r: self.p_at_100r,
            r_at_99p: self.r_at_99p,
            n_queries: self.n_queries,
        })
        .expect("summary serialises")
    }
}

pub fn pr_curve(d: &DistanceMatrix, gt: &GroundTruth) -> Result<PrCurve> {
    if d.rows() != gt.rows() || d.cols() != gt.cols() {
        return Err(Error::DimensionMismatch(format!(
            "distance matrix {}x{} vs ground truth {}x{}",
            d.rows(),
            d.cols(),
            gt.rows(),
            gt.cols()
        )));
    }
    let q = d.rows();
    if q == 0 || d.cols() == 0 {
        return Err(Error::DimensionMismatch("empty distance matrix".into()));
    }
    let mut best: Vec<(f64, bool)> = (0..q)
        .map(|j| {
            let (k, score) = best_match(d, j)?;
            Ok((score, gt.is_correct(j, k)))
        })
        .collect::<Result<_>>()?;
    best.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < q {
        let threshold = best[i].0;
        while i < q && best[i].0 == threshold {
            if best[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint::new(threshold, tp, fp, q - tp - fp));
    }
    points.push(PrPoint::new(f64::INFINITY, tp, fp, 0));

    let mut curve = PrCurve {
        points,
        p_at_100r: 0.0,
        r_at_99p: 0.0,
        n_queries: q,
    };
    curve.p_at_100r = precision_at_100_recall(&curve);
    curve.r_at_99p = recall_at_99_precision(&curve);
    Ok(curve)
}

/// Precision with every query forced to accept its best match.
pub fn precision_at_100_recall(curve: &PrCurve) -> f64 {
    curve
        .points
        .iter()
        .rev()
        .find(|p| p.threshold == f64::INFINITY)
        .or(curve.points.last())
        .map_or(0.0, |p| p.precision)
}

/// Highest recall among points with precision of at least 0.99, else 0.
pub fn recall_at_99_precision(curve: &PrCurve) -> f64 {
    curve
        .points
        .iter()
        .filter(|p| p.reaches_99_precision())
        .map(|p| p.recall)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{EventFrame, Regime, SensorGeometry};
    use proptest::prelude::*;

    fn matrix(rows: Vec<Vec<f64>>) -> DistanceMatrix {
        DistanceMatrix::from_rows(rows).unwrap()
    }

    fn windows(n: usize, tau: u64) -> FrameSeries {
        let g = SensorGeometry::new(1, 1).unwrap();
        let frames = (0..n)
            .map(|k| EventFrame::from_counts(g, vec![0], k as u64 * tau, (k as u64 + 1) * tau).unwrap())
            .collect();
        FrameSeries::new(g, Regime::FixedTime { tau_us: tau }, frames).unwrap()
    }

    fn constant_velocity(n_seconds: u64) -> PoseTrack {
        PoseTrack::from_arc_length((0..=n_seconds).map(|s| (s * 1_000_000, s as f64)).collect()).unwrap()
    }

    #[test]
    fn interpolation_and_coverage() {
        let track = PoseTrack::from_planar(vec![(0, 0.0, 0.0), (10, 10.0, 20.0)]).unwrap();
        assert_eq!(track.interpolate(5.0), Some([5.0, 10.0, 0.0]));
        assert_eq!(track.interpolate(10.0), Some([10.0, 20.0, 0.0]));
        assert_eq!(track.interpolate(10.5), None);
        assert!(PoseTrack::from_arc_length(vec![(5, 0.0), (5, 1.0)]).is_err());
    }

    #[test]
    fn identical_tracks_give_diagonal_band() {
        let track = constant_velocity(20);
        let f = windows(20, 1_000_000);
        let gt = associate_ground_truth(&track, &track, &f, &f, 0.5).unwrap();
        for j in 0..20 {
            for k in 0..20 {
                assert_eq!(gt.is_correct(j, k), j == k);
            }
        }
    }

    #[test]
    fn zero_tolerance_needs_exact_coincidence() {
        let r = constant_velocity(10);
        let q = PoseTrack::from_arc_length((0..=10).map(|s| (s * 1_000_000, s as f64 + 0.25)).collect())
            .unwrap();
        let f = windows(10, 1_000_000);
        let gt = associate_ground_truth(&r, &q, &f, &f, 0.0).unwrap();
        assert!((0..10).all(|j| (0..10).all(|k| !gt.is_correct(j, k))));
    }

    #[test]
    fn constant_velocity_band_half_width_three() {
        let track = constant_velocity(30);
        let f = windows(30, 1_000_000);
        let gt = associate_ground_truth(&track, &track, &f, &f, 3.0).unwrap();
        for j in 0..30usize {
            for k in 0..30usize {
                // frame midpoints sit at j + 0.5 metres
                let dist = ((j as f64 + 0.5) - (k as f64 + 0.5)).abs();
                assert_eq!(gt.is_correct(j, k), dist <= 3.0);
                assert_eq!(gt.is_correct(j, k), j.abs_diff(k) <= 3);
            }
        }
    }

    #[test]
    fn coverage_gap_is_reported() {
        let track = constant_velocity(5);
        let f = windows(7, 1_000_000);
        assert!(matches!(
            associate_ground_truth(&track, &track, &f, &f, 1.0),
            Err(Error::TrackCoverageGap { .. })
        ));
    }

    #[test]
    fn geodetic_projection_scale() {
        // one millidegree of latitude is ~111 m
        let t = PoseTrack::from_geodetic(vec![(0, -27.47, 153.02), (1, -27.469, 153.02)]).unwrap();
        let p = t.interpolate(1.0).unwrap();
        assert!((p[1] - 111.19).abs() < 0.1, "{p:?}");
        assert!(p[0].abs() < 1e-9);
    }

    #[test]
    fn track_csv_formats() {
        let t = PoseTrack::read_csv("t_us,s_m\n0,0\n10,5\n".as_bytes()).unwrap();
        assert_eq!(t.dims(), 1);
        let t2 = PoseTrack::read_csv("t_us,x_m,y_m\n0,0,0\n10,3,4\n".as_bytes()).unwrap();
        assert_eq!(t2.interpolate(10.0), Some([3.0, 4.0, 0.0]));
        let mut buf = Vec::new();
        t2.write_csv(&mut buf).unwrap();
        assert_eq!(PoseTrack::read_csv(buf.as_slice()).unwrap(), t2);
        assert!(PoseTrack::read_csv("time,x\n0,0\n".as_bytes()).is_err());
        let geo = PoseTrack::read_csv("t_us,lat_deg,lon_deg\n0,-27,153\n5,-27,153.001\n".as_bytes()).unwrap();
        assert_eq!(geo.dims(), 2);
    }

    fn diag_gt(n: usize) -> GroundTruth {
        GroundTruth::from_fn(n, n, 0.0, |j, k| j == k)
    }

    #[test]
    fn perfect_matcher() {
        let d = matrix(vec![vec![0.0, 5.0, 6.0], vec![4.0, 1.0, 6.0], vec![7.0, 5.0, 2.0]]);
        let c = pr_curve(&d, &diag_gt(3)).unwrap();
        assert!(c.points.iter().all(|p| p.precision == 1.0));
        assert_eq!(c.p_at_100r, 1.0);
        assert_eq!(c.r_at_99p, 1.0);
    }

    #[test]
    fn always_wrong_matcher() {
        let d = matrix(vec![vec![5.0, 0.0], vec![1.0, 5.0]]);
        let c = pr_curve(&d, &diag_gt(2)).unwrap();
        assert!(c.points.iter().all(|p| p.precision == 0.0));
        assert_eq!(c.r_at_99p, 0.0);
        assert_eq!(c.p_at_100r, 0.0);
    }

    #[test]
    fn four_query_hand_sweep() {
        // queries 0,1 correct at scores 1,2; queries 2,3 wrong at scores 3,4
        let d = matrix(vec![
            vec![1.0, 9.0, 9.0, 9.0],
            vec![9.0, 2.0, 9.0, 9.0],
            vec![9.0, 9.0, 9.0, 3.0],
            vec![9.0, 9.0, 4.0, 9.0],
        ]);
        let c = pr_curve(&d, &diag_gt(4)).unwrap();
        let thresholds: Vec<f64> = c.points.iter().map(|p| p.threshold).collect();
        assert_eq!(thresholds, vec![1.0, 2.0, 3.0, 4.0, f64::INFINITY]);
        let at2 = c.points[1];
        assert_eq!((at2.tp, at2.fp, at2.fn_), (2, 0, 2));
        assert_eq!((at2.precision, at2.recall), (1.0, 0.5));
        let inf = c.points[4];
        assert_eq!((inf.tp, inf.fp, inf.fn_), (2, 2, 0));
        assert_eq!(inf.precision, 0.5);
        // every query accepted: nothing rejected, so recall is 1
        assert_eq!(inf.recall, 1.0);
        assert_eq!(c.p_at_100r, 0.5);
        assert_eq!(c.r_at_99p, 0.5);
    }

    #[test]
    fn r_at_99p_scan() {
        // (P=1, R=0.3) and (P=0.95, R=0.6)
        let curve = PrCurve {
            points: vec![PrPoint::new(1.0, 3, 0, 7), PrPoint::new(2.0, 57, 3, 38)],
            p_at_100r: 0.0,
            r_at_99p: 0.0,
            n_queries: 10,
        };
        assert_eq!(curve.points[0].precision, 1.0);
        assert!((curve.points[0].recall - 0.3).abs() < 1e-12);
        assert!((curve.points[1].precision - 0.95).abs() < 1e-12);
        assert!((recall_at_99_precision(&curve) - 0.3).abs() < 1e-12);

        let none = PrCurve {
            points: vec![PrPoint::new(0.0, 9, 1, 0)],
            ..curve
        };
        assert_eq!(recall_at_99_precision(&none), 0.0);
        assert!(PrPoint::new(0.0, 99, 1, 0).reaches_99_precision());
    }

    #[test]
    fn half_correct_precision() {
        let d = matrix(vec![vec![0.0, 1.0], vec![0.0, 1.0]]);
        let c = pr_curve(&d, &diag_gt(2)).unwrap();
        assert_eq!(c.p_at_100r, 0.5);
    }

    #[test]
    fn dimension_checks() {
        let d = matrix(vec![vec![0.0, 1.0]]);
        assert!(matches!(pr_curve(&d, &diag_gt(2)), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn csv_and_summary() {
        let d = matrix(vec![vec![1.0, 2.0], vec![3.0, 0.5]]);
        let c = pr_curve(&d, &diag_gt(2)).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("threshold,precision,recall,tp,fp,fn\n"));
        assert!(text.trim_end().ends_with("inf,1,1,2,0,0"));
        let v: serde_json::Value = serde_json::from_str(&c.summary_json()).unwrap();
        assert_eq!(v["n_queries"], 2);
        assert_eq!(v["p_at_100r"], 1.0);
    }

    proptest! {
        #[test]
        fn curve_invariants(values in prop::collection::vec(0u8..6, 36), band in 0usize..2, scale in 0.1f64..100.0) {
            let rows: Vec<Vec<f64>> = values.chunks(6).map(|r| r.iter().map(|&x| x as f64).collect()).collect();
            let d = matrix(rows);
            let gt = GroundTruth::from_fn(6, 6, 0.0, |j, k| j.abs_diff(k) <= band);
            let c = pr_curve(&d, &gt).unwrap();
            for w in c.points.windows(2) {
                prop_assert!(w[0].threshold < w[1].threshold || w[1].threshold == f64::INFINITY);
                prop_assert!(w[0].recall <= w[1].recall);
            }
            for p in &c.points {
                prop_assert_eq!(p.tp + p.fp + p.fn_, 6);
            }
            let scaled = pr_curve(&d.scaled(scale), &gt).unwrap();
            prop_assert_eq!(scaled.points.len(), c.points.len());
            for (a, b) in c.points.iter().zip(&scaled.points) {
                prop_assert_eq!((a.tp, a.fp, a.fn_), (b.tp, b.fp, b.fn_));
            }
        }
    }
}

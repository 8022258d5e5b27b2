//! Sparse descriptors, sum-of-absolute-differences distance matrices and
//! diagonal sequence aggregation.

use crate::error::{Error, Result};
use crate::event::{EventFrame, FrameSeries};
use crate::select::PixelSet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

pub const MATRIX_MAGIC: &[u8; 4] = b"DMAT";

/// Event counts read at the selected pixels of one frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseDescriptor {
    pub counts: Vec<u32>,
    pub frame_idx: usize,
}

pub fn sparse_descriptor(frame: &EventFrame, pixels: &PixelSet, frame_idx: usize) -> Result<SparseDescriptor> {
    if frame.geometry() != pixels.geometry() {
        return Err(Error::GeometryMismatch {
            left: frame.geometry().as_tuple(),
            right: pixels.geometry().as_tuple(),
        });
    }
    Ok(SparseDescriptor {
        counts: pixels.pixels().iter().map(|p| frame.count(p.u, p.v)).collect(),
        frame_idx,
    })
}

/// Descriptors for every frame of a series.
pub fn describe_series(frames: &FrameSeries, pixels: &PixelSet) -> Result<Vec<SparseDescriptor>> {
    frames
        .frames()
        .iter()
        .enumerate()
        .map(|(k, f)| sparse_descriptor(f, pixels, k))
        .collect()
}

#[inline]
fn l1(a: &[u32], b: &[u32]) -> u64 {
    a.iter().zip(b).map(|(&x, &y)| x.abs_diff(y) as u64).sum()
}

/// `sum_i |a_i - b_i|`.
pub fn sad_distance(a: &SparseDescriptor, b: &SparseDescriptor) -> Result<u64> {
    if a.counts.len() != b.counts.len() {
        return Err(Error::LengthMismatch {
            left: a.counts.len(),
            right: b.counts.len(),
        });
    }
    Ok(l1(&a.counts, &b.counts))
}

/// Whether a matrix holds raw frame distances or sequence-aggregated ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatrixKind {
    Raw,
    Sequence { length: usize, window: SequenceWindow },
}

/// Alignment of the length-`L` diagonal window around entry `(j, k)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceWindow {
    /// Offsets `-(L-1)/2 ..= (L-1)/2`.
    #[default]
    Centered,
    /// Offsets `-(L-1) ..= 0`, using only past frames.
    Trailing,
}

/// Query-by-reference distances, row-major (one row per query frame).
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    kind: MatrixKind,
}

impl DistanceMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged distance rows".into()));
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        DistanceMatrix::from_vec(n_rows, cols, data)
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|d| d.is_nan() || *d < 0.0) {
            return Err(Error::InvalidParameter("distances must be non-negative".into()));
        }
        Ok(DistanceMatrix {
            rows,
            cols,
            data,
            kind: MatrixKind::Raw,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[j * self.cols + k]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.cols..(j + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Multiplies every entry by `c >= 0`.
    pub fn scaled(&self, c: f64) -> DistanceMatrix {
        DistanceMatrix {
            data: self.data.iter().map(|d| d * c).collect(),
            ..self.clone()
        }
    }

    /// Dense CSV, one line per query.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for j in 0..self.rows {
            let line: Vec<String> = self.row(j).iter().map(|d| d.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        out.flush()?;
        Ok(())
    }

    /// `DMAT`, u32 rows, u32 cols, then little-endian f64 values row-major.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let mut buf = Vec::with_capacity(12 + 8 * self.data.len());
        buf.extend_from_slice(MATRIX_MAGIC);
        buf.extend_from_slice(&(self.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for d in &self.data {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        out.write_all(&buf)?;
        out.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut buf = Vec::new();
        input.read_to_end(&mut buf)?;
        if buf.len() < 12 || &buf[..4] != MATRIX_MAGIC {
            return Err(Error::MalformedRecord {
                index: 0,
                reason: "missing DMAT header".into(),
            });
        }
        let rows = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let body = &buf[12..];
        if body.len() != rows * cols * 8 {
            return Err(Error::MalformedRecord {
                index: 0,
                reason: format!("expected {} bytes of matrix data, found {}", rows * cols * 8, body.len()),
            });
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        DistanceMatrix::from_vec(rows, cols, data)
    }
}

/// `D(j, k) = SAD(queries[j], refs[k])`, computed row-parallel.
pub fn distance_matrix(queries: &[SparseDescriptor], refs: &[SparseDescriptor]) -> Result<DistanceMatrix> {
    let len = queries
        .first()
        .or(refs.first())
        .map_or(0, |d| d.counts.len());
    if let Some(bad) = queries.iter().chain(refs).find(|d| d.counts.len() != len) {
        return Err(Error::LengthMismatch {
            left: len,
            right: bad.counts.len(),
        });
    }
    let cols = refs.len();
    let mut data = vec![0.0; queries.len() * cols];
    if cols > 0 {
        data.par_chunks_mut(cols)
            .zip(queries.par_iter())
            .for_each(|(row, q)| {
                for (out, r) in row.iter_mut().zip(refs) {
                    *out = l1(&q.counts, &r.counts) as f64;
                }
            });
    }
    Ok(DistanceMatrix {
        rows: queries.len(),
        cols,
        data,
        kind: MatrixKind::Raw,
    })
}

/// SAD over every pixel of the frames.
pub fn dense_sad_matrix(query_frames: &FrameSeries, ref_frames: &FrameSeries) -> Result<DistanceMatrix> {
    if query_frames.geometry() != ref_frames.geometry() {
        return Err(Error::GeometryMismatch {
            left: query_frames.geometry().as_tuple(),
            right: ref_frames.geometry().as_tuple(),
        });
    }
    let refs = ref_frames.frames();
    let cols = refs.len();
    let mut data = vec![0.0; query_frames.len() * cols];
    if cols > 0 {
        data.par_chunks_mut(cols)
            .zip(query_frames.frames().par_iter())
            .for_each(|(row, q)| {
                for (out, r) in row.iter_mut().zip(refs) {
                    *out = l1(q.counts(), r.counts()) as f64;
                }
            });
    }
    Ok(DistanceMatrix {
        rows: query_frames.len(),
        cols,
        data,
        kind: MatrixKind::Raw,
    })
}

/// One query row of sparse distances, single-threaded. Used for timing.
pub fn sparse_row(query: &SparseDescriptor, refs: &[SparseDescriptor]) -> Vec<u64> {
    refs.iter().map(|r| l1(&query.counts, &r.counts)).collect()
}

/// One query row of dense distances, single-threaded. Used for timing.
pub fn dense_row(query: &EventFrame, refs: &[EventFrame]) -> Vec<u64> {
    refs.iter().map(|r| l1(query.counts(), r.counts())).collect()
}

/// Averages each entry over its length-`length` diagonal window.
///
/// Only in-bounds terms are summed and the sum is divided by their number,
/// so constant matrices stay constant up to the borders.
pub fn sequence_convolve(d: &DistanceMatrix, length: usize, window: SequenceWindow) -> Result<DistanceMatrix> {
    if length == 0 || length % 2 == 0 {
        return Err(Error::BadSequenceLength(length));
    }
    if d.kind != MatrixKind::Raw {
        return Err(Error::InvalidParameter(
            "sequence matching expects a raw distance matrix".into(),
        ));
    }
    let (lo, hi) = match window {
        SequenceWindow::Centered => (-((length as i64 - 1) / 2), (length as i64 - 1) / 2),
        SequenceWindow::Trailing => (-(length as i64 - 1), 0),
    };
    let (rows, cols) = (d.rows as i64, d.cols as i64);
    let mut data = vec![0.0; d.data.len()];
    if d.cols > 0 {
        data.par_chunks_mut(d.cols).enumerate().for_each(|(j, row)| {
            let j = j as i64;
            for (k, out) in row.iter_mut().enumerate() {
                let k = k as i64;
                let mut sum = 0.0;
                let mut m = 0u32;
                for i in lo..=hi {
                    let (jj, kk) = (j + i, k + i);
                    if jj >= 0 && jj < rows && kk >= 0 && kk < cols {
                        sum += d.data[(jj * cols + kk) as usize];
                        m += 1;
                    }
                }
                *out = sum / m as f64;
            }
        });
    }
    Ok(DistanceMatrix {
        rows: d.rows,
        cols: d.cols,
        data,
        kind: MatrixKind::Sequence { length, window },
    })
}

/// Lowest-distance reference for query `j`; ties go to the lowest index.
pub fn best_match(d: &DistanceMatrix, j: usize) -> Result<(usize, f64)> {
    if j >= d.rows || d.cols == 0 {
        return Err(Error::DimensionMismatch(format!(
            "query {j} outside {}x{} matrix",
            d.rows, d.cols
        )));
    }
    let row = d.row(j);
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v < row[best] {
            best = k;
        }
    }
    Ok((best, row[best]))
}

/// Moves every count of every frame by `(du, dv)`.
pub fn shift_pixels(frames: &FrameSeries, du: i32, dv: i32) -> FrameSeries {
    frames.map_frames(|f| f.shifted(du, dv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Pixel, Regime, SensorGeometry};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desc(counts: &[u32]) -> SparseDescriptor {
        SparseDescriptor {
            counts: counts.to_vec(),
            frame_idx: 0,
        }
    }

    fn random_series(g: SensorGeometry, n: usize, seed: u64) -> FrameSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..n)
            .map(|k| {
                let counts = (0..g.pixel_count()).map(|_| rng.random_range(0..6)).collect();
                EventFrame::from_counts(g, counts, k as u64 * 100, (k as u64 + 1) * 100).unwrap()
            })
            .collect();
        FrameSeries::new(g, Regime::FixedTime { tau_us: 100 }, frames).unwrap()
    }

    #[test]
    fn sad_hand_case() {
        assert_eq!(sad_distance(&desc(&[3, 0, 5]), &desc(&[1, 2, 5])).unwrap(), 4);
        assert_eq!(sad_distance(&desc(&[1, 2, 5]), &desc(&[3, 0, 5])).unwrap(), 4);
        assert_eq!(sad_distance(&desc(&[4, 4]), &desc(&[4, 4])).unwrap(), 0);
        assert!(matches!(
            sad_distance(&desc(&[1]), &desc(&[1, 2])),
            Err(Error::LengthMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn descriptor_lookup() {
        let g = SensorGeometry::new(20, 10).unwrap();
        let zero = EventFrame::from_counts(g, vec![0; 200], 0, 1).unwrap();
        let set = PixelSet::new(g, vec![Pixel::new(3, 4), Pixel::new(19, 9)], 0, None).unwrap();
        assert_eq!(sparse_descriptor(&zero, &set, 0).unwrap().counts, vec![0, 0]);

        let mut counts = vec![0; 200];
        counts[g.index(3, 4)] = 7;
        let f = EventFrame::from_counts(g, counts, 0, 1).unwrap();
        let single = PixelSet::new(g, vec![Pixel::new(3, 4)], 0, None).unwrap();
        assert_eq!(sparse_descriptor(&f, &single, 0).unwrap().counts, vec![7]);
    }

    #[test]
    fn descriptor_matches_direct_lookup() {
        let g = SensorGeometry::DAVIS346;
        let series = random_series(g, 1, 4);
        let set = crate::select::select_random_pixels(g, 150, 9, None, None).unwrap();
        let d = sparse_descriptor(&series.frames()[0], &set, 0).unwrap();
        let raw = series.frames()[0].counts();
        for (c, p) in d.counts.iter().zip(set.pixels()) {
            assert_eq!(*c, raw[p.v as usize * 346 + p.u as usize]);
        }
    }

    #[test]
    fn distance_matrix_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mk = |rng: &mut ChaCha8Rng, n| -> Vec<SparseDescriptor> {
            (0..n)
                .map(|k| SparseDescriptor {
                    counts: (0..25).map(|_| rng.random_range(0..40)).collect(),
                    frame_idx: k,
                })
                .collect()
        };
        let q = mk(&mut rng, 20);
        let r = mk(&mut rng, 30);
        let d = distance_matrix(&q, &r).unwrap();
        assert_eq!((d.rows(), d.cols()), (20, 30));
        for j in 0..20 {
            for k in 0..30 {
                let mut s = 0i64;
                for i in 0..25 {
                    s += (q[j].counts[i] as i64 - r[k].counts[i] as i64).abs();
                }
                assert_eq!(d.get(j, k), s as f64);
            }
        }
        let self_d = distance_matrix(&q, &q).unwrap();
        assert!((0..20).all(|j| self_d.get(j, j) == 0.0));
        let one = distance_matrix(&q[..1], &r[..1]).unwrap();
        assert_eq!(one.get(0, 0), sad_distance(&q[0], &r[0]).unwrap() as f64);
        let bad = vec![desc(&[1, 2])];
        assert!(distance_matrix(&q, &bad).is_err());
    }

    #[test]
    fn dense_matches_oracle_and_full_sparse() {
        let g = SensorGeometry::new(5, 5).unwrap();
        let q = random_series(g, 3, 2);
        let r = random_series(g, 4, 3);
        let d = dense_sad_matrix(&q, &r).unwrap();
        for j in 0..3 {
            for k in 0..4 {
                let mut s = 0i64;
                for i in 0..25 {
                    s += (q.frames()[j].counts()[i] as i64 - r.frames()[k].counts()[i] as i64).abs();
                }
                assert_eq!(d.get(j, k), s as f64);
            }
        }
        let all = PixelSet::all(g, None);
        let sparse = distance_matrix(
            &describe_series(&q, &all).unwrap(),
            &describe_series(&r, &all).unwrap(),
        )
        .unwrap();
        assert_eq!(sparse, d);
        let self_d = dense_sad_matrix(&q, &q).unwrap();
        assert!((0..3).all(|j| self_d.get(j, j) == 0.0));
        let other = random_series(SensorGeometry::new(4, 5).unwrap(), 2, 1);
        assert!(matches!(dense_sad_matrix(&q, &other), Err(Error::GeometryMismatch { .. })));
    }

    #[test]
    fn sequence_identity_and_constants() {
        let d = DistanceMatrix::from_rows(vec![vec![1.0, 5.0], vec![2.0, 0.0]]).unwrap();
        let s = sequence_convolve(&d, 1, SequenceWindow::Centered).unwrap();
        assert_eq!(s.data(), d.data());
        assert_eq!(s.kind(), MatrixKind::Sequence { length: 1, window: SequenceWindow::Centered });

        let ones = DistanceMatrix::from_rows(vec![vec![1.0; 3]; 3]).unwrap();
        for w in [SequenceWindow::Centered, SequenceWindow::Trailing] {
            let s = sequence_convolve(&ones, 3, w).unwrap();
            assert!(s.data().iter().all(|&x| x == 1.0));
        }
        for bad in [0, 2, 4] {
            assert!(matches!(
                sequence_convolve(&d, bad, SequenceWindow::Centered),
                Err(Error::BadSequenceLength(_))
            ));
        }
        assert!(sequence_convolve(&s, 3, SequenceWindow::Centered).is_err());
    }

    #[test]
    fn sequence_interior_and_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..6).map(|_| rng.random_range(0..100) as f64).collect())
            .collect();
        let d = DistanceMatrix::from_rows(rows).unwrap();
        let s = sequence_convolve(&d, 3, SequenceWindow::Centered).unwrap();
        let expected = (d.get(1, 1) + d.get(2, 2) + d.get(3, 3)) / 3.0;
        assert_eq!(s.get(2, 2), expected);
        // corner keeps two in-bounds terms
        assert_eq!(s.get(0, 0), (d.get(0, 0) + d.get(1, 1)) / 2.0);
        assert_eq!(s.get(0, 5), d.get(0, 5));
        let t = sequence_convolve(&d, 3, SequenceWindow::Trailing).unwrap();
        assert_eq!(t.get(3, 4), (d.get(1, 2) + d.get(2, 3) + d.get(3, 4)) / 3.0);
        assert_eq!(t.get(0, 3), d.get(0, 3));
    }

    #[test]
    fn best_match_rules() {
        let d = DistanceMatrix::from_rows(vec![vec![5.0, 2.0, 9.0], vec![3.0, 3.0, 3.0]]).unwrap();
        assert_eq!(best_match(&d, 0).unwrap(), (1, 2.0));
        assert_eq!(best_match(&d, 1).unwrap(), (0, 3.0));
        assert!(best_match(&d, 2).is_err());
        let z = DistanceMatrix::from_rows(vec![vec![0.0, 4.0], vec![4.0, 0.0]]).unwrap();
        assert_eq!(best_match(&z, 1).unwrap(), (1, 0.0));
    }

    #[test]
    fn shift_identity_and_eviction() {
        let g = SensorGeometry::new(6, 4).unwrap();
        let s = random_series(g, 2, 5);
        assert_eq!(shift_pixels(&s, 0, 0), s);
        let gone = shift_pixels(&s, 6, 0);
        assert!(gone.frames().iter().all(|f| f.total() == 0));
    }

    #[test]
    fn matrix_io() {
        let d = DistanceMatrix::from_rows(vec![vec![1.5, 0.0, 3.0], vec![2.0, 7.25, 1.0]]).unwrap();
        let mut bin = Vec::new();
        d.write_binary(&mut bin).unwrap();
        assert_eq!(&bin[..4], b"DMAT");
        assert_eq!(u32::from_le_bytes(bin[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bin[8..12].try_into().unwrap()), 3);
        assert_eq!(bin.len(), 12 + 6 * 8);
        assert_eq!(DistanceMatrix::read_binary(bin.as_slice()).unwrap(), d);
        let mut csv = Vec::new();
        d.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "1.5,0,3\n2,7.25,1\n");
        assert!(DistanceMatrix::read_binary(&bin[..20]).is_err());
    }

    fn arb_desc(len: usize) -> impl Strategy<Value = SparseDescriptor> {
        prop::collection::vec(0u32..1000, len).prop_map(|counts| SparseDescriptor { counts, frame_idx: 0 })
    }

    proptest! {
        #[test]
        fn sad_is_a_metric(a in arb_desc(16), b in arb_desc(16), c in arb_desc(16)) {
            let ab = sad_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, sad_distance(&b, &a).unwrap());
            prop_assert_eq!(sad_distance(&a, &a).unwrap(), 0);
            prop_assert!(ab <= sad_distance(&a, &c).unwrap() + sad_distance(&c, &b).unwrap());
        }

        #[test]
        fn nested_pixel_sets_are_monotone(seed in any::<u64>(), small in 1usize..30, extra in 0usize..30) {
            let g = SensorGeometry::new(10, 8).unwrap();
            let s = random_series(g, 2, seed);
            let big = crate::select::select_random_pixels(g, small + extra, seed, None, None).unwrap();
            let sub = PixelSet::new(g, big.pixels()[..small].to_vec(), 0, None).unwrap();
            let d = |set: &PixelSet| {
                let a = sparse_descriptor(&s.frames()[0], set, 0).unwrap();
                let b = sparse_descriptor(&s.frames()[1], set, 1).unwrap();
                sad_distance(&a, &b).unwrap()
            };
            prop_assert!(d(&sub) <= d(&big));
        }

        #[test]
        fn argmin_stable_under_row_offset(row in prop::collection::vec(0.0f64..100.0, 1..20), c in 0.0f64..50.0) {
            let d = DistanceMatrix::from_rows(vec![row.clone()]).unwrap();
            let shifted = DistanceMatrix::from_rows(vec![row.iter().map(|x| x + c).collect()]).unwrap();
            prop_assert_eq!(best_match(&d, 0).unwrap().0, best_match(&shifted, 0).unwrap().0);
        }

        #[test]
        fn constant_matrix_survives_convolution(r in 1usize..8, c in 1usize..8, v in 0.0f64..10.0, l in 0usize..4) {
            let d = DistanceMatrix::from_rows(vec![vec![v; c]; r]).unwrap();
            let s = sequence_convolve(&d, 2 * l + 1, SequenceWindow::Centered).unwrap();
            for &x in s.data() {
                prop_assert!((x - v).abs() <= 1e-12 * v.max(1.0));
            }
        }

        #[test]
        fn shift_round_trip_restores_interior(du in -5i32..=5, dv in -3i32..=3, seed in any::<u64>()) {
            let g = SensorGeometry::new(12, 8).unwrap();
            let s = random_series(g, 1, seed);
            let back = shift_pixels(&shift_pixels(&s, du, dv), -du, -dv);
            let (orig, got) = (&s.frames()[0], &back.frames()[0]);
            for v in 0..8i32 {
                for u in 0..12i32 {
                    let survives = (0..12).contains(&(u + du)) && (0..8).contains(&(v + dv));
                    let expected = if survives { orig.count(u as u16, v as u16) } else { 0 };
                    prop_assert_eq!(got.count(u as u16, v as u16), expected);
                }
            }
        }
    }
}

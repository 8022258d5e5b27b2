//! Sparse pixel selection.
//!
//! Pixels are drawn one at a time from a probability mass function
//! proportional to their temporal event-count variance over the reference
//! frames. After each draw the working mass is multiplied by a Gaussian
//! surround-suppression kernel `1 - exp(-r^2 / 2 sigma^2)` centred on the
//! drawn pixel, so the pixel itself drops to zero and its neighbours become
//! less likely. Suppression from every previous draw accumulates.

use crate::error::{Error, Result};
use crate::event::{FrameSeries, Pixel, SensorGeometry};
use crate::preprocess::PixelMask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};

/// Default suppression width in pixels.
pub const DEFAULT_SIGMA: f64 = 7.0;

/// `exp(-x)` for `x` above this is below half an ulp of 1.0, so the kernel
/// is exactly 1.0 in f64 outside the corresponding radius.
const KERNEL_CUTOFF_EXPONENT: f64 = 40.0;

/// Per-pixel temporal variance and mean of event counts.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceMap {
    geometry: SensorGeometry,
    variance: Vec<f64>,
    mean: Vec<f64>,
    frames: usize,
}

impl VarianceMap {
    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn at(&self, p: Pixel) -> f64 {
        self.variance[self.geometry.index(p.u, p.v)]
    }

    /// Multiplies every variance by `c`.
    pub fn scaled(&self, c: f64) -> VarianceMap {
        VarianceMap {
            variance: self.variance.iter().map(|s| s * c).collect(),
            ..self.clone()
        }
    }

    /// Pixels ordered by decreasing variance, ties by row-major index.
    pub fn ranked(&self) -> Vec<Pixel> {
        let mut idx: Vec<usize> = (0..self.variance.len()).collect();
        idx.sort_by(|&a, &b| self.variance[b].total_cmp(&self.variance[a]).then(a.cmp(&b)));
        idx.into_iter().map(|i| self.geometry.pixel_at(i)).collect()
    }

    /// Flat `u,v,S` CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["u", "v", "S"])?;
        for (i, s) in self.variance.iter().enumerate() {
            let p = self.geometry.pixel_at(i);
            w.write_record(&[p.u.to_string(), p.v.to_string(), s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Population variance of each pixel's count across the frames.
///
/// Computed from exact integer sums, so a pixel has zero variance exactly
/// when its count never changes. Masked pixels get zero.
pub fn variance_map(frames: &FrameSeries, mask: &PixelMask) -> Result<VarianceMap> {
    let k = frames.len();
    if k < 2 {
        return Err(Error::TooFewFrames { needed: 2, got: k });
    }
    let geometry = frames.geometry();
    if mask.geometry() != geometry {
        return Err(Error::GeometryMismatch {
            left: geometry.as_tuple(),
            right: mask.geometry().as_tuple(),
        });
    }
    const CHUNK: usize = 4096;
    let n = geometry.pixel_count();
    let mut variance = vec![0.0; n];
    let mut mean = vec![0.0; n];
    variance
        .par_chunks_mut(CHUNK)
        .zip(mean.par_chunks_mut(CHUNK))
        .enumerate()
        .for_each(|(c, (var_out, mean_out))| {
            let base = c * CHUNK;
            let len = var_out.len();
            let mut sum = vec![0u64; len];
            let mut sum_sq = vec![0u128; len];
            for frame in frames.frames() {
                let counts = &frame.counts()[base..base + len];
                for (i, &x) in counts.iter().enumerate() {
                    sum[i] += x as u64;
                    sum_sq[i] += (x as u128) * (x as u128);
                }
            }
            let k128 = k as u128;
            for i in 0..len {
                mean_out[i] = sum[i] as f64 / k as f64;
                if mask.is_masked_index(base + i) {
                    continue;
                }
                let s = sum[i] as u128;
                let numerator = k128 * sum_sq[i] - s * s;
                var_out[i] = numerator as f64 / (k128 * k128) as f64;
            }
        });
    Ok(VarianceMap {
        geometry,
        variance,
        mean,
        frames: k,
    })
}

/// Sampling distribution over the sensor, summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionPmf {
    geometry: SensorGeometry,
    p: Vec<f64>,
}

impl SelectionPmf {
    /// Normalises arbitrary non-negative weights.
    pub fn from_weights(geometry: SensorGeometry, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != geometry.pixel_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} pixels",
                weights.len(),
                geometry.pixel_count()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateVariance);
        }
        Ok(SelectionPmf {
            geometry,
            p: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn at(&self, p: Pixel) -> f64 {
        self.p[self.geometry.index(p.u, p.v)]
    }

    pub fn support(&self) -> usize {
        self.p.iter().filter(|&&x| x > 0.0).count()
    }
}

/// `p(u, v) = S(u, v) / sum(S)`.
pub fn selection_pmf(varmap: &VarianceMap) -> Result<SelectionPmf> {
    SelectionPmf::from_weights(varmap.geometry, varmap.variance.clone())
}

/// Surround-suppression factor at offset `(du, dv)` from a selected pixel:
/// `1 - exp(-(du^2 + dv^2) / (2 sigma^2))`.
#[inline]
pub fn suppression_weight(du: i64, dv: i64, sigma: f64) -> f64 {
    let r2 = (du * du + dv * dv) as f64;
    -(-r2 / (2.0 * sigma * sigma)).exp_m1()
}

/// An ordered set of distinct selected pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelSet {
    geometry: SensorGeometry,
    pixels: Vec<Pixel>,
    seed: u64,
    sigma: Option<f64>,
}

impl PixelSet {
    pub fn new(
        geometry: SensorGeometry,
        pixels: Vec<Pixel>,
        seed: u64,
        sigma: Option<f64>,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pixels.len());
        for p in &pixels {
            if !geometry.contains(p.u as i64, p.v as i64) {
                return Err(Error::OutOfBounds {
                    u: p.u as i64,
                    v: p.v as i64,
                    width: geometry.width,
                    height: geometry.height,
                });
            }
            if !seen.insert(*p) {
                return Err(Error::InvalidParameter(format!(
                    "pixel ({}, {}) selected twice",
                    p.u, p.v
                )));
            }
        }
        Ok(PixelSet {
            geometry,
            pixels,
            seed,
            sigma,
        })
    }

    /// Every unmasked pixel in row-major order.
    pub fn all(geometry: SensorGeometry, mask: Option<&PixelMask>) -> PixelSet {
        let pixels = (0..geometry.pixel_count())
            .filter(|&i| mask.is_none_or(|m| !m.is_masked_index(i)))
            .map(|i| geometry.pixel_at(i))
            .collect();
        PixelSet {
            geometry,
            pixels,
            seed: 0,
            sigma: None,
        }
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn pixels(&self) -> &[Pixel] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    /// Row-major indices of the selected pixels, in selection order.
    pub fn indices(&self) -> Vec<usize> {
        self.pixels
            .iter()
            .map(|p| self.geometry.index(p.u, p.v))
            .collect()
    }

    /// Mean distance from each pixel to its nearest other selected pixel.
    pub fn mean_nearest_neighbor_distance(&self) -> f64 {
        if self.pixels.len() < 2 {
            return 0.0;
        }
        let total: f64 = self
            .pixels
            .iter()
            .enumerate()
            .map(|(i, a)| {
                self.pixels
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, b)| a.distance(b))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        total / self.pixels.len() as f64
    }

    /// `u,v` rows preceded by a `# J=.. sigma=.. seed=..` comment.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let sigma = self
            .sigma
            .map(|s| s.to_string())
            .unwrap_or_else(|| "none".into());
        writeln!(
            out,
            "# J={} sigma={} seed={} width={} height={}",
            self.pixels.len(),
            sigma,
            self.seed,
            self.geometry.width,
            self.geometry.height
        )?;
        writeln!(out, "u,v")?;
        for p in &self.pixels {
            writeln!(out, "{},{}", p.u, p.v)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads [`PixelSet::write_csv`] output.
    pub fn read_csv<R: Read>(geometry: SensorGeometry, input: R) -> Result<Self> {
        let mut seed = 0;
        let mut sigma = None;
        let mut pixels = Vec::new();
        for (index, line) in BufReader::new(input).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if let Some(comment) = line.strip_prefix('#') {
                for token in comment.split_whitespace() {
                    match token.split_once('=') {
                        Some(("seed", v)) => seed = v.parse().unwrap_or(0),
                        Some(("sigma", v)) => sigma = v.parse().ok(),
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() || line.eq_ignore_ascii_case("u,v") {
                continue;
            }
            let malformed = || Error::MalformedRecord {
                index,
                reason: format!("expected `u,v`, got {line:?}"),
            };
            let (u, v) = line.split_once(',').ok_or_else(malformed)?;
            let u = u.trim().parse().map_err(|_| malformed())?;
            let v = v.trim().parse().map_err(|_| malformed())?;
            pixels.push(Pixel::new(u, v));
        }
        PixelSet::new(geometry, pixels, seed, sigma)
    }
}

/// Draws `j` pixels by recursive surround-suppressed sampling.
///
/// Deterministic in `(pmf, j, sigma, seed)`. Fails with
/// [`Error::MassExhausted`] if the working mass reaches zero early.
pub fn select_pixels(pmf: &SelectionPmf, j: usize, sigma: f64, seed: u64) -> Result<PixelSet> {
    if j == 0 {
        return Err(Error::InvalidParameter("J must be at least 1".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let geometry = pmf.geometry;
    let (w, h) = (geometry.width as i64, geometry.height as i64);
    let radius = ((sigma * (2.0 * KERNEL_CUTOFF_EXPONENT).sqrt()).ceil() as i64).min(w.max(h));
    let side = (2 * radius + 1) as usize;
    let mut kernel = Vec::with_capacity(side * side);
    for dv in -radius..=radius {
        for du in -radius..=radius {
            kernel.push(suppression_weight(du, dv, sigma));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mass = pmf.p.clone();
    let mut pixels = Vec::with_capacity(j);
    for drawn in 0..j {
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return Err(Error::MassExhausted {
                drawn,
                requested: j,
            });
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (i, &m) in mass.iter().enumerate() {
            if m > 0.0 {
                acc += m;
                chosen = Some(i);
                if acc > target {
                    break;
                }
            }
        }
        let index = chosen.expect("positive total implies a positive cell");
        let centre = geometry.pixel_at(index);
        pixels.push(centre);

        let (cu, cv) = (centre.u as i64, centre.v as i64);
        for dv in -radius..=radius {
            let v = cv + dv;
            if v < 0 || v >= h {
                continue;
            }
            let krow = ((dv + radius) as usize) * side;
            let row = (v * w) as usize;
            for du in -radius..=radius {
                let u = cu + du;
                if u < 0 || u >= w {
                    continue;
                }
                mass[row + u as usize] *= kernel[krow + (du + radius) as usize];
            }
        }
        mass[index] = 0.0;
    }
    Ok(PixelSet {
        geometry,
        pixels,
        seed,
        sigma: Some(sigma),
    })
}

/// Axis-aligned half-open pixel rectangle `[u_min, u_max) x [v_min, v_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub u_min: u16,
    pub u_max: u16,
    pub v_min: u16,
    pub v_max: u16,
}

impl Region {
    /// Rows `v >= floor(2H/3)`.
    pub fn bottom_third(geometry: SensorGeometry) -> Region {
        Region {
            u_min: 0,
            u_max: geometry.width,
            v_min: ((2 * geometry.height as u32) / 3) as u16,
            v_max: geometry.height,
        }
    }

    pub fn contains(&self, p: Pixel) -> bool {
        p.u >= self.u_min && p.u < self.u_max && p.v >= self.v_min && p.v < self.v_max
    }
}

/// Uniform sampling of `j` pixels without replacement, skipping `exclusion`
/// and masked pixels.
pub fn select_random_pixels(
    geometry: SensorGeometry,
    j: usize,
    seed: u64,
    exclusion: Option<Region>,
    mask: Option<&PixelMask>,
) -> Result<PixelSet> {
    if j == 0 {
        return Err(Error::InvalidParameter("J must be at least 1".into()));
    }
    let available: Vec<usize> = (0..geometry.pixel_count())
        .filter(|&i| {
            let p = geometry.pixel_at(i);
            exclusion.is_none_or(|r| !r.contains(p)) && mask.is_none_or(|m| !m.is_masked_index(i))
        })
        .collect();
    if j > available.len() {
        return Err(Error::MassExhausted {
            drawn: available.len(),
            requested: j,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = rand::seq::index::sample(&mut rng, available.len(), j)
        .into_iter()
        .map(|k| geometry.pixel_at(available[k]))
        .collect();
    Ok(PixelSet {
        geometry,
        pixels,
        seed,
        sigma: None,
    })
}

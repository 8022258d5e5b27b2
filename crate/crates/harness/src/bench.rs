//! Sparse versus dense matching cost on random frames.

use crate::config::ExperimentConfig;
use crate::error::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sparse_vpr::event::{EventFrame, SensorGeometry};
use sparse_vpr::matching::{dense_row, sparse_descriptor, sparse_row};
use sparse_vpr::select::{select_random_pixels, PixelSet};
use std::hint::black_box;
use std::time::Instant;

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub width: u16,
    pub height: u16,
    pub frames: usize,
    pub j: usize,
    pub runs: usize,
    pub sparse_median_s: f64,
    pub dense_median_s: f64,
    pub speedup: f64,
    pub warning: Option<String>,
}

/// Frames with counts uniform in `0..4`.
pub fn random_frames(g: SensorGeometry, n: usize, seed: u64) -> Vec<EventFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let mut counts = Vec::with_capacity(g.pixel_count());
            while counts.len() < g.pixel_count() {
                let mut bits: u64 = rng.random();
                for _ in 0..32 {
                    if counts.len() == g.pixel_count() {
                        break;
                    }
                    counts.push((bits & 3) as u32);
                    bits >>= 2;
                }
            }
            EventFrame::from_counts(g, counts, k as u64, k as u64 + 1).expect("valid frame")
        })
        .collect()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Times one query row against every reference frame: sparse (query
/// descriptor extraction included, reference descriptors precomputed)
/// versus dense over all pixels.
pub fn bench_runtime(cfg: &ExperimentConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let g = cfg.geometry()?;
    let frames = random_frames(g, cfg.bench_frames, cfg.seed);
    let pixels = if cfg.j >= g.pixel_count() {
        PixelSet::all(g, None)
    } else {
        select_random_pixels(g, cfg.j, cfg.seed, None, None)?
    };
    let refs = frames
        .iter()
        .enumerate()
        .map(|(k, f)| sparse_descriptor(f, &pixels, k))
        .collect::<sparse_vpr::Result<Vec<_>>>()?;
    let query = &frames[0];

    let mut sparse_t = Vec::with_capacity(cfg.bench_runs);
    let mut dense_t = Vec::with_capacity(cfg.bench_runs);
    for _ in 0..cfg.bench_runs {
        let start = Instant::now();
        let d = sparse_descriptor(black_box(query), &pixels, 0)?;
        black_box(sparse_row(&d, black_box(&refs)));
        sparse_t.push(start.elapsed().as_secs_f64());

        let start = Instant::now();
        black_box(dense_row(black_box(query), black_box(&frames)));
        dense_t.push(start.elapsed().as_secs_f64());
    }
    let sparse_median_s = median(sparse_t);
    let dense_median_s = median(dense_t);
    let warning = if cfg.bench_frames == 1 || sparse_median_s < 1e-6 {
        Some("timings are close to the timer resolution; use more frames".to_string())
    } else {
        None
    };
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(BenchReport {
        width: g.width,
        height: g.height,
        frames: cfg.bench_frames,
        j: pixels.len(),
        runs: cfg.bench_runs,
        sparse_median_s,
        dense_median_s,
        speedup: dense_median_s / sparse_median_s.max(f64::MIN_POSITIVE),
        warning,
    })
}

//! End-to-end run: load, clean, frame, select, describe, match, evaluate.

use crate::config::{ExperimentConfig, Strategy};
use crate::error::{HarnessError, Result};
use crate::report::{write_atomic, write_json, write_text};
use crate::synth::{synth_generate, SynthWorld};
use serde::Serialize;
use sparse_vpr::eval::{associate_ground_truth, pr_curve, PoseTrack, PrCurve};
use sparse_vpr::event::{
    build_frames_fixed_count, build_frames_fixed_time, parse_event_stream, EventStream, FormatTag, FrameSeries,
    ParseOptions, Regime,
};
use sparse_vpr::matching::{dense_sad_matrix, describe_series, distance_matrix, sequence_convolve, DistanceMatrix};
use sparse_vpr::preprocess::{detect_hot_pixels, remove_bursts, PixelMask};
use sparse_vpr::select::{select_pixels, select_random_pixels, selection_pmf, variance_map, PixelSet, Region};
use sparse_vpr::Error;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct Traverse {
    pub stream: EventStream,
    pub track: PoseTrack,
}

pub fn read_events(path: &Path, cfg: &ExperimentConfig) -> Result<EventStream> {
    let bytes = std::fs::read(path)?;
    let options = ParseOptions {
        geometry: cfg.geometry()?,
        sort_slack_us: cfg.sort_slack_us,
    };
    Ok(parse_event_stream(&bytes, FormatTag::from_path(path), &options)?)
}

pub fn read_track(path: &Path) -> Result<PoseTrack> {
    Ok(PoseTrack::read_csv(std::fs::File::open(path)?)?)
}

/// Reference and query traverses, from files or from the synthetic world
/// seeded with `seed`.
pub fn load_traverses(cfg: &ExperimentConfig, seed: u64) -> Result<(Traverse, Traverse)> {
    if let (Some(re), Some(qe), Some(rt), Some(qt)) = (&cfg.ref_events, &cfg.query_events, &cfg.ref_track, &cfg.query_track)
    {
        let reference = Traverse {
            stream: read_events(re, cfg)?,
            track: read_track(rt)?,
        };
        let query = Traverse {
            stream: read_events(qe, cfg)?,
            track: read_track(qt)?,
        };
        if reference.stream.geometry() != query.stream.geometry() {
            return Err(Error::GeometryMismatch {
                left: reference.stream.geometry().as_tuple(),
                right: query.stream.geometry().as_tuple(),
            }
            .into());
        }
        return Ok((reference, query));
    }
    let world = SynthWorld::from_config(cfg, seed)?;
    let (rs, rt) = synth_generate(&world, 1.0, cfg.ref_traverse_seed)?;
    let (qs, qt) = synth_generate(&world, cfg.query_speed_scale, cfg.query_traverse_seed)?;
    Ok((Traverse { stream: rs, track: rt }, Traverse { stream: qs, track: qt }))
}

/// Hot-pixel mask (union over both traverses) and burst removal, when enabled.
pub fn preprocess_pair(
    cfg: &ExperimentConfig,
    reference: &EventStream,
    query: &EventStream,
) -> Result<(EventStream, EventStream, PixelMask)> {
    let g = reference.geometry();
    if !cfg.preprocess_enabled() {
        return Ok((reference.clone(), query.clone(), PixelMask::empty(g)));
    }
    let hot_r = detect_hot_pixels(reference, cfg.hot_pixel_k)?;
    let hot_q = detect_hot_pixels(query, cfg.hot_pixel_k)?;
    let mask = PixelMask::from_pixels(g, hot_r.pixels().into_iter().chain(hot_q.pixels()))?;
    let clean = |s: &EventStream| -> Result<EventStream> {
        let masked = mask.apply(s)?;
        if masked.is_empty() {
            return Ok(masked);
        }
        Ok(remove_bursts(&masked, cfg.burst_bin_us, cfg.burst_ratio)?)
    };
    log::info!("masked {} hot pixels", mask.len());
    Ok((clean(reference)?, clean(query)?, mask))
}

/// Frames for `regime`, without a trailing partial window.
pub fn build_frames(stream: &EventStream, regime: Regime) -> Result<FrameSeries> {
    let frames = match regime {
        Regime::FixedTime { tau_us } => build_frames_fixed_time(stream, tau_us, None)?,
        Regime::FixedCount { n } => build_frames_fixed_count(stream, n)?,
    };
    Ok(frames.without_partial())
}

/// Pixel subset for `strategy`, chosen on the reference frames. Asking for
/// at least as many pixels as are available returns all of them, whatever
/// the strategy.
pub fn select_for(
    strategy: Strategy,
    reference: &FrameSeries,
    mask: &PixelMask,
    j: usize,
    sigma: f64,
    seed: u64,
) -> Result<PixelSet> {
    let g = reference.geometry();
    if strategy == Strategy::All || j >= g.pixel_count() - mask.len() {
        return Ok(PixelSet::all(g, Some(mask)));
    }
    let pixels = match strategy {
        Strategy::Variance => {
            let vmap = variance_map(reference, mask)?;
            select_pixels(&selection_pmf(&vmap)?, j, sigma, seed)?
        }
        Strategy::Random => select_random_pixels(g, j, seed, None, Some(mask))?,
        Strategy::RandomExcl => select_random_pixels(g, j, seed, Some(Region::bottom_third(g)), Some(mask))?,
        Strategy::All => unreachable!(),
    };
    Ok(pixels)
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub raw: DistanceMatrix,
    pub sequence: DistanceMatrix,
    pub curve: PrCurve,
}

/// Matches query frames against reference frames with the given pixels
/// (`None` compares every pixel) and scores the result.
pub fn evaluate(
    cfg: &ExperimentConfig,
    reference: (&FrameSeries, &PoseTrack),
    query: (&FrameSeries, &PoseTrack),
    pixels: Option<&PixelSet>,
) -> Result<Evaluation> {
    for frames in [reference.0, query.0] {
        if frames.len() < cfg.seq_length {
            return Err(Error::TooFewFrames {
                needed: cfg.seq_length,
                got: frames.len(),
            }
            .into());
        }
    }
    let raw = match pixels {
        Some(p) => distance_matrix(&describe_series(query.0, p)?, &describe_series(reference.0, p)?)?,
        None => dense_sad_matrix(query.0, reference.0)?,
    };
    let sequence = sequence_convolve(&raw, cfg.seq_length, cfg.window)?;
    let gt = associate_ground_truth(reference.1, query.1, reference.0, query.0, cfg.tolerance_m)?;
    let curve = pr_curve(&sequence, &gt)?;
    Ok(Evaluation { raw, sequence, curve })
}

/// Everything one trial needs before pixel selection.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub reference: FrameSeries,
    pub query: FrameSeries,
    pub ref_track: PoseTrack,
    pub query_track: PoseTrack,
    pub mask: PixelMask,
    pub ref_events: usize,
    pub query_events: usize,
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64, regime: Regime) -> Result<Prepared> {
    let (r, q) = load_traverses(cfg, seed)?;
    let (rs, qs, mask) = preprocess_pair(cfg, &r.stream, &q.stream)?;
    Ok(Prepared {
        reference: build_frames(&rs, regime)?,
        query: build_frames(&qs, regime)?,
        ref_track: r.track,
        query_track: q.track,
        mask,
        ref_events: rs.len(),
        query_events: qs.len(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub config: ExperimentConfig,
    pub source: &'static str,
    pub position_metric: &'static str,
    pub ref_events: usize,
    pub query_events: usize,
    pub ref_frames: usize,
    pub query_frames: usize,
    pub masked_pixels: usize,
    pub selected_pixels: usize,
    pub p_at_100r: f64,
    pub r_at_99p: f64,
    pub n_queries: usize,
}

pub fn position_metric(track: &PoseTrack) -> &'static str {
    if track.dims() == 1 {
        "arc_length"
    } else {
        "euclidean"
    }
}

pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    let p = prepare(cfg, cfg.seed, cfg.regime())?;
    let pixels = select_for(cfg.strategy, &p.reference, &p.mask, cfg.j, cfg.sigma, cfg.seed)?;
    let eval = evaluate(
        cfg,
        (&p.reference, &p.ref_track),
        (&p.query, &p.query_track),
        Some(&pixels),
    )?;

    let out = &cfg.out_dir;
    write_atomic(&out.join("pixels.csv"), |w| Ok(pixels.write_csv(w)?))?;
    if !p.mask.is_empty() {
        write_atomic(&out.join("hot_pixels.csv"), |w| Ok(p.mask.write_csv(w)?))?;
    }
    if cfg.strategy == Strategy::Variance {
        let vmap = variance_map(&p.reference, &p.mask)?;
        write_atomic(&out.join("variance.csv"), |w| Ok(vmap.write_csv(w)?))?;
    }
    write_atomic(&out.join("ref_windows.csv"), |w| Ok(p.reference.write_windows_csv(w)?))?;
    write_atomic(&out.join("query_windows.csv"), |w| Ok(p.query.write_windows_csv(w)?))?;
    write_atomic(&out.join("distance_raw.dmat"), |w| Ok(eval.raw.write_binary(w)?))?;
    write_atomic(&out.join("distance_seq.dmat"), |w| Ok(eval.sequence.write_binary(w)?))?;
    write_atomic(&out.join("pr_curve.csv"), |w| Ok(eval.curve.write_csv(w)?))?;
    write_text(&out.join("summary.json"), &(eval.curve.summary_json() + "\n"))?;

    let report = PipelineReport {
        config: cfg.clone(),
        source: if cfg.uses_files() { "files" } else { "synthetic" },
        position_metric: position_metric(&p.ref_track),
        ref_events: p.ref_events,
        query_events: p.query_events,
        ref_frames: p.reference.len(),
        query_frames: p.query.len(),
        masked_pixels: p.mask.len(),
        selected_pixels: pixels.len(),
        p_at_100r: eval.curve.p_at_100r,
        r_at_99p: eval.curve.r_at_99p,
        n_queries: eval.curve.n_queries,
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

pub(crate) fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(HarnessError::config(msg))
    }
}

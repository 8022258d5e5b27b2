//! Selection comparison, pixel shift and velocity warp experiments.
//!
//! Trials use seeds `seed, seed + 1, ...`; each seed drives both the
//! synthetic world and the pixel selection. Cells run on the rayon pool and
//! are reported in grid order.

use crate::config::{ExperimentConfig, Strategy};
use crate::error::{HarnessError, Result};
use crate::pipeline::{build_frames, evaluate, load_traverses, prepare, preprocess_pair, require, select_for, Prepared};
use crate::report::{mean_std, write_atomic, write_json, MeanStd};
use rayon::prelude::*;
use serde::Serialize;
use sparse_vpr::event::{FrameSeries, Regime};
use sparse_vpr::matching::shift_pixels;

fn trial_seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.trials as u64).map(|i| cfg.seed + i).collect()
}

fn prepare_trials(cfg: &ExperimentConfig, regime: Regime) -> Result<Vec<(u64, Prepared)>> {
    let seeds = trial_seeds(cfg);
    if cfg.uses_files() {
        // the data do not change with the seed
        let p = prepare(cfg, cfg.seed, regime)?;
        return Ok(seeds.into_iter().map(|s| (s, p.clone())).collect());
    }
    seeds
        .into_par_iter()
        .map(|s| Ok((s, prepare(cfg, s, regime)?)))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct SelectionCell {
    pub strategy: Strategy,
    pub j: usize,
    pub seed: u64,
    pub p_at_100r: f64,
    pub r_at_99p: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SelectionPoint {
    pub strategy: Strategy,
    pub j: usize,
    pub p_at_100r: MeanStd,
    pub r_at_99p: MeanStd,
}

#[derive(Clone, Debug, Serialize)]
pub struct SelectionReport {
    pub config: ExperimentConfig,
    pub cells: Vec<SelectionCell>,
    pub points: Vec<SelectionPoint>,
}

pub fn experiment_selection_compare(cfg: &ExperimentConfig) -> Result<SelectionReport> {
    cfg.validate()?;
    require(!cfg.j_grid.is_empty(), "j_grid is empty")?;
    let trials = prepare_trials(cfg, cfg.regime())?;
    let mut jobs = Vec::new();
    for strategy in Strategy::COMPARED {
        for &j in &cfg.j_grid {
            for t in 0..trials.len() {
                jobs.push((strategy, j, t));
            }
        }
    }
    let cells: Vec<SelectionCell> = jobs
        .into_par_iter()
        .map(|(strategy, j, t)| {
            let (seed, p) = &trials[t];
            let pixels = select_for(strategy, &p.reference, &p.mask, j, cfg.sigma, *seed)?;
            let e = evaluate(cfg, (&p.reference, &p.ref_track), (&p.query, &p.query_track), Some(&pixels))?;
            Ok(SelectionCell {
                strategy,
                j,
                seed: *seed,
                p_at_100r: e.curve.p_at_100r,
                r_at_99p: e.curve.r_at_99p,
            })
        })
        .collect::<Result<_>>()?;
    let points = cells
        .chunks(trials.len())
        .map(|chunk| SelectionPoint {
            strategy: chunk[0].strategy,
            j: chunk[0].j,
            p_at_100r: mean_std(&chunk.iter().map(|c| c.p_at_100r).collect::<Vec<_>>()),
            r_at_99p: mean_std(&chunk.iter().map(|c| c.r_at_99p).collect::<Vec<_>>()),
        })
        .collect();
    Ok(SelectionReport {
        config: cfg.clone(),
        cells,
        points,
    })
}

impl SelectionReport {
    pub fn point(&self, strategy: Strategy, j: usize) -> Option<&SelectionPoint> {
        self.points.iter().find(|p| p.strategy == strategy && p.j == j)
    }

    pub fn write(&self) -> Result<()> {
        let dir = &self.config.out_dir;
        write_json(&dir.join("selection_report.json"), self)?;
        write_atomic(&dir.join("selection.csv"), |w| {
            writeln!(w, "strategy,j,n,p_at_100r_mean,p_at_100r_std,r_at_99p_mean,r_at_99p_std")?;
            for p in &self.points {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    p.strategy, p.j, p.p_at_100r.n, p.p_at_100r.mean, p.p_at_100r.std, p.r_at_99p.mean, p.r_at_99p.std
                )?;
            }
            Ok(())
        })?;
        write_atomic(&dir.join("selection_cells.csv"), |w| {
            writeln!(w, "strategy,j,seed,p_at_100r,r_at_99p")?;
            for c in &self.cells {
                writeln!(w, "{},{},{},{},{}", c.strategy, c.j, c.seed, c.p_at_100r, c.r_at_99p)?;
            }
            Ok(())
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ShiftCell {
    pub du: i32,
    pub dv: i32,
    pub seed: u64,
    pub sparse_p_at_100r: f64,
    pub dense_p_at_100r: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ShiftPoint {
    pub du: i32,
    pub dv: i32,
    pub sparse_p_at_100r: MeanStd,
    pub dense_p_at_100r: MeanStd,
}

#[derive(Clone, Debug, Serialize)]
pub struct ShiftReport {
    pub config: ExperimentConfig,
    pub cells: Vec<ShiftCell>,
    pub points: Vec<ShiftPoint>,
}

pub fn experiment_pixel_shift(cfg: &ExperimentConfig) -> Result<ShiftReport> {
    cfg.validate()?;
    require(!cfg.shifts.is_empty(), "shifts is empty")?;
    let trials = prepare_trials(cfg, cfg.regime())?;
    let pixels = trials
        .par_iter()
        .map(|(seed, p)| select_for(cfg.strategy, &p.reference, &p.mask, cfg.j, cfg.sigma, *seed))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.shifts.len())
        .flat_map(|o| (0..trials.len()).map(move |t| (o, t)))
        .collect();
    let cells: Vec<ShiftCell> = jobs
        .into_par_iter()
        .map(|(o, t)| {
            let (du, dv) = cfg.shifts[o];
            let (seed, p) = &trials[t];
            let shifted = shift_pixels(&p.query, du, dv);
            let r = (&p.reference, &p.ref_track);
            let q = (&shifted, &p.query_track);
            let sparse = evaluate(cfg, r, q, Some(&pixels[t]))?;
            let dense = evaluate(cfg, r, q, None)?;
            Ok(ShiftCell {
                du,
                dv,
                seed: *seed,
                sparse_p_at_100r: sparse.curve.p_at_100r,
                dense_p_at_100r: dense.curve.p_at_100r,
            })
        })
        .collect::<Result<_>>()?;
    let points = cells
        .chunks(trials.len())
        .map(|chunk| ShiftPoint {
            du: chunk[0].du,
            dv: chunk[0].dv,
            sparse_p_at_100r: mean_std(&chunk.iter().map(|c| c.sparse_p_at_100r).collect::<Vec<_>>()),
            dense_p_at_100r: mean_std(&chunk.iter().map(|c| c.dense_p_at_100r).collect::<Vec<_>>()),
        })
        .collect();
    Ok(ShiftReport {
        config: cfg.clone(),
        cells,
        points,
    })
}

impl ShiftReport {
    pub fn point(&self, du: i32, dv: i32) -> Option<&ShiftPoint> {
        self.points.iter().find(|p| p.du == du && p.dv == dv)
    }

    pub fn write(&self) -> Result<()> {
        let dir = &self.config.out_dir;
        write_json(&dir.join("shift_report.json"), self)?;
        write_atomic(&dir.join("shift.csv"), |w| {
            writeln!(w, "du,dv,n,sparse_mean,sparse_std,dense_mean,dense_std")?;
            for p in &self.points {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    p.du,
                    p.dv,
                    p.sparse_p_at_100r.n,
                    p.sparse_p_at_100r.mean,
                    p.sparse_p_at_100r.std,
                    p.dense_p_at_100r.mean,
                    p.dense_p_at_100r.std
                )?;
            }
            Ok(())
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VelocityCell {
    pub n_events: usize,
    pub seed: u64,
    pub effective_tau_us: u64,
    pub fixed_count_frames: (usize, usize),
    pub fixed_time_frames: (usize, usize),
    pub fixed_count_p_at_100r: f64,
    pub fixed_time_p_at_100r: f64,
    pub fixed_count_r_at_99p: f64,
    pub fixed_time_r_at_99p: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct VelocityPoint {
    pub n_events: usize,
    pub fixed_count_p_at_100r: MeanStd,
    pub fixed_time_p_at_100r: MeanStd,
}

#[derive(Clone, Debug, Serialize)]
pub struct VelocityReport {
    pub config: ExperimentConfig,
    pub cells: Vec<VelocityCell>,
    pub points: Vec<VelocityPoint>,
}

/// Mean window length of fixed-count frames over both traverses, rounded
/// to whole microseconds.
pub fn effective_tau(reference: &FrameSeries, query: &FrameSeries) -> u64 {
    let frames = reference.frames().iter().chain(query.frames());
    let (sum, n) = frames.fold((0u64, 0u64), |(s, n), f| (s + (f.t_end() - f.t_start()), n + 1));
    if n == 0 {
        return 1;
    }
    ((sum as f64 / n as f64).round() as u64).max(1)
}

pub fn experiment_velocity_warp(cfg: &ExperimentConfig) -> Result<VelocityReport> {
    cfg.validate()?;
    let ns: Vec<usize> = if cfg.n_sweep.is_empty() {
        vec![cfg.n_events]
    } else {
        cfg.n_sweep.clone()
    };
    if ns.contains(&0) {
        return Err(HarnessError::config("n_events (or n_sweep) is required and must be positive"));
    }
    let seeds = trial_seeds(cfg);
    let streams = seeds
        .par_iter()
        .map(|&s| {
            let (r, q) = load_traverses(cfg, s)?;
            let (rs, qs, mask) = preprocess_pair(cfg, &r.stream, &q.stream)?;
            Ok((rs, qs, mask, r.track, q.track))
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = ns
        .iter()
        .flat_map(|&n| (0..seeds.len()).map(move |t| (n, t)))
        .collect();
    let cells: Vec<VelocityCell> = jobs
        .into_par_iter()
        .map(|(n, t)| {
            let (rs, qs, mask, rt, qt) = &streams[t];
            let seed = seeds[t];
            let ref_n = build_frames(rs, Regime::FixedCount { n })?;
            let query_n = build_frames(qs, Regime::FixedCount { n })?;
            let tau = effective_tau(&ref_n, &query_n);
            let ref_t = build_frames(rs, Regime::FixedTime { tau_us: tau })?;
            let query_t = build_frames(qs, Regime::FixedTime { tau_us: tau })?;
            let pixels = select_for(cfg.strategy, &ref_t, mask, cfg.j, cfg.sigma, seed)?;
            let by_count = evaluate(cfg, (&ref_n, rt), (&query_n, qt), Some(&pixels))?;
            let by_time = evaluate(cfg, (&ref_t, rt), (&query_t, qt), Some(&pixels))?;
            Ok(VelocityCell {
                n_events: n,
                seed,
                effective_tau_us: tau,
                fixed_count_frames: (ref_n.len(), query_n.len()),
                fixed_time_frames: (ref_t.len(), query_t.len()),
                fixed_count_p_at_100r: by_count.curve.p_at_100r,
                fixed_time_p_at_100r: by_time.curve.p_at_100r,
                fixed_count_r_at_99p: by_count.curve.r_at_99p,
                fixed_time_r_at_99p: by_time.curve.r_at_99p,
            })
        })
        .collect::<Result<_>>()?;
    let points = cells
        .chunks(seeds.len())
        .map(|chunk| VelocityPoint {
            n_events: chunk[0].n_events,
            fixed_count_p_at_100r: mean_std(&chunk.iter().map(|c| c.fixed_count_p_at_100r).collect::<Vec<_>>()),
            fixed_time_p_at_100r: mean_std(&chunk.iter().map(|c| c.fixed_time_p_at_100r).collect::<Vec<_>>()),
        })
        .collect();
    Ok(VelocityReport {
        config: cfg.clone(),
        cells,
        points,
    })
}

impl VelocityReport {
    pub fn write(&self) -> Result<()> {
        let dir = &self.config.out_dir;
        write_json(&dir.join("velocity_report.json"), self)?;
        write_atomic(&dir.join("velocity.csv"), |w| {
            writeln!(
                w,
                "n_events,seed,effective_tau_us,fixed_count_p_at_100r,fixed_time_p_at_100r,fixed_count_r_at_99p,fixed_time_r_at_99p"
            )?;
            for c in &self.cells {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    c.n_events,
                    c.seed,
                    c.effective_tau_us,
                    c.fixed_count_p_at_100r,
                    c.fixed_time_p_at_100r,
                    c.fixed_count_r_at_99p,
                    c.fixed_time_r_at_99p
                )?;
            }
            Ok(())
        })
    }
}

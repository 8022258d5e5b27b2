//! Flat `key = value` experiment configuration.
//!
//! Every key can also be given on the command line as `--key value` or
//! `--key=value`; dashes and underscores are interchangeable.

use crate::error::{HarnessError, Result};
use serde::Serialize;
use sparse_vpr::event::{Regime, SensorGeometry};
use sparse_vpr::matching::SequenceWindow;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Variance,
    Random,
    RandomExcl,
    All,
}

impl Strategy {
    pub const COMPARED: [Strategy; 3] = [Strategy::Variance, Strategy::Random, Strategy::RandomExcl];
}

impl FromStr for Strategy {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variance" => Ok(Strategy::Variance),
            "random" => Ok(Strategy::Random),
            "random_excl" | "random-excl" => Ok(Strategy::RandomExcl),
            "all" => Ok(Strategy::All),
            _ => Err(HarnessError::config(format!("unknown strategy '{s}'"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Variance => "variance",
            Strategy::Random => "random",
            Strategy::RandomExcl => "random_excl",
            Strategy::All => "all",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Toggle {
    Auto,
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityKind {
    Blobs,
    Planted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    FixedTime,
    FixedCount,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub ref_events: Option<PathBuf>,
    pub query_events: Option<PathBuf>,
    pub ref_track: Option<PathBuf>,
    pub query_track: Option<PathBuf>,
    pub width: u16,
    pub height: u16,
    pub sort_slack_us: u64,

    pub preprocess: Toggle,
    pub hot_pixel_k: f64,
    pub burst_bin_us: u64,
    pub burst_ratio: f64,

    pub regime: RegimeKind,
    pub tau_us: u64,
    pub n_events: usize,
    pub n_sweep: Vec<usize>,

    pub strategy: Strategy,
    pub j: usize,
    pub sigma: f64,
    pub seq_length: usize,
    pub window: SequenceWindow,
    pub seed: u64,
    pub trials: usize,
    pub tolerance_m: f64,
    pub j_grid: Vec<usize>,
    pub shifts: Vec<(i32, i32)>,

    pub synth_route_m: f64,
    pub synth_place_spacing_m: f64,
    pub synth_activity: ActivityKind,
    pub synth_blobs: usize,
    pub synth_blob_radius_px: f64,
    pub synth_peak_per_m: f64,
    pub synth_floor_per_m: f64,
    pub synth_informative: usize,
    pub synth_speed_mps: f64,
    pub synth_speed_variation: f64,
    pub synth_speed_period_m: f64,
    pub synth_noise_hz: f64,
    pub synth_segment_m: f64,
    pub query_speed_scale: f64,
    pub ref_traverse_seed: u64,
    pub query_traverse_seed: u64,

    pub bench_frames: usize,
    pub bench_runs: usize,

    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            ref_events: None,
            query_events: None,
            ref_track: None,
            query_track: None,
            width: SensorGeometry::DAVIS346.width,
            height: SensorGeometry::DAVIS346.height,
            sort_slack_us: 0,
            preprocess: Toggle::Auto,
            hot_pixel_k: 5.0,
            burst_bin_us: 1_000,
            burst_ratio: 10.0,
            regime: RegimeKind::FixedTime,
            tau_us: 1_000_000,
            n_events: 0,
            n_sweep: Vec::new(),
            strategy: Strategy::Variance,
            j: 150,
            sigma: sparse_vpr::select::DEFAULT_SIGMA,
            seq_length: 5,
            window: SequenceWindow::Centered,
            seed: 0,
            trials: 5,
            tolerance_m: 3.0,
            j_grid: vec![10, 50, 150],
            shifts: (-10..=10).map(|du| (du, 0)).collect(),
            synth_route_m: 60.0,
            synth_place_spacing_m: 2.0,
            synth_activity: ActivityKind::Blobs,
            synth_blobs: 8,
            synth_blob_radius_px: 4.0,
            synth_peak_per_m: 20.0,
            synth_floor_per_m: 0.5,
            synth_informative: 10,
            synth_speed_mps: 1.0,
            synth_speed_variation: 0.3,
            synth_speed_period_m: 20.0,
            synth_noise_hz: 0.0,
            synth_segment_m: 0.05,
            query_speed_scale: 1.0,
            ref_traverse_seed: 1,
            query_traverse_seed: 2,
            bench_frames: 500,
            bench_runs: 10,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| HarnessError::config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<Toggle> {
    match value {
        "auto" => Ok(Toggle::Auto),
        "on" | "true" | "yes" | "1" => Ok(Toggle::On),
        "off" | "false" | "no" | "0" => Ok(Toggle::Off),
        _ => Err(HarnessError::config(format!("invalid value '{value}' for '{key}'"))),
    }
}

fn parse_range(key: &str, s: &str) -> Result<Vec<i32>> {
    match s.split_once("..") {
        Some((a, b)) => {
            let (a, b): (i32, i32) = (parse(key, a)?, parse(key, b)?);
            if a > b {
                return Err(HarnessError::config(format!("empty range '{s}' in '{key}'")));
            }
            Ok((a..=b).collect())
        }
        None => Ok(vec![parse(key, s)?]),
    }
}

/// `du:dv` entries separated by commas; either side may be an inclusive
/// range `a..b`, e.g. `-10..10:0`.
fn parse_shifts(key: &str, value: &str) -> Result<Vec<(i32, i32)>> {
    let mut out = Vec::new();
    for entry in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (du, dv) = entry
            .split_once(':')
            .ok_or_else(|| HarnessError::config(format!("shift '{entry}' is not du:dv")))?;
        for u in parse_range(key, du.trim())? {
            for v in parse_range(key, dv.trim())? {
                out.push((u, v));
            }
        }
    }
    Ok(out)
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let k = key.as_str();
        match k {
            "ref_events" => self.ref_events = opt_path(value),
            "query_events" => self.query_events = opt_path(value),
            "ref_track" => self.ref_track = opt_path(value),
            "query_track" => self.query_track = opt_path(value),
            "width" => self.width = parse(k, value)?,
            "height" => self.height = parse(k, value)?,
            "sort_slack_us" => self.sort_slack_us = parse(k, value)?,
            "preprocess" => self.preprocess = parse_bool(k, value)?,
            "hot_pixel_k" => self.hot_pixel_k = parse(k, value)?,
            "burst_bin_us" => self.burst_bin_us = parse(k, value)?,
            "burst_ratio" => self.burst_ratio = parse(k, value)?,
            "regime" => {
                self.regime = match value {
                    "fixed_time" | "time" | "tau" => RegimeKind::FixedTime,
                    "fixed_count" | "count" | "n" => RegimeKind::FixedCount,
                    _ => return Err(HarnessError::config(format!("unknown regime '{value}'"))),
                }
            }
            "tau_us" => self.tau_us = parse(k, value)?,
            "n_events" => self.n_events = parse(k, value)?,
            "n_sweep" => self.n_sweep = parse_list(k, value)?,
            "strategy" => self.strategy = value.parse()?,
            "j" => self.j = parse(k, value)?,
            "sigma" => self.sigma = parse(k, value)?,
            "seq_length" | "l" => self.seq_length = parse(k, value)?,
            "window" => {
                self.window = match value {
                    "centered" => SequenceWindow::Centered,
                    "trailing" => SequenceWindow::Trailing,
                    _ => return Err(HarnessError::config(format!("unknown window '{value}'"))),
                }
            }
            "seed" => self.seed = parse(k, value)?,
            "trials" => self.trials = parse(k, value)?,
            "tolerance_m" => self.tolerance_m = parse(k, value)?,
            "j_grid" => self.j_grid = parse_list(k, value)?,
            "shifts" => self.shifts = parse_shifts(k, value)?,
            "synth_route_m" => self.synth_route_m = parse(k, value)?,
            "synth_place_spacing_m" => self.synth_place_spacing_m = parse(k, value)?,
            "synth_activity" => {
                self.synth_activity = match value {
                    "blobs" => ActivityKind::Blobs,
                    "planted" => ActivityKind::Planted,
                    _ => return Err(HarnessError::config(format!("unknown activity '{value}'"))),
                }
            }
            "synth_blobs" => self.synth_blobs = parse(k, value)?,
            "synth_blob_radius_px" => self.synth_blob_radius_px = parse(k, value)?,
            "synth_peak_per_m" => self.synth_peak_per_m = parse(k, value)?,
            "synth_floor_per_m" => self.synth_floor_per_m = parse(k, value)?,
            "synth_informative" => self.synth_informative = parse(k, value)?,
            "synth_speed_mps" => self.synth_speed_mps = parse(k, value)?,
            "synth_speed_variation" => self.synth_speed_variation = parse(k, value)?,
            "synth_speed_period_m" => self.synth_speed_period_m = parse(k, value)?,
            "synth_noise_hz" => self.synth_noise_hz = parse(k, value)?,
            "synth_segment_m" => self.synth_segment_m = parse(k, value)?,
            "query_speed_scale" => self.query_speed_scale = parse(k, value)?,
            "ref_traverse_seed" => self.ref_traverse_seed = parse(k, value)?,
            "query_traverse_seed" => self.query_traverse_seed = parse(k, value)?,
            "bench_frames" => self.bench_frames = parse(k, value)?,
            "bench_runs" => self.bench_runs = parse(k, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(HarnessError::config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Reads the file (if any), then applies `--key value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| HarnessError::config(format!("cannot read config {}: {e}", p.display())))?;
            cfg.apply_text(&text)?;
        }
        cfg.apply_overrides(overrides)?;
        Ok(cfg)
    }

    pub fn apply_overrides(&mut self, args: &[String]) -> Result<()> {
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let flag = arg
                .strip_prefix("--")
                .ok_or_else(|| HarnessError::config(format!("expected --key, got '{arg}'")))?;
            match flag.split_once('=') {
                Some((k, v)) => self.set(k, v)?,
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| HarnessError::config(format!("missing value for --{flag}")))?;
                    self.set(flag, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<SensorGeometry> {
        SensorGeometry::new(self.width, self.height).map_err(|e| HarnessError::config(e.to_string()))
    }

    pub fn uses_files(&self) -> bool {
        self.ref_events.is_some()
    }

    pub fn preprocess_enabled(&self) -> bool {
        match self.preprocess {
            Toggle::On => true,
            Toggle::Off => false,
            Toggle::Auto => self.uses_files(),
        }
    }

    pub fn regime(&self) -> Regime {
        match self.regime {
            RegimeKind::FixedTime => Regime::FixedTime { tau_us: self.tau_us },
            RegimeKind::FixedCount => Regime::FixedCount { n: self.n_events },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(HarnessError::Config(m));
        let geometry = self.geometry()?;
        if self.trials == 0 {
            return err("trials must be at least 1".into());
        }
        let files = [
            ("ref_events", &self.ref_events),
            ("query_events", &self.query_events),
            ("ref_track", &self.ref_track),
            ("query_track", &self.query_track),
        ];
        let given = files.iter().filter(|(_, p)| p.is_some()).count();
        if given != 0 && given != 4 {
            return err("ref_events, query_events, ref_track and query_track must be given together".into());
        }
        for (key, path) in files {
            if let Some(p) = path {
                if !p.is_file() {
                    return err(format!("{key}: file {} does not exist", p.display()));
                }
            }
        }
        match self.regime {
            RegimeKind::FixedTime if self.tau_us == 0 => return err("tau_us must be positive".into()),
            RegimeKind::FixedCount if self.n_events == 0 => {
                return err("n_events is required for the fixed_count regime".into())
            }
            _ => {}
        }
        if self.seq_length == 0 || self.seq_length % 2 == 0 {
            return err(format!("seq_length must be odd, got {}", self.seq_length));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return err(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.j == 0 || self.j_grid.contains(&0) {
            return err("pixel counts must be positive".into());
        }
        if self.j > geometry.pixel_count() || self.j_grid.iter().any(|&j| j > geometry.pixel_count()) {
            return err(format!("pixel count exceeds the {} sensor pixels", geometry.pixel_count()));
        }
        if !(self.tolerance_m >= 0.0) {
            return err("tolerance_m must be non-negative".into());
        }
        for &(du, dv) in &self.shifts {
            if du.unsigned_abs() >= self.width as u32 || dv.unsigned_abs() >= self.height as u32 {
                return err(format!("shift ({du},{dv}) exceeds the sensor bounds"));
            }
        }
        if !(self.query_speed_scale > 0.0 && self.query_speed_scale.is_finite()) {
            return err("query_speed_scale must be positive".into());
        }
        if self.bench_frames == 0 || self.bench_runs == 0 {
            return err("bench_frames and bench_runs must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ExperimentConfig::default();
        assert_eq!(c.tau_us, 1_000_000);
        assert_eq!((c.j, c.seq_length, c.trials), (150, 5, 5));
        assert_eq!(c.shifts.len(), 21);
        c.validate().unwrap();
    }

    #[test]
    fn file_and_overrides() {
        let mut c = ExperimentConfig::parse_str("# comment\nj = 20\nsigma=3.5  # trailing\nshifts = -1..1:0, 0:2\n").unwrap();
        assert_eq!(c.j, 20);
        assert_eq!(c.sigma, 3.5);
        assert_eq!(c.shifts, vec![(-1, 0), (0, 0), (1, 0), (0, 2)]);
        c.apply_overrides(&["--j".into(), "30".into(), "--tau-us=500".into()]).unwrap();
        assert_eq!((c.j, c.tau_us), (30, 500));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::parse_str("nonsense = 1").is_err());
        assert!(ExperimentConfig::parse_str("j 3").is_err());
        assert!(ExperimentConfig::parse_str("j = x").is_err());
        let mut c = ExperimentConfig::default();
        assert!(c.apply_overrides(&["--j".into()]).is_err());
        c.trials = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn validation_catches_missing_files_and_out_of_bounds_shifts() {
        let c = ExperimentConfig::parse_str(
            "ref_events = /nonexistent/a.csv\nquery_events=/nonexistent/b.csv\nref_track=/x\nquery_track=/y",
        )
        .unwrap();
        assert!(matches!(c.validate(), Err(HarnessError::Config(_))));
        let c = ExperimentConfig::parse_str("width = 10\nheight = 10\nj = 5\nj_grid = 5\nshifts = 10:0").unwrap();
        assert!(c.validate().is_err());
        let c = ExperimentConfig::parse_str("regime = fixed_count").unwrap();
        assert!(c.validate().is_err());
        let c = ExperimentConfig::parse_str("seq_length = 4").unwrap();
        assert!(c.validate().is_err());
    }
}

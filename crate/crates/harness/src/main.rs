use clap::{Args, Parser, Subcommand};
use sparse_vpr::eval::{associate_windows, pr_curve, PoseTrack};
use sparse_vpr::event::{read_windows_csv, write_binary, write_csv, EventStream, FormatTag, Regime, SensorGeometry};
use sparse_vpr::matching::{dense_sad_matrix, describe_series, distance_matrix, sequence_convolve, DistanceMatrix, SequenceWindow};
use sparse_vpr::preprocess::{detect_hot_pixels, remove_bursts, PixelMask};
use sparse_vpr::select::{variance_map, PixelSet};
use sparse_vpr_harness::bench::bench_runtime;
use sparse_vpr_harness::config::{ExperimentConfig, Strategy};
use sparse_vpr_harness::experiments::{experiment_pixel_shift, experiment_selection_compare, experiment_velocity_warp};
use sparse_vpr_harness::pipeline::{build_frames, read_events, read_track, run_pipeline, select_for};
use sparse_vpr_harness::report::{write_atomic, write_json, write_text};
use sparse_vpr_harness::synth::{synth_generate, SynthWorld};
use sparse_vpr_harness::{HarnessError, Result};
use std::fs::File;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "sparse-vpr", version, about = "Event-camera place recognition with sparse pixel subsets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SensorArgs {
    /// Sensor width for CSV input (binary input carries its own geometry).
    #[arg(long, default_value_t = SensorGeometry::DAVIS346.width)]
    width: u16,
    #[arg(long, default_value_t = SensorGeometry::DAVIS346.height)]
    height: u16,
    /// Tolerated timestamp regression in microseconds.
    #[arg(long, default_value_t = 0)]
    sort_slack_us: u64,
}

#[derive(Args, Clone)]
struct FrameArgs {
    /// Fixed time window in microseconds.
    #[arg(long, conflicts_with = "n_events")]
    tau_us: Option<u64>,
    /// Fixed number of events per frame.
    #[arg(long)]
    n_events: Option<usize>,
}

impl FrameArgs {
    fn regime(&self) -> Regime {
        match (self.tau_us, self.n_events) {
            (_, Some(n)) => Regime::FixedCount { n },
            (Some(tau_us), None) => Regime::FixedTime { tau_us },
            (None, None) => Regime::FixedTime { tau_us: 1_000_000 },
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-key overrides: `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Convert events between CSV and the binary format (chosen by extension).
    Convert {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        sensor: SensorArgs,
    },
    /// Mask hot pixels and drop burst bins.
    Preprocess {
        input: PathBuf,
        output: PathBuf,
        /// Where to write the hot-pixel mask (`u,v`).
        #[arg(long)]
        mask_out: Option<PathBuf>,
        #[arg(long, default_value_t = 5.0)]
        hot_pixel_k: f64,
        #[arg(long, default_value_t = 1_000)]
        burst_bin_us: u64,
        #[arg(long, default_value_t = 10.0)]
        burst_ratio: f64,
        #[command(flatten)]
        sensor: SensorArgs,
    },
    /// Choose a pixel subset from reference events.
    Select {
        events: PathBuf,
        output: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value = "variance")]
        strategy: String,
        #[arg(long, default_value_t = 150)]
        j: usize,
        #[arg(long, default_value_t = sparse_vpr::select::DEFAULT_SIGMA)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the per-pixel variance map (`u,v,S`).
        #[arg(long)]
        variance_out: Option<PathBuf>,
        #[command(flatten)]
        frames: FrameArgs,
        #[command(flatten)]
        sensor: SensorArgs,
    },
    /// Distance matrix between query and reference frames.
    Match {
        reference: PathBuf,
        query: PathBuf,
        /// Matrix output; `.csv` for text, anything else for binary.
        output: PathBuf,
        /// Pixel subset; all pixels are compared when omitted.
        #[arg(long)]
        pixels: Option<PathBuf>,
        /// Sequence length (odd); 1 keeps raw frame distances.
        #[arg(long, default_value_t = 5)]
        seq_length: usize,
        #[arg(long, default_value = "centered")]
        window: String,
        #[command(flatten)]
        frames: FrameArgs,
        #[command(flatten)]
        sensor: SensorArgs,
    },
    /// Precision-recall evaluation of a distance matrix.
    Eval {
        matrix: PathBuf,
        #[arg(long)]
        ref_windows: PathBuf,
        #[arg(long)]
        query_windows: PathBuf,
        #[arg(long)]
        ref_track: PathBuf,
        #[arg(long)]
        query_track: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        tolerance_m: f64,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Generate synthetic reference and query traverses.
    Synth(ConfigArgs),
    /// Full pipeline on one configuration.
    Run(ConfigArgs),
    /// Variance-based versus random selection over a pixel-count grid.
    ExpSelect(ConfigArgs),
    /// Matching under artificial pixel offsets.
    ExpShift(ConfigArgs),
    /// Fixed-count versus fixed-time frames under a speed change.
    ExpVelocity(ConfigArgs),
    /// Sparse versus dense matching time.
    Bench(ConfigArgs),
}

fn load_events(path: &Path, sensor: &SensorArgs) -> Result<EventStream> {
    let mut cfg = ExperimentConfig::default();
    cfg.width = sensor.width;
    cfg.height = sensor.height;
    cfg.sort_slack_us = sensor.sort_slack_us;
    read_events(path, &cfg)
}

fn save_events(path: &Path, stream: &EventStream) -> Result<()> {
    write_atomic(path, |w| match FormatTag::from_path(path) {
        FormatTag::Csv => Ok(write_csv(stream, w)?),
        FormatTag::Binary => Ok(write_binary(stream, w)?),
    })
}

fn windows_path(output: &Path, which: &str) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("matrix");
    output.with_file_name(format!("{stem}.{which}_windows.csv"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Convert { input, output, sensor } => {
            let s = load_events(&input, &sensor)?;
            save_events(&output, &s)?;
            log::info!("wrote {} events to {}", s.len(), output.display());
        }
        Command::Preprocess {
            input,
            output,
            mask_out,
            hot_pixel_k,
            burst_bin_us,
            burst_ratio,
            sensor,
        } => {
            let s = load_events(&input, &sensor)?;
            let mask = detect_hot_pixels(&s, hot_pixel_k)?;
            let masked = mask.apply(&s)?;
            let clean = if masked.is_empty() {
                masked
            } else {
                remove_bursts(&masked, burst_bin_us, burst_ratio)?
            };
            save_events(&output, &clean)?;
            if let Some(p) = mask_out {
                write_atomic(&p, |w| Ok(mask.write_csv(w)?))?;
            }
            log::info!("{} hot pixels, {} of {} events kept", mask.len(), clean.len(), s.len());
        }
        Command::Select {
            events,
            output,
            mask,
            strategy,
            j,
            sigma,
            seed,
            variance_out,
            frames,
            sensor,
        } => {
            let s = load_events(&events, &sensor)?;
            let g = s.geometry();
            let mask = match mask {
                Some(p) => PixelMask::read_csv(g, File::open(p)?)?,
                None => PixelMask::empty(g),
            };
            let series = build_frames(&s, frames.regime())?;
            let strategy: Strategy = strategy.parse()?;
            let pixels = select_for(strategy, &series, &mask, j, sigma, seed)?;
            write_atomic(&output, |w| Ok(pixels.write_csv(w)?))?;
            if let Some(p) = variance_out {
                let vmap = variance_map(&series, &mask)?;
                write_atomic(&p, |w| Ok(vmap.write_csv(w)?))?;
            }
        }
        Command::Match {
            reference,
            query,
            output,
            pixels,
            seq_length,
            window,
            frames,
            sensor,
        } => {
            let window = match window.as_str() {
                "centered" => SequenceWindow::Centered,
                "trailing" => SequenceWindow::Trailing,
                other => return Err(HarnessError::config(format!("unknown window '{other}'"))),
            };
            let r = build_frames(&load_events(&reference, &sensor)?, frames.regime())?;
            let q = build_frames(&load_events(&query, &sensor)?, frames.regime())?;
            let raw = match pixels {
                Some(p) => {
                    let set = PixelSet::read_csv(r.geometry(), File::open(p)?)?;
                    distance_matrix(&describe_series(&q, &set)?, &describe_series(&r, &set)?)?
                }
                None => dense_sad_matrix(&q, &r)?,
            };
            let d = if seq_length == 1 {
                raw
            } else {
                sequence_convolve(&raw, seq_length, window)?
            };
            write_atomic(&output, |w| match FormatTag::from_path(&output) {
                FormatTag::Csv => Ok(d.write_csv(w)?),
                FormatTag::Binary => Ok(d.write_binary(w)?),
            })?;
            write_atomic(&windows_path(&output, "ref"), |w| Ok(r.write_windows_csv(w)?))?;
            write_atomic(&windows_path(&output, "query"), |w| Ok(q.write_windows_csv(w)?))?;
        }
        Command::Eval {
            matrix,
            ref_windows,
            query_windows,
            ref_track,
            query_track,
            tolerance_m,
            out_dir,
        } => {
            let d = DistanceMatrix::read_binary(File::open(&matrix)?)?;
            let rw = read_windows_csv(File::open(ref_windows)?)?;
            let qw = read_windows_csv(File::open(query_windows)?)?;
            let rt: PoseTrack = read_track(&ref_track)?;
            let qt: PoseTrack = read_track(&query_track)?;
            let gt = associate_windows(&rt, &qt, &rw, &qw, tolerance_m)?;
            let curve = pr_curve(&d, &gt)?;
            write_atomic(&out_dir.join("pr_curve.csv"), |w| Ok(curve.write_csv(w)?))?;
            write_text(&out_dir.join("summary.json"), &(curve.summary_json() + "\n"))?;
            println!("{}", curve.summary_json());
        }
        Command::Synth(args) => {
            let cfg = args.load()?;
            cfg.validate()?;
            let world = SynthWorld::from_config(&cfg, cfg.seed)?;
            let (rs, rt) = synth_generate(&world, 1.0, cfg.ref_traverse_seed)?;
            let (qs, qt) = synth_generate(&world, cfg.query_speed_scale, cfg.query_traverse_seed)?;
            let dir = &cfg.out_dir;
            save_events(&dir.join("ref_events.evst"), &rs)?;
            save_events(&dir.join("query_events.evst"), &qs)?;
            write_atomic(&dir.join("ref_track.csv"), |w| Ok(rt.write_csv(w)?))?;
            write_atomic(&dir.join("query_track.csv"), |w| Ok(qt.write_csv(w)?))?;
            write_json(&dir.join("world.json"), &world)?;
            log::info!("{} reference and {} query events", rs.len(), qs.len());
        }
        Command::Run(args) => {
            let report = run_pipeline(&args.load()?)?;
            println!("P@100R {:.4}  R@99P {:.4}", report.p_at_100r, report.r_at_99p);
        }
        Command::ExpSelect(args) => {
            let report = experiment_selection_compare(&args.load()?)?;
            report.write()?;
            for p in &report.points {
                println!(
                    "{:<12} J={:<6} P@100R {:.4} ± {:.4}",
                    p.strategy.to_string(),
                    p.j,
                    p.p_at_100r.mean,
                    p.p_at_100r.std
                );
            }
        }
        Command::ExpShift(args) => {
            let report = experiment_pixel_shift(&args.load()?)?;
            report.write()?;
            for p in &report.points {
                println!(
                    "({:>3},{:>3}) sparse {:.4} ± {:.4}  dense {:.4} ± {:.4}",
                    p.du, p.dv, p.sparse_p_at_100r.mean, p.sparse_p_at_100r.std, p.dense_p_at_100r.mean, p.dense_p_at_100r.std
                );
            }
        }
        Command::ExpVelocity(args) => {
            let report = experiment_velocity_warp(&args.load()?)?;
            report.write()?;
            for p in &report.points {
                println!(
                    "N={:<8} fixed-N {:.4} ± {:.4}  fixed-tau {:.4} ± {:.4}",
                    p.n_events,
                    p.fixed_count_p_at_100r.mean,
                    p.fixed_count_p_at_100r.std,
                    p.fixed_time_p_at_100r.mean,
                    p.fixed_time_p_at_100r.std
                );
            }
        }
        Command::Bench(args) => {
            let cfg = args.load()?;
            let report = bench_runtime(&cfg)?;
            write_json(&cfg.out_dir.join("bench.json"), &report)?;
            println!(
                "sparse {:.3e} s  dense {:.3e} s  speedup {:.1}x",
                report.sparse_median_s, report.dense_median_s, report.speedup
            );
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

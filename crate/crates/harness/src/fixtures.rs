//! Standard noiseless synthetic setups used by the experiment checks.

use crate::config::ExperimentConfig;

fn parse(text: &str) -> ExperimentConfig {
    ExperimentConfig::parse_str(text).expect("fixture config parses")
}

/// Query is the reference traverse driven 1.7 times faster through a
/// texture-rich world (many overlapping blobs on a raised floor).
/// `n_events` gives about 60 fixed-count frames per traverse.
pub fn warp() -> ExperimentConfig {
    parse(
        "width = 64
         height = 48
         synth_blobs = 80
         synth_peak_per_m = 20
         synth_floor_per_m = 3
         synth_noise_hz = 0
         ref_traverse_seed = 1
         query_traverse_seed = 1
         query_speed_scale = 1.7
         n_events = 98065
         j = 150
         j_grid = 150
         trials = 5",
    )
}

/// 10 informative pixels among 100 x 100, with independent reference and
/// query traverses.
pub fn planted() -> ExperimentConfig {
    parse(
        "width = 100
         height = 100
         synth_activity = planted
         synth_informative = 10
         synth_peak_per_m = 1000
         synth_floor_per_m = 0.2
         synth_noise_hz = 0
         j = 10
         j_grid = 10
         trials = 5",
    )
}

/// Identical reference and query traverses of a sparse blob world, shifted
/// horizontally by up to 10 pixels.
pub fn shift() -> ExperimentConfig {
    parse(
        "width = 64
         height = 48
         synth_noise_hz = 0
         ref_traverse_seed = 1
         query_traverse_seed = 1
         j = 150
         j_grid = 150
         shifts = -10..10:0
         trials = 5",
    )
}

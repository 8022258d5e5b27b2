//! Event-camera place recognition from a sparse set of informative pixels.

pub mod error;
pub mod eval;
pub mod event;
pub mod matching;
pub mod preprocess;
pub mod select;

pub use error::{Error, Result};
pub use eval::{associate_ground_truth, pr_curve, GroundTruth, PoseTrack, PrCurve};
pub use event::{
    build_frames_fixed_count, build_frames_fixed_time, parse_event_stream, Event, EventFrame, EventStream,
    FrameSeries, Pixel, Polarity, SensorGeometry,
};
pub use matching::{best_match, distance_matrix, sequence_convolve, sparse_descriptor, DistanceMatrix};
pub use preprocess::PixelMask;
pub use select::{select_pixels, select_random_pixels, selection_pmf, variance_map, PixelSet};

use sparse_vpr::eval::{associate_ground_truth, pr_curve, PoseTrack};
use sparse_vpr::event::{build_frames_fixed_time, Event, EventStream, Polarity, SensorGeometry};
use sparse_vpr::matching::{describe_series, distance_matrix, sequence_convolve, SequenceWindow};
use sparse_vpr::preprocess::PixelMask;
use sparse_vpr::select::{select_pixels, selection_pmf, variance_map};

/// A scene whose lit pixel moves one column per 10 ms.
fn sweep(g: SensorGeometry) -> EventStream {
    let mut events = Vec::new();
    for step in 0..g.width as u64 {
        for i in 0..(5 + step % 3) {
            let t = step * 10_000 + i * 100;
            events.push(Event::new(t, step as u16, (step % g.height as u64) as u16, Polarity::Positive));
        }
    }
    EventStream::new(g, events).unwrap()
}

#[test]
fn identical_traverses_match_perfectly() {
    let g = SensorGeometry::new(30, 6).unwrap();
    let s = sweep(g);
    let frames = build_frames_fixed_time(&s, 10_000, None).unwrap().without_partial();
    let vmap = variance_map(&frames, &PixelMask::empty(g)).unwrap();
    let pmf = selection_pmf(&vmap).unwrap();
    let pixels = select_pixels(&pmf, 20, 0.5, 3).unwrap();
    let desc = describe_series(&frames, &pixels).unwrap();
    let d = distance_matrix(&desc, &desc).unwrap();
    for j in 0..d.rows() {
        assert_eq!(d.get(j, j), 0.0);
    }
    let seq = sequence_convolve(&d, 3, SequenceWindow::Centered).unwrap();
    let track = PoseTrack::from_arc_length(vec![(0, 0.0), (300_000, 30.0)]).unwrap();
    let gt = associate_ground_truth(&track, &track, &frames, &frames, 0.5).unwrap();
    let curve = pr_curve(&seq, &gt).unwrap();
    assert_eq!(curve.p_at_100r, 1.0);
    assert_eq!(curve.r_at_99p, 1.0);
}

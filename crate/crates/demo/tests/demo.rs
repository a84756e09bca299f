use mcmr_demo::{demo_spec, mask_pattern, Demo, FlowSource};

#[test]
fn mask_pattern_has_requested_density() {
    let m = mask_pattern(8, 48, 8.0, 3).unwrap();
    assert_eq!(m.len(), 8 * 48);
    for row in m.chunks(48) {
        assert_eq!(row.iter().map(|&b| b as usize).sum::<usize>(), 6);
    }
    assert_eq!(m, mask_pattern(8, 48, 8.0, 3).unwrap());
}

#[test]
fn truth_flows_beat_cgsense_and_zero_flows() {
    let d = Demo::build(6.0, 1).unwrap();
    let (_, init) = d.run(None, 0.0, FlowSource::Zero).unwrap();
    let (_, zero) = d.run(Some(2), 0.0, FlowSource::Zero).unwrap();
    let (x, truth) = d.run(Some(2), 0.0, FlowSource::Truth).unwrap();
    assert!(truth > init + 1.0, "truth {truth} vs init {init}");
    assert!(truth > zero, "truth {truth} vs zero {zero}");
    let s = demo_spec();
    assert_eq!(x.tensor().dims(), [s.n_frames, s.nx, s.ny]);
}

#[test]
fn estimated_flows_run() {
    let d = Demo::build(6.0, 1).unwrap();
    let (_, p) = d.run(Some(1), 0.0, FlowSource::Estimated).unwrap();
    assert!(p.is_finite());
}

#[test]
fn warp_view_of_self_is_identity() {
    let d = Demo::build(6.0, 1).unwrap();
    let (flow, warped) = d.warp(3, 0).unwrap();
    assert!(flow.iter().all(|&v| v == 0.0));
    let truth = d.truth();
    let px = d.nx() * d.ny();
    let frame = &truth[3 * px..4 * px];
    for (a, z) in frame.iter().zip(warped.tensor().data()) {
        assert!((*a as f64 - z.norm()).abs() < 1e-6);
    }
}

#[test]
fn flow_source_names() {
    assert_eq!(FlowSource::parse("truth"), Some(FlowSource::Truth));
    assert_eq!(FlowSource::parse("bogus"), None);
}

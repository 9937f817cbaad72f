mod common;

use common::*;
use ipol::rational::{int, to_f64};
use ipol::{
    build_graph, chain_report, execute_chain, parse_ipol, search_mapping, simulate, validate, Constraints, Frame,
    SimConfig,
};

#[test]
fn verbatim_chain_parses_and_validates() {
    let spec = parse_ipol(&fixture("sobel_verbatim.ipol")).unwrap();
    assert_eq!(spec.operators.len(), 1);
    let graph = build_graph(&spec).unwrap();
    assert_eq!(validate(&graph).errors().count(), 0);
    // Timing still needs a concrete base_calc, analysis does not.
    let report = chain_report(&graph).unwrap();
    assert_eq!(report.operator(1).unwrap().reuse_input_bw, int(746_496_000));
}

#[test]
fn sobel_chain_maps_and_simulates_at_sensor_rate() {
    let graph = build_graph(&chain_fixture("sobel_chain.ipol")).unwrap();
    for (name, platform) in platforms() {
        let mapping = search_mapping(&graph, &platform, &Constraints::default()).unwrap();
        let Some(m) = mapping.mapping() else {
            continue;
        };
        let sim = simulate(&graph, &platform, m, &SimConfig::default()).unwrap();
        let expected = to_f64(&m.predicted_fps).min(30.0);
        assert!((sim.achieved_fps - expected).abs() / expected < 0.01, "{name}: {}", sim.achieved_fps);
    }
}

#[test]
fn random_chains_execute_on_small_frames() {
    use rand::{rngs::StdRng, SeedableRng};
    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..20 {
        let mut spec = random_chain(&mut rng);
        spec.sensors[0].res_x = 9;
        spec.sensors[0].res_y = 7;
        let graph = build_graph(&spec).unwrap();
        let s = &spec.sensors[0];
        let input = Frame::from_fn(s.res_x, s.res_y, s.pixres, |x, y| u64::from((x * 37 + y * 11) % (1 << s.pixres)));
        let frames = execute_chain(&graph, &[(s.id, input)].into_iter().collect()).unwrap();
        for op in &spec.operators {
            let out = &frames[&op.id];
            assert_eq!((out.width, out.height), (9, 7));
            out.check().unwrap();
        }
    }
}

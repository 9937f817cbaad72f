//! Shared helpers for the integration tests: fixture loading and seeded
//! random linear chains.
#![allow(dead_code)]

use ipol::calc::{BaseCalc, Conv2d, Expr, RankStatistic};
use ipol::model::{AreaSpec, ConnectionSpec, OperatorSpec, SensorSpec, SinkSpec};
use ipol::rational::{int, ratio};
use ipol::{parse_ipol, parse_platform, OperatorChainSpec, PlatformSpec};
use rand::rngs::StdRng;
use rand::Rng;
use std::path::PathBuf;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture(name: &str) -> Vec<u8> {
    std::fs::read(fixture_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn chain_fixture(name: &str) -> OperatorChainSpec {
    parse_ipol(&fixture(name)).unwrap()
}

pub fn platforms() -> Vec<(&'static str, PlatformSpec)> {
    ["platform3.xml", "platform_embedded.xml"]
        .into_iter()
        .map(|n| (n, parse_platform(&fixture(n)).unwrap()))
        .collect()
}

fn random_operator(rng: &mut StdRng, id: u64) -> OperatorSpec {
    let local = |x, y| AreaSpec::Local { x, y };
    let (name, input_area, base_calc) = match rng.gen_range(0..4) {
        0 => {
            let k = rng.gen_range(2..=5);
            let expr = Expr::parse(&format!("(min (mul p {k}) (sub 4095 p))")).unwrap();
            ("point", local(1, 1), BaseCalc::Pointwise(expr))
        }
        1 => {
            let (x, y) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
            let kernel = (0..y)
                .map(|_| (0..x).map(|_| int(rng.gen_range(-2..=2))).collect())
                .collect();
            let post_scale = ratio(1, rng.gen_range(1..=4));
            ("conv", local(x, y), BaseCalc::Conv2d(Conv2d { kernel, post_scale }))
        }
        2 => {
            let k = rng.gen_range(2..=4);
            let stat = [RankStatistic::Min, RankStatistic::Max, RankStatistic::Median][rng.gen_range(0..3)];
            ("rank", local(k, k), BaseCalc::Rank(stat))
        }
        _ => ("Sobel", local(3, 3), BaseCalc::sobel()),
    };
    OperatorSpec {
        id,
        name: name.into(),
        input_area,
        output_area: local(1, 1),
        base_calc,
        out_pixres: None,
    }
}

/// Sensor 0 followed by 1..=5 operators, sometimes ending in a sink.
pub fn random_chain(rng: &mut StdRng) -> OperatorChainSpec {
    let (res_x, res_y) = [(64, 48), (320, 240), (640, 480), (1280, 720), (1920, 1080)][rng.gen_range(0..5)];
    let fps = [int(15), int(25), int(30), int(60), ratio(30000, 1001)][rng.gen_range(0..5)].clone();
    let ops = rng.gen_range(1..=5u64);
    let mut spec = OperatorChainSpec {
        sensors: vec![SensorSpec {
            id: 0,
            res_x,
            res_y,
            pixres: rng.gen_range(8..=12),
            fps,
        }],
        operators: (1..=ops).map(|id| random_operator(rng, id)).collect(),
        connections_id: Some(0),
        connections: (0..ops).map(|i| ConnectionSpec { id: i, from: i, to: i + 1 }).collect(),
        ..Default::default()
    };
    if rng.gen_bool(0.5) {
        spec.sinks.push(SinkSpec {
            id: 100,
            name: "display".into(),
        });
        spec.connections.push(ConnectionSpec {
            id: ops,
            from: ops,
            to: 100,
        });
    }
    spec
}

//! Frame-granularity discrete-event simulation of a mapped chain.
//!
//! Each sensor offers frames at `k / fps` and the run stops once `frames`
//! have reached the terminal, so the chain is still loaded when measurement
//! ends. An offer is dropped when any queue it would enter is full.
//! An operator starts when a frame waits on its input, its unit is idle and
//! every output queue has a free slot (reserved at start). A unit serves its
//! operators one at a time, oldest waiting frame first, ties by operator id.
//! Frames crossing between units pass through one shared interconnect,
//! served in FIFO order.

use crate::analysis::{propagate_rates, AnalysisError};
use crate::mapper::Mapping;
use crate::model::{Node, NodeId, PipelineGraph};
use crate::platform::PlatformSpec;
use crate::rational::{to_f64, Rational};
use crate::report::{Report, Value};
use num_traits::Zero;
use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    /// Completions at the terminal after which the run stops.
    pub frames: u64,
    pub queue_depth: usize,
    /// Completions at the terminal excluded from the rate measurement.
    pub warmup: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            frames: 100,
            queue_depth: 2,
            warmup: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation settings: {0}")]
    Config(String),
    #[error("mapping does not fit the chain: {0}")]
    Mapping(String),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorStats {
    pub frames: u64,
    /// Memory traffic implied by the processed frames.
    pub bits_consumed: Rational,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub terminal: NodeId,
    pub achieved_fps: f64,
    pub frames_admitted: u64,
    pub frames_dropped: u64,
    pub frames_completed: u64,
    pub measured_frames: u64,
    /// Seconds from sensor emission to arrival at the terminal.
    pub mean_latency: f64,
    pub max_latency: f64,
    /// Time-averaged number of admitted, not yet completed frames over the
    /// measurement window.
    pub mean_in_flight: f64,
    pub unit_busy: BTreeMap<String, f64>,
    pub interconnect_busy: f64,
    pub operators: BTreeMap<NodeId, OperatorStats>,
    pub event_count: u64,
    pub end_time: f64,
}

impl SimReport {
    pub fn to_report(&self) -> Report {
        let mut r = Report::new("simulation");
        r.push("terminal", Value::text(self.terminal.to_string()));
        r.push("achieved_fps", Value::Float(self.achieved_fps));
        r.push("frames_admitted", Value::text(self.frames_admitted.to_string()));
        r.push("frames_dropped", Value::text(self.frames_dropped.to_string()));
        r.push("frames_completed", Value::text(self.frames_completed.to_string()));
        r.push("measured_frames", Value::text(self.measured_frames.to_string()));
        r.push("mean_latency", Value::Float(self.mean_latency));
        r.push("max_latency", Value::Float(self.max_latency));
        r.push("mean_in_flight", Value::Float(self.mean_in_flight));
        for (unit, busy) in &self.unit_busy {
            r.push(format!("busy.{unit}"), Value::Float(*busy));
        }
        r.push("busy.interconnect", Value::Float(self.interconnect_busy));
        for (op, s) in &self.operators {
            r.push(format!("operator.{op}.frames"), Value::text(s.frames.to_string()));
            r.push(format!("operator.{op}.bits_consumed"), Value::Rational(s.bits_consumed.clone()));
        }
        r.push("event_count", Value::text(self.event_count.to_string()));
        r.push("end_time", Value::Float(self.end_time));
        r
    }
}

#[derive(Debug, Clone, Copy)]
struct Token {
    origin: f64,
}

struct Edge {
    to: NodeId,
    /// Into a sink: consumed on arrival, never full.
    into_sink: bool,
    crossing: bool,
    transfer_time: f64,
    queue: VecDeque<(Token, f64)>,
    reserved: usize,
}

impl Edge {
    fn has_space(&self, depth: usize) -> bool {
        self.into_sink || self.queue.len() + self.reserved < depth
    }
}

struct Op {
    id: NodeId,
    unit: usize,
    service: f64,
    input: usize,
    outputs: Vec<usize>,
    frames: u64,
}

struct Unit {
    current: Option<(usize, Token)>,
    busy: Vec<(f64, f64)>,
}

struct Sensor {
    period: f64,
    outputs: Vec<usize>,
    admitted: u64,
    offers: u64,
    /// Whether its frames reach the terminal.
    feeds_terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    OpDone(usize),
    TransferDone(usize),
    Emit(usize),
}

impl Kind {
    fn class(self) -> u8 {
        match self {
            Kind::OpDone(_) => 0,
            Kind::TransferDone(_) => 1,
            Kind::Emit(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    kind: Kind,
    seq: u64,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.class().cmp(&other.kind.class()))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Sim {
    depth: usize,
    terminal: NodeId,
    edges: Vec<Edge>,
    ops: Vec<Op>,
    units: Vec<Unit>,
    sensors: Vec<Sensor>,
    frames: u64,
    link_fifo: VecDeque<(usize, Token)>,
    link_current: Option<(usize, Token)>,
    link_busy: Vec<(f64, f64)>,
    heap: BinaryHeap<Reverse<Event>>,
    seq: u64,
    now: f64,
    /// `(time, latency)` of every arrival at the terminal.
    completions: Vec<(f64, f64)>,
    /// `(time, frames in flight after the change)`
    in_flight: Vec<(f64, i64)>,
    dropped: u64,
    events: u64,
}

impl Sim {
    fn schedule(&mut self, time: f64, kind: Kind) {
        self.seq += 1;
        self.heap.push(Reverse(Event {
            time,
            kind,
            seq: self.seq,
        }));
    }

    fn flight(&mut self, delta: i64) {
        let current = self.in_flight.last().map_or(0, |&(_, n)| n);
        self.in_flight.push((self.now, current + delta));
    }

    fn arrive_at_terminal(&mut self, token: Token) {
        self.completions.push((self.now, self.now - token.origin));
        self.flight(-1);
    }

    /// Delivers a finished frame onto an edge whose slot is already reserved
    /// (or that leads into a sink).
    fn deliver(&mut self, e: usize, token: Token) {
        let edge = &mut self.edges[e];
        if edge.into_sink {
            let to = edge.to;
            if to == self.terminal {
                self.arrive_at_terminal(token);
            }
            return;
        }
        edge.reserved -= 1;
        edge.queue.push_back((token, self.now));
    }

    fn handle(&mut self, kind: Kind) {
        match kind {
            Kind::Emit(s) => {
                let can = self.sensors[s].outputs.iter().all(|&e| self.edges[e].has_space(self.depth));
                if can {
                    let token = Token { origin: self.now };
                    self.sensors[s].admitted += 1;
                    if self.sensors[s].feeds_terminal {
                        self.flight(1);
                    }
                    let outputs = self.sensors[s].outputs.clone();
                    for e in outputs {
                        if !self.edges[e].into_sink {
                            self.edges[e].reserved += 1;
                        }
                        self.deliver(e, token);
                    }
                    if self.sensors[s].outputs.is_empty() && self.sensors[s].feeds_terminal {
                        self.arrive_at_terminal(token);
                    }
                } else {
                    self.dropped += 1;
                }
                let sensor = &mut self.sensors[s];
                sensor.offers += 1;
                if (self.completions.len() as u64) < self.frames {
                    let next = sensor.offers as f64 * sensor.period;
                    self.schedule(next, Kind::Emit(s));
                }
            }
            Kind::OpDone(o) => {
                let unit = self.ops[o].unit;
                let (_, token) = self.units[unit].current.take().expect("completion of a running operator");
                self.ops[o].frames += 1;
                if self.ops[o].id == self.terminal {
                    self.arrive_at_terminal(token);
                }
                let outputs = self.ops[o].outputs.clone();
                for e in outputs {
                    if self.edges[e].crossing {
                        self.link_fifo.push_back((e, token));
                    } else {
                        self.deliver(e, token);
                    }
                }
            }
            Kind::TransferDone(e) => {
                let (_, token) = self.link_current.take().expect("completion of a running transfer");
                self.deliver(e, token);
            }
        }
    }

    fn dispatch(&mut self) {
        loop {
            let mut progressed = false;
            for u in 0..self.units.len() {
                if self.units[u].current.is_some() {
                    continue;
                }
                let mut pick: Option<(f64, NodeId, usize)> = None;
                for (i, op) in self.ops.iter().enumerate() {
                    if op.unit != u {
                        continue;
                    }
                    let Some(&(_, arrived)) = self.edges[op.input].queue.front() else {
                        continue;
                    };
                    if !op.outputs.iter().all(|&e| self.edges[e].has_space(self.depth)) {
                        continue;
                    }
                    let better = match pick {
                        None => true,
                        Some((t, id, _)) => arrived.total_cmp(&t).then(op.id.cmp(&id)) == Ordering::Less,
                    };
                    if better {
                        pick = Some((arrived, op.id, i));
                    }
                }
                if let Some((_, _, i)) = pick {
                    let (token, _) = self.edges[self.ops[i].input].queue.pop_front().unwrap();
                    for k in 0..self.ops[i].outputs.len() {
                        let e = self.ops[i].outputs[k];
                        if !self.edges[e].into_sink {
                            self.edges[e].reserved += 1;
                        }
                    }
                    let end = self.now + self.ops[i].service;
                    self.units[u].current = Some((i, token));
                    self.units[u].busy.push((self.now, end));
                    self.schedule(end, Kind::OpDone(i));
                    progressed = true;
                }
            }
            if self.link_current.is_none() {
                if let Some((e, token)) = self.link_fifo.pop_front() {
                    let end = self.now + self.edges[e].transfer_time;
                    self.link_current = Some((e, token));
                    self.link_busy.push((self.now, end));
                    self.schedule(end, Kind::TransferDone(e));
                    progressed = true;
                }
            }
            if !progressed {
                return;
            }
        }
    }

    fn run(&mut self) {
        while (self.completions.len() as u64) < self.frames {
            let Some(Reverse(event)) = self.heap.pop() else { break };
            self.now = event.time;
            self.events += 1;
            self.handle(event.kind);
            self.dispatch();
        }
    }
}

fn busy_fraction(intervals: &[(f64, f64)], start: f64, end: f64) -> f64 {
    if end <= start {
        return 0.0;
    }
    let busy: f64 = intervals
        .iter()
        .map(|&(a, b)| (b.min(end) - a.max(start)).max(0.0))
        .sum();
    busy / (end - start)
}

/// Simulates `mapping` on `platform` and measures throughput at the
/// terminal node.
pub fn simulate(
    graph: &PipelineGraph,
    platform: &PlatformSpec,
    mapping: &Mapping,
    config: &SimConfig,
) -> Result<SimReport, SimError> {
    if config.queue_depth == 0 {
        return Err(SimError::Config("queue depth must be at least 1".into()));
    }
    if config.frames < config.warmup + 2 {
        return Err(SimError::Config(format!(
            "{} frames leave fewer than two measured frames after a warmup of {}",
            config.frames, config.warmup
        )));
    }
    let reachable = graph.reachable();
    let terminal = graph
        .terminal()
        .ok_or_else(|| SimError::Mapping("chain has no terminal node".into()))?;

    let mapped: BTreeSet<NodeId> = mapping.assignment.keys().copied().collect();
    let expected: BTreeSet<NodeId> = graph.operators().map(|o| o.id).filter(|id| reachable.contains(id)).collect();
    if mapped != expected {
        return Err(SimError::Mapping(format!(
            "assignment covers operators {mapped:?}, the chain has {expected:?}"
        )));
    }
    let unit_index: BTreeMap<&str, usize> = platform.units.iter().enumerate().map(|(i, u)| (u.id.as_str(), i)).collect();

    let rates = propagate_rates(graph)?;
    let mut edges = Vec::new();
    let mut edge_index = BTreeMap::new();
    for e in graph.edges().iter().filter(|e| reachable.contains(&e.from)) {
        let into_sink = matches!(graph.node(e.to), Some(Node::Sink(_)));
        let crossing = match (mapping.assignment.get(&e.from), mapping.assignment.get(&e.to)) {
            (Some(a), Some(b)) => a != b && mapping.honor_interconnect,
            _ => false,
        };
        let bits = rates.edge_streams.get(&e.id).map(|s| s.frame_bits()).unwrap_or_else(Rational::zero);
        edge_index.insert(e.id, edges.len());
        edges.push(Edge {
            to: e.to,
            into_sink,
            crossing,
            transfer_time: to_f64(&(bits / &platform.interconnect_bw)),
            queue: VecDeque::new(),
            reserved: 0,
        });
    }

    let mut ops = Vec::new();
    for op in graph.operators().filter(|o| reachable.contains(&o.id)) {
        let unit_id = &mapping.assignment[&op.id];
        let unit = *unit_index
            .get(unit_id.as_str())
            .ok_or_else(|| SimError::Mapping(format!("unknown unit `{unit_id}`")))?;
        let service = mapping
            .frame_times
            .get(&op.id)
            .ok_or_else(|| SimError::Mapping(format!("no frame time for operator {}", op.id)))?;
        let input = graph.inputs(op.id).next().expect("reachable operators have a producer");
        ops.push(Op {
            id: op.id,
            unit,
            service: to_f64(service),
            input: edge_index[&input.id],
            outputs: graph.outputs(op.id).map(|e| edge_index[&e.id]).collect(),
            frames: 0,
        });
    }

    // Sensors whose frames reach the terminal contribute to frames in flight.
    let ancestors = ancestors_of(graph, terminal);
    let sensors: Vec<Sensor> = graph
        .sensors()
        .map(|s| Sensor {
            period: 1.0 / to_f64(&s.fps),
            outputs: graph.outputs(s.id).map(|e| edge_index[&e.id]).collect(),
            admitted: 0,
            offers: 0,
            feeds_terminal: ancestors.contains(&s.id),
        })
        .collect();

    let mut sim = Sim {
        depth: config.queue_depth,
        terminal,
        edges,
        ops,
        units: platform
            .units
            .iter()
            .map(|_| Unit {
                current: None,
                busy: Vec::new(),
            })
            .collect(),
        sensors,
        frames: config.frames,
        link_fifo: VecDeque::new(),
        link_current: None,
        link_busy: Vec::new(),
        heap: BinaryHeap::new(),
        seq: 0,
        now: 0.0,
        completions: Vec::new(),
        in_flight: Vec::new(),
        dropped: 0,
        events: 0,
    };
    for s in 0..sim.sensors.len() {
        sim.schedule(0.0, Kind::Emit(s));
    }
    sim.run();

    let measured = &sim.completions[(config.warmup as usize).min(sim.completions.len())..];
    let (start, end) = match (measured.first(), measured.last()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => (0.0, 0.0),
    };
    let achieved_fps = if measured.len() >= 2 && end > start {
        (measured.len() - 1) as f64 / (end - start)
    } else {
        0.0
    };
    let latencies: Vec<f64> = measured.iter().map(|c| c.1).collect();
    let mean_latency = if latencies.is_empty() {
        0.0
    } else {
        latencies.iter().sum::<f64>() / latencies.len() as f64
    };
    let max_latency = latencies.iter().copied().fold(0.0, f64::max);

    let operators = sim
        .ops
        .iter()
        .map(|op| {
            let bits = mapping.io_bits_per_frame.get(&op.id).cloned().unwrap_or_else(Rational::zero);
            (
                op.id,
                OperatorStats {
                    frames: op.frames,
                    bits_consumed: bits * Rational::from_integer(op.frames.into()),
                },
            )
        })
        .collect();

    Ok(SimReport {
        terminal,
        achieved_fps,
        frames_admitted: sim.sensors.iter().map(|s| s.admitted).sum(),
        frames_dropped: sim.dropped,
        frames_completed: sim.completions.len() as u64,
        measured_frames: measured.len() as u64,
        mean_latency,
        max_latency,
        mean_in_flight: time_average(&sim.in_flight, start, end),
        unit_busy: platform
            .units
            .iter()
            .zip(&sim.units)
            .filter(|(u, _)| mapping.assignment.values().any(|a| *a == u.id))
            .map(|(u, s)| (u.id.clone(), busy_fraction(&s.busy, start, end)))
            .collect(),
        interconnect_busy: busy_fraction(&sim.link_busy, start, end),
        operators,
        event_count: sim.events,
        end_time: sim.now,
    })
}

/// Average of a step function over `[start, end]`.
fn time_average(steps: &[(f64, i64)], start: f64, end: f64) -> f64 {
    if end <= start {
        return 0.0;
    }
    let mut area = 0.0;
    for (i, &(t, n)) in steps.iter().enumerate() {
        let next = steps.get(i + 1).map_or(end, |s| s.0);
        let (a, b) = (t.max(start), next.min(end));
        if b > a {
            area += n as f64 * (b - a);
        }
    }
    area / (end - start)
}

fn ancestors_of(graph: &PipelineGraph, node: NodeId) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::from([node]);
    let mut stack = vec![node];
    while let Some(id) = stack.pop() {
        for e in graph.inputs(id) {
            if seen.insert(e.from) {
                stack.push(e.from);
            }
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapper::{evaluate_mapping, Constraints};
    use crate::model::fixtures::*;
    use crate::model::{build_graph, OperatorChainSpec, SinkSpec};
    use crate::platform::fixtures::{fpga, unit};
    use crate::platform::UnitKind;
    use crate::rational::{int, parse_rational};

    fn platform(clock: &str) -> PlatformSpec {
        PlatformSpec {
            units: vec![
                unit("cpu0", UnitKind::Cpu, clock, 1, "1e15", true, "1"),
                unit("cpu1", UnitKind::Cpu, clock, 1, "1e15", true, "1"),
                fpga(),
            ],
            interconnect_bw: parse_rational("1e15").unwrap(),
        }
    }

    fn run(spec: &OperatorChainSpec, p: &PlatformSpec, assign: &[(NodeId, &str)], config: SimConfig) -> (Mapping, SimReport) {
        let graph = build_graph(spec).unwrap();
        let assignment = assign.iter().map(|&(o, u)| (o, u.to_string())).collect();
        let mapping = evaluate_mapping(&graph, p, &assignment, &Constraints::default()).unwrap();
        let report = simulate(&graph, p, &mapping, &config).unwrap();
        (mapping, report)
    }

    #[test]
    fn fast_unit_tracks_sensor_rate() {
        let (_, r) = run(&sobel_chain(), &platform("1e12"), &[(1, "cpu0")], SimConfig::default());
        assert!((r.achieved_fps - 30.0).abs() < 1e-6, "{}", r.achieved_fps);
        assert_eq!(r.frames_dropped, 0);
        assert_eq!(r.frames_completed, 100);
        assert_eq!(r.measured_frames, 95);
        assert_eq!(r.operators[&1].frames, 100);
    }

    #[test]
    fn slow_unit_sets_the_rate() {
        // 1920*1080*20 ops at 1.5e9 ops/s: 0.027648 s per frame
        let (m, r) = run(&sobel_chain(), &platform("1.5e9"), &[(1, "cpu0")], SimConfig::default());
        let predicted = to_f64(&m.predicted_fps);
        assert!(predicted < 30.0);
        assert!((r.achieved_fps - predicted).abs() / predicted < 1e-9, "{} vs {predicted}", r.achieved_fps);
        assert!(r.frames_dropped > 0);
        assert!((r.unit_busy["cpu0"] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn shared_unit_serializes() {
        let mut spec = sobel_chain();
        spec.operators.push(sobel(2));
        spec.connections.push(con(1, 1, 2));
        let p = platform("1.5e9");
        let (m, r) = run(&spec, &p, &[(1, "cpu0"), (2, "cpu0")], SimConfig::default());
        let predicted = to_f64(&m.predicted_fps);
        assert!((r.achieved_fps - predicted).abs() / predicted < 0.01, "{} vs {predicted}", r.achieved_fps);
        let (m2, r2) = run(&spec, &p, &[(1, "cpu0"), (2, "cpu1")], SimConfig::default());
        assert!(to_f64(&m2.predicted_fps) > predicted);
        assert!((r2.achieved_fps - 30f64.min(to_f64(&m2.predicted_fps))).abs() < 0.01 * 30.0);
    }

    #[test]
    fn sink_terminal_and_littles_law() {
        let mut spec = sobel_chain();
        spec.sinks.push(SinkSpec { id: 5, name: "out".into() });
        spec.connections.push(con(1, 1, 5));
        let (_, r) = run(&spec, &platform("1.2e9"), &[(1, "cpu1")], SimConfig::default());
        assert_eq!(r.terminal, 5);
        let little = r.achieved_fps * r.mean_latency;
        assert!((r.mean_in_flight - little).abs() / little < 0.05, "{} vs {little}", r.mean_in_flight);
    }

    #[test]
    fn interconnect_limits_split_mappings() {
        let mut spec = sobel_chain();
        spec.operators.push(sobel(2));
        spec.connections.push(con(1, 1, 2));
        let mut p = platform("1e12");
        p.interconnect_bw = int(1920 * 1080 * 12 * 12);
        let (m, r) = run(&spec, &p, &[(1, "cpu0"), (2, "cpu1")], SimConfig::default());
        assert_eq!(m.predicted_fps, int(12));
        assert!((r.achieved_fps - 12.0).abs() < 0.12, "{}", r.achieved_fps);
        assert!(r.interconnect_busy > 0.99);
    }

    #[test]
    fn deterministic() {
        let mut spec = sobel_chain();
        spec.operators.push(sobel(2));
        spec.connections.push(con(1, 1, 2));
        let p = platform("2e9");
        let a = run(&spec, &p, &[(1, "cpu0"), (2, "fpga0")], SimConfig::default()).1;
        let b = run(&spec, &p, &[(1, "cpu0"), (2, "fpga0")], SimConfig::default()).1;
        assert_eq!(a, b);
    }

    #[test]
    fn config_errors() {
        let graph = build_graph(&sobel_chain()).unwrap();
        let p = platform("1e12");
        let assignment = [(1, "cpu0".to_string())].into_iter().collect();
        let m = evaluate_mapping(&graph, &p, &assignment, &Constraints::default()).unwrap();
        let bad = |c: SimConfig| matches!(simulate(&graph, &p, &m, &c), Err(SimError::Config(_)));
        assert!(bad(SimConfig { frames: 3, ..SimConfig::default() }));
        assert!(bad(SimConfig { queue_depth: 0, ..SimConfig::default() }));
        let mut other = m.clone();
        other.assignment.insert(9, "cpu0".into());
        assert!(matches!(
            simulate(&graph, &p, &other, &SimConfig::default()),
            Err(SimError::Mapping(_))
        ));
    }

    #[test]
    fn sensor_only_chain() {
        let spec = OperatorChainSpec {
            sensors: vec![sensor(0)],
            ..Default::default()
        };
        let graph = build_graph(&spec).unwrap();
        let p = platform("1e9");
        let m = evaluate_mapping(&graph, &p, &BTreeMap::new(), &Constraints::default()).unwrap();
        let r = simulate(&graph, &p, &m, &SimConfig::default()).unwrap();
        assert!((r.achieved_fps - 30.0).abs() < 1e-6);
        assert_eq!(r.terminal, 0);
    }
}

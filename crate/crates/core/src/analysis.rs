//! Static analysis of a validated chain: stream rates on every edge, per-operator
//! memory bandwidth and buffer requirements, and pipeline-stage classification.
//!
//! All quantities are exact rationals in bits, bits/s, pixels/s or frames/s.
//! Local operators keep the frame size (replicate borders); global operators
//! emit their declared output area once per input frame.

use crate::calc::BaseCalc;
use crate::model::{AreaSpec, Node, NodeId, OperatorSpec, PipelineGraph, SensorSpec};
use crate::rational::{format_rational, int, parse_rational, round_half_away, Rational};
use crate::report::{Report, ReportError, Value};
use num_traits::Zero;
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamSpec {
    pub width: u32,
    pub height: u32,
    pub pixres: u32,
    pub fps: Rational,
    pub pixel_rate: Rational,
    pub bit_rate: Rational,
}

impl StreamSpec {
    pub fn new(width: u32, height: u32, pixres: u32, fps: Rational) -> Self {
        let pixel_rate = int(u64::from(width) * u64::from(height)) * &fps;
        let bit_rate = &pixel_rate * int(pixres);
        StreamSpec {
            width,
            height,
            pixres,
            fps,
            pixel_rate,
            bit_rate,
        }
    }

    pub fn frame_pixels(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }

    pub fn frame_bits(&self) -> Rational {
        int(self.frame_pixels()) * int(self.pixres)
    }

    /// Same geometry at a different frame rate.
    pub fn with_fps(&self, fps: Rational) -> Self {
        StreamSpec::new(self.width, self.height, self.pixres, fps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OperatorClass {
    Point,
    Local,
    Global,
    Complex,
}

impl OperatorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            OperatorClass::Point => "point",
            OperatorClass::Local => "local",
            OperatorClass::Global => "global",
            OperatorClass::Complex => "complex",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "point" => Some(OperatorClass::Point),
            "local" => Some(OperatorClass::Local),
            "global" => Some(OperatorClass::Global),
            "complex" => Some(OperatorClass::Complex),
            _ => None,
        }
    }
}

impl fmt::Display for OperatorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisError {
    #[error("operator {0} is global but its output_area has no concrete dimensions")]
    Underspecified(NodeId),
    #[error("operator {0} has more than one producer")]
    MultipleProducers(NodeId),
}

pub fn sensor_stream(sensor: &SensorSpec) -> StreamSpec {
    StreamSpec::new(sensor.res_x, sensor.res_y, sensor.pixres, sensor.fps.clone())
}

pub fn classify(op: &OperatorSpec) -> OperatorClass {
    if let BaseCalc::Composite(c) = &op.base_calc {
        if c.stages.iter().any(BaseCalc::contains_global) {
            return OperatorClass::Complex;
        }
    }
    if op.input_area.is_global() || matches!(op.base_calc, BaseCalc::Global(_)) {
        return OperatorClass::Global;
    }
    match op.input_area {
        AreaSpec::Local { x: 1, y: 1 } => OperatorClass::Point,
        _ => OperatorClass::Local,
    }
}

/// The stream an operator emits for the given input.
pub fn output_stream(op: &OperatorSpec, input: &StreamSpec) -> Result<StreamSpec, AnalysisError> {
    let pixres = op.out_pixres.unwrap_or(input.pixres);
    if op.is_global() {
        match op.output_area {
            AreaSpec::Local { x, y } => Ok(StreamSpec::new(x, y, pixres, input.fps.clone())),
            AreaSpec::Global => Err(AnalysisError::Underspecified(op.id)),
        }
    } else {
        Ok(StreamSpec::new(input.width, input.height, pixres, input.fps.clone()))
    }
}

/// Output stream of every reachable node, plus the stream carried by each edge.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RateMap {
    pub node_streams: BTreeMap<NodeId, StreamSpec>,
    pub edge_streams: BTreeMap<u64, StreamSpec>,
}

impl RateMap {
    /// Input stream of a node with a single producer.
    pub fn input_of(&self, graph: &PipelineGraph, node: NodeId) -> Option<&StreamSpec> {
        let edge = graph.inputs(node).next()?;
        self.edge_streams.get(&edge.id)
    }
}

pub fn propagate_rates(graph: &PipelineGraph) -> Result<RateMap, AnalysisError> {
    let mut rates = RateMap::default();
    for &id in graph.topo_order() {
        let stream = match graph.node(id).expect("topo order lists graph nodes") {
            Node::Sensor(s) => Some(sensor_stream(s)),
            Node::Operator(op) => {
                let mut inputs = graph.inputs(id);
                let first = inputs.next();
                if inputs.next().is_some() {
                    return Err(AnalysisError::MultipleProducers(id));
                }
                match first.and_then(|e| rates.edge_streams.get(&e.id)) {
                    Some(input) => Some(output_stream(op, input)?),
                    None => None,
                }
            }
            Node::Sink(_) => graph
                .inputs(id)
                .next()
                .and_then(|e| rates.edge_streams.get(&e.id))
                .cloned(),
        };
        if let Some(stream) = stream {
            for e in graph.outputs(id) {
                rates.edge_streams.insert(e.id, stream.clone());
            }
            rates.node_streams.insert(id, stream);
        }
    }
    Ok(rates)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandwidthReport {
    pub operator_id: NodeId,
    pub naive_input_bw: Rational,
    pub reuse_input_bw: Rational,
    pub output_bw: Rational,
    pub line_buffer_bits: Rational,
    pub window_buffer_bits: Rational,
    pub class: OperatorClass,
}

pub fn bandwidth_requirements(op: &OperatorSpec, input: &StreamSpec) -> Result<BandwidthReport, AnalysisError> {
    let output = output_stream(op, input)?;
    let pixres = int(input.pixres);
    let class = classify(op);
    let (naive, reuse, line_buffer, window_buffer) = match (op.is_global(), op.input_area) {
        (false, AreaSpec::Local { x, y }) => {
            let taps = int(u64::from(x) * u64::from(y));
            (
                &input.pixel_rate * &taps * &pixres,
                input.bit_rate.clone(),
                int(u64::from(y) - 1) * int(input.width) * &pixres,
                taps * &pixres,
            )
        }
        _ => {
            let frame = input.frame_bits();
            (input.bit_rate.clone(), input.bit_rate.clone(), frame.clone(), frame)
        }
    };
    Ok(BandwidthReport {
        operator_id: op.id,
        naive_input_bw: naive,
        reuse_input_bw: reuse,
        output_bw: output.bit_rate,
        line_buffer_bits: line_buffer,
        window_buffer_bits: window_buffer,
        class,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Totals {
    pub naive_input_bw: Rational,
    pub reuse_input_bw: Rational,
    pub output_bw: Rational,
    pub line_buffer_bits: Rational,
    pub window_buffer_bits: Rational,
}

impl Totals {
    fn of(reports: &[BandwidthReport]) -> Self {
        let mut t = Totals::default();
        for r in reports {
            t.naive_input_bw += &r.naive_input_bw;
            t.reuse_input_bw += &r.reuse_input_bw;
            t.output_bw += &r.output_bw;
            t.line_buffer_bits += &r.line_buffer_bits;
            t.window_buffer_bits += &r.window_buffer_bits;
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalysisReport {
    pub node_streams: BTreeMap<NodeId, StreamSpec>,
    pub edge_streams: BTreeMap<u64, StreamSpec>,
    /// Reachable operators in topological order.
    pub operators: Vec<BandwidthReport>,
    pub totals: Totals,
    /// Operator with the largest buffered traffic (reuse input + output); ties go to the smaller id.
    pub bottleneck_operator_id: Option<NodeId>,
}

pub fn chain_report(graph: &PipelineGraph) -> Result<AnalysisReport, AnalysisError> {
    let rates = propagate_rates(graph)?;
    let mut operators = Vec::new();
    for op in graph.operators() {
        if let Some(input) = rates.input_of(graph, op.id) {
            operators.push(bandwidth_requirements(op, input)?);
        }
    }
    let mut bottleneck: Option<(&BandwidthReport, Rational)> = None;
    for r in &operators {
        let load = &r.reuse_input_bw + &r.output_bw;
        let better = match &bottleneck {
            None => true,
            Some((best, best_load)) => load > *best_load || (load == *best_load && r.operator_id < best.operator_id),
        };
        if better {
            bottleneck = Some((r, load));
        }
    }
    let bottleneck_operator_id = bottleneck.map(|(r, _)| r.operator_id);
    Ok(AnalysisReport {
        totals: Totals::of(&operators),
        node_streams: rates.node_streams,
        edge_streams: rates.edge_streams,
        operators,
        bottleneck_operator_id,
    })
}

impl AnalysisReport {
    pub fn operator(&self, id: NodeId) -> Option<&BandwidthReport> {
        self.operators.iter().find(|r| r.operator_id == id)
    }

    pub fn to_report(&self) -> Report {
        let mut report = Report::new("analysis");
        report.push("bottleneck_metric", Value::text("reuse_input_bw+output_bw"));
        for (id, s) in &self.node_streams {
            push_stream(&mut report, &format!("node.{id}"), s);
        }
        for (id, s) in &self.edge_streams {
            push_stream(&mut report, &format!("edge.{id}"), s);
        }
        for r in &self.operators {
            let p = format!("operator.{}", r.operator_id);
            report.push(format!("{p}.class"), Value::text(r.class.as_str()));
            report.push(format!("{p}.naive_input_bw"), Value::Rational(r.naive_input_bw.clone()));
            report.push(format!("{p}.reuse_input_bw"), Value::Rational(r.reuse_input_bw.clone()));
            report.push(format!("{p}.output_bw"), Value::Rational(r.output_bw.clone()));
            report.push(format!("{p}.line_buffer_bits"), Value::Rational(r.line_buffer_bits.clone()));
            report.push(format!("{p}.window_buffer_bits"), Value::Rational(r.window_buffer_bits.clone()));
        }
        let t = &self.totals;
        report.push("total.naive_input_bw", Value::Rational(t.naive_input_bw.clone()));
        report.push("total.reuse_input_bw", Value::Rational(t.reuse_input_bw.clone()));
        report.push("total.output_bw", Value::Rational(t.output_bw.clone()));
        report.push("total.line_buffer_bits", Value::Rational(t.line_buffer_bits.clone()));
        report.push("total.window_buffer_bits", Value::Rational(t.window_buffer_bits.clone()));
        report.push(
            "bottleneck_operator_id",
            match self.bottleneck_operator_id {
                Some(id) => Value::text(id.to_string()),
                None => Value::text("none"),
            },
        );
        report
    }

    /// Reads back a report produced by [`AnalysisReport::to_report`].
    pub fn from_report(report: &Report) -> Result<Self, ReportError> {
        let rational = |key: &str| -> Result<Rational, ReportError> {
            let text = report.require(key)?;
            parse_rational(text).map_err(|_| ReportError::BadValue(key.to_string()))
        };
        let uint = |key: &str| -> Result<u32, ReportError> {
            report
                .require(key)?
                .parse()
                .map_err(|_| ReportError::BadValue(key.to_string()))
        };
        let stream = |prefix: &str| -> Result<StreamSpec, ReportError> {
            let s = StreamSpec::new(
                uint(&format!("{prefix}.width"))?,
                uint(&format!("{prefix}.height"))?,
                uint(&format!("{prefix}.pixres"))?,
                rational(&format!("{prefix}.fps"))?,
            );
            if s.pixel_rate != rational(&format!("{prefix}.pixel_rate"))?
                || s.bit_rate != rational(&format!("{prefix}.bit_rate"))?
            {
                return Err(ReportError::BadValue(format!("{prefix}.bit_rate")));
            }
            Ok(s)
        };
        let ids = |prefix: &str, suffix: &str| -> Vec<u64> {
            report
                .keys()
                .filter_map(|k| k.strip_prefix(prefix)?.strip_suffix(suffix)?.parse().ok())
                .collect()
        };

        let mut node_streams = BTreeMap::new();
        for id in ids("node.", ".width") {
            node_streams.insert(id, stream(&format!("node.{id}"))?);
        }
        let mut edge_streams = BTreeMap::new();
        for id in ids("edge.", ".width") {
            edge_streams.insert(id, stream(&format!("edge.{id}"))?);
        }
        let mut operators = Vec::new();
        for id in ids("operator.", ".class") {
            let p = format!("operator.{id}");
            let class_key = format!("{p}.class");
            let class = OperatorClass::from_name(report.require(&class_key)?)
                .ok_or(ReportError::BadValue(class_key))?;
            operators.push(BandwidthReport {
                operator_id: id,
                naive_input_bw: rational(&format!("{p}.naive_input_bw"))?,
                reuse_input_bw: rational(&format!("{p}.reuse_input_bw"))?,
                output_bw: rational(&format!("{p}.output_bw"))?,
                line_buffer_bits: rational(&format!("{p}.line_buffer_bits"))?,
                window_buffer_bits: rational(&format!("{p}.window_buffer_bits"))?,
                class,
            });
        }
        let bottleneck_operator_id = match report.require("bottleneck_operator_id")? {
            "none" => None,
            text => Some(
                text.parse()
                    .map_err(|_| ReportError::BadValue("bottleneck_operator_id".into()))?,
            ),
        };
        Ok(AnalysisReport {
            node_streams,
            edge_streams,
            totals: Totals {
                naive_input_bw: rational("total.naive_input_bw")?,
                reuse_input_bw: rational("total.reuse_input_bw")?,
                output_bw: rational("total.output_bw")?,
                line_buffer_bits: rational("total.line_buffer_bits")?,
                window_buffer_bits: rational("total.window_buffer_bits")?,
            },
            operators,
            bottleneck_operator_id,
        })
    }

    /// Human-readable rendering; rates in Mbit/s (1 Mbit = 2^20 bits), 3 decimals.
    pub fn render_human(&self) -> String {
        let mut out = String::new();
        for (id, s) in &self.node_streams {
            out.push_str(&format!(
                "node {id}: {}x{} @ {} fps, {} bit/px, {} px/s, {}\n",
                s.width,
                s.height,
                format_rational(&s.fps),
                s.pixres,
                format_rational(&s.pixel_rate),
                mbits(&s.bit_rate)
            ));
        }
        for r in &self.operators {
            out.push_str(&format!(
                "operator {} ({}): naive in {}, reuse in {}, out {}, line buffer {} bits, window buffer {} bits\n",
                r.operator_id,
                r.class,
                mbits(&r.naive_input_bw),
                mbits(&r.reuse_input_bw),
                mbits(&r.output_bw),
                format_rational(&r.line_buffer_bits),
                format_rational(&r.window_buffer_bits),
            ));
        }
        out.push_str(&format!(
            "total: naive in {}, reuse in {}, out {}\n",
            mbits(&self.totals.naive_input_bw),
            mbits(&self.totals.reuse_input_bw),
            mbits(&self.totals.output_bw)
        ));
        match self.bottleneck_operator_id {
            Some(id) => out.push_str(&format!("bottleneck: operator {id} (reuse in + out)\n")),
            None => out.push_str("bottleneck: none\n"),
        }
        out
    }
}

fn push_stream(report: &mut Report, prefix: &str, s: &StreamSpec) {
    report.push(format!("{prefix}.width"), Value::text(s.width.to_string()));
    report.push(format!("{prefix}.height"), Value::text(s.height.to_string()));
    report.push(format!("{prefix}.pixres"), Value::text(s.pixres.to_string()));
    report.push(format!("{prefix}.fps"), Value::Rational(s.fps.clone()));
    report.push(format!("{prefix}.pixel_rate"), Value::Rational(s.pixel_rate.clone()));
    report.push(format!("{prefix}.bit_rate"), Value::Rational(s.bit_rate.clone()));
}

/// `bits/s` as Mbit/s with binary prefix, rounded half away from zero to 3 decimals.
pub fn mbits(bits_per_second: &Rational) -> String {
    let milli = round_half_away(&(bits_per_second * int(1000) / int(1u64 << 20)));
    let negative = milli < Zero::zero();
    let digits = format!("{:0>4}", milli.magnitude());
    let (whole, frac) = digits.split_at(digits.len() - 3);
    format!("{}{whole}.{frac} Mbit/s", if negative { "-" } else { "" })
}

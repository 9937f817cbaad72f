//! Performance model of heterogeneous processing units.
//!
//! Per-kind cost weights are fixed conventions of this tool: a conv2d tap is a
//! multiply and an add, a rank filter is a sorting network of
//! `k * ceil(log2 k)` compare-exchanges, a Hough transform votes 180 times
//! (1 degree steps) for every input pixel.

use crate::analysis::{bandwidth_requirements, classify, AnalysisError, OperatorClass, StreamSpec};
use crate::calc::{BaseCalc, GlobalOp};
use crate::model::{AreaSpec, NodeId, OperatorSpec};
use crate::rational::{ceil_log2, int, Rational};
use std::fmt;

pub const HOUGH_VOTES_PER_PIXEL: u64 = 180;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnitKind {
    Cpu,
    Gpu,
    Fpga,
}

impl UnitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            UnitKind::Cpu => "cpu",
            UnitKind::Gpu => "gpu",
            UnitKind::Fpga => "fpga",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "cpu" => Some(UnitKind::Cpu),
            "gpu" => Some(UnitKind::Gpu),
            "fpga" => Some(UnitKind::Fpga),
            _ => None,
        }
    }
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessingUnit {
    pub id: String,
    pub kind: UnitKind,
    pub clock_hz: Rational,
    /// SIMD width or number of parallel processing elements.
    pub ops_per_cycle: u64,
    /// Memory bandwidth in bits/s.
    pub mem_bw: Rational,
    pub supports_global: bool,
    pub power_weight: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlatformSpec {
    pub units: Vec<ProcessingUnit>,
    /// Shared budget for frames moving between units, bits/s.
    pub interconnect_bw: Rational,
}

impl PlatformSpec {
    pub fn unit(&self, id: &str) -> Option<&ProcessingUnit> {
        self.units.iter().find(|u| u.id == id)
    }
}

/// Which input traffic figure an operator's I/O time is charged with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BandwidthModel {
    Reuse,
    Naive,
    /// Reuse on fpga units (line buffers), naive on cpu and gpu.
    #[default]
    PerKind,
}

impl BandwidthModel {
    pub fn as_str(self) -> &'static str {
        match self {
            BandwidthModel::Reuse => "reuse",
            BandwidthModel::Naive => "naive",
            BandwidthModel::PerKind => "per-kind",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "reuse" => Some(BandwidthModel::Reuse),
            "naive" => Some(BandwidthModel::Naive),
            "per-kind" => Some(BandwidthModel::PerKind),
            _ => None,
        }
    }

    fn uses_reuse(self, kind: UnitKind) -> bool {
        match self {
            BandwidthModel::Reuse => true,
            BandwidthModel::Naive => false,
            BandwidthModel::PerKind => kind == UnitKind::Fpga,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CostOptions {
    pub bandwidth: BandwidthModel,
    /// `max(compute, io)` when true, `compute + io` otherwise.
    pub overlap: bool,
}

impl Default for CostOptions {
    fn default() -> Self {
        CostOptions {
            bandwidth: BandwidthModel::PerKind,
            overlap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlatformError {
    #[error("operator {0} has an opaque base_calc; its cost cannot be derived")]
    OpaqueCalc(NodeId),
    #[error("unit `{unit}` cannot host operator {operator}")]
    Capability { operator: NodeId, unit: String },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

/// Operations per output pixel of a description. `input_area` supplies the
/// window of rank filters.
pub fn ops_per_output_pixel(calc: &BaseCalc, input_area: &AreaSpec) -> Option<u64> {
    if calc.is_opaque() {
        return None;
    }
    let ops = match calc {
        BaseCalc::Conv2d(conv) => 2 * conv.taps() as u64,
        BaseCalc::Pointwise(expr) => expr.node_count(),
        BaseCalc::Rank(_) => {
            let (x, y) = input_area.window()?;
            let k = u64::from(x) * u64::from(y);
            k * ceil_log2(k)
        }
        BaseCalc::Global(GlobalOp::HoughLines) => HOUGH_VOTES_PER_PIXEL,
        BaseCalc::Global(GlobalOp::Histogram) => 1,
        BaseCalc::Composite(c) => {
            let mut total = 1;
            for stage in &c.stages {
                total += ops_per_output_pixel(stage, input_area)?;
            }
            total
        }
    };
    Some(ops.max(1))
}

pub fn can_host(op: &OperatorSpec, unit: &ProcessingUnit) -> bool {
    if op.base_calc.is_opaque() && unit.kind != UnitKind::Cpu {
        return false;
    }
    !matches!(classify(op), OperatorClass::Global | OperatorClass::Complex) || unit.supports_global
}

/// Breakdown of one operator's per-frame cost on one unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameCost {
    pub ops_per_pixel: u64,
    /// Bits moved to and from memory per frame under the chosen bandwidth model.
    pub io_bits_per_frame: Rational,
    pub compute_time: Rational,
    pub io_time: Rational,
    pub frame_time: Rational,
}

/// Bits per frame the operator reads and writes on `unit`.
pub fn io_bits_per_frame(
    op: &OperatorSpec,
    kind: UnitKind,
    input: &StreamSpec,
    model: BandwidthModel,
) -> Result<Rational, AnalysisError> {
    let bw = bandwidth_requirements(op, input)?;
    let input_bw = if model.uses_reuse(kind) {
        bw.reuse_input_bw
    } else {
        bw.naive_input_bw
    };
    Ok((input_bw + bw.output_bw) / &input.fps)
}

pub fn frame_cost(
    op: &OperatorSpec,
    unit: &ProcessingUnit,
    input: &StreamSpec,
    options: CostOptions,
) -> Result<FrameCost, PlatformError> {
    if !can_host(op, unit) {
        return Err(PlatformError::Capability {
            operator: op.id,
            unit: unit.id.clone(),
        });
    }
    let ops_per_pixel = ops_per_output_pixel(&op.base_calc, &op.input_area).ok_or(PlatformError::OpaqueCalc(op.id))?;
    // Every kind does its per-pixel work over the input frame; for local
    // operators that is also the output frame.
    let work = int(input.frame_pixels()) * int(ops_per_pixel);
    let compute_time = work / (&unit.clock_hz * int(unit.ops_per_cycle));
    let io_bits = io_bits_per_frame(op, unit.kind, input, options.bandwidth)?;
    let io_time = &io_bits / &unit.mem_bw;
    let frame_time = if options.overlap {
        compute_time.clone().max(io_time.clone())
    } else {
        &compute_time + &io_time
    };
    Ok(FrameCost {
        ops_per_pixel,
        io_bits_per_frame: io_bits,
        compute_time,
        io_time,
        frame_time,
    })
}

/// Seconds `unit` needs per frame for `op`, with the default cost options.
pub fn frame_time(op: &OperatorSpec, unit: &ProcessingUnit, input: &StreamSpec) -> Result<Rational, PlatformError> {
    frame_cost(op, unit, input, CostOptions::default()).map(|c| c.frame_time)
}

//! Assignment of operators to processing units.
//!
//! Units are time-multiplexed: the operators placed on one unit serialize, so
//! a unit sustains `1 / sum(frame_time)` frames per second. Frames crossing
//! between units share a single interconnect budget.
//! The objective is a power proxy, `sum(power_weight * utilization)`.

use crate::analysis::{propagate_rates, AnalysisError, RateMap, StreamSpec};
use crate::model::{NodeId, OperatorSpec, PipelineGraph};
use crate::platform::{frame_cost, CostOptions, PlatformError, PlatformSpec};
use crate::rational::{format_rational, int, to_f64, Rational};
use crate::report::{Report, Value};
use num_traits::{One, Zero};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

/// Largest `units^operators` searched by full enumeration.
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraints {
    /// Defaults to the fastest sensor's fps.
    pub target_fps: Option<Rational>,
    pub cost: CostOptions,
    pub honor_interconnect: bool,
    /// Enumerate regardless of the search-space size.
    pub force_exhaustive: bool,
}

impl Default for Constraints {
    fn default() -> Self {
        Constraints {
            target_fps: None,
            cost: CostOptions::default(),
            honor_interconnect: true,
            force_exhaustive: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MapError {
    #[error("operator {0} has no unit assigned")]
    Unassigned(NodeId),
    #[error("assignment names operator {0}, which is not a reachable operator of the chain")]
    UnknownOperator(NodeId),
    #[error("assignment names unknown unit `{0}`")]
    UnknownUnit(String),
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mapping {
    pub assignment: BTreeMap<NodeId, String>,
    /// Sustainable frame rate of the mapped chain (not capped by the sensor).
    pub predicted_fps: Rational,
    pub energy_proxy: Rational,
    pub per_unit_utilization: BTreeMap<String, Rational>,
    /// Seconds per frame of each operator on its unit.
    pub frame_times: BTreeMap<NodeId, Rational>,
    /// Memory traffic of each operator per frame, bits.
    pub io_bits_per_frame: BTreeMap<NodeId, Rational>,
    /// Bits per frame moved across the interconnect.
    pub interconnect_bits_per_frame: Rational,
    pub target_fps: Rational,
    pub feasible: bool,
    pub heuristic: bool,
    pub cost: CostOptions,
    pub honor_interconnect: bool,
}

impl Mapping {
    pub fn units_used(&self) -> usize {
        self.assignment.values().collect::<BTreeSet<_>>().len()
    }

    pub fn to_report(&self) -> Report {
        let mut r = Report::new("mapping");
        r.push("feasible", Value::Bool(self.feasible));
        r.push("heuristic", Value::Bool(self.heuristic));
        r.push("bandwidth_model", Value::text(self.cost.bandwidth.as_str()));
        r.push("overlap", Value::Bool(self.cost.overlap));
        r.push("target_fps", Value::Float(to_f64(&self.target_fps)));
        r.push("predicted_fps", Value::Float(to_f64(&self.predicted_fps)));
        r.push("predicted_fps_exact", Value::Rational(self.predicted_fps.clone()));
        r.push("energy_proxy", Value::Float(to_f64(&self.energy_proxy)));
        for (op, unit) in &self.assignment {
            r.push(format!("assign.{op}"), Value::text(unit.clone()));
        }
        for (op, t) in &self.frame_times {
            r.push(format!("frame_time.{op}"), Value::Float(to_f64(t)));
        }
        for (unit, u) in &self.per_unit_utilization {
            r.push(format!("utilization.{unit}"), Value::Float(to_f64(u)));
        }
        r.push(
            "interconnect_bits_per_frame",
            Value::Rational(self.interconnect_bits_per_frame.clone()),
        );
        r
    }
}

/// Reads `assign.<operator>=<unit>` entries (as written by [`Mapping::to_report`]).
pub fn assignment_from_report(report: &Report) -> Result<BTreeMap<NodeId, String>, String> {
    let mut out = BTreeMap::new();
    for key in report.keys() {
        if let Some(op) = key.strip_prefix("assign.") {
            let op: NodeId = op.parse().map_err(|_| format!("bad operator id in `{key}`"))?;
            let unit = report.require(key).map_err(|e| e.to_string())?;
            out.insert(op, unit.to_string());
        }
    }
    if out.is_empty() {
        return Err("no `assign.<operator>=<unit>` entries found".into());
    }
    Ok(out)
}

/// The part of the chain that gets mapped: reachable operators, their
/// input streams, and the edges between them.
struct Problem<'a> {
    ops: Vec<&'a OperatorSpec>,
    inputs: Vec<StreamSpec>,
    /// `(producer index, consumer index, bits per frame)`
    links: Vec<(usize, usize, Rational)>,
    stream_fps: Rational,
}

impl<'a> Problem<'a> {
    fn new(graph: &'a PipelineGraph) -> Result<Self, AnalysisError> {
        let rates: RateMap = propagate_rates(graph)?;
        let mut ops: Vec<&OperatorSpec> = graph
            .operators()
            .filter(|op| rates.input_of(graph, op.id).is_some())
            .collect();
        ops.sort_by_key(|op| op.id);
        let index: BTreeMap<NodeId, usize> = ops.iter().enumerate().map(|(i, op)| (op.id, i)).collect();
        let inputs = ops
            .iter()
            .map(|op| rates.input_of(graph, op.id).cloned().expect("filtered above"))
            .collect();
        let links = graph
            .edges()
            .iter()
            .filter_map(|e| {
                let (&a, &b) = (index.get(&e.from)?, index.get(&e.to)?);
                let stream = &rates.edge_streams[&e.id];
                Some((a, b, stream.frame_bits()))
            })
            .collect();
        let stream_fps = graph
            .sensors()
            .map(|s| s.fps.clone())
            .max()
            .unwrap_or_else(Rational::one);
        Ok(Problem {
            ops,
            inputs,
            links,
            stream_fps,
        })
    }
}

/// Per-(operator, unit) costs, indexed like `Problem::ops` and `platform.units`.
struct CostTable {
    frame_time: Vec<Vec<Option<Rational>>>,
    io_bits: Vec<Vec<Option<Rational>>>,
    errors: Vec<Vec<Option<PlatformError>>>,
}

impl CostTable {
    fn new(problem: &Problem, platform: &PlatformSpec, cost: CostOptions) -> Self {
        let n = problem.ops.len();
        let mut table = CostTable {
            frame_time: vec![Vec::new(); n],
            io_bits: vec![Vec::new(); n],
            errors: vec![Vec::new(); n],
        };
        for (i, op) in problem.ops.iter().enumerate() {
            for unit in &platform.units {
                match frame_cost(op, unit, &problem.inputs[i], cost) {
                    Ok(c) => {
                        table.frame_time[i].push(Some(c.frame_time));
                        table.io_bits[i].push(Some(c.io_bits_per_frame));
                        table.errors[i].push(None);
                    }
                    Err(e) => {
                        table.frame_time[i].push(None);
                        table.io_bits[i].push(None);
                        table.errors[i].push(Some(e));
                    }
                }
            }
        }
        table
    }
}

struct Evaluation {
    predicted_fps: Rational,
    energy: Rational,
    loads: Vec<Rational>,
    crossing_bits: Rational,
}

fn evaluate_indices(
    problem: &Problem,
    platform: &PlatformSpec,
    table: &CostTable,
    choice: &[usize],
    honor_interconnect: bool,
) -> Evaluation {
    let mut loads = vec![Rational::zero(); platform.units.len()];
    for (i, &u) in choice.iter().enumerate() {
        loads[u] += table.frame_time[i][u].as_ref().expect("only hostable units are chosen");
    }
    let mut predicted: Option<Rational> = None;
    for load in loads.iter().filter(|l| !l.is_zero()) {
        let fps = load.recip();
        predicted = Some(match predicted {
            Some(p) if p <= fps => p,
            _ => fps,
        });
    }
    let mut crossing_bits = Rational::zero();
    for (a, b, bits) in &problem.links {
        if choice[*a] != choice[*b] {
            crossing_bits += bits;
        }
    }
    if honor_interconnect && !crossing_bits.is_zero() {
        let cap = &platform.interconnect_bw / &crossing_bits;
        predicted = Some(match predicted {
            Some(p) if p <= cap => p,
            _ => cap,
        });
    }
    let mut energy = Rational::zero();
    for (i, &u) in choice.iter().enumerate() {
        let t = table.frame_time[i][u].as_ref().unwrap();
        energy += &platform.units[u].power_weight * t * &problem.inputs[i].fps;
    }
    Evaluation {
        predicted_fps: predicted.unwrap_or_else(|| problem.stream_fps.clone()),
        energy,
        loads,
        crossing_bits,
    }
}

fn build_mapping(
    problem: &Problem,
    platform: &PlatformSpec,
    table: &CostTable,
    choice: &[usize],
    constraints: &Constraints,
    heuristic: bool,
) -> Mapping {
    let eval = evaluate_indices(problem, platform, table, choice, constraints.honor_interconnect);
    let target = target_fps(problem, constraints);
    let mut per_unit_utilization = BTreeMap::new();
    let mut assignment = BTreeMap::new();
    let mut frame_times = BTreeMap::new();
    let mut io_bits_per_frame = BTreeMap::new();
    for (i, &u) in choice.iter().enumerate() {
        let op = problem.ops[i].id;
        let unit = &platform.units[u];
        let t = table.frame_time[i][u].clone().unwrap();
        *per_unit_utilization.entry(unit.id.clone()).or_insert_with(Rational::zero) += &t * &problem.inputs[i].fps;
        assignment.insert(op, unit.id.clone());
        frame_times.insert(op, t);
        io_bits_per_frame.insert(op, table.io_bits[i][u].clone().unwrap());
    }
    debug_assert_eq!(eval.loads.len(), platform.units.len());
    Mapping {
        assignment,
        feasible: eval.predicted_fps >= target,
        predicted_fps: eval.predicted_fps,
        energy_proxy: eval.energy,
        per_unit_utilization,
        frame_times,
        io_bits_per_frame,
        interconnect_bits_per_frame: eval.crossing_bits,
        target_fps: target,
        heuristic,
        cost: constraints.cost,
        honor_interconnect: constraints.honor_interconnect,
    }
}

fn target_fps(problem: &Problem, constraints: &Constraints) -> Rational {
    constraints
        .target_fps
        .clone()
        .unwrap_or_else(|| problem.stream_fps.clone())
}

/// Predicted metrics of a given total assignment.
pub fn evaluate_mapping(
    graph: &PipelineGraph,
    platform: &PlatformSpec,
    assignment: &BTreeMap<NodeId, String>,
    constraints: &Constraints,
) -> Result<Mapping, MapError> {
    let problem = Problem::new(graph)?;
    let known: BTreeSet<NodeId> = problem.ops.iter().map(|op| op.id).collect();
    if let Some(extra) = assignment.keys().find(|id| !known.contains(id)) {
        return Err(MapError::UnknownOperator(*extra));
    }
    let table = CostTable::new(&problem, platform, constraints.cost);
    let mut choice = Vec::with_capacity(problem.ops.len());
    for (i, op) in problem.ops.iter().enumerate() {
        let unit_id = assignment.get(&op.id).ok_or(MapError::Unassigned(op.id))?;
        let u = platform
            .units
            .iter()
            .position(|u| &u.id == unit_id)
            .ok_or_else(|| MapError::UnknownUnit(unit_id.clone()))?;
        if let Some(err) = &table.errors[i][u] {
            return Err(err.clone().into());
        }
        choice.push(u);
    }
    Ok(build_mapping(&problem, platform, &table, &choice, constraints, false))
}

/// `units^operators` for the mappable part of the chain, saturating.
pub fn search_space_size(graph: &PipelineGraph, platform: &PlatformSpec) -> Result<u128, AnalysisError> {
    let problem = Problem::new(graph)?;
    let units = platform.units.len() as u128;
    Ok((0..problem.ops.len()).fold(1u128, |acc, _| acc.saturating_mul(units)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BindingConstraint {
    pub operator: NodeId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Infeasible {
    pub target_fps: Rational,
    pub binding: Vec<BindingConstraint>,
    /// Best rate any explored assignment reached.
    pub best_predicted_fps: Option<Rational>,
    pub heuristic: bool,
}

impl Infeasible {
    pub fn to_report(&self) -> Report {
        let mut r = Report::new("mapping");
        r.push("feasible", Value::Bool(false));
        r.push("heuristic", Value::Bool(self.heuristic));
        r.push("target_fps", Value::Float(to_f64(&self.target_fps)));
        if let Some(best) = &self.best_predicted_fps {
            r.push("best_predicted_fps", Value::Float(to_f64(best)));
        }
        for b in &self.binding {
            r.push(format!("binding.{}", b.operator), Value::text(b.reason.clone()));
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SearchOutcome {
    Found(Mapping),
    Infeasible(Infeasible),
}

impl SearchOutcome {
    pub fn mapping(&self) -> Option<&Mapping> {
        match self {
            SearchOutcome::Found(m) => Some(m),
            SearchOutcome::Infeasible(_) => None,
        }
    }
}

/// Ordering key: feasible first, then smaller shortfall, energy, unit count, assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Score {
    feasible: bool,
    shortfall: Rational,
    energy: Rational,
    units_used: usize,
    assignment: Vec<String>,
}

impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .feasible
            .cmp(&self.feasible)
            .then_with(|| self.shortfall.cmp(&other.shortfall))
            .then_with(|| self.energy.cmp(&other.energy))
            .then_with(|| self.units_used.cmp(&other.units_used))
            .then_with(|| self.assignment.cmp(&other.assignment))
    }
}

impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn score(
    problem: &Problem,
    platform: &PlatformSpec,
    table: &CostTable,
    choice: &[usize],
    constraints: &Constraints,
    target: &Rational,
) -> (Score, Rational) {
    let eval = evaluate_indices(problem, platform, table, choice, constraints.honor_interconnect);
    let feasible = eval.predicted_fps >= *target;
    let shortfall = if feasible {
        Rational::zero()
    } else {
        target - &eval.predicted_fps
    };
    let units_used = choice.iter().collect::<BTreeSet<_>>().len();
    (
        Score {
            feasible,
            shortfall,
            energy: eval.energy,
            units_used,
            assignment: choice.iter().map(|&u| platform.units[u].id.clone()).collect(),
        },
        eval.predicted_fps,
    )
}

/// Finds a feasible mapping with minimal power proxy.
///
/// Instances with `units^operators <= EXHAUSTIVE_LIMIT` (or with
/// `force_exhaustive`) are enumerated; larger ones use a greedy seed in
/// topological order refined by single-operator reassignment until no move
/// improves, and are flagged `heuristic`.
pub fn search_mapping(
    graph: &PipelineGraph,
    platform: &PlatformSpec,
    constraints: &Constraints,
) -> Result<SearchOutcome, MapError> {
    let problem = Problem::new(graph)?;
    let table = CostTable::new(&problem, platform, constraints.cost);
    let target = target_fps(&problem, constraints);

    let mut units_by_id: Vec<usize> = (0..platform.units.len()).collect();
    units_by_id.sort_by(|&a, &b| platform.units[a].id.cmp(&platform.units[b].id));
    let candidates: Vec<Vec<usize>> = (0..problem.ops.len())
        .map(|i| {
            units_by_id
                .iter()
                .copied()
                .filter(|&u| table.frame_time[i][u].is_some())
                .collect()
        })
        .collect();

    let mut binding = Vec::new();
    for (i, list) in candidates.iter().enumerate() {
        if list.is_empty() {
            let reasons: Vec<String> = table.errors[i].iter().flatten().map(|e| e.to_string()).collect();
            binding.push(BindingConstraint {
                operator: problem.ops[i].id,
                reason: format!("no unit can host this operator ({})", reasons.join("; ")),
            });
        }
    }
    if !binding.is_empty() {
        return Ok(SearchOutcome::Infeasible(Infeasible {
            target_fps: target,
            binding,
            best_predicted_fps: None,
            heuristic: false,
        }));
    }

    let space = (0..problem.ops.len()).fold(1u128, |acc, _| acc.saturating_mul(platform.units.len() as u128));
    let heuristic = !constraints.force_exhaustive && space > EXHAUSTIVE_LIMIT;
    let (best, best_fps) = if heuristic {
        hill_climb(&problem, platform, &table, &candidates, constraints, &target)
    } else {
        enumerate(&problem, platform, &table, &candidates, constraints, &target)
    };

    if best.0.feasible {
        let mapping = build_mapping(&problem, platform, &table, &best.1, constraints, heuristic);
        return Ok(SearchOutcome::Found(mapping));
    }
    Ok(SearchOutcome::Infeasible(Infeasible {
        binding: diagnose(&problem, platform, &table, &candidates, &target, &best_fps),
        target_fps: target,
        best_predicted_fps: Some(best_fps),
        heuristic,
    }))
}

type Best = ((Score, Vec<usize>), Rational);

fn enumerate(
    problem: &Problem,
    platform: &PlatformSpec,
    table: &CostTable,
    candidates: &[Vec<usize>],
    constraints: &Constraints,
    target: &Rational,
) -> Best {
    let n = candidates.len();
    let mut digits = vec![0usize; n];
    let mut best: Option<((Score, Vec<usize>), Rational)> = None;
    let mut best_fps: Option<Rational> = None;
    loop {
        let choice: Vec<usize> = digits.iter().enumerate().map(|(i, &d)| candidates[i][d]).collect();
        let (s, fps) = score(problem, platform, table, &choice, constraints, target);
        if best_fps.as_ref().is_none_or(|b| fps > *b) {
            best_fps = Some(fps.clone());
        }
        if best.as_ref().is_none_or(|((b, _), _)| s < *b) {
            best = Some(((s, choice), fps));
        }
        // advance the mixed-radix counter, last operator fastest
        let mut i = n;
        loop {
            if i == 0 {
                let (pair, _) = best.expect("at least one assignment is scored");
                return (pair, best_fps.unwrap());
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < candidates[i].len() {
                break;
            }
            digits[i] = 0;
        }
    }
}

fn hill_climb(
    problem: &Problem,
    platform: &PlatformSpec,
    table: &CostTable,
    candidates: &[Vec<usize>],
    constraints: &Constraints,
    target: &Rational,
) -> Best {
    // Greedy seed: operators in topological order (the order of `problem.ops`
    // is by id, so walk the graph order explicitly), each taking the unit that
    // scores best given the operators placed so far.
    let order = topo_positions(problem);
    let mut choice: Vec<Option<usize>> = vec![None; problem.ops.len()];
    for &i in &order {
        let mut best: Option<(Score, usize)> = None;
        for &u in &candidates[i] {
            choice[i] = Some(u);
            let placed: Vec<usize> = (0..problem.ops.len()).filter(|&k| choice[k].is_some()).collect();
            let (sub_problem, sub_table) = restrict(problem, table, &placed);
            let sub_choice: Vec<usize> = placed.iter().map(|&k| choice[k].unwrap()).collect();
            let (s, _) = score(&sub_problem, platform, &sub_table, &sub_choice, constraints, target);
            if best.as_ref().is_none_or(|(b, _)| s < *b) {
                best = Some((s, u));
            }
        }
        choice[i] = best.map(|(_, u)| u);
    }
    let mut current: Vec<usize> = choice.into_iter().map(Option::unwrap).collect();
    let (mut current_score, mut current_fps) = score(problem, platform, table, &current, constraints, target);
    let mut best_fps = current_fps.clone();

    loop {
        let mut improvement: Option<(Score, Rational, Vec<usize>)> = None;
        for i in 0..current.len() {
            for &u in &candidates[i] {
                if u == current[i] {
                    continue;
                }
                let mut next = current.clone();
                next[i] = u;
                let (s, fps) = score(problem, platform, table, &next, constraints, target);
                if fps > best_fps {
                    best_fps = fps.clone();
                }
                let beats = match &improvement {
                    Some((b, _, _)) => s < *b,
                    None => s < current_score,
                };
                if beats {
                    improvement = Some((s, fps, next));
                }
            }
        }
        match improvement {
            Some((s, fps, next)) => {
                current = next;
                current_score = s;
                current_fps = fps;
            }
            None => break,
        }
    }
    if current_fps > best_fps {
        best_fps = current_fps;
    }
    ((current_score, current), best_fps)
}

fn topo_positions(problem: &Problem) -> Vec<usize> {
    // A consumer always comes after its producer among `links`; Kahn over indices.
    let n = problem.ops.len();
    let mut indegree = vec![0usize; n];
    for (_, b, _) in &problem.links {
        indegree[*b] += 1;
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for (a, b, _) in &problem.links {
            if *a == i {
                indegree[*b] -= 1;
                if indegree[*b] == 0 {
                    ready.insert(*b);
                }
            }
        }
    }
    order
}

/// The problem restricted to a subset of operator indices.
fn restrict<'a>(full: &Problem<'a>, table: &CostTable, keep: &[usize]) -> (Problem<'a>, CostTable) {
    let index: BTreeMap<usize, usize> = keep.iter().enumerate().map(|(new, &old)| (old, new)).collect();
    let problem = Problem {
        ops: keep.iter().map(|&k| full.ops[k]).collect(),
        inputs: keep.iter().map(|&k| full.inputs[k].clone()).collect(),
        links: full
            .links
            .iter()
            .filter_map(|(a, b, bits)| Some((*index.get(a)?, *index.get(b)?, bits.clone())))
            .collect(),
        stream_fps: full.stream_fps.clone(),
    };
    let table = CostTable {
        frame_time: keep.iter().map(|&k| table.frame_time[k].clone()).collect(),
        io_bits: keep.iter().map(|&k| table.io_bits[k].clone()).collect(),
        errors: keep.iter().map(|&k| table.errors[k].clone()).collect(),
    };
    (problem, table)
}

fn diagnose(
    problem: &Problem,
    platform: &PlatformSpec,
    table: &CostTable,
    candidates: &[Vec<usize>],
    target: &Rational,
    best_fps: &Rational,
) -> Vec<BindingConstraint> {
    let mut out = Vec::new();
    for (i, list) in candidates.iter().enumerate() {
        let (fastest, time) = list
            .iter()
            .map(|&u| (u, table.frame_time[i][u].clone().unwrap()))
            .min_by(|a, b| a.1.cmp(&b.1))
            .expect("candidates are non-empty here");
        let alone = time.recip();
        if alone < *target {
            out.push(BindingConstraint {
                operator: problem.ops[i].id,
                reason: format!(
                    "fastest unit `{}` sustains {} fps alone, below the target {} fps",
                    platform.units[fastest].id,
                    crate::report::format_float(to_f64(&alone)),
                    format_rational(target)
                ),
            });
        }
    }
    if out.is_empty() {
        for op in &problem.ops {
            out.push(BindingConstraint {
                operator: op.id,
                reason: format!(
                    "feasible alone, but unit sharing or the interconnect limits the chain to {} fps (target {})",
                    crate::report::format_float(to_f64(best_fps)),
                    format_rational(target)
                ),
            });
        }
    }
    out
}

/// Convenience for callers that only need the default target.
pub fn sensor_target(graph: &PipelineGraph) -> Rational {
    graph.sensors().map(|s| s.fps.clone()).max().unwrap_or_else(|| int(1))
}

//! Operator-chain documents and the dataflow graph they describe.

use crate::calc::BaseCalc;
use crate::rational::Rational;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

pub type NodeId = u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorSpec {
    pub id: NodeId,
    pub res_x: u32,
    pub res_y: u32,
    /// Bits per pixel, 1..=64.
    pub pixres: u32,
    pub fps: Rational,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AreaSpec {
    Local { x: u32, y: u32 },
    Global,
}

impl AreaSpec {
    pub fn is_global(&self) -> bool {
        matches!(self, AreaSpec::Global)
    }

    /// Window dimensions `(x, y)` for local areas.
    pub fn window(&self) -> Option<(u32, u32)> {
        match *self {
            AreaSpec::Local { x, y } => Some((x, y)),
            AreaSpec::Global => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperatorSpec {
    pub id: NodeId,
    pub name: String,
    pub input_area: AreaSpec,
    pub output_area: AreaSpec,
    pub base_calc: BaseCalc,
    /// Output bits per pixel; `None` inherits the input stream's depth.
    pub out_pixres: Option<u32>,
}

impl OperatorSpec {
    /// Whether this operator needs a whole input frame before producing output.
    pub fn is_global(&self) -> bool {
        self.input_area.is_global() || self.base_calc.contains_global()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SinkSpec {
    pub id: NodeId,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConnectionSpec {
    pub id: u64,
    /// Producer node.
    pub from: NodeId,
    /// Consumer node.
    pub to: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OperatorChainSpec {
    pub sensors: Vec<SensorSpec>,
    pub operators: Vec<OperatorSpec>,
    pub sinks: Vec<SinkSpec>,
    /// The `id` attribute of the `connections` element. Preserved, not interpreted.
    pub connections_id: Option<u64>,
    pub connections: Vec<ConnectionSpec>,
}

impl OperatorChainSpec {
    /// Same chain in canonical order (every list sorted by id).
    pub fn canonical(&self) -> OperatorChainSpec {
        let mut spec = self.clone();
        spec.sensors.sort_by_key(|s| s.id);
        spec.operators.sort_by_key(|o| o.id);
        spec.sinks.sort_by_key(|s| s.id);
        spec.connections.sort_by_key(|c| c.id);
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Sensor(SensorSpec),
    Operator(OperatorSpec),
    Sink(SinkSpec),
}

impl Node {
    pub fn id(&self) -> NodeId {
        match self {
            Node::Sensor(s) => s.id,
            Node::Operator(o) => o.id,
            Node::Sink(s) => s.id,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Node::Sensor(_) => "sensor",
            Node::Operator(_) => "operator",
            Node::Sink(_) => "sink",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("connections form a cycle through nodes {0:?}")]
    Cycle(Vec<NodeId>),
    #[error("connection {connection} references unknown node {node}")]
    DanglingRef { connection: u64, node: NodeId },
    #[error("id {0} is used by more than one element")]
    DuplicateId(u64),
}

/// A chain in graph form. Edges keep the order of the source connections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineGraph {
    nodes: BTreeMap<NodeId, Node>,
    edges: Vec<ConnectionSpec>,
    topo_order: Vec<NodeId>,
    connections_id: Option<u64>,
}

impl PipelineGraph {
    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn edges(&self) -> &[ConnectionSpec] {
        &self.edges
    }

    pub fn topo_order(&self) -> &[NodeId] {
        &self.topo_order
    }

    pub fn inputs(&self, id: NodeId) -> impl Iterator<Item = &ConnectionSpec> {
        self.edges.iter().filter(move |e| e.to == id)
    }

    pub fn outputs(&self, id: NodeId) -> impl Iterator<Item = &ConnectionSpec> {
        self.edges.iter().filter(move |e| e.from == id)
    }

    pub fn sensors(&self) -> impl Iterator<Item = &SensorSpec> {
        self.nodes.values().filter_map(|n| match n {
            Node::Sensor(s) => Some(s),
            _ => None,
        })
    }

    /// Operators in topological order.
    pub fn operators(&self) -> impl Iterator<Item = &OperatorSpec> {
        self.topo_order.iter().filter_map(|id| match &self.nodes[id] {
            Node::Operator(o) => Some(o),
            _ => None,
        })
    }

    pub fn operator(&self, id: NodeId) -> Option<&OperatorSpec> {
        match self.nodes.get(&id) {
            Some(Node::Operator(o)) => Some(o),
            _ => None,
        }
    }

    /// Nodes reachable from at least one sensor (sensors included).
    pub fn reachable(&self) -> BTreeSet<NodeId> {
        let mut seen: BTreeSet<NodeId> = self.sensors().map(|s| s.id).collect();
        let mut queue: VecDeque<NodeId> = seen.iter().copied().collect();
        while let Some(id) = queue.pop_front() {
            for e in self.outputs(id) {
                if seen.insert(e.to) {
                    queue.push_back(e.to);
                }
            }
        }
        seen
    }

    /// The node at which chain throughput is observed: the last reachable
    /// node in topological order among those without outgoing edges.
    pub fn terminal(&self) -> Option<NodeId> {
        let reachable = self.reachable();
        self.topo_order
            .iter()
            .rev()
            .copied()
            .find(|&id| reachable.contains(&id) && self.outputs(id).next().is_none())
    }

    /// Converts back to document form (canonical order).
    pub fn to_spec(&self) -> OperatorChainSpec {
        let mut spec = OperatorChainSpec {
            connections_id: self.connections_id,
            connections: self.edges.clone(),
            ..Default::default()
        };
        for node in self.nodes.values() {
            match node {
                Node::Sensor(s) => spec.sensors.push(s.clone()),
                Node::Operator(o) => spec.operators.push(o.clone()),
                Node::Sink(s) => spec.sinks.push(s.clone()),
            }
        }
        spec.canonical()
    }
}

/// Builds the dataflow graph. The topological order prefers the smallest
/// ready id, so it is deterministic.
pub fn build_graph(spec: &OperatorChainSpec) -> Result<PipelineGraph, GraphError> {
    let mut nodes = BTreeMap::new();
    let all = spec
        .sensors
        .iter()
        .cloned()
        .map(Node::Sensor)
        .chain(spec.operators.iter().cloned().map(Node::Operator))
        .chain(spec.sinks.iter().cloned().map(Node::Sink));
    for node in all {
        let id = node.id();
        if nodes.insert(id, node).is_some() {
            return Err(GraphError::DuplicateId(id));
        }
    }

    let mut connection_ids = BTreeSet::new();
    for c in &spec.connections {
        if !connection_ids.insert(c.id) {
            return Err(GraphError::DuplicateId(c.id));
        }
        for node in [c.from, c.to] {
            if !nodes.contains_key(&node) {
                return Err(GraphError::DanglingRef { connection: c.id, node });
            }
        }
        if c.from == c.to {
            return Err(GraphError::Cycle(vec![c.from]));
        }
    }

    let mut in_degree: BTreeMap<NodeId, usize> = nodes.keys().map(|&id| (id, 0)).collect();
    for c in &spec.connections {
        *in_degree.get_mut(&c.to).unwrap() += 1;
    }
    let mut ready: BTreeSet<NodeId> = in_degree.iter().filter(|(_, &d)| d == 0).map(|(&id, _)| id).collect();
    let mut topo_order = Vec::with_capacity(nodes.len());
    while let Some(id) = ready.pop_first() {
        topo_order.push(id);
        for c in spec.connections.iter().filter(|c| c.from == id) {
            let d = in_degree.get_mut(&c.to).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.insert(c.to);
            }
        }
    }
    if topo_order.len() != nodes.len() {
        let placed: BTreeSet<NodeId> = topo_order.iter().copied().collect();
        let stuck = nodes.keys().copied().filter(|id| !placed.contains(id)).collect();
        return Err(GraphError::Cycle(stuck));
    }

    Ok(PipelineGraph {
        nodes,
        edges: spec.connections.clone(),
        topo_order,
        connections_id: spec.connections_id,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subject {
    Node(NodeId),
    Edge(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub severity: Severity,
    pub subject: Subject,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let severity = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match self.subject {
            Subject::Node(id) => write!(f, "{severity}: node {id}: {}", self.message),
            Subject::Edge(id) => write!(f, "{severity}: connection {id}: {}", self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Warning)
    }

    pub fn is_valid(&self) -> bool {
        self.errors().next().is_none()
    }
}

/// Structural checks on a built graph. Findings are ordered by node id.
pub fn validate(graph: &PipelineGraph) -> ValidationReport {
    let reachable = graph.reachable();
    let mut findings = Vec::new();
    let mut push = |severity, id, message: String| {
        findings.push(Finding {
            severity,
            subject: Subject::Node(id),
            message,
        })
    };

    for node in graph.nodes() {
        let id = node.id();
        let inputs: Vec<u64> = graph.inputs(id).map(|e| e.id).collect();
        let outputs = graph.outputs(id).count();
        match node {
            Node::Sensor(_) => {
                if !inputs.is_empty() {
                    push(
                        Severity::Error,
                        id,
                        format!("sensor cannot consume (incoming connections {})", join_ids(&inputs)),
                    );
                }
                if outputs == 0 {
                    push(Severity::Warning, id, "sensor output unconnected".into());
                }
            }
            Node::Operator(_) => {
                if inputs.len() > 1 {
                    push(
                        Severity::Error,
                        id,
                        format!("multiple producers (connections {})", join_ids(&inputs)),
                    );
                } else if inputs.is_empty() {
                    push(Severity::Warning, id, "operator has no producer and is unreachable".into());
                } else if !reachable.contains(&id) {
                    push(Severity::Warning, id, "operator is unreachable from any sensor".into());
                }
                if outputs == 0 {
                    push(Severity::Warning, id, "operator output unconnected (no sink declared)".into());
                }
            }
            Node::Sink(_) => {
                if outputs > 0 {
                    let out: Vec<u64> = graph.outputs(id).map(|e| e.id).collect();
                    push(
                        Severity::Error,
                        id,
                        format!("sink cannot produce (outgoing connections {})", join_ids(&out)),
                    );
                }
                if inputs.is_empty() {
                    push(Severity::Warning, id, "sink has no producer".into());
                }
            }
        }
    }
    ValidationReport { findings }
}

fn join_ids(ids: &[u64]) -> String {
    ids.iter().map(u64::to_string).collect::<Vec<_>>().join(", ")
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::rational::int;

    pub fn sensor(id: NodeId) -> SensorSpec {
        SensorSpec {
            id,
            res_x: 1920,
            res_y: 1080,
            pixres: 12,
            fps: int(30),
        }
    }

    pub fn sobel(id: NodeId) -> OperatorSpec {
        OperatorSpec {
            id,
            name: "Sobel".into(),
            input_area: AreaSpec::Local { x: 3, y: 3 },
            output_area: AreaSpec::Local { x: 1, y: 1 },
            base_calc: BaseCalc::sobel(),
            out_pixres: None,
        }
    }

    pub fn con(id: u64, from: NodeId, to: NodeId) -> ConnectionSpec {
        ConnectionSpec { id, from, to }
    }

    pub fn sobel_chain() -> OperatorChainSpec {
        OperatorChainSpec {
            sensors: vec![sensor(0)],
            operators: vec![sobel(1)],
            sinks: vec![],
            connections_id: Some(0),
            connections: vec![con(0, 0, 1)],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sobel_chain_graph() {
        let g = build_graph(&sobel_chain()).unwrap();
        assert_eq!(g.nodes().count(), 2);
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.topo_order(), &[0, 1]);
        assert_eq!(g.terminal(), Some(1));
    }

    #[test]
    fn degenerate_chain() {
        let spec = OperatorChainSpec {
            sensors: vec![sensor(0)],
            ..Default::default()
        };
        let g = build_graph(&spec).unwrap();
        assert_eq!(g.nodes().count(), 1);
        assert!(g.edges().is_empty());
        assert_eq!(g.terminal(), Some(0));
    }

    #[test]
    fn smallest_cycle() {
        let mut spec = sobel_chain();
        spec.operators.push(sobel(2));
        spec.connections = vec![con(0, 1, 2), con(1, 2, 1)];
        assert!(matches!(build_graph(&spec), Err(GraphError::Cycle(n)) if n == vec![1, 2]));
    }

    #[test]
    fn two_node_cycle_with_sensor() {
        let mut spec = sobel_chain();
        spec.connections = vec![con(0, 0, 1), con(1, 1, 0)];
        assert!(matches!(build_graph(&spec), Err(GraphError::Cycle(_))));
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let mut spec = sobel_chain();
        spec.connections.push(con(1, 1, 1));
        assert_eq!(build_graph(&spec), Err(GraphError::Cycle(vec![1])));
    }

    #[test]
    fn dangling_reference() {
        let mut spec = sobel_chain();
        spec.connections.push(con(7, 1, 42));
        assert_eq!(
            build_graph(&spec),
            Err(GraphError::DanglingRef { connection: 7, node: 42 })
        );
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let mut spec = sobel_chain();
        spec.operators.push(sobel(0));
        assert_eq!(build_graph(&spec), Err(GraphError::DuplicateId(0)));
    }

    #[test]
    fn sobel_chain_validates_with_one_warning() {
        let report = validate(&build_graph(&sobel_chain()).unwrap());
        assert!(report.is_valid());
        assert_eq!(report.errors().count(), 0);
        let warnings: Vec<_> = report.warnings().collect();
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].subject, Subject::Node(1));
        assert!(warnings[0].message.contains("unconnected"));
    }

    #[test]
    fn fan_in_is_an_error() {
        let mut spec = sobel_chain();
        spec.sensors.push(sensor(5));
        spec.connections.push(con(1, 5, 1));
        let report = validate(&build_graph(&spec).unwrap());
        let errors: Vec<_> = report.errors().collect();
        assert_eq!(errors.len(), 1);
        assert!(errors[0].message.contains("multiple producers"));
    }

    #[test]
    fn sensor_cannot_consume() {
        let mut spec = sobel_chain();
        spec.sensors.push(sensor(5));
        spec.connections.push(con(1, 1, 5));
        let report = validate(&build_graph(&spec).unwrap());
        let errors: Vec<_> = report.errors().collect();
        assert_eq!(errors.len(), 1);
        assert!(errors[0].message.contains("sensor cannot consume"));
    }

    #[test]
    fn sink_rules_and_unreachable_operators() {
        let mut spec = sobel_chain();
        spec.sinks.push(SinkSpec { id: 2, name: "display".into() });
        spec.operators.push(sobel(3));
        spec.operators.push(sobel(4));
        spec.connections.push(con(1, 1, 2));
        spec.connections.push(con(2, 2, 4));
        spec.connections.push(con(3, 3, 4));
        let report = validate(&build_graph(&spec).unwrap());
        let messages: Vec<String> = report.findings.iter().map(|f| f.to_string()).collect();
        assert!(messages.iter().any(|m| m.contains("node 2: sink cannot produce")), "{messages:?}");
        assert!(messages.iter().any(|m| m.contains("node 3: operator has no producer")), "{messages:?}");
        assert!(messages.iter().any(|m| m.contains("node 4: multiple producers")), "{messages:?}");
        assert!(!report.is_valid());
    }

    fn linear_spec(ops: usize, extra: &[(u64, u64)]) -> OperatorChainSpec {
        let mut spec = OperatorChainSpec {
            sensors: vec![sensor(0)],
            ..Default::default()
        };
        for i in 1..=ops as u64 {
            spec.operators.push(sobel(i));
            spec.connections.push(con(i - 1, i - 1, i));
        }
        let mut next = ops as u64;
        for &(a, b) in extra {
            if a < b && b <= ops as u64 {
                spec.connections.push(con(next, a, b));
                next += 1;
            }
        }
        spec
    }

    proptest! {
        #[test]
        fn topo_order_is_a_valid_sort(ops in 0usize..8, extra in prop::collection::vec((0u64..8, 0u64..8), 0..6)) {
            let spec = linear_spec(ops, &extra);
            let graph = build_graph(&spec).unwrap();
            let order = graph.topo_order();
            prop_assert_eq!(order.len(), graph.nodes().count());
            let position: BTreeMap<NodeId, usize> = order.iter().enumerate().map(|(i, &n)| (n, i)).collect();
            prop_assert_eq!(position.len(), order.len());
            for e in graph.edges() {
                prop_assert!(position[&e.from] < position[&e.to]);
            }
            // graph -> spec -> graph preserves the edge set
            let rebuilt = build_graph(&graph.to_spec()).unwrap();
            let a: BTreeSet<_> = graph.edges().iter().collect();
            let b: BTreeSet<_> = rebuilt.edges().iter().collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(validate(&graph), validate(&graph));
        }
    }
}

//! Toolchain for Image Processing Operator Language (IPOL) chains.
//!
//! The flow is parse ([`format`]) → build and validate ([`model`]) → static
//! analysis ([`analysis`]) → map onto units ([`mapper`], costed by
//! [`platform`]) → check with the discrete-event and functional simulators
//! ([`sim`]).

pub mod analysis;
pub mod calc;
pub mod format;
pub mod mapper;
pub mod model;
pub mod platform;
pub mod rational;
pub mod report;
pub mod sim;

pub use analysis::{chain_report, AnalysisReport, StreamSpec};
pub use calc::BaseCalc;
pub use format::{parse_ipol, parse_platform, serialize_ipol, ParseError};
pub use mapper::{evaluate_mapping, search_mapping, Constraints, Mapping, SearchOutcome};
pub use model::{build_graph, validate, OperatorChainSpec, PipelineGraph};
pub use platform::{PlatformSpec, ProcessingUnit};
pub use rational::Rational;
pub use sim::{execute_chain, execute_operator, simulate, Frame, SimConfig, SimReport};

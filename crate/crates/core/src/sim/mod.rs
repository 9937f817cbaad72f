//! Pixel-level execution and timing simulation of mapped chains.
mod des;
mod exec;
mod frame;

pub use des::{simulate, OperatorStats, SimConfig, SimError, SimReport};
pub use exec::{execute_chain, execute_operator, ExecError};
pub use frame::{max_value, Frame, FrameError};

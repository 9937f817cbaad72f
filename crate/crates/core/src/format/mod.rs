//! File formats: IPOL chains and platform descriptions.

pub mod ipol;
pub mod platform;
mod xml;

pub use ipol::{parse_base_calc, parse_ipol, serialize_ipol};
pub use platform::{parse_platform, serialize_platform};
pub use xml::ParseError;

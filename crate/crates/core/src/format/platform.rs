//! Platform description files.
//!
//! ```xml
//! <platform interconnect_bw="8e9">
//!   <unit id="fpga0" kind="fpga" clock_hz="200e6" ops_per_cycle="64"
//!         mem_bw="10e9" supports_global="false" power_weight="1"/>
//! </platform>
//! ```

use super::xml::{escape, parse_document, Cx, ParseError, Writer};
use crate::platform::{PlatformSpec, ProcessingUnit, UnitKind};
use crate::rational::{format_rational, Rational};
use num_traits::Signed;
use roxmltree::Node;

const UNIT_ATTRIBUTES: &[&str] = &[
    "id",
    "kind",
    "clock_hz",
    "ops_per_cycle",
    "mem_bw",
    "supports_global",
    "power_weight",
];

pub fn parse_platform(document: &[u8]) -> Result<PlatformSpec, ParseError> {
    let doc = parse_document(document)?;
    let cx = Cx { doc: &doc };
    let root = doc.root_element();
    if root.tag_name().name() != "platform" {
        return Err(cx.schema(
            root,
            format!("root element must be <platform>, found <{}>", root.tag_name().name()),
        ));
    }
    cx.check_attributes(root, &["interconnect_bw"])?;
    let interconnect_bw = positive(cx, root, "interconnect_bw")?;

    let mut units: Vec<ProcessingUnit> = Vec::new();
    for node in cx.elements(root)? {
        if node.tag_name().name() != "unit" {
            return Err(cx.schema(node, format!("unknown element <{}>", node.tag_name().name())));
        }
        let unit = parse_unit(cx, node)?;
        if units.iter().any(|u| u.id == unit.id) {
            return Err(cx.schema(node, format!("duplicate unit id `{}`", unit.id)));
        }
        units.push(unit);
    }
    if units.is_empty() {
        return Err(cx.schema(root, "a platform needs at least one <unit>"));
    }
    Ok(PlatformSpec { units, interconnect_bw })
}

fn parse_unit(cx: Cx, node: Node) -> Result<ProcessingUnit, ParseError> {
    cx.check_attributes(node, UNIT_ATTRIBUTES)?;
    if let Some(child) = cx.elements(node)?.first() {
        return Err(cx.schema(*child, format!("unknown element <{}>", child.tag_name().name())));
    }
    let id = cx.required_attribute(node, "id")?.to_string();
    if id.is_empty() {
        return Err(cx.value(node, "unit id must not be empty"));
    }
    let kind_text = cx.required_attribute(node, "kind")?;
    let kind = UnitKind::from_name(kind_text)
        .ok_or_else(|| cx.value(node, format!("unknown unit kind `{kind_text}` (expected cpu, gpu or fpga)")))?;
    let ops_text = cx.required_attribute(node, "ops_per_cycle")?;
    let ops_per_cycle = cx.parse_u64(node, ops_text)?;
    if ops_per_cycle == 0 {
        return Err(cx.value(node, "ops_per_cycle must be at least 1"));
    }
    let supports_global = match cx.required_attribute(node, "supports_global")? {
        "true" => true,
        "false" => false,
        other => return Err(cx.value(node, format!("supports_global must be true or false, found `{other}`"))),
    };
    Ok(ProcessingUnit {
        id,
        kind,
        clock_hz: positive(cx, node, "clock_hz")?,
        ops_per_cycle,
        mem_bw: positive(cx, node, "mem_bw")?,
        supports_global,
        power_weight: positive(cx, node, "power_weight")?,
    })
}

fn positive(cx: Cx, node: Node, name: &str) -> Result<Rational, ParseError> {
    let text = cx.required_attribute(node, name)?;
    let value = cx.parse_rational(node, text)?;
    if !value.is_positive() {
        return Err(cx.value(node, format!("{name} must be positive, found {text}")));
    }
    Ok(value)
}

pub fn serialize_platform(platform: &PlatformSpec) -> Vec<u8> {
    let mut w = Writer::default();
    w.open(&format!(
        "platform interconnect_bw=\"{}\"",
        format_rational(&platform.interconnect_bw)
    ));
    for u in &platform.units {
        w.line(&format!(
            "<unit id=\"{}\" kind=\"{}\" clock_hz=\"{}\" ops_per_cycle=\"{}\" mem_bw=\"{}\" supports_global=\"{}\" power_weight=\"{}\"/>",
            escape(&u.id),
            u.kind,
            format_rational(&u.clock_hz),
            u.ops_per_cycle,
            format_rational(&u.mem_bw),
            u.supports_global,
            format_rational(&u.power_weight),
        ));
    }
    w.close("platform");
    w.finish().into_bytes()
}

//! Reader and writer for IPOL operator-chain documents.

use super::xml::{parse_document, Cx, Occurs, ParseError, Writer};
use crate::calc::{BaseCalc, Combine, Composite, Conv2d, Expr, GlobalOp, RankStatistic};
use crate::model::{AreaSpec, ConnectionSpec, OperatorChainSpec, OperatorSpec, SensorSpec, SinkSpec};
use crate::rational::{format_rational, int};
use num_traits::{One, Signed};
use roxmltree::Node;
use std::collections::BTreeMap;

pub const MAX_PIXRES: u32 = 64;

/// Text marking left-out content: as a `base_calc` body, or between the
/// children of `operatorchain`.
const ELIDED: &str = "...";

pub fn parse_ipol(document: &[u8]) -> Result<OperatorChainSpec, ParseError> {
    let doc = parse_document(document)?;
    let cx = Cx { doc: &doc };
    let root = doc.root_element();
    if root.tag_name().name() != "operatorchain" {
        return Err(cx.schema(
            root,
            format!("root element must be <operatorchain>, found <{}>", root.tag_name().name()),
        ));
    }
    cx.check_attributes(root, &[])?;

    let mut spec = OperatorChainSpec::default();
    let mut node_lines: BTreeMap<u64, u32> = BTreeMap::new();
    let mut seen_connections = false;
    for child in cx.elements_skipping(root, Some(ELIDED))? {
        match child.tag_name().name() {
            "image_operator" => {
                let id = parse_node_id(cx, child)?;
                if node_lines.insert(id, cx.line(child)).is_some() {
                    return Err(cx.schema(child, format!("duplicate id {id}")));
                }
                parse_image_operator(cx, child, id, &mut spec)?;
            }
            "connections" => {
                if seen_connections {
                    return Err(cx.schema(child, "duplicate element <connections>"));
                }
                seen_connections = true;
                parse_connections(cx, child, &mut spec)?;
            }
            other => return Err(cx.schema(child, format!("unknown element <{other}>"))),
        }
    }
    if spec.sensors.is_empty() {
        return Err(cx.schema(root, "no sensor: a chain needs at least one image_operator of type Sensor"));
    }
    Ok(spec)
}

fn parse_node_id(cx: Cx, node: Node) -> Result<u64, ParseError> {
    let text = cx.required_attribute(node, "id")?;
    cx.parse_u64(node, text)
}

fn parse_image_operator<'a, 'i>(
    cx: Cx<'a, 'i>,
    node: Node<'a, 'i>,
    id: u64,
    spec: &mut OperatorChainSpec,
) -> Result<(), ParseError> {
    cx.check_attributes(node, &["id"])?;
    let type_node = cx
        .elements(node)?
        .into_iter()
        .find(|c| c.tag_name().name() == "type")
        .ok_or_else(|| cx.schema(node, "missing element <type>"))?;
    let kind = cx.leaf_text(type_node)?;
    match kind.as_str() {
        "Sensor" => {
            let c = cx.children(
                node,
                &[
                    ("type", Occurs::Once),
                    ("res", Occurs::Once),
                    ("pixres", Occurs::Once),
                    ("fps", Occurs::Once),
                ],
            )?;
            let res = c["res"][0];
            cx.check_attributes(res, &[])?;
            let r = cx.children(res, &[("x", Occurs::Once), ("y", Occurs::Once)])?;
            let res_x = cx.leaf_u32_in(r["x"][0], 1, u32::MAX)?;
            let res_y = cx.leaf_u32_in(r["y"][0], 1, u32::MAX)?;
            let pixres = cx.leaf_u32_in(c["pixres"][0], 1, MAX_PIXRES)?;
            let fps_node = c["fps"][0];
            let fps = cx.parse_rational(fps_node, &cx.leaf_text(fps_node)?)?;
            if !fps.is_positive() {
                return Err(cx.value(fps_node, "fps must be positive"));
            }
            spec.sensors.push(SensorSpec {
                id,
                res_x,
                res_y,
                pixres,
                fps,
            });
        }
        "Operator" => {
            let c = cx.children(
                node,
                &[
                    ("type", Occurs::Once),
                    ("name", Occurs::Once),
                    ("input_area", Occurs::Once),
                    ("base_calc", Occurs::Once),
                    ("output_area", Occurs::Once),
                    ("out_pixres", Occurs::Optional),
                ],
            )?;
            let name = cx.leaf_text(c["name"][0])?;
            let input_area = parse_area(cx, c["input_area"][0])?;
            let output_area = parse_area(cx, c["output_area"][0])?;
            let calc_node = c["base_calc"][0];
            let base_calc = parse_base_calc_node(cx, calc_node, &input_area)?;
            let out_pixres = match c.get("out_pixres") {
                Some(n) => Some(cx.leaf_u32_in(n[0], 1, MAX_PIXRES)?),
                None => None,
            };
            let op = OperatorSpec {
                id,
                name,
                input_area,
                output_area,
                base_calc,
                out_pixres,
            };
            check_operator(cx, c["output_area"][0], &op)?;
            spec.operators.push(op);
        }
        "Sink" => {
            let c = cx.children(node, &[("type", Occurs::Once), ("name", Occurs::Once)])?;
            let name = cx.leaf_text(c["name"][0])?;
            spec.sinks.push(SinkSpec { id, name });
        }
        other => {
            return Err(cx.schema(
                type_node,
                format!("unknown image_operator type `{other}` (expected Sensor, Operator or Sink)"),
            ))
        }
    }
    Ok(())
}

fn check_operator(cx: Cx, output_node: Node, op: &OperatorSpec) -> Result<(), ParseError> {
    if op.output_area.is_global() && !op.input_area.is_global() && !op.base_calc.contains_global() {
        return Err(cx.value(
            output_node,
            "a global output area requires a global input area or a global base_calc",
        ));
    }
    if !op.is_global() && op.output_area != (AreaSpec::Local { x: 1, y: 1 }) {
        return Err(cx.value(output_node, "local operators produce a 1x1 output region per window"));
    }
    Ok(())
}

fn parse_area(cx: Cx, node: Node) -> Result<AreaSpec, ParseError> {
    cx.check_attributes(node, &["scope"])?;
    match node.attribute("scope") {
        Some("global") => {
            if let Some(child) = cx.elements(node)?.first() {
                return Err(cx.schema(*child, "a global area has no dimensions"));
            }
            Ok(AreaSpec::Global)
        }
        None | Some("local") => {
            let c = cx.children(node, &[("x", Occurs::Once), ("y", Occurs::Once)])?;
            let x = cx.leaf_u32_in(c["x"][0], 1, u32::MAX)?;
            let y = cx.leaf_u32_in(c["y"][0], 1, u32::MAX)?;
            Ok(AreaSpec::Local { x, y })
        }
        Some(other) => Err(cx.value(node, format!("unknown scope `{other}` (expected local or global)"))),
    }
}

fn parse_connections(cx: Cx, node: Node, spec: &mut OperatorChainSpec) -> Result<(), ParseError> {
    cx.check_attributes(node, &["id"])?;
    spec.connections_id = match node.attribute("id") {
        Some(text) => Some(cx.parse_u64(node, text)?),
        None => None,
    };
    let c = cx.children(node, &[("con", Occurs::Many)])?;
    for con in c.get("con").into_iter().flatten() {
        cx.check_attributes(*con, &["id"])?;
        let id = parse_node_id(cx, *con)?;
        if spec.connections.iter().any(|e| e.id == id) {
            return Err(cx.schema(*con, format!("duplicate connection id {id}")));
        }
        let ends = cx.children(*con, &[("out", Occurs::Once), ("in", Occurs::Once)])?;
        let from = cx.leaf_u64(ends["out"][0])?;
        let to = cx.leaf_u64(ends["in"][0])?;
        spec.connections.push(ConnectionSpec { id, from, to });
    }
    Ok(())
}

/// Parses a standalone `<base_calc>` element for an operator with the given input area.
pub fn parse_base_calc(fragment: &str, input_area: &AreaSpec) -> Result<BaseCalc, ParseError> {
    let doc = parse_document(fragment.as_bytes())?;
    let cx = Cx { doc: &doc };
    let root = doc.root_element();
    if root.tag_name().name() != "base_calc" {
        return Err(cx.schema(root, format!("expected <base_calc>, found <{}>", root.tag_name().name())));
    }
    parse_base_calc_node(cx, root, input_area)
}

fn parse_base_calc_node(cx: Cx, node: Node, input_area: &AreaSpec) -> Result<BaseCalc, ParseError> {
    cx.check_attributes(node, &[])?;
    let text: String = node.children().filter_map(|c| c.text()).collect();
    let children: Vec<Node> = node.children().filter(Node::is_element).collect();
    let trimmed = text.trim();
    match (children.as_slice(), trimmed) {
        ([], "") | ([], ELIDED) => Ok(BaseCalc::opaque()),
        ([], _) => Err(cx.schema(node, "unexpected text content inside <base_calc>")),
        ([kind], "") => parse_calc_kind(cx, *kind, input_area),
        ([_], _) => Err(cx.schema(node, "unexpected text content inside <base_calc>")),
        ([_, second, ..], _) => Err(cx.schema(
            *second,
            "base_calc holds exactly one description; use <composite> for several",
        )),
    }
}

fn parse_calc_kind(cx: Cx, node: Node, input_area: &AreaSpec) -> Result<BaseCalc, ParseError> {
    match node.tag_name().name() {
        "conv2d" => {
            cx.check_attributes(node, &["post_scale"])?;
            let post_scale = match node.attribute("post_scale") {
                Some(text) => cx.parse_rational(node, text)?,
                None => int(1),
            };
            let c = cx.children(node, &[("row", Occurs::Many)])?;
            let rows = c.get("row").ok_or_else(|| cx.schema(node, "missing element <row>"))?;
            let mut kernel = Vec::with_capacity(rows.len());
            for row in rows {
                let text = cx.leaf_text(*row)?;
                let coefficients = text
                    .split_whitespace()
                    .map(|t| cx.parse_rational(*row, t))
                    .collect::<Result<Vec<_>, _>>()?;
                if coefficients.is_empty() {
                    return Err(cx.value(*row, "empty kernel row"));
                }
                if kernel.first().is_some_and(|first: &Vec<_>| first.len() != coefficients.len()) {
                    return Err(cx.value(*row, "kernel rows differ in length"));
                }
                kernel.push(coefficients);
            }
            let conv = Conv2d { kernel, post_scale };
            if let AreaSpec::Local { x, y } = *input_area {
                if (conv.width(), conv.height()) != (x as usize, y as usize) {
                    return Err(cx.value(
                        node,
                        format!(
                            "kernel is {}x{} but input_area is {x}x{y}",
                            conv.width(),
                            conv.height()
                        ),
                    ));
                }
            }
            Ok(BaseCalc::Conv2d(conv))
        }
        "pointwise" => {
            cx.check_attributes(node, &[])?;
            let c = cx.children(node, &[("expr", Occurs::Once)])?;
            let expr_node = c["expr"][0];
            let text = cx.leaf_text(expr_node)?;
            let expr = Expr::parse(&text).map_err(|e| cx.value(expr_node, e.to_string()))?;
            Ok(BaseCalc::Pointwise(expr))
        }
        "rank" => {
            cx.check_attributes(node, &["statistic"])?;
            reject_children(cx, node)?;
            let name = cx.required_attribute(node, "statistic")?;
            let statistic = RankStatistic::from_name(name)
                .ok_or_else(|| cx.value(node, format!("unknown statistic `{name}` (expected min, max or median)")))?;
            if input_area.is_global() {
                return Err(cx.value(node, "rank needs a local input_area window"));
            }
            Ok(BaseCalc::Rank(statistic))
        }
        "global" => {
            cx.check_attributes(node, &["name"])?;
            reject_children(cx, node)?;
            let name = cx.required_attribute(node, "name")?;
            let op = GlobalOp::from_name(name).ok_or_else(|| {
                cx.schema(node, format!("unknown global operation `{name}` (expected hough_lines or histogram)"))
            })?;
            Ok(BaseCalc::Global(op))
        }
        "composite" => {
            cx.check_attributes(node, &["combine"])?;
            let name = cx.required_attribute(node, "combine")?;
            let combine = Combine::from_name(name)
                .ok_or_else(|| cx.value(node, format!("unknown combine `{name}` (expected sum, magnitude or last)")))?;
            let stage_nodes = cx.elements(node)?;
            if stage_nodes.is_empty() {
                return Err(cx.schema(node, "composite needs at least one stage"));
            }
            let stages = stage_nodes
                .into_iter()
                .map(|s| parse_calc_kind(cx, s, input_area))
                .collect::<Result<Vec<_>, _>>()?;
            if combine != Combine::Last && stages.iter().any(BaseCalc::contains_global) {
                return Err(cx.value(node, "global stages can only be chained with combine=\"last\""));
            }
            Ok(BaseCalc::Composite(Composite { stages, combine }))
        }
        other => Err(cx.schema(node, format!("unknown base_calc kind <{other}>"))),
    }
}

fn reject_children(cx: Cx, node: Node) -> Result<(), ParseError> {
    match cx.elements(node)?.first() {
        Some(child) => Err(cx.schema(*child, format!("unknown element <{}>", child.tag_name().name()))),
        None => Ok(()),
    }
}

/// Writes the canonical document: sensors, operators, sinks, connections,
/// each sorted by id, two-space indentation.
pub fn serialize_ipol(spec: &OperatorChainSpec) -> Vec<u8> {
    let spec = spec.canonical();
    let mut w = Writer::default();
    w.open("operatorchain");
    for s in &spec.sensors {
        w.open(&format!("image_operator id=\"{}\"", s.id));
        w.leaf("type", "Sensor");
        w.line(&format!("<res><x>{}</x><y>{}</y></res>", s.res_x, s.res_y));
        w.leaf("pixres", &s.pixres.to_string());
        w.leaf("fps", &format_rational(&s.fps));
        w.close("image_operator");
    }
    for op in &spec.operators {
        w.open(&format!("image_operator id=\"{}\"", op.id));
        w.leaf("type", "Operator");
        w.leaf("name", &op.name);
        write_area(&mut w, "input_area", &op.input_area);
        if op.base_calc.is_opaque() {
            w.line("<base_calc></base_calc>");
        } else {
            w.open("base_calc");
            write_calc(&mut w, &op.base_calc);
            w.close("base_calc");
        }
        write_area(&mut w, "output_area", &op.output_area);
        if let Some(bits) = op.out_pixres {
            w.leaf("out_pixres", &bits.to_string());
        }
        w.close("image_operator");
    }
    for s in &spec.sinks {
        w.open(&format!("image_operator id=\"{}\"", s.id));
        w.leaf("type", "Sink");
        w.leaf("name", &s.name);
        w.close("image_operator");
    }
    if spec.connections_id.is_some() || !spec.connections.is_empty() {
        match spec.connections_id {
            Some(id) => w.open(&format!("connections id=\"{id}\"")),
            None => w.open("connections"),
        }
        for c in &spec.connections {
            w.line(&format!("<con id=\"{}\"><out>{}</out><in>{}</in></con>", c.id, c.from, c.to));
        }
        w.close("connections");
    }
    w.close("operatorchain");
    w.finish().into_bytes()
}

fn write_area(w: &mut Writer, name: &str, area: &AreaSpec) {
    match area {
        AreaSpec::Global => w.line(&format!("<{name} scope=\"global\"/>")),
        AreaSpec::Local { x, y } => {
            w.open(name);
            w.leaf("x", &x.to_string());
            w.leaf("y", &y.to_string());
            w.close(name);
        }
    }
}

fn write_calc(w: &mut Writer, calc: &BaseCalc) {
    match calc {
        BaseCalc::Conv2d(conv) => {
            if conv.post_scale.is_one() {
                w.open("conv2d");
            } else {
                w.open(&format!("conv2d post_scale=\"{}\"", format_rational(&conv.post_scale)));
            }
            for row in &conv.kernel {
                let text: Vec<String> = row.iter().map(format_rational).collect();
                w.leaf("row", &text.join(" "));
            }
            w.close("conv2d");
        }
        BaseCalc::Pointwise(expr) => {
            w.open("pointwise");
            w.leaf("expr", &expr.to_string());
            w.close("pointwise");
        }
        BaseCalc::Rank(stat) => w.line(&format!("<rank statistic=\"{}\"/>", stat.as_str())),
        BaseCalc::Global(op) => w.line(&format!("<global name=\"{}\"/>", op.as_str())),
        BaseCalc::Composite(c) => {
            w.open(&format!("composite combine=\"{}\"", c.combine.as_str()));
            for stage in &c.stages {
                write_calc(w, stage);
            }
            w.close("composite");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::sobel_chain;
    use crate::rational::ratio;
    use proptest::prelude::*;

    const SOBEL_CHAIN: &str = include_str!("../../tests/fixtures/sobel_chain.ipol");
    const VERBATIM: &str = include_str!("../../tests/fixtures/sobel_verbatim.ipol");

    fn err(doc: &str) -> ParseError {
        parse_ipol(doc.as_bytes()).expect_err(doc)
    }

    #[test]
    fn sobel_chain_with_sobel() {
        assert_eq!(parse_ipol(SOBEL_CHAIN.as_bytes()).unwrap(), sobel_chain());
    }

    #[test]
    fn verbatim_chain_is_opaque() {
        let spec = parse_ipol(VERBATIM.as_bytes()).unwrap();
        let op = &spec.operators[0];
        assert_eq!((op.id, op.name.as_str()), (1, "Sobel"));
        assert_eq!(op.input_area, AreaSpec::Local { x: 3, y: 3 });
        assert!(op.base_calc.is_opaque());
        assert_eq!(spec.sensors[0].fps, int(30));
        assert_eq!(spec.connections_id, Some(0));
        let again = parse_ipol(&serialize_ipol(&spec)).unwrap();
        assert_eq!(again, spec);
    }

    #[test]
    fn round_trip_is_stable() {
        let spec = parse_ipol(SOBEL_CHAIN.as_bytes()).unwrap();
        let once = serialize_ipol(&spec);
        assert_eq!(parse_ipol(&once).unwrap(), spec);
        assert_eq!(serialize_ipol(&parse_ipol(&once).unwrap()), once);
    }

    #[test]
    fn empty_chain_needs_a_sensor() {
        assert!(matches!(err("<operatorchain/>"), ParseError::Schema { .. }));
    }

    #[test]
    fn fps_must_be_positive() {
        match err(&SOBEL_CHAIN.replace("<fps>30</fps>", "<fps>0</fps>")) {
            ParseError::Value { line, path, .. } => {
                assert_eq!(line, 6);
                assert!(path.ends_with("/fps"), "{path}");
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_ipol(SOBEL_CHAIN.replace("<fps>30</fps>", "<fps>29.97</fps>").as_bytes()).is_ok());
        assert!(parse_ipol(SOBEL_CHAIN.replace("<fps>30</fps>", "<fps>30,5</fps>").as_bytes()).is_err());
    }

    #[test]
    fn kernel_must_match_window() {
        let doc = SOBEL_CHAIN.replace("<x>3</x><y>3</y>", "<x>5</x><y>5</y>");
        match err(&doc) {
            ParseError::Value { line, message, .. } => {
                assert_eq!(line, 16);
                assert!(message.contains("3x3"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_base_calc_is_opaque() {
        let doc = VERBATIM.replace("<base_calc>...</base_calc>", "<base_calc/>");
        assert!(parse_ipol(doc.as_bytes()).unwrap().operators[0].base_calc.is_opaque());
    }

    #[test]
    fn schema_errors_carry_lines() {
        let doc = SOBEL_CHAIN.replace("<name>Sobel</name>", "<name>Sobel</name>\n  <color>red</color>");
        match err(&doc) {
            ParseError::Schema { line, message, .. } => {
                assert_eq!(line, 12);
                assert!(message.contains("color"));
            }
            other => panic!("{other:?}"),
        }
        let dup = SOBEL_CHAIN.replace("<image_operator id=\"1\">", "<image_operator id=\"0\">");
        assert!(matches!(err(&dup), ParseError::Schema { line: 9, .. }));
        let stray = VERBATIM.replace("\n...\n", "\nstray\n");
        assert!(matches!(err(&stray), ParseError::Schema { .. }));
        assert!(matches!(err("<operatorchain>"), ParseError::XmlSyntax { line: 1, .. }));
        let bad_type = VERBATIM.replace("<type>Operator</type>", "<type>Filter</type>");
        assert!(matches!(err(&bad_type), ParseError::Value { .. } | ParseError::Schema { .. }));
    }

    #[test]
    fn local_operator_output_must_be_one_pixel() {
        let doc = SOBEL_CHAIN.replace("<x>1</x><y>1</y>", "<x>2</x><y>2</y>");
        assert!(matches!(err(&doc), ParseError::Value { .. }));
    }

    #[test]
    fn base_calc_kinds() {
        let local = AreaSpec::Local { x: 3, y: 3 };
        let rank = parse_base_calc(r#"<base_calc><rank statistic="median"/></base_calc>"#, &local).unwrap();
        assert_eq!(rank, BaseCalc::Rank(RankStatistic::Median));
        let blur = parse_base_calc(
            r#"<base_calc><conv2d post_scale="1/9"><row>1 1 1</row><row>1 1 1</row><row>1 1 1</row></conv2d></base_calc>"#,
            &local,
        )
        .unwrap();
        match blur {
            BaseCalc::Conv2d(c) => assert_eq!(c.post_scale, ratio(1, 9)),
            other => panic!("{other:?}"),
        }
        let global = parse_base_calc(r#"<base_calc><global name="hough_lines"/></base_calc>"#, &AreaSpec::Global).unwrap();
        assert_eq!(global, BaseCalc::Global(GlobalOp::HoughLines));
        for bad in [
            r#"<base_calc><rank statistic="mode"/></base_calc>"#,
            r#"<base_calc><pointwise><expr>(pow p 2)</expr></pointwise></base_calc>"#,
            r#"<base_calc><conv2d><row>1 2</row><row>1</row></conv2d></base_calc>"#,
            r#"<base_calc><composite combine="sum"><global name="histogram"/></composite></base_calc>"#,
            r#"<base_calc><fft/></base_calc>"#,
        ] {
            assert!(parse_base_calc(bad, &AreaSpec::Local { x: 2, y: 1 }).is_err(), "{bad}");
        }
        let rank_global = parse_base_calc(r#"<base_calc><rank statistic="min"/></base_calc>"#, &AreaSpec::Global);
        assert!(rank_global.is_err());
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            Just(Expr::Pixel),
            (-50i64..50, 1i64..5).prop_map(|(n, d)| Expr::Const(ratio(n, d))),
        ];
        leaf.prop_recursive(3, 12, 3, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone(), 0usize..6).prop_map(|(a, b, k)| {
                    use crate::calc::BinaryOp::*;
                    let op = [Add, Sub, Mul, Div, Min, Max][k];
                    Expr::Binary(op, Box::new(a), Box::new(b))
                }),
                inner.clone().prop_map(|a| Expr::Unary(crate::calc::UnaryOp::Abs, Box::new(a))),
                (inner.clone(), inner.clone(), inner).prop_map(|(a, b, c)| Expr::Clamp(Box::new(a), Box::new(b), Box::new(c))),
            ]
        })
    }

    fn arb_operator(id: u64) -> impl Strategy<Value = OperatorSpec> {
        let point = arb_expr().prop_map(|e| (AreaSpec::Local { x: 1, y: 1 }, BaseCalc::Pointwise(e)));
        let conv = (1u32..4, 1u32..4, any::<u64>(), 1i64..4).prop_map(|(x, y, seed, d)| {
            let kernel = (0..y)
                .map(|j| {
                    (0..x)
                        .map(|i| ratio((seed.rotate_left(i * 3 + j * 7) % 9) as i64 - 4, d))
                        .collect()
                })
                .collect();
            (
                AreaSpec::Local { x, y },
                BaseCalc::Conv2d(Conv2d {
                    kernel,
                    post_scale: ratio(1, d),
                }),
            )
        });
        let rank = (1u32..6, 1u32..6, 0usize..3)
            .prop_map(|(x, y, k)| (AreaSpec::Local { x, y }, BaseCalc::Rank([RankStatistic::Min, RankStatistic::Max, RankStatistic::Median][k])));
        let opaque = (1u32..6, 1u32..6).prop_map(|(x, y)| (AreaSpec::Local { x, y }, BaseCalc::opaque()));
        (prop_oneof![point, conv, rank, opaque], proptest::option::of(1u32..=16), "[a-zA-Z<&][a-z_]{0,5}( [a-z]{1,3})?")
            .prop_map(move |((input_area, base_calc), out_pixres, name)| OperatorSpec {
                id,
                name,
                input_area,
                output_area: AreaSpec::Local { x: 1, y: 1 },
                base_calc,
                out_pixres,
            })
    }

    fn arb_spec() -> impl Strategy<Value = OperatorChainSpec> {
        (0u64..4, proptest::option::of(0u64..3), 1u32..64, -3i64..3).prop_flat_map(|(ops, cid, pixres, fps_shift)| {
            let operators: Vec<_> = (1..=ops).map(arb_operator).collect();
            (operators, Just(cid), Just(pixres), Just(fps_shift))
        })
        .prop_map(|(operators, connections_id, pixres, fps_shift)| {
            let n = operators.len() as u64;
            OperatorChainSpec {
                sensors: vec![SensorSpec {
                    id: 0,
                    res_x: 640,
                    res_y: 480,
                    pixres,
                    fps: ratio(30000 + fps_shift, 1001),
                }],
                connections: (0..n).map(|i| ConnectionSpec { id: i, from: i, to: i + 1 }).collect(),
                operators,
                sinks: vec![SinkSpec { id: 99, name: "display".into() }],
                connections_id,
            }
        })
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(spec in arb_spec()) {
            let text = serialize_ipol(&spec);
            let back = parse_ipol(&text).unwrap();
            prop_assert_eq!(back, spec.canonical());
        }
    }
}

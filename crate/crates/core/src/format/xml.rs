//! Strict-schema helpers over a parsed `roxmltree` document.

use crate::rational::{parse_rational, Rational};
use roxmltree::{Document, Node, ParsingOptions};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("XML syntax error at line {line}, column {column}: {message}")]
    XmlSyntax { line: u32, column: u32, message: String },
    #[error("schema error at line {line} ({path}): {message}")]
    Schema { line: u32, path: String, message: String },
    #[error("invalid value at line {line} ({path}): {message}")]
    Value { line: u32, path: String, message: String },
}

impl ParseError {
    pub fn line(&self) -> u32 {
        match self {
            ParseError::XmlSyntax { line, .. } | ParseError::Schema { line, .. } | ParseError::Value { line, .. } => {
                *line
            }
        }
    }
}

/// Decodes UTF-8 and parses XML, rejecting DTDs and namespaces.
pub(crate) fn parse_document(bytes: &[u8]) -> Result<Document<'_>, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let valid = &bytes[..e.valid_up_to()];
        let line = 1 + valid.iter().filter(|&&b| b == b'\n').count() as u32;
        let column = 1 + valid.iter().rev().take_while(|&&b| b != b'\n').count() as u32;
        ParseError::XmlSyntax {
            line,
            column,
            message: "document is not valid UTF-8".into(),
        }
    })?;
    let options = ParsingOptions {
        allow_dtd: false,
        ..ParsingOptions::default()
    };
    let doc = Document::parse_with_options(text, options).map_err(|e| {
        let pos = e.pos();
        ParseError::XmlSyntax {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;
    let cx = Cx { doc: &doc };
    if let Some(node) = doc.descendants().find(|n| n.is_element() && n.tag_name().namespace().is_some()) {
        return Err(cx.schema(node, "XML namespaces are not supported"));
    }
    if let Some(node) = doc
        .descendants()
        .find(|n| n.is_element() && n.attributes().any(|a| a.namespace().is_some()))
    {
        return Err(cx.schema(node, "namespaced attributes are not supported"));
    }
    Ok(doc)
}

#[derive(Clone, Copy)]
pub(crate) struct Cx<'a, 'input> {
    pub doc: &'a Document<'input>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Occurs {
    Once,
    Optional,
    Many,
}

impl<'a, 'input> Cx<'a, 'input> {
    pub fn line(&self, node: Node) -> u32 {
        self.doc.text_pos_at(node.range().start).row
    }

    /// Element path such as `/operatorchain/image_operator[@id=1]/input_area`.
    pub fn path(&self, node: Node) -> String {
        let mut parts: Vec<String> = node
            .ancestors()
            .filter(Node::is_element)
            .map(|n| match n.attribute("id") {
                Some(id) => format!("{}[@id={id}]", n.tag_name().name()),
                None => n.tag_name().name().to_string(),
            })
            .collect();
        parts.reverse();
        format!("/{}", parts.join("/"))
    }

    pub fn schema(&self, node: Node, message: impl Into<String>) -> ParseError {
        ParseError::Schema {
            line: self.line(node),
            path: self.path(node),
            message: message.into(),
        }
    }

    pub fn value(&self, node: Node, message: impl Into<String>) -> ParseError {
        ParseError::Value {
            line: self.line(node),
            path: self.path(node),
            message: message.into(),
        }
    }

    /// Child elements of `node`; text other than whitespace is an error.
    pub fn elements(&self, node: Node<'a, 'input>) -> Result<Vec<Node<'a, 'input>>, ParseError> {
        self.elements_skipping(node, None)
    }

    /// Like [`Cx::elements`], but text nodes equal (after trimming) to
    /// `marker` are ignored too.
    pub fn elements_skipping(
        &self,
        node: Node<'a, 'input>,
        marker: Option<&str>,
    ) -> Result<Vec<Node<'a, 'input>>, ParseError> {
        let mut out = Vec::new();
        for child in node.children() {
            let text = child.text().unwrap_or("").trim();
            if child.is_element() {
                out.push(child);
            } else if child.is_text() && !text.is_empty() && Some(text) != marker {
                return Err(self.schema(node, format!("unexpected text content inside <{}>", node.tag_name().name())));
            }
        }
        Ok(out)
    }

    /// Groups children by name, enforcing the allowed vocabulary and multiplicities.
    pub fn children(
        &self,
        node: Node<'a, 'input>,
        allowed: &[(&'static str, Occurs)],
    ) -> Result<BTreeMap<&'static str, Vec<Node<'a, 'input>>>, ParseError> {
        let mut grouped: BTreeMap<&'static str, Vec<Node>> = BTreeMap::new();
        for child in self.elements(node)? {
            let name = child.tag_name().name();
            let Some(&(key, occurs)) = allowed.iter().find(|(n, _)| *n == name) else {
                return Err(self.schema(child, format!("unknown element <{name}>")));
            };
            let slot = grouped.entry(key).or_default();
            if occurs != Occurs::Many && !slot.is_empty() {
                return Err(self.schema(child, format!("duplicate element <{name}>")));
            }
            slot.push(child);
        }
        for &(name, occurs) in allowed {
            if occurs == Occurs::Once && !grouped.contains_key(name) {
                return Err(self.schema(node, format!("missing element <{name}>")));
            }
        }
        Ok(grouped)
    }

    pub fn check_attributes(&self, node: Node, allowed: &[&str]) -> Result<(), ParseError> {
        match node.attributes().find(|a| !allowed.contains(&a.name())) {
            Some(a) => Err(self.schema(node, format!("unknown attribute `{}`", a.name()))),
            None => Ok(()),
        }
    }

    pub fn required_attribute(&self, node: Node<'a, 'input>, name: &str) -> Result<&'a str, ParseError> {
        node.attribute(name)
            .ok_or_else(|| self.schema(node, format!("missing attribute `{name}`")))
    }

    /// Trimmed text of a leaf element (no attributes, no child elements).
    pub fn leaf_text(&self, node: Node<'a, 'input>) -> Result<String, ParseError> {
        self.check_attributes(node, &[])?;
        if let Some(child) = node.children().find(Node::is_element) {
            return Err(self.schema(child, format!("unknown element <{}>", child.tag_name().name())));
        }
        let text: String = node.children().filter_map(|c| c.text()).collect();
        Ok(text.trim().to_string())
    }

    pub fn parse_u64(&self, node: Node, text: &str) -> Result<u64, ParseError> {
        if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) {
            return Err(self.value(node, format!("expected a non-negative decimal integer, found `{text}`")));
        }
        text.parse()
            .map_err(|_| self.value(node, format!("integer `{text}` is out of range")))
    }

    pub fn parse_u32_in(&self, node: Node, text: &str, min: u32, max: u32) -> Result<u32, ParseError> {
        let v = self.parse_u64(node, text)?;
        if v < u64::from(min) || v > u64::from(max) {
            return Err(self.value(node, format!("{v} is outside the range {min}..={max}")));
        }
        Ok(v as u32)
    }

    pub fn parse_rational(&self, node: Node, text: &str) -> Result<Rational, ParseError> {
        parse_rational(text).map_err(|e| self.value(node, e.to_string()))
    }

    pub fn leaf_u64(&self, node: Node<'a, 'input>) -> Result<u64, ParseError> {
        let text = self.leaf_text(node)?;
        self.parse_u64(node, &text)
    }

    pub fn leaf_u32_in(&self, node: Node<'a, 'input>, min: u32, max: u32) -> Result<u32, ParseError> {
        let text = self.leaf_text(node)?;
        self.parse_u32_in(node, &text, min, max)
    }
}

/// Escapes the five XML special characters.
pub(crate) fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Indented line writer, two spaces per level.
#[derive(Default)]
pub(crate) struct Writer {
    out: String,
    depth: usize,
}

impl Writer {
    pub fn line(&mut self, text: &str) {
        for _ in 0..self.depth {
            self.out.push_str("  ");
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    pub fn open(&mut self, tag: &str) {
        self.line(&format!("<{tag}>"));
        self.depth += 1;
    }

    pub fn close(&mut self, name: &str) {
        self.depth -= 1;
        self.line(&format!("</{name}>"));
    }

    pub fn leaf(&mut self, name: &str, text: &str) {
        self.line(&format!("<{name}>{}</{name}>", escape(text)));
    }

    pub fn finish(self) -> String {
        self.out
    }
}

//! Line-oriented `key=value` reports with a JSON rendering of the same keys.

use crate::rational::{format_rational, Rational};
use num_traits::ToPrimitive;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Rational(Rational),
    Float(f64),
    Bool(bool),
    Text(String),
}

impl Value {
    pub fn text(s: impl Into<String>) -> Value {
        Value::Text(s.into())
    }

    fn render(&self) -> String {
        match self {
            Value::Rational(r) => format_rational(r),
            Value::Float(f) => format_float(*f),
            Value::Bool(b) => b.to_string(),
            Value::Text(s) => s.clone(),
        }
    }

    fn to_json(&self) -> serde_json::Value {
        use serde_json::Value as J;
        match self {
            Value::Rational(r) if r.is_integer() => match r.numer().to_i64() {
                Some(i) => J::from(i),
                None => J::String(format_rational(r)),
            },
            Value::Rational(r) => J::String(format_rational(r)),
            Value::Float(f) => serde_json::Number::from_f64(*f).map_or(J::Null, J::Number),
            Value::Bool(b) => J::Bool(*b),
            Value::Text(s) => match s.parse::<u64>() {
                Ok(n) if n.to_string() == *s => J::from(n),
                _ => J::String(s.clone()),
            },
        }
    }
}

/// Fixed-point rendering with at most 6 decimals and no trailing zeros.
pub fn format_float(value: f64) -> String {
    if !value.is_finite() {
        return value.to_string();
    }
    let text = format!("{value:.6}");
    let text = text.trim_end_matches('0').trim_end_matches('.');
    match text {
        "-0" => "0".to_string(),
        t => t.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("line {0}: expected `key=value`")]
    Malformed(usize),
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("bad value for key `{0}`")]
    BadValue(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    entries: Vec<(String, Value)>,
}

impl Report {
    /// New report carrying `format_version` and `report=<kind>`.
    pub fn new(kind: &str) -> Self {
        let mut r = Report::default();
        r.push("format_version", Value::text(FORMAT_VERSION.to_string()));
        r.push("report", Value::text(kind));
        r
    }

    pub fn push(&mut self, key: impl Into<String>, value: Value) {
        self.entries.push((key.into(), value));
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    /// Raw text of a parsed value.
    pub fn require(&self, key: &str) -> Result<&str, ReportError> {
        match self.get(key) {
            Some(Value::Text(s)) => Ok(s),
            Some(_) => Err(ReportError::BadValue(key.to_string())),
            None => Err(ReportError::Missing(key.to_string())),
        }
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(&v.render());
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let map: serde_json::Map<String, serde_json::Value> =
            self.entries.iter().map(|(k, v)| (k.clone(), v.to_json())).collect();
        let mut text = serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("JSON map serializes");
        text.push('\n');
        text
    }

    /// Parses `key=value` lines; every value comes back as [`Value::Text`].
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse_kv(text: &str) -> Result<Report, ReportError> {
        let mut report = Report::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ReportError::Malformed(i + 1))?;
            if key.is_empty() {
                return Err(ReportError::Malformed(i + 1));
            }
            report.push(key, Value::text(value));
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, ratio};

    #[test]
    fn kv_and_json_share_keys() {
        let mut r = Report::new("demo");
        r.push("a", Value::Rational(int(746_496_000)));
        r.push("b", Value::Rational(ratio(1, 3)));
        r.push("c", Value::Float(30.000000001));
        r.push("d", Value::Bool(true));
        assert_eq!(r.to_kv(), "format_version=1\nreport=demo\na=746496000\nb=1/3\nc=30\nd=true\n");
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["format_version"], 1);
        assert_eq!(json["a"], 746_496_000i64);
        assert_eq!(json["b"], "1/3");
        assert_eq!(json["d"], true);
        let keys: Vec<&String> = json.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["format_version", "report", "a", "b", "c", "d"]);
    }

    #[test]
    fn parse_kv_round_trip() {
        let text = "format_version=1\nreport=x\n\n# comment\nk=v=w\n";
        let r = Report::parse_kv(text).unwrap();
        assert_eq!(r.require("k").unwrap(), "v=w");
        assert_eq!(Report::parse_kv("oops"), Err(ReportError::Malformed(1)));
    }

    #[test]
    fn float_formatting() {
        assert_eq!(format_float(166.8123456), "166.812346");
        assert_eq!(format_float(20.0), "20");
        assert_eq!(format_float(-0.0000001), "0");
        assert_eq!(format_float(0.1798), "0.1798");
    }
}

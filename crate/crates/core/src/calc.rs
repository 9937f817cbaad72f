//! Formal operator descriptions (`base_calc`) and the pointwise expression language.

use crate::rational::{format_rational, parse_rational, Rational};
use num_traits::{Signed, Zero};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CalcKind {
    Conv2d,
    Pointwise,
    Rank,
    GlobalNamed,
    Composite,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BaseCalc {
    Conv2d(Conv2d),
    Pointwise(Expr),
    Rank(RankStatistic),
    Global(GlobalOp),
    Composite(Composite),
}

/// Correlation kernel stored row-major (`kernel[y][x]`), applied then scaled by `post_scale`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conv2d {
    pub kernel: Vec<Vec<Rational>>,
    pub post_scale: Rational,
}

impl Conv2d {
    pub fn width(&self) -> usize {
        self.kernel.first().map_or(0, Vec::len)
    }

    pub fn height(&self) -> usize {
        self.kernel.len()
    }

    pub fn taps(&self) -> usize {
        self.width() * self.height()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RankStatistic {
    Min,
    Max,
    /// Lower median for even window sizes.
    Median,
}

impl RankStatistic {
    pub fn as_str(self) -> &'static str {
        match self {
            RankStatistic::Min => "min",
            RankStatistic::Max => "max",
            RankStatistic::Median => "median",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "min" => Some(RankStatistic::Min),
            "max" => Some(RankStatistic::Max),
            "median" => Some(RankStatistic::Median),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GlobalOp {
    HoughLines,
    Histogram,
}

impl GlobalOp {
    pub fn as_str(self) -> &'static str {
        match self {
            GlobalOp::HoughLines => "hough_lines",
            GlobalOp::Histogram => "histogram",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "hough_lines" => Some(GlobalOp::HoughLines),
            "histogram" => Some(GlobalOp::Histogram),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Combine {
    /// Pixelwise sum of all stage results.
    Sum,
    /// Pixelwise L1 magnitude: sum of absolute stage results.
    Magnitude,
    /// Stages run in sequence, each consuming the previous result.
    Last,
}

impl Combine {
    pub fn as_str(self) -> &'static str {
        match self {
            Combine::Sum => "sum",
            Combine::Magnitude => "magnitude",
            Combine::Last => "last",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "sum" => Some(Combine::Sum),
            "magnitude" => Some(Combine::Magnitude),
            "last" => Some(Combine::Last),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Composite {
    pub stages: Vec<BaseCalc>,
    pub combine: Combine,
}

impl BaseCalc {
    /// The description used for an empty `base_calc`: analyzable through the
    /// operator's areas, but not executable.
    pub fn opaque() -> Self {
        BaseCalc::Composite(Composite {
            stages: Vec::new(),
            combine: Combine::Last,
        })
    }

    pub fn is_opaque(&self) -> bool {
        matches!(self, BaseCalc::Composite(c) if c.stages.is_empty())
    }

    pub fn kind(&self) -> CalcKind {
        match self {
            BaseCalc::Conv2d(_) => CalcKind::Conv2d,
            BaseCalc::Pointwise(_) => CalcKind::Pointwise,
            BaseCalc::Rank(_) => CalcKind::Rank,
            BaseCalc::Global(_) => CalcKind::GlobalNamed,
            BaseCalc::Composite(_) => CalcKind::Composite,
        }
    }

    /// True if this description or any nested stage is a whole-frame operation.
    pub fn contains_global(&self) -> bool {
        match self {
            BaseCalc::Global(_) => true,
            BaseCalc::Composite(c) => c.stages.iter().any(BaseCalc::contains_global),
            _ => false,
        }
    }

    /// The Sobel gradient magnitude: `|Gx * I| + |Gy * I|`.
    pub fn sobel() -> Self {
        let k = |rows: [[i64; 3]; 3]| {
            BaseCalc::Conv2d(Conv2d {
                kernel: rows
                    .iter()
                    .map(|r| r.iter().map(|&v| crate::rational::int(v)).collect())
                    .collect(),
                post_scale: crate::rational::int(1),
            })
        };
        BaseCalc::Composite(Composite {
            stages: vec![
                k([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]),
                k([[-1, -2, -1], [0, 0, 0], [1, 2, 1]]),
            ],
            combine: Combine::Magnitude,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    /// Division; a zero divisor yields 0.
    Div,
    Min,
    Max,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl BinaryOp {
    fn as_str(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
            BinaryOp::Min => "min",
            BinaryOp::Max => "max",
            BinaryOp::Lt => "lt",
            BinaryOp::Le => "le",
            BinaryOp::Gt => "gt",
            BinaryOp::Ge => "ge",
            BinaryOp::Eq => "eq",
            BinaryOp::Ne => "ne",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "add" | "+" => BinaryOp::Add,
            "sub" | "-" => BinaryOp::Sub,
            "mul" | "*" => BinaryOp::Mul,
            "div" | "/" => BinaryOp::Div,
            "min" => BinaryOp::Min,
            "max" => BinaryOp::Max,
            "lt" | "<" => BinaryOp::Lt,
            "le" | "<=" => BinaryOp::Le,
            "gt" | ">" => BinaryOp::Gt,
            "ge" | ">=" => BinaryOp::Ge,
            "eq" | "==" => BinaryOp::Eq,
            "ne" | "!=" => BinaryOp::Ne,
            _ => return None,
        })
    }
}

/// Expression over the centre pixel `p`. Comparisons evaluate to 1 or 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Pixel,
    Const(Rational),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    /// `(clamp x lo hi)`
    Clamp(Box<Expr>, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExprError(pub String);

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ExprError {}

impl Expr {
    pub fn node_count(&self) -> u64 {
        match self {
            Expr::Pixel | Expr::Const(_) => 1,
            Expr::Unary(_, a) => 1 + a.node_count(),
            Expr::Binary(_, a, b) => 1 + a.node_count() + b.node_count(),
            Expr::Clamp(a, b, c) => 1 + a.node_count() + b.node_count() + c.node_count(),
        }
    }

    pub fn eval(&self, p: &Rational) -> Rational {
        let bool_value = |b: bool| crate::rational::int(i32::from(b));
        match self {
            Expr::Pixel => p.clone(),
            Expr::Const(c) => c.clone(),
            Expr::Unary(UnaryOp::Abs, a) => a.eval(p).abs(),
            Expr::Binary(op, a, b) => {
                let (a, b) = (a.eval(p), b.eval(p));
                match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div if b.is_zero() => Rational::zero(),
                    BinaryOp::Div => a / b,
                    BinaryOp::Min => a.min(b),
                    BinaryOp::Max => a.max(b),
                    BinaryOp::Lt => bool_value(a < b),
                    BinaryOp::Le => bool_value(a <= b),
                    BinaryOp::Gt => bool_value(a > b),
                    BinaryOp::Ge => bool_value(a >= b),
                    BinaryOp::Eq => bool_value(a == b),
                    BinaryOp::Ne => bool_value(a != b),
                }
            }
            Expr::Clamp(x, lo, hi) => {
                let (x, lo, hi) = (x.eval(p), lo.eval(p), hi.eval(p));
                if x < lo {
                    lo
                } else if x > hi {
                    hi
                } else {
                    x
                }
            }
        }
    }

    /// Parses prefix s-expression text such as `(min (mul p 2) 255)`.
    pub fn parse(text: &str) -> Result<Expr, ExprError> {
        let tokens = tokenize(text);
        let mut pos = 0;
        let expr = parse_tokens(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(ExprError(format!("trailing input after expression: `{}`", tokens[pos])));
        }
        Ok(expr)
    }
}

fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        match ch {
            '(' | ')' => {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
            }
            c => current.push(c),
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

fn parse_tokens(tokens: &[String], pos: &mut usize) -> Result<Expr, ExprError> {
    let token = tokens
        .get(*pos)
        .ok_or_else(|| ExprError("unexpected end of expression".into()))?;
    *pos += 1;
    match token.as_str() {
        "(" => {
            let head = tokens
                .get(*pos)
                .ok_or_else(|| ExprError("unexpected end of expression".into()))?
                .clone();
            *pos += 1;
            let mut args = Vec::new();
            loop {
                match tokens.get(*pos).map(String::as_str) {
                    None => return Err(ExprError("missing `)`".into())),
                    Some(")") => {
                        *pos += 1;
                        break;
                    }
                    Some(_) => args.push(parse_tokens(tokens, pos)?),
                }
            }
            build_application(&head, args)
        }
        ")" => Err(ExprError("unexpected `)`".into())),
        "p" => Ok(Expr::Pixel),
        atom => parse_rational(atom)
            .map(Expr::Const)
            .map_err(|_| ExprError(format!("unknown atom `{atom}`; only `p` and numbers are allowed"))),
    }
}

fn build_application(head: &str, args: Vec<Expr>) -> Result<Expr, ExprError> {
    let arity_error = |n: usize| ExprError(format!("`{head}` takes {n} argument(s), got {}", args.len()));
    if head == "abs" {
        let [a]: [Expr; 1] = args.try_into().map_err(|a: Vec<Expr>| {
            ExprError(format!("`abs` takes 1 argument(s), got {}", a.len()))
        })?;
        return Ok(Expr::Unary(UnaryOp::Abs, Box::new(a)));
    }
    if head == "clamp" {
        if args.len() != 3 {
            return Err(arity_error(3));
        }
        let mut it = args.into_iter().map(Box::new);
        let (x, lo, hi) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
        return Ok(Expr::Clamp(x, lo, hi));
    }
    let op = BinaryOp::from_name(head).ok_or_else(|| ExprError(format!("unknown operator `{head}`")))?;
    if args.len() != 2 {
        return Err(arity_error(2));
    }
    let mut it = args.into_iter().map(Box::new);
    Ok(Expr::Binary(op, it.next().unwrap(), it.next().unwrap()))
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Pixel => f.write_str("p"),
            Expr::Const(c) => f.write_str(&format_rational(c)),
            Expr::Unary(UnaryOp::Abs, a) => write!(f, "(abs {a})"),
            Expr::Binary(op, a, b) => write!(f, "({} {a} {b})", op.as_str()),
            Expr::Clamp(x, lo, hi) => write!(f, "(clamp {x} {lo} {hi})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::int;

    #[test]
    fn parses_nested_expression() {
        let e = Expr::parse("(min (mul p 2) 255)").unwrap();
        assert_eq!(e.node_count(), 5);
        assert_eq!(e.eval(&int(100)), int(200));
        assert_eq!(e.eval(&int(200)), int(255));
        assert_eq!(e.to_string(), "(min (mul p 2) 255)");
    }

    #[test]
    fn symbol_aliases_and_negative_constants() {
        let e = Expr::parse("(+ (- p -3) (* 2 (abs -1.5)))").unwrap();
        assert_eq!(e.eval(&int(1)), int(7));
        assert_eq!(e.to_string(), "(add (sub p -3) (mul 2 (abs -1.5)))");
    }

    #[test]
    fn comparisons_and_clamp() {
        let threshold = Expr::parse("(mul (ge p 128) 255)").unwrap();
        assert_eq!(threshold.eval(&int(127)), int(0));
        assert_eq!(threshold.eval(&int(128)), int(255));
        let c = Expr::parse("(clamp p 10 20)").unwrap();
        assert_eq!(c.eval(&int(3)), int(10));
        assert_eq!(c.eval(&int(15)), int(15));
        assert_eq!(c.eval(&int(30)), int(20));
    }

    #[test]
    fn division_by_zero_is_zero() {
        assert_eq!(Expr::parse("(div 5 (sub p p))").unwrap().eval(&int(4)), int(0));
    }

    #[test]
    fn identity_is_single_node() {
        assert_eq!(Expr::parse("p").unwrap().node_count(), 1);
    }

    #[test]
    fn rejects_bad_expressions() {
        for bad in ["", "(", "(add p)", "(foo p 1)", "q", "(abs p p)", "p p", ")", "(clamp p 1)"] {
            assert!(Expr::parse(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn sobel_has_two_stages() {
        let BaseCalc::Composite(c) = BaseCalc::sobel() else { panic!() };
        assert_eq!(c.stages.len(), 2);
        assert_eq!(c.combine, Combine::Magnitude);
        assert!(!BaseCalc::sobel().is_opaque());
        assert!(BaseCalc::opaque().is_opaque());
    }
}

//! Pixel-level execution of formal operator descriptions.
//!
//! Windows are anchored at `floor((k - 1) / 2)` and read past the frame edge
//! by replicating the border. Kernels are applied as correlation (not
//! flipped). Results round half away from zero and are clamped to the output
//! range `[0, 2^pixres - 1]`.

use super::frame::{max_value, Frame, FrameError, PGM_MAX_PIXRES};
use crate::calc::{BaseCalc, Combine, Composite, Conv2d, Expr, GlobalOp, RankStatistic};
use crate::model::{AreaSpec, Node, NodeId, OperatorSpec, PipelineGraph};
use crate::platform::HOUGH_VOTES_PER_PIXEL;
use crate::rational::{int, round_half_away, Rational};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive};
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("operator {0} has an opaque base_calc and cannot be executed")]
    Opaque(NodeId),
    #[error("operator {operator}: {message}")]
    Dimension { operator: NodeId, message: String },
    #[error("operator {0}: intermediate value exceeds 128-bit range")]
    Overflow(NodeId),
    #[error("node {0} has no input frame")]
    MissingInput(NodeId),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

struct Cx<'a> {
    op: &'a OperatorSpec,
    out_pixres: u32,
}

impl Cx<'_> {
    fn dim(&self, message: impl Into<String>) -> ExecError {
        ExecError::Dimension {
            operator: self.op.id,
            message: message.into(),
        }
    }

    fn clamp(&self, v: i128) -> u64 {
        let max = max_value(self.out_pixres) as i128;
        v.clamp(0, max) as u64
    }

    fn clamp_frame(&self, width: u32, height: u32, values: &[i128]) -> Frame {
        Frame {
            width,
            height,
            pixres: self.out_pixres,
            pixels: values.iter().map(|&v| self.clamp(v)).collect(),
        }
    }
}

/// Applies one operator to one input frame.
pub fn execute_operator(op: &OperatorSpec, input: &Frame) -> Result<Frame, ExecError> {
    input.check()?;
    if op.base_calc.is_opaque() {
        return Err(ExecError::Opaque(op.id));
    }
    let cx = Cx {
        op,
        out_pixres: op.out_pixres.unwrap_or(input.pixres),
    };
    apply(&cx, &op.base_calc, input)
}

fn apply(cx: &Cx, calc: &BaseCalc, input: &Frame) -> Result<Frame, ExecError> {
    match calc {
        BaseCalc::Global(g) => global(cx, *g, input),
        BaseCalc::Composite(c) if c.combine == Combine::Last => {
            let mut current = input.clone();
            for stage in &c.stages {
                current = apply(cx, stage, &current)?;
            }
            Ok(current)
        }
        _ => {
            let values = raw(cx, calc, input)?;
            Ok(cx.clamp_frame(input.width, input.height, &values))
        }
    }
}

/// Rounded, unclamped per-pixel results of a same-size stage.
fn raw(cx: &Cx, calc: &BaseCalc, input: &Frame) -> Result<Vec<i128>, ExecError> {
    match calc {
        BaseCalc::Conv2d(c) => conv2d(cx, c, input),
        BaseCalc::Pointwise(e) => Ok(pointwise(e, input)),
        BaseCalc::Rank(stat) => rank(cx, *stat, input),
        BaseCalc::Composite(Composite { stages, combine }) => match combine {
            Combine::Last => Ok(apply(cx, calc, input)?.pixels.iter().map(|&p| p as i128).collect()),
            Combine::Sum | Combine::Magnitude => {
                let mut acc = vec![0i128; input.pixels.len()];
                for stage in stages {
                    let values = raw(cx, stage, input)?;
                    for (a, v) in acc.iter_mut().zip(values) {
                        let v = if *combine == Combine::Magnitude {
                            v.checked_abs().ok_or(ExecError::Overflow(cx.op.id))?
                        } else {
                            v
                        };
                        *a = a.checked_add(v).ok_or(ExecError::Overflow(cx.op.id))?;
                    }
                }
                Ok(acc)
            }
        },
        BaseCalc::Global(_) => Err(cx.dim("a global stage cannot be combined pixelwise")),
    }
}

fn conv2d(cx: &Cx, c: &Conv2d, input: &Frame) -> Result<Vec<i128>, ExecError> {
    let overflow = || ExecError::Overflow(cx.op.id);
    let (kw, kh) = (c.width() as i64, c.height() as i64);
    if kw == 0 || kh == 0 {
        return Err(cx.dim("empty kernel"));
    }
    // Integer kernel over a common denominator; the result is
    // post_scale * sum / denominator.
    let denominator = c
        .kernel
        .iter()
        .flatten()
        .fold(num_bigint::BigInt::one(), |acc, k| acc.lcm(k.denom()));
    let weights: Vec<i128> = c
        .kernel
        .iter()
        .flatten()
        .map(|k| (k * Rational::from_integer(denominator.clone())).to_integer().to_i128())
        .collect::<Option<_>>()
        .ok_or_else(overflow)?;
    let scale = &c.post_scale / Rational::from_integer(denominator);
    let num = scale.numer().to_i128().ok_or_else(overflow)?;
    let den = scale.denom().to_i128().ok_or_else(overflow)?;
    let (ax, ay) = ((kw - 1) / 2, (kh - 1) / 2);
    let mut out = Vec::with_capacity(input.pixels.len());
    for y in 0..input.height as i64 {
        for x in 0..input.width as i64 {
            let mut sum: i128 = 0;
            for ky in 0..kh {
                for kx in 0..kw {
                    let w = weights[(ky * kw + kx) as usize];
                    if w == 0 {
                        continue;
                    }
                    let p = input.get_clamped(x + kx - ax, y + ky - ay) as i128;
                    sum = w.checked_mul(p).and_then(|t| sum.checked_add(t)).ok_or_else(overflow)?;
                }
            }
            let scaled = sum.checked_mul(num).ok_or_else(overflow)?;
            out.push(div_round_half_away(scaled, den));
        }
    }
    Ok(out)
}

/// `n / d` for `d > 0`, rounded half away from zero.
fn div_round_half_away(n: i128, d: i128) -> i128 {
    let q = n / d;
    let r = (n % d).abs();
    if 2 * r >= d {
        q + n.signum()
    } else {
        q
    }
}

fn pointwise(e: &Expr, input: &Frame) -> Vec<i128> {
    let eval = |p: u64| -> i128 {
        let v = round_half_away(&e.eval(&int(p)));
        v.to_i128().unwrap_or(if v.is_negative() { i128::MIN } else { i128::MAX })
    };
    if input.pixres <= PGM_MAX_PIXRES && input.pixels.len() as u64 > max_value(input.pixres) {
        let table: Vec<i128> = (0..=max_value(input.pixres)).map(eval).collect();
        input.pixels.iter().map(|&p| table[p as usize]).collect()
    } else {
        let mut cache: HashMap<u64, i128> = HashMap::new();
        input.pixels.iter().map(|&p| *cache.entry(p).or_insert_with(|| eval(p))).collect()
    }
}

fn rank(cx: &Cx, stat: RankStatistic, input: &Frame) -> Result<Vec<i128>, ExecError> {
    let (wx, wy) = match cx.op.input_area {
        AreaSpec::Local { x, y } => (x as i64, y as i64),
        AreaSpec::Global => return Err(cx.dim("rank filters need a local input_area")),
    };
    let (ax, ay) = ((wx - 1) / 2, (wy - 1) / 2);
    let mut window = Vec::with_capacity((wx * wy) as usize);
    let mut out = Vec::with_capacity(input.pixels.len());
    for y in 0..input.height as i64 {
        for x in 0..input.width as i64 {
            window.clear();
            for dy in 0..wy {
                for dx in 0..wx {
                    window.push(input.get_clamped(x + dx - ax, y + dy - ay));
                }
            }
            let v = match stat {
                RankStatistic::Min => *window.iter().min().unwrap(),
                RankStatistic::Max => *window.iter().max().unwrap(),
                RankStatistic::Median => {
                    window.sort_unstable();
                    window[(window.len() - 1) / 2]
                }
            };
            out.push(v as i128);
        }
    }
    Ok(out)
}

fn global(cx: &Cx, g: GlobalOp, input: &Frame) -> Result<Frame, ExecError> {
    let (ow, oh) = match cx.op.output_area {
        AreaSpec::Local { x, y } => (x, y),
        AreaSpec::Global => return Err(cx.dim("global operators need concrete output dimensions")),
    };
    match g {
        GlobalOp::Histogram => {
            if input.pixres > PGM_MAX_PIXRES {
                return Err(cx.dim(format!("histogram of {}-bit input is not supported", input.pixres)));
            }
            let bins = 1u64 << input.pixres;
            if (ow as u64, oh) != (bins, 1) {
                return Err(cx.dim(format!(
                    "histogram of {}-bit input has {bins}x1 bins, output_area is {ow}x{oh}",
                    input.pixres
                )));
            }
            let mut counts = vec![0i128; bins as usize];
            for &p in &input.pixels {
                counts[p as usize] += 1;
            }
            Ok(cx.clamp_frame(ow, oh, &counts))
        }
        GlobalOp::HoughLines => {
            // Edge pixels (upper half of the input range) vote for every
            // angle step; rho in [-D, D] maps onto the output rows.
            let threshold = 1u64 << (input.pixres - 1);
            let diagonal = ((input.width as f64).powi(2) + (input.height as f64).powi(2)).sqrt();
            let trig: Vec<(f64, f64)> = (0..HOUGH_VOTES_PER_PIXEL)
                .map(|d| (d as f64).to_radians())
                .map(|t| (t.cos(), t.sin()))
                .collect();
            let mut acc = vec![0i128; ow as usize * oh as usize];
            for y in 0..input.height {
                for x in 0..input.width {
                    if input.get(x, y) < threshold {
                        continue;
                    }
                    for (d, (c, s)) in trig.iter().enumerate() {
                        let rho = x as f64 * c + y as f64 * s;
                        let row = (((rho + diagonal) / (2.0 * diagonal)) * oh as f64).floor() as i64;
                        let row = row.clamp(0, oh as i64 - 1) as usize;
                        let col = d * ow as usize / HOUGH_VOTES_PER_PIXEL as usize;
                        acc[row * ow as usize + col] += 1;
                    }
                }
            }
            Ok(cx.clamp_frame(ow, oh, &acc))
        }
    }
}

/// Runs every reachable operator in topological order. `inputs` supplies
/// one frame per sensor; the result holds the output frame of each sensor
/// and operator.
pub fn execute_chain(
    graph: &PipelineGraph,
    inputs: &BTreeMap<NodeId, Frame>,
) -> Result<BTreeMap<NodeId, Frame>, ExecError> {
    let mut frames: BTreeMap<NodeId, Frame> = BTreeMap::new();
    for &id in graph.topo_order() {
        match graph.node(id).expect("topo order lists graph nodes") {
            Node::Sensor(s) => {
                let frame = inputs.get(&id).ok_or(ExecError::MissingInput(id))?;
                frame.check()?;
                if (frame.width, frame.height) != (s.res_x, s.res_y) || frame.pixres != s.pixres {
                    return Err(ExecError::Dimension {
                        operator: id,
                        message: format!(
                            "sensor expects {}x{} at {} bit, input frame is {}x{} at {} bit",
                            s.res_x, s.res_y, s.pixres, frame.width, frame.height, frame.pixres
                        ),
                    });
                }
                frames.insert(id, frame.clone());
            }
            Node::Operator(op) => {
                let Some(source) = graph.inputs(id).next().and_then(|e| frames.get(&e.from)) else {
                    continue;
                };
                let out = execute_operator(op, source)?;
                frames.insert(id, out);
            }
            Node::Sink(_) => {}
        }
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{sobel_chain, sobel};
    use crate::model::build_graph;
    use crate::rational::ratio;
    use proptest::prelude::*;

    fn op(calc: BaseCalc, input: AreaSpec) -> OperatorSpec {
        OperatorSpec {
            id: 1,
            name: "t".into(),
            input_area: input,
            output_area: AreaSpec::Local { x: 1, y: 1 },
            base_calc: calc,
            out_pixres: None,
        }
    }

    fn conv(kernel: Vec<Vec<i64>>) -> BaseCalc {
        BaseCalc::Conv2d(Conv2d {
            kernel: kernel.into_iter().map(|r| r.into_iter().map(int).collect()).collect(),
            post_scale: int(1),
        })
    }

    fn step() -> Frame {
        Frame::from_fn(5, 5, 12, |x, _| if x >= 2 { 100 } else { 0 })
    }

    #[test]
    fn sobel_on_step() {
        let out = execute_operator(&sobel(1), &step()).unwrap();
        for y in 0..5 {
            let row: Vec<u64> = (0..5).map(|x| out.get(x, y)).collect();
            assert_eq!(row, [0, 400, 400, 0, 0]);
        }
    }

    #[test]
    fn box_blur_rounds_half_away() {
        let blur = BaseCalc::Conv2d(Conv2d {
            kernel: vec![vec![int(1), int(1)]],
            post_scale: ratio(1, 2),
        });
        let f = Frame::from_fn(3, 1, 8, |x, _| [1, 2, 4][x as usize]);
        // windows (anchor 0): (1,2) (2,4) (4,4)
        let out = execute_operator(&op(blur, AreaSpec::Local { x: 2, y: 1 }), &f).unwrap();
        assert_eq!(out.pixels, [2, 3, 4]);
        assert_eq!(div_round_half_away(-3, 2), -2);
        assert_eq!(div_round_half_away(-5, 4), -1);
    }

    #[test]
    fn correlation_is_not_flipped() {
        let f = Frame::from_fn(3, 1, 8, |x, _| x as u64 * 10);
        let shift = conv(vec![vec![0, 0, 1]]);
        let out = execute_operator(&op(shift, AreaSpec::Local { x: 3, y: 1 }), &f).unwrap();
        assert_eq!(out.pixels, [10, 20, 20]);
    }

    #[test]
    fn negative_results_clamp_to_zero() {
        let f = Frame::from_fn(3, 1, 8, |x, _| x as u64 * 10);
        let neg = conv(vec![vec![1, 0, -1]]);
        let out = execute_operator(&op(neg, AreaSpec::Local { x: 3, y: 1 }), &f).unwrap();
        assert_eq!(out.pixels, [0, 0, 0]);
    }

    #[test]
    fn rank_filters() {
        let f = Frame::from_fn(4, 1, 8, |x, _| [5, 1, 9, 3][x as usize]);
        let area = AreaSpec::Local { x: 2, y: 1 };
        let run = |s| execute_operator(&op(BaseCalc::Rank(s), area), &f).unwrap().pixels;
        assert_eq!(run(RankStatistic::Min), [1, 1, 3, 3]);
        assert_eq!(run(RankStatistic::Max), [5, 9, 9, 3]);
        assert_eq!(run(RankStatistic::Median), [1, 1, 3, 3]);
        let three = AreaSpec::Local { x: 3, y: 1 };
        let med = execute_operator(&op(BaseCalc::Rank(RankStatistic::Median), three), &f).unwrap();
        assert_eq!(med.pixels, [5, 5, 3, 3]);
    }

    #[test]
    fn pointwise_and_out_pixres() {
        let mut o = op(
            BaseCalc::Pointwise(Expr::parse("(div p 3)").unwrap()),
            AreaSpec::Local { x: 1, y: 1 },
        );
        o.out_pixres = Some(2);
        let f = Frame::from_fn(4, 1, 8, |x, _| [0, 2, 4, 200][x as usize]);
        let out = execute_operator(&o, &f).unwrap();
        assert_eq!(out.pixres, 2);
        assert_eq!(out.pixels, [0, 1, 1, 3]);
    }

    #[test]
    fn histogram() {
        let mut o = op(BaseCalc::Global(GlobalOp::Histogram), AreaSpec::Global);
        o.output_area = AreaSpec::Local { x: 4, y: 1 };
        let f = Frame::from_fn(3, 2, 2, |x, y| ((x + y) % 4) as u64);
        assert_eq!(execute_operator(&o, &f).unwrap().pixels, [1, 2, 2, 1]);
        o.output_area = AreaSpec::Local { x: 5, y: 1 };
        assert!(matches!(execute_operator(&o, &f), Err(ExecError::Dimension { .. })));
    }

    #[test]
    fn hough_counts_every_angle() {
        let mut o = op(BaseCalc::Global(GlobalOp::HoughLines), AreaSpec::Global);
        o.output_area = AreaSpec::Local { x: 180, y: 16 };
        o.out_pixres = Some(16);
        let f = Frame::from_fn(8, 8, 8, |x, y| if x == 3 && y == 4 { 255 } else { 0 });
        let out = execute_operator(&o, &f).unwrap();
        assert_eq!((out.width, out.height), (180, 16));
        for col in 0..180 {
            let votes: u64 = (0..16).map(|row| out.get(col, row)).sum();
            assert_eq!(votes, 1);
        }
    }

    #[test]
    fn opaque_refuses() {
        let o = op(BaseCalc::opaque(), AreaSpec::Local { x: 3, y: 3 });
        assert_eq!(execute_operator(&o, &step()), Err(ExecError::Opaque(1)));
    }

    #[test]
    fn chain_checks_sensor_frames() {
        let graph = build_graph(&sobel_chain()).unwrap();
        let inputs: BTreeMap<_, _> = [(0, step())].into_iter().collect();
        assert!(matches!(execute_chain(&graph, &inputs), Err(ExecError::Dimension { .. })));
        let full = Frame::filled(1920, 1080, 12, 7);
        let inputs: BTreeMap<_, _> = [(0, full)].into_iter().collect();
        let out = execute_chain(&graph, &inputs).unwrap();
        assert!(out[&1].pixels.iter().all(|&p| p == 0));
        assert_eq!(execute_chain(&graph, &BTreeMap::new()), Err(ExecError::MissingInput(0)));
    }

    proptest! {
        #[test]
        fn identity_kernel_is_exact(w in 1u32..7, h in 1u32..7, pixres in 1u32..=32, seed in any::<u64>()) {
            let f = Frame::from_fn(w, h, pixres, |x, y| seed.rotate_left(x * 5 + y * 11) & max_value(pixres));
            let id = conv(vec![vec![0, 0, 0], vec![0, 1, 0], vec![0, 0, 0]]);
            let out = execute_operator(&op(id, AreaSpec::Local { x: 3, y: 3 }), &f).unwrap();
            prop_assert_eq!(out, f);
        }

        #[test]
        fn sobel_of_constant_is_zero(w in 1u32..7, h in 1u32..7, v in 0u64..4096) {
            let f = Frame::filled(w, h, 12, v);
            let out = execute_operator(&sobel(1), &f).unwrap();
            prop_assert!(out.pixels.iter().all(|&p| p == 0));
        }
    }
}

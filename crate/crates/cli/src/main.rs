//! `ipolc`: validate, analyze, map and simulate IPOL operator chains.
//!
//! Exit codes: 0 success, 1 the chain failed validation, 2 no mapping meets
//! the target rate, 3 unreadable or malformed input, 4 bad usage.

use clap::{Args, Parser, Subcommand, ValueEnum};
use ipol::mapper::{assignment_from_report, search_space_size, EXHAUSTIVE_LIMIT};
use ipol::model::ValidationReport;
use ipol::platform::{BandwidthModel, CostOptions};
use ipol::rational::parse_rational;
use ipol::report::{Report, Value};
use ipol::{
    build_graph, chain_report, evaluate_mapping, execute_chain, parse_ipol, parse_platform, search_mapping, simulate,
    validate, Constraints, Frame, Mapping, PipelineGraph, PlatformSpec, SearchOutcome, SimConfig,
};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ipolc", version, about = "Validate, analyze, map and simulate IPOL operator chains")]
struct Cli {
    /// Suppress warnings and progress notes on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    /// Print reports as JSON instead of key=value lines.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a chain's structure.
    Validate { chain: PathBuf },
    /// Report per-edge rates and per-operator bandwidth.
    Analyze {
        chain: PathBuf,
        /// Readable table with Mbit/s figures.
        #[arg(long, conflicts_with = "json")]
        human: bool,
    },
    /// Assign operators to the units of a platform.
    Map {
        chain: PathBuf,
        platform: PathBuf,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Run the discrete-event simulation of a mapped chain.
    Simulate {
        chain: PathBuf,
        platform: PathBuf,
        /// Mapping report with `assign.<operator>=<unit>` lines.
        #[arg(long, required_unless_present = "auto_map", conflicts_with = "auto_map")]
        mapping: Option<PathBuf>,
        /// Search for a mapping first.
        #[arg(long)]
        auto_map: bool,
        #[command(flatten)]
        search: SearchArgs,
        /// Frames to complete at the terminal before stopping.
        #[arg(long, default_value_t = SimConfig::default().frames)]
        frames: u64,
        #[arg(long, default_value_t = SimConfig::default().warmup)]
        warmup: u64,
        #[arg(long, default_value_t = SimConfig::default().queue_depth)]
        queue_depth: usize,
        /// Sensor frame (PGM) to push through the operators.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Directory receiving `node_<id>.pgm` (or `.raw` above 16 bits) for every computed frame.
        #[arg(long, requires = "input")]
        dump_frames: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SearchArgs {
    /// Required frame rate; defaults to the sensor rate.
    #[arg(long)]
    target_fps: Option<String>,
    /// Enumerate all assignments; refused when the space is too large.
    #[arg(long)]
    exhaustive: bool,
    #[arg(long, value_enum, default_value_t = BandwidthArg::PerKind)]
    bandwidth_model: BandwidthArg,
    /// Add compute and memory time instead of overlapping them.
    #[arg(long)]
    no_overlap: bool,
    /// Ignore the platform's interconnect bandwidth.
    #[arg(long)]
    ignore_interconnect: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum BandwidthArg {
    Reuse,
    Naive,
    PerKind,
}

enum Failure {
    Invalid(String),
    Infeasible,
    Input(String),
    Usage(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Infeasible => 2,
            Failure::Input(_) => 3,
            Failure::Usage(_) => 4,
        }
    }
}

type Outcome = Result<(), Failure>;

struct Out {
    quiet: bool,
    json: bool,
}

impl Out {
    fn report(&self, report: &Report) {
        if self.json {
            print!("{}", report.to_json());
        } else {
            print!("{}", report.to_kv());
        }
    }

    fn note(&self, message: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", message.as_ref());
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    let out = Out {
        quiet: cli.quiet,
        json: cli.json,
    };
    match run(cli.command, &out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            match &failure {
                Failure::Invalid(m) | Failure::Input(m) | Failure::Usage(m) => eprintln!("ipolc: {m}"),
                Failure::Infeasible => {}
            }
            ExitCode::from(failure.code())
        }
    }
}

fn run(command: Command, out: &Out) -> Outcome {
    match command {
        Command::Validate { chain } => {
            let (_, report) = load_chain(&chain, out)?;
            let mut r = Report::new("validation");
            r.push("valid", Value::Bool(report.is_valid()));
            r.push("errors", Value::text(report.errors().count().to_string()));
            r.push("warnings", Value::text(report.warnings().count().to_string()));
            out.report(&r);
            if !report.is_valid() {
                return Err(Failure::Invalid(format!("{} failed validation", chain.display())));
            }
            Ok(())
        }
        Command::Analyze { chain, human } => {
            let graph = valid_chain(&chain, out)?;
            let analysis = chain_report(&graph).map_err(|e| Failure::Invalid(e.to_string()))?;
            if human {
                print!("{}", analysis.render_human());
            } else {
                out.report(&analysis.to_report());
            }
            Ok(())
        }
        Command::Map { chain, platform, search } => {
            let graph = valid_chain(&chain, out)?;
            let platform = load_platform(&platform)?;
            match find_mapping(&graph, &platform, &search, out)? {
                Some(mapping) => {
                    out.report(&mapping.to_report());
                    Ok(())
                }
                None => Err(Failure::Infeasible),
            }
        }
        Command::Simulate {
            chain,
            platform,
            mapping,
            auto_map: _,
            search,
            frames,
            warmup,
            queue_depth,
            input,
            dump_frames,
        } => {
            let graph = valid_chain(&chain, out)?;
            let platform = load_platform(&platform)?;
            let mapping = match mapping {
                Some(path) => {
                    let text = read(&path)?;
                    let text = String::from_utf8(text).map_err(|_| input_error(&path, "not UTF-8 text"))?;
                    let report = Report::parse_kv(&text).map_err(|e| input_error(&path, e))?;
                    let assignment = assignment_from_report(&report).map_err(|e| input_error(&path, e))?;
                    let constraints = constraints(&search)?;
                    evaluate_mapping(&graph, &platform, &assignment, &constraints)
                        .map_err(|e| input_error(&path, e))?
                }
                None => match find_mapping(&graph, &platform, &search, out)? {
                    Some(m) => m,
                    None => return Err(Failure::Infeasible),
                },
            };
            let config = SimConfig {
                frames,
                warmup,
                queue_depth,
            };
            let sim = simulate(&graph, &platform, &mapping, &config).map_err(|e| match e {
                ipol::sim::SimError::Config(m) => Failure::Usage(m),
                other => Failure::Input(other.to_string()),
            })?;
            if let Some(path) = input {
                run_frames(&graph, &path, dump_frames.as_deref(), out)?;
            }
            let mut report = sim.to_report();
            for (op, unit) in &mapping.assignment {
                report.push(format!("assign.{op}"), Value::text(unit.clone()));
            }
            out.report(&report);
            Ok(())
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn input_error(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Input(format!("{}: {e}", path.display()))
}

fn load_chain(path: &Path, out: &Out) -> Result<(PipelineGraph, ValidationReport), Failure> {
    let spec = parse_ipol(&read(path)?).map_err(|e| input_error(path, e))?;
    let graph = build_graph(&spec).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    let report = validate(&graph);
    for finding in &report.findings {
        if finding.severity == ipol::model::Severity::Error {
            eprintln!("{}: {finding}", path.display());
        } else {
            out.note(format!("{}: {finding}", path.display()));
        }
    }
    Ok((graph, report))
}

fn valid_chain(path: &Path, out: &Out) -> Result<PipelineGraph, Failure> {
    let (graph, report) = load_chain(path, out)?;
    if !report.is_valid() {
        return Err(Failure::Invalid(format!("{} failed validation", path.display())));
    }
    Ok(graph)
}

fn load_platform(path: &Path) -> Result<PlatformSpec, Failure> {
    parse_platform(&read(path)?).map_err(|e| input_error(path, e))
}

fn constraints(args: &SearchArgs) -> Result<Constraints, Failure> {
    let target_fps = match &args.target_fps {
        Some(text) => {
            let fps = parse_rational(text).map_err(|e| Failure::Usage(format!("--target-fps: {e}")))?;
            if fps <= ipol::rational::int(0) {
                return Err(Failure::Usage("--target-fps must be positive".into()));
            }
            Some(fps)
        }
        None => None,
    };
    Ok(Constraints {
        target_fps,
        cost: CostOptions {
            bandwidth: match args.bandwidth_model {
                BandwidthArg::Reuse => BandwidthModel::Reuse,
                BandwidthArg::Naive => BandwidthModel::Naive,
                BandwidthArg::PerKind => BandwidthModel::PerKind,
            },
            overlap: !args.no_overlap,
        },
        honor_interconnect: !args.ignore_interconnect,
        force_exhaustive: args.exhaustive,
    })
}

/// `None` when no mapping meets the target; the diagnosis is printed.
fn find_mapping(
    graph: &PipelineGraph,
    platform: &PlatformSpec,
    args: &SearchArgs,
    out: &Out,
) -> Result<Option<Mapping>, Failure> {
    let constraints = constraints(args)?;
    let space = search_space_size(graph, platform).map_err(|e| Failure::Invalid(e.to_string()))?;
    if args.exhaustive && space > EXHAUSTIVE_LIMIT {
        return Err(Failure::Usage(format!(
            "--exhaustive: {space} assignments exceed the limit of {EXHAUSTIVE_LIMIT}"
        )));
    }
    let outcome = search_mapping(graph, platform, &constraints).map_err(|e| Failure::Invalid(e.to_string()))?;
    match outcome {
        SearchOutcome::Found(m) => {
            if m.heuristic {
                out.note("note: search space too large for enumeration; mapping found heuristically");
            }
            Ok(Some(m))
        }
        SearchOutcome::Infeasible(inf) => {
            out.report(&inf.to_report());
            for b in &inf.binding {
                eprintln!("infeasible: operator {}: {}", b.operator, b.reason);
            }
            Ok(None)
        }
    }
}

fn run_frames(graph: &PipelineGraph, path: &Path, dump: Option<&Path>, out: &Out) -> Outcome {
    let frame = Frame::decode(&read(path)?, None).map_err(|e| input_error(path, e))?;
    let sensors: Vec<u64> = graph.sensors().map(|s| s.id).collect();
    let [sensor] = sensors.as_slice() else {
        return Err(Failure::Usage("--input needs a chain with exactly one sensor".into()));
    };
    let inputs: BTreeMap<_, _> = [(*sensor, frame)].into_iter().collect();
    let frames = execute_chain(graph, &inputs).map_err(|e| input_error(path, e))?;
    if let Some(dir) = dump {
        fs::create_dir_all(dir).map_err(|e| input_error(dir, e))?;
        for (id, frame) in &frames {
            let extension = if frame.pixres <= 16 { "pgm" } else { "raw" };
            let file = dir.join(format!("node_{id}.{extension}"));
            fs::write(&file, frame.encode()).map_err(|e| input_error(&file, e))?;
        }
        out.note(format!("wrote {} frames to {}", frames.len(), dir.display()));
    }
    Ok(())
}

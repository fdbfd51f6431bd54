//! `ccsim`: run netlists, operating points, parameter sweeps and
//! measurements from the command line.

use std::fs::File;
use std::io::{self, BufWriter, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use conveyor_sim::dc::{newton_dc, SolverOptions};
use conveyor_sim::library::{emit_example, AmplifierConfig, ConveyorStyle, Example, TranslinearConfig};
use conveyor_sim::measure::{self, evaluate, report_table, MeasureSpec, Probe};
use conveyor_sim::mna::index_unknowns;
use conveyor_sim::netlist::{expand_hierarchy, parse_netlist, FlatCircuit, NetlistAst};
use conveyor_sim::par::Execution;
use conveyor_sim::runner::{self, prepare, write_dc_csv, write_op_csv, write_sweep_csv, RunOptions};
use conveyor_sim::transient::{IntegrationMethod, Waveform};
use conveyor_sim::units::parse_value;
use conveyor_sim::Error;

#[derive(Parser)]
#[command(name = "ccsim", version, about = "Analog circuit simulator with current-conveyor support")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every analysis in a netlist and report its measurements.
    Run(RunArgs),
    /// Compute the DC operating point only.
    Op(OpArgs),
    /// Repeat a run for each value of one `.param`.
    Sweep(SweepArgs),
    /// List or emit the built-in example netlists.
    Examples(ExampleArgs),
    /// Recompute measurements from a waveform CSV.
    Measure(MeasureArgs),
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long)]
    reltol: Option<f64>,
    #[arg(long)]
    abstol: Option<f64>,
    #[arg(long)]
    vntol: Option<f64>,
    /// Integration method, overriding the netlist's `.tran`.
    #[arg(long, value_parser = parse_method)]
    method: Option<IntegrationMethod>,
    /// Override a `.param` (repeatable).
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
    /// Concurrent sweep points (1 runs sequentially).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    netlist: PathBuf,
    /// Data CSV destination (waveform, else DC sweep, else operating point). Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated waveform columns, e.g. `v(out),i(vin)`.
    #[arg(long, value_delimiter = ',')]
    probes: Vec<String>,
    /// Also write the measurements as CSV.
    #[arg(long)]
    measures: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct OpArgs {
    netlist: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct SweepArgs {
    netlist: PathBuf,
    /// Parameter and values, e.g. `r1=500,1k,2k`.
    #[arg(long, value_name = "NAME=V1,V2,...")]
    sweep: String,
    /// Summary CSV destination. Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct ExampleArgs {
    #[arg(long, conflicts_with = "emit")]
    list: bool,
    /// Example name to print as a netlist.
    #[arg(long, value_name = "NAME")]
    emit: Option<String>,
    #[arg(long, requires = "emit")]
    r1: Option<String>,
    #[arg(long, requires = "emit")]
    r2: Option<String>,
    /// Bias current of a current-controlled conveyor.
    #[arg(long, requires = "emit")]
    ib: Option<String>,
    /// Intrinsic X resistance of a behavioral conveyor.
    #[arg(long, requires = "emit", conflicts_with = "ib")]
    rx: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MeasureArgs {
    /// Waveform CSV written by `ccsim run`.
    waveform: PathBuf,
    /// Netlist whose `.measure` lines (and source terminals) to use.
    #[arg(long)]
    netlist: Option<PathBuf>,
    /// Extra measurement, e.g. `g gain v(in) v(out)` (repeatable).
    #[arg(long = "measure", value_name = "SPEC")]
    specs: Vec<String>,
    /// Measurement CSV destination; the table always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<IntegrationMethod, String> {
    IntegrationMethod::from_str(s).map_err(|e| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } | Error::Netlist(_) => 2,
        Error::Singular { .. } | Error::Convergence { .. } | Error::SweepPoint { .. } => 3,
        Error::Io(_) => 4,
        Error::Domain(_) | Error::Argument(_) | Error::Measurement(_) => 1,
    }
}

fn color_enabled() -> bool {
    std::env::var_os("CCSIM_NO_COLOR").is_none() && io::stderr().is_terminal()
}

fn report_error(e: &Error) {
    let label = if color_enabled() { "\x1b[1;31merror\x1b[0m" } else { "error" };
    eprintln!("{label}: {e}");
}

fn io_err(path: &Path, e: io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_to<F>(path: Option<&Path>, f: F) -> Result<(), Error>
where
    F: FnOnce(&mut dyn Write) -> Result<(), Error>,
{
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).map_err(|e| io_err(p, e))?);
            f(&mut w)?;
            w.flush().map_err(|e| io_err(p, e))
        }
        None => {
            let mut lock = io::stdout().lock();
            f(&mut lock)?;
            lock.flush().map_err(|e| Error::Io(format!("stdout: {e}")))
        }
    }
}

fn name_value(text: &str) -> Result<(String, &str), Error> {
    let (name, value) = text
        .split_once('=')
        .ok_or_else(|| Error::Argument(format!("expected NAME=VALUE, got '{text}'")))?;
    let name = name.trim();
    if name.is_empty() {
        return Err(Error::Argument(format!("missing name in '{text}'")));
    }
    Ok((name.to_ascii_lowercase(), value.trim()))
}

fn number(text: &str) -> Result<f64, Error> {
    parse_value(text, 0).map_err(|_| Error::Argument(format!("'{text}' is not a number")))
}

impl SolverArgs {
    fn options(&self) -> Result<RunOptions, Error> {
        let mut solver = SolverOptions::default();
        for (slot, value) in [
            (&mut solver.reltol, self.reltol),
            (&mut solver.abstol, self.abstol),
            (&mut solver.vntol, self.vntol),
        ] {
            if let Some(v) = value {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Argument(format!("tolerances must be positive, got {v}")));
                }
                *slot = v;
            }
        }
        let params = self
            .params
            .iter()
            .map(|p| {
                let (name, value) = name_value(p)?;
                Ok((name, number(value)?))
            })
            .collect::<Result<_, Error>>()?;
        Ok(RunOptions {
            solver,
            method: self.method,
            params,
            exec: Execution::from_jobs(self.jobs),
        })
    }
}

fn load(path: &Path) -> Result<NetlistAst, Error> {
    parse_netlist(&read_text(path)?)
}

/// Every probe must name a node or element of the circuit.
fn resolve_probes(texts: &[String], c: &FlatCircuit) -> Result<Vec<Probe>, Error> {
    texts
        .iter()
        .map(|t| {
            let p = Probe::parse(t).map_err(|e| Error::Netlist(e.to_string()))?;
            let known = match &p {
                Probe::Voltage(n) => n == "0" || c.node(n).is_some(),
                Probe::Current(b) => c.element(b).is_some(),
            };
            if known {
                Ok(p)
            } else {
                Err(Error::Netlist(format!("probe {p} does not refer to anything in the circuit")))
            }
        })
        .collect()
}

fn cmd_run(args: &RunArgs) -> Result<(), Error> {
    let ast = load(&args.netlist)?;
    let opts = args.solver.options()?;
    let probes = resolve_probes(&args.probes, &prepare(&ast, &opts.params)?)?;
    let out = runner::run(&ast, &opts)?;
    let path = args.out.as_deref();
    if let Some(wave) = &out.wave {
        write_to(path, |w| wave.write_csv(&probes, w))?;
    } else if let Some(dc) = out.dc.last() {
        write_to(path, |w| write_dc_csv(dc, w))?;
    } else if let Some(op) = &out.op {
        write_to(path, |w| write_op_csv(&out.unknowns, op, w))?;
    }
    if !out.measurements.is_empty() {
        let table = report_table(&out.measurements);
        if path.is_some() {
            print!("{table}");
        } else {
            eprint!("{table}");
        }
    }
    if let Some(m) = &args.measures {
        write_to(Some(m), |w| measure::write_csv(&out.measurements, w))?;
    }
    Ok(())
}

fn cmd_op(args: &OpArgs) -> Result<(), Error> {
    let ast = load(&args.netlist)?;
    let opts = args.solver.options()?;
    let c = prepare(&ast, &opts.params)?;
    let u = index_unknowns(&c);
    let op = newton_dc(&c, &u, &opts.solver)?;
    write_to(args.out.as_deref(), |w| write_op_csv(&u, &op, w))
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Error> {
    let ast = load(&args.netlist)?;
    let opts = args.solver.options()?;
    let (param, list) = name_value(&args.sweep)?;
    let values = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| number(s.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    let points = runner::sweep(&ast, &param, &values, &opts)?;
    write_to(args.out.as_deref(), |w| write_sweep_csv(&ast, &points, w))
}

fn cmd_examples(args: &ExampleArgs) -> Result<(), Error> {
    let Some(name) = &args.emit else {
        let width = Example::ALL.iter().map(|e| e.name().len()).max().unwrap_or(0);
        for e in Example::ALL {
            println!("{:width$}  {}", e.name(), e.description());
        }
        return Ok(());
    };
    let example: Example = name.parse()?;
    let mut cfg = AmplifierConfig::default();
    if let Some(r1) = &args.r1 {
        cfg.r1 = number(r1)?;
    }
    if let Some(r2) = &args.r2 {
        cfg.r2 = number(r2)?;
    }
    if let Some(rx) = &args.rx {
        if example == Example::ProposedAmpTranslinear {
            return Err(Error::Argument("--rx applies to behavioral examples; use --ib".into()));
        }
        cfg.conveyor = ConveyorStyle::Behavioral { rx: number(rx)? };
    }
    if let Some(ib) = &args.ib {
        let ib = number(ib)?;
        cfg.conveyor = match example {
            Example::ProposedAmpTranslinear => ConveyorStyle::Translinear(TranslinearConfig {
                ib,
                ..Default::default()
            }),
            Example::ProposedAmp | Example::CcciiChar => ConveyorStyle::Biased {
                ib,
                beta_n: TranslinearConfig::default().cards.loop_beta,
            },
            Example::Ferri1cc | Example::Ferri2cc => {
                return Err(Error::Argument(format!(
                    "--ib needs a current-controlled conveyor; {example} uses CCII+"
                )))
            }
        };
    }
    let text = emit_example(example, &cfg)?;
    write_to(args.out.as_deref(), |w| {
        w.write_all(text.as_bytes()).map_err(|e| Error::Io(e.to_string()))
    })
}

fn cmd_measure(args: &MeasureArgs) -> Result<(), Error> {
    let file = File::open(&args.waveform).map_err(|e| io_err(&args.waveform, e))?;
    let mut wave = Waveform::read_csv(io::BufReader::new(file))?;
    let mut specs: Vec<MeasureSpec> = Vec::new();
    if let Some(path) = &args.netlist {
        let ast = load(path)?;
        wave = wave.with_sources_from(&expand_hierarchy(&ast)?);
        specs.extend(ast.measures().cloned());
    }
    for s in &args.specs {
        specs.push(MeasureSpec::parse(s)?);
    }
    if specs.is_empty() {
        return Err(Error::Argument("nothing to measure: give --netlist or --measure".into()));
    }
    let results = specs.iter().map(|s| evaluate(s, &wave)).collect::<Result<Vec<_>, _>>()?;
    print!("{}", report_table(&results));
    if let Some(out) = &args.out {
        write_to(Some(out), |w| measure::write_csv(&results, w))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Op(a) => cmd_op(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Examples(a) => cmd_examples(a),
        Command::Measure(a) => cmd_measure(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e);
            ExitCode::from(exit_code(&e))
        }
    }
}

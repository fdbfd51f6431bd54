//! Executes a netlist's analysis directives and drives parameter sweeps.

use std::io::Write;

use crate::dc::{dc_sweep, newton_dc, sweep_values, DcSweep, OperatingPoint, SolverOptions};
use crate::error::{Error, Result};
use crate::measure::{evaluate, Measurement};
use crate::mna::{index_unknowns, UnknownMap};
use crate::netlist::{expand_hierarchy, parse_netlist, Directive, FlatCircuit, NetlistAst};
use crate::par::{map_ordered, Execution};
use crate::transient::{run_transient_with, IntegrationMethod, Waveform};
use crate::units::format_sci;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub solver: SolverOptions,
    /// Overrides the `.tran` method (trapezoidal when neither is given).
    pub method: Option<IntegrationMethod>,
    /// `.param` overrides, applied in order.
    pub params: Vec<(String, f64)>,
    pub exec: Execution,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub circuit: FlatCircuit,
    pub unknowns: UnknownMap,
    pub op: Option<OperatingPoint>,
    pub dc: Vec<DcSweep>,
    pub wave: Option<Waveform>,
    pub measurements: Vec<Measurement>,
}

impl RunOutput {
    pub fn measurement(&self, name: &str) -> Option<&Measurement> {
        self.measurements.iter().find(|m| m.name.eq_ignore_ascii_case(name))
    }

    /// Scalar measurement by name.
    pub fn scalar(&self, name: &str) -> Result<f64> {
        self.measurement(name)
            .and_then(Measurement::scalar)
            .ok_or_else(|| Error::Measurement(format!("no scalar measurement '{name}'")))
    }
}

/// Applies parameter overrides and flattens.
pub fn prepare(ast: &NetlistAst, params: &[(String, f64)]) -> Result<FlatCircuit> {
    let mut ast = ast.clone();
    for (name, value) in params {
        ast.set_param(name, *value);
    }
    expand_hierarchy(&ast)
}

/// Runs `.op`, `.dc` and `.tran` in netlist order, then every `.measure`
/// against the transient waveform. A netlist without analyses gets an
/// operating point.
pub fn run(ast: &NetlistAst, opts: &RunOptions) -> Result<RunOutput> {
    let circuit = prepare(ast, &opts.params)?;
    let unknowns = index_unknowns(&circuit);
    let mut out = RunOutput {
        unknowns,
        op: None,
        dc: Vec::new(),
        wave: None,
        measurements: Vec::new(),
        circuit,
    };
    let has_analysis = ast
        .directives
        .iter()
        .any(|d| matches!(d, Directive::Op | Directive::Dc { .. } | Directive::Tran { .. }));
    if !has_analysis {
        out.op = Some(newton_dc(&out.circuit, &out.unknowns, &opts.solver)?);
    }
    for d in &ast.directives {
        match d {
            Directive::Op => out.op = Some(newton_dc(&out.circuit, &out.unknowns, &opts.solver)?),
            Directive::Dc {
                source,
                start,
                stop,
                step,
            } => {
                let values = sweep_values(*start, *stop, *step)?;
                out.dc.push(dc_sweep(&out.circuit, source, &values, &opts.solver)?);
            }
            Directive::Tran {
                tstep,
                tstop,
                method,
            } => {
                let method = opts
                    .method
                    .or(*method)
                    .unwrap_or(IntegrationMethod::Trapezoidal);
                out.wave = Some(run_transient_with(&out.circuit, *tstep, *tstop, method, &opts.solver)?);
            }
            Directive::Measure(_) => {}
        }
    }
    for m in ast.measures() {
        let wave = out.wave.as_ref().ok_or_else(|| {
            Error::Measurement(format!(".measure {} needs a .tran analysis", m.name))
        })?;
        out.measurements.push(evaluate(m, wave)?);
    }
    Ok(out)
}

pub fn run_text(text: &str, opts: &RunOptions) -> Result<RunOutput> {
    run(&parse_netlist(text)?, opts)
}

/// Writes an operating point as `unknown,value` rows.
pub fn write_op_csv<W: Write>(u: &UnknownMap, op: &OperatingPoint, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["unknown", "value"])?;
    for (name, v) in u.names().iter().zip(&op.x) {
        w.write_record([name.as_str(), &format_sci(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a `.dc` sweep as `<source>,<unknowns...>` rows.
pub fn write_dc_csv<W: Write>(s: &DcSweep, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(std::iter::once(s.source.to_ascii_lowercase()).chain(s.names.iter().cloned()))?;
    for (v, p) in s.values.iter().zip(&s.points) {
        w.write_record(std::iter::once(format_sci(*v)).chain(p.x.iter().map(|x| format_sci(*x))))?;
    }
    w.flush()?;
    Ok(())
}

/// One sweep point's results.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: f64,
    pub output: RunOutput,
}

/// Runs the netlist once per value of `param`, in parallel per `opts.exec`.
/// Results are in input order; the first failing value (in input order)
/// aborts the sweep.
pub fn sweep(ast: &NetlistAst, param: &str, values: &[f64], opts: &RunOptions) -> Result<Vec<SweepPoint>> {
    let key = param.to_ascii_lowercase();
    if values.is_empty() {
        return Err(Error::Argument("sweep needs at least one value".into()));
    }
    if !ast.params.contains_key(&key) {
        return Err(Error::Argument(format!(
            "sweep parameter '{param}' is not defined by a .param in the netlist"
        )));
    }
    let results = map_ordered(values, opts.exec, |&value| {
        let mut point = opts.clone();
        point.params.push((key.clone(), value));
        run(ast, &point)
            .map(|output| SweepPoint { value, output })
            .map_err(|e| Error::SweepPoint {
                param: key.clone(),
                value,
                source: Box::new(e),
            })
    });
    results.into_iter().collect()
}

/// Summary CSV: `param_value,<measure names...>`, one row per sweep value.
pub fn write_sweep_csv<W: Write>(ast: &NetlistAst, points: &[SweepPoint], out: W) -> Result<()> {
    let names: Vec<&str> = ast.measures().map(|m| m.name.as_str()).collect();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(std::iter::once("param_value").chain(names.iter().copied()))?;
    for p in points {
        let mut row = vec![format_sci(p.value)];
        for n in &names {
            let m = p
                .output
                .measurement(n)
                .ok_or_else(|| Error::Measurement(format!("missing measurement {n}")))?;
            row.push(m.value_text());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

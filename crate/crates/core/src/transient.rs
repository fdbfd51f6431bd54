//! Fixed-step transient analysis and the [`Waveform`] record it produces.

use std::fmt::{self, Display, Formatter};
use std::io::{Read, Write};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::dc::{apply_clamps, solve_point, Problem, SolverOptions};
use crate::error::{Error, Result};
use crate::linalg::LuFactors;
use crate::measure::Probe;
use crate::mna::{assemble, companion, index_unknowns, CapState, Companions, MnaSystem, UnknownMap};
use crate::netlist::{Device, FlatCircuit};
use crate::units::format_sci;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntegrationMethod {
    BackwardEuler,
    Trapezoidal,
}

impl Display for IntegrationMethod {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IntegrationMethod::BackwardEuler => "be",
            IntegrationMethod::Trapezoidal => "trap",
        })
    }
}

impl FromStr for IntegrationMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "be" => Ok(IntegrationMethod::BackwardEuler),
            "trap" => Ok(IntegrationMethod::Trapezoidal),
            _ => Err(Error::Argument(format!("unknown integration method '{s}' (be|trap)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveMeta {
    pub dt: f64,
    /// Unknown when the waveform was loaded from CSV.
    pub method: Option<IntegrationMethod>,
    pub circuit_hash: Option<String>,
}

/// Where an independent voltage source sits, for power measurements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceTerminals {
    /// Lowercase element name.
    pub name: String,
    pub pos: String,
    pub neg: String,
}

/// Sampled solution: one column per unknown (plus capacitor currents).
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub meta: WaveMeta,
    pub sources: Vec<SourceTerminals>,
    ground: Vec<f64>,
}

impl Waveform {
    pub fn new(times: Vec<f64>, names: Vec<String>, columns: Vec<Vec<f64>>, meta: WaveMeta) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Argument("waveform needs one name per column".into()));
        }
        if let Some(bad) = columns.iter().position(|c| c.len() != times.len()) {
            return Err(Error::Argument(format!(
                "column {} has {} samples, expected {}",
                names[bad],
                columns[bad].len(),
                times.len()
            )));
        }
        let ground = vec![0.0; times.len()];
        Ok(Self {
            times,
            names,
            columns,
            meta,
            sources: Vec::new(),
            ground,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Column by exact name, falling back to a case-insensitive match.
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .or_else(|| self.names.iter().position(|n| n.eq_ignore_ascii_case(name)))?;
        Some(&self.columns[idx])
    }

    pub fn probe(&self, p: &Probe) -> Result<&[f64]> {
        if matches!(p, Probe::Voltage(n) if n == "0") {
            return Ok(&self.ground);
        }
        self.column(&p.to_string())
            .ok_or_else(|| Error::Measurement(format!("no waveform column {p}")))
    }

    /// Records the terminals of every voltage source in `c`.
    pub fn with_sources_from(mut self, c: &FlatCircuit) -> Self {
        self.sources = c
            .elements
            .iter()
            .filter_map(|e| match &e.device {
                Device::VSource { pos, neg, .. } => Some(SourceTerminals {
                    name: e.name.to_ascii_lowercase(),
                    pos: c.node_name(*pos).to_string(),
                    neg: c.node_name(*neg).to_string(),
                }),
                _ => None,
            })
            .collect();
        self
    }

    /// Voltage across a voltage source, `v(pos) − v(neg)`.
    pub fn source_voltage(&self, name: &str) -> Result<Vec<f64>> {
        let s = self
            .sources
            .iter()
            .find(|s| s.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                Error::Measurement(format!(
                    "terminals of source {name} are unknown (not a voltage source, or no netlist given)"
                ))
            })?;
        let pos = self.probe(&Probe::Voltage(s.pos.clone()))?;
        let neg = self.probe(&Probe::Voltage(s.neg.clone()))?;
        Ok(pos.iter().zip(neg).map(|(p, n)| p - n).collect())
    }

    /// Writes `time,<probes...>` with 9 significant digits and LF endings.
    /// All columns are written when `probes` is empty.
    pub fn write_csv<W: Write>(&self, probes: &[Probe], out: W) -> Result<()> {
        let selected: Vec<(String, &[f64])> = if probes.is_empty() {
            self.names
                .iter()
                .cloned()
                .zip(self.columns.iter().map(Vec::as_slice))
                .collect()
        } else {
            probes
                .iter()
                .map(|p| Ok((p.to_string(), self.probe(p)?)))
                .collect::<Result<_>>()?
        };
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(std::iter::once("time").chain(selected.iter().map(|(n, _)| n.as_str())))?;
        let mut row = Vec::with_capacity(selected.len() + 1);
        for (k, t) in self.times.iter().enumerate() {
            row.clear();
            row.push(format_sci(*t));
            row.extend(selected.iter().map(|(_, c)| format_sci(c[k])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a CSV written by [`Waveform::write_csv`].
    pub fn read_csv<R: Read>(input: R) -> Result<Waveform> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header = r.headers()?.clone();
        if header.get(0).map(str::to_ascii_lowercase).as_deref() != Some("time") {
            return Err(Error::Measurement("waveform CSV must start with a time column".into()));
        }
        let names: Vec<String> = header.iter().skip(1).map(String::from).collect();
        let mut times = Vec::new();
        let mut columns = vec![Vec::new(); names.len()];
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let value = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| Error::Measurement(format!("bad number in CSV row {}", line + 2)))
            };
            times.push(value(0)?);
            for (j, col) in columns.iter_mut().enumerate() {
                col.push(value(j + 1)?);
            }
        }
        let dt = if times.len() >= 2 { times[1] - times[0] } else { 0.0 };
        Waveform::new(
            times,
            names,
            columns,
            WaveMeta {
                dt,
                method: None,
                circuit_hash: None,
            },
        )
    }
}

/// SHA-256 of the circuit's debug rendering, hex encoded.
pub fn circuit_hash(c: &FlatCircuit) -> String {
    Sha256::digest(format!("{c:?}").as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn run_transient(c: &FlatCircuit, dt: f64, tstop: f64, method: IntegrationMethod) -> Result<Waveform> {
    run_transient_with(c, dt, tstop, method, &SolverOptions::default())
}

/// Integrates from the DC operating point at t = 0 to `tstop` in steps of `dt`.
///
/// Any step whose interval contains a source breakpoint is taken with
/// backward Euler, whatever `method` says.
pub fn run_transient_with(
    c: &FlatCircuit,
    dt: f64,
    tstop: f64,
    method: IntegrationMethod,
    opts: &SolverOptions,
) -> Result<Waveform> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Argument(format!("time step must be > 0, got {dt}")));
    }
    if !(tstop >= dt && tstop.is_finite()) {
        return Err(Error::Argument(format!("stop time {tstop} must be at least the step {dt}")));
    }
    let steps = (tstop / dt * (1.0 + 1e-12)).floor() as usize;
    let u = index_unknowns(c);
    let breakpoints = source_breakpoints(c, tstop);

    let dc = Problem {
        c,
        u: &u,
        t: 0.0,
        companions: None,
    };
    let mut x = solve_point(&dc, &vec![0.0; u.len()], opts)?.x;
    apply_clamps(c, &u, &mut x);

    let caps: Vec<usize> = (0..c.elements.len())
        .filter(|&i| matches!(c.elements[i].device, Device::Capacitor { .. }))
        .collect();
    let mut states = vec![CapState::default(); c.elements.len()];
    for &i in &caps {
        states[i].v = cap_voltage(c, &u, i, &x);
    }

    let mut names = u.names().to_vec();
    names.extend(caps.iter().map(|&i| format!("i({})", c.elements[i].name.to_ascii_lowercase())));
    let mut columns: Vec<Vec<f64>> = (0..names.len()).map(|_| Vec::with_capacity(steps + 1)).collect();
    let mut times = Vec::with_capacity(steps + 1);
    let record = |columns: &mut Vec<Vec<f64>>, x: &[f64], states: &[CapState]| {
        for (col, v) in columns.iter_mut().zip(x) {
            col.push(*v);
        }
        for (col, &i) in columns[x.len()..].iter_mut().zip(&caps) {
            col.push(states[i].i);
        }
    };
    times.push(0.0);
    record(&mut columns, &x, &states);

    let mut fast = LinearCache::new(c.is_linear());
    let mut sys = MnaSystem::new(u.len());
    let mut next_bp = 0;
    for n in 0..steps {
        let t0 = n as f64 * dt;
        let t1 = (n + 1) as f64 * dt;
        let slack = 1e-9 * dt;
        while next_bp < breakpoints.len() && breakpoints[next_bp] < t0 - slack {
            next_bp += 1;
        }
        let at_corner = next_bp < breakpoints.len() && breakpoints[next_bp] < t1 - slack;
        let step_method = if at_corner {
            IntegrationMethod::BackwardEuler
        } else {
            method
        };
        let comp = Companions {
            method: step_method,
            dt,
            states: &states,
        };
        let p = Problem {
            c,
            u: &u,
            t: t1,
            companions: Some(comp),
        };
        let mut next = match fast.solve(&p, &mut sys, opts)? {
            Some(x) => x,
            None => solve_point(&p, &x, opts).map_err(|e| at_time(e, t0))?.x,
        };
        apply_clamps(c, &u, &mut next);
        for &i in &caps {
            let Device::Capacitor { farads, .. } = c.elements[i].device else {
                unreachable!()
            };
            let (geq, ieq) = companion(step_method, farads, dt, states[i]);
            let v = cap_voltage(c, &u, i, &next);
            states[i] = CapState { v, i: geq * v - ieq };
        }
        x = next;
        times.push(t1);
        record(&mut columns, &x, &states);
    }

    let meta = WaveMeta {
        dt,
        method: Some(method),
        circuit_hash: Some(circuit_hash(c)),
    };
    Ok(Waveform::new(times, names, columns, meta)?.with_sources_from(c))
}

fn at_time(e: Error, t: f64) -> Error {
    match e {
        Error::Convergence { message, residual, .. } => Error::Convergence {
            message,
            residual,
            at_time: Some(t),
        },
        other => other,
    }
}

fn cap_voltage(c: &FlatCircuit, u: &UnknownMap, idx: usize, x: &[f64]) -> f64 {
    match c.elements[idx].device {
        Device::Capacitor { a, b, .. } => u.voltage(x, a) - u.voltage(x, b),
        _ => 0.0,
    }
}

fn source_breakpoints(c: &FlatCircuit, tstop: f64) -> Vec<f64> {
    let mut all: Vec<f64> = c
        .elements
        .iter()
        .flat_map(|e| match &e.device {
            Device::VSource { source, .. } | Device::ISource { source, .. } => source.breakpoints(tstop),
            _ => Vec::new(),
        })
        .collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    all
}

/// One LU factorization per integration method, reused across the steps of
/// a linear circuit.
struct LinearCache {
    enabled: bool,
    be: Option<LuFactors>,
    trap: Option<LuFactors>,
}

impl LinearCache {
    fn new(enabled: bool) -> Self {
        Self {
            enabled,
            be: None,
            trap: None,
        }
    }

    fn solve(&mut self, p: &Problem<'_>, sys: &mut MnaSystem, opts: &SolverOptions) -> Result<Option<Vec<f64>>> {
        let Some(comp) = p.companions.filter(|_| self.enabled) else {
            return Ok(None);
        };
        let zeros = vec![0.0; p.u.len()];
        assemble(p.c, p.u, sys, &zeros, p.t, opts.gmin_floor, Some(comp))?;
        let slot = match comp.method {
            IntegrationMethod::BackwardEuler => &mut self.be,
            IntegrationMethod::Trapezoidal => &mut self.trap,
        };
        if slot.is_none() {
            match LuFactors::factor(&sys.a) {
                Ok(lu) => *slot = Some(lu),
                Err(_) => {
                    self.enabled = false;
                    return Ok(None);
                }
            }
        }
        let x = slot.as_ref().map(|lu| lu.solve(&sys.b)).unwrap_or_default();
        Ok((sys.residual_norm(&x) < opts.abstol).then_some(x))
    }
}

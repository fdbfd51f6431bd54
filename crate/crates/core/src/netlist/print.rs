//! Canonical netlist text for an AST. Parsing the output yields an equal AST.

use std::fmt::{self, Display, Formatter};

use super::ast::*;
use crate::devices::conveyor::Polarity;
use crate::devices::mosfet::MosfetPolarity;
use crate::measure::{MeasureKind, MeasureSpec};
use crate::transient::IntegrationMethod;

impl Display for Value {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            // `{:e}` is the shortest representation that round-trips.
            Value::Num(v) => write!(f, "{v:e}"),
            Value::Param(p) => write!(f, "{{{p}}}"),
        }
    }
}

impl Display for SourceExpr {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            SourceExpr::Dc(v) => write!(f, "dc {v}"),
            SourceExpr::Sin {
                offset,
                amplitude,
                freq,
                delay,
            } => {
                write!(f, "sin({offset} {amplitude} {freq}")?;
                if let Some(d) = delay {
                    write!(f, " {d}")?;
                }
                f.write_str(")")
            }
            SourceExpr::Pulse(args) => {
                f.write_str("pulse(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl Display for ElementSpec {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)?;
        for n in &self.nodes {
            write!(f, " {n}")?;
        }
        match &self.body {
            ElementBody::Resistor(v) | ElementBody::Capacitor(v) => write!(f, " {v}"),
            ElementBody::VSource(s) | ElementBody::ISource(s) => write!(f, " {s}"),
            ElementBody::Mosfet { model } => write!(f, " {model}"),
            ElementBody::Instance { subckt } => write!(f, " {subckt}"),
            ElementBody::Conveyor(c) => {
                let family = if c.controlled { "cccii" } else { "ccii" };
                let sign = match c.polarity {
                    Polarity::Plus => '+',
                    Polarity::Minus => '-',
                };
                write!(f, " {family}{sign}")?;
                let opts = [
                    ("rx", &c.rx),
                    ("ib", &c.ib),
                    ("beta", &c.beta),
                    ("vmin", &c.vmin),
                    ("vmax", &c.vmax),
                ];
                for (key, val) in opts {
                    if let Some(v) = val {
                        write!(f, " {key}={v}")?;
                    }
                }
                Ok(())
            }
        }
    }
}

impl Display for MeasureSpec {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write!(f, ".measure {} ", self.name)?;
        match &self.kind {
            MeasureKind::Rms(p) => write!(f, "rms {p}"),
            MeasureKind::Pp(p) => write!(f, "pp {p}"),
            MeasureKind::Gain { input, output } => write!(f, "gain {input} {output}"),
            MeasureKind::AvgPow(s) => write!(f, "avgpow {}", s.join(" ")),
            MeasureKind::PeakPow(s) => write!(f, "peakpow {}", s.join(" ")),
            MeasureKind::Hist { probe, nbins } => write!(f, "hist {probe} {nbins}"),
        }
    }
}

impl Display for Directive {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Directive::Op => f.write_str(".op"),
            Directive::Dc {
                source,
                start,
                stop,
                step,
            } => write!(f, ".dc {source} {start:e} {stop:e} {step:e}"),
            Directive::Tran {
                tstep,
                tstop,
                method,
            } => {
                write!(f, ".tran {tstep:e} {tstop:e}")?;
                match method {
                    Some(IntegrationMethod::BackwardEuler) => f.write_str(" method=be"),
                    Some(IntegrationMethod::Trapezoidal) => f.write_str(" method=trap"),
                    None => Ok(()),
                }
            }
            Directive::Measure(m) => write!(f, "{m}"),
        }
    }
}

impl Display for ModelSpec {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        let kind = match self.polarity {
            MosfetPolarity::Nmos => "nmos",
            MosfetPolarity::Pmos => "pmos",
        };
        write!(f, "{kind} vth={:e}", self.vth)?;
        let opts = [
            ("beta", self.beta),
            ("un_cox", self.un_cox),
            ("w", self.w),
            ("l", self.l),
            ("lambda", self.lambda),
        ];
        for (key, val) in opts {
            if let Some(v) = val {
                write!(f, " {key}={v:e}")?;
            }
        }
        Ok(())
    }
}

impl Display for NetlistAst {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.title)?;
        for (name, value) in &self.params {
            writeln!(f, ".param {name}={value:e}")?;
        }
        for (name, model) in &self.models {
            writeln!(f, ".model {name} {model}")?;
        }
        for def in self.subckt_defs.values() {
            writeln!(f, ".subckt {} {}", def.name, def.ports.join(" "))?;
            for e in &def.elements {
                writeln!(f, "{e}")?;
            }
            writeln!(f, ".ends {}", def.name)?;
        }
        for e in &self.elements {
            writeln!(f, "{e}")?;
        }
        for d in &self.directives {
            writeln!(f, "{d}")?;
        }
        writeln!(f, ".end")
    }
}

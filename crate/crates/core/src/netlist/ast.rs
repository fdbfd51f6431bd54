use std::collections::BTreeMap;

use crate::devices::conveyor::Polarity;
use crate::devices::mosfet::MosfetPolarity;
use crate::error::{Error, Result};
use crate::measure::MeasureSpec;
use crate::transient::IntegrationMethod;

/// A literal or a reference to a `.param` (stored lowercase).
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Param(String),
}

impl Value {
    pub fn resolve(&self, params: &BTreeMap<String, f64>) -> Result<f64> {
        match self {
            Value::Num(v) => Ok(*v),
            Value::Param(name) => params
                .get(name)
                .copied()
                .ok_or_else(|| Error::Netlist(format!("undefined parameter '{name}'"))),
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Num(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceExpr {
    Dc(Value),
    Sin {
        offset: Value,
        amplitude: Value,
        freq: Value,
        delay: Option<Value>,
    },
    /// v1 v2 delay rise fall width period
    Pulse(Box<[Value; 7]>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConveyorSpec {
    pub polarity: Polarity,
    pub controlled: bool,
    pub rx: Option<Value>,
    pub ib: Option<Value>,
    pub beta: Option<Value>,
    pub vmin: Option<Value>,
    pub vmax: Option<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ElementBody {
    Resistor(Value),
    Capacitor(Value),
    VSource(SourceExpr),
    ISource(SourceExpr),
    Mosfet { model: String },
    Conveyor(ConveyorSpec),
    Instance { subckt: String },
}

impl ElementBody {
    /// Element letter as written in netlists.
    pub fn letter(&self) -> char {
        match self {
            ElementBody::Resistor(_) => 'R',
            ElementBody::Capacitor(_) => 'C',
            ElementBody::VSource(_) => 'V',
            ElementBody::ISource(_) => 'I',
            ElementBody::Mosfet { .. } => 'M',
            ElementBody::Conveyor(_) => 'U',
            ElementBody::Instance { .. } => 'X',
        }
    }
}

/// One element line. `line` is the source line for diagnostics and is not
/// part of equality.
#[derive(Debug, Clone)]
pub struct ElementSpec {
    pub name: String,
    pub nodes: Vec<String>,
    pub body: ElementBody,
    pub line: usize,
}

impl PartialEq for ElementSpec {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.nodes == other.nodes && self.body == other.body
    }
}

impl ElementSpec {
    pub fn new(name: impl Into<String>, nodes: &[&str], body: ElementBody) -> Self {
        Self {
            name: name.into(),
            nodes: nodes.iter().map(|s| s.to_string()).collect(),
            body,
            line: 0,
        }
    }
}

/// `.model` card. Either `beta` or all of (`un_cox`, `w`, `l`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub polarity: MosfetPolarity,
    pub vth: f64,
    pub beta: Option<f64>,
    pub un_cox: Option<f64>,
    pub w: Option<f64>,
    pub l: Option<f64>,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SubcktDef {
    pub name: String,
    pub ports: Vec<String>,
    pub elements: Vec<ElementSpec>,
    pub line: usize,
}

impl PartialEq for SubcktDef {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.ports == other.ports && self.elements == other.elements
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Directive {
    Op,
    Dc {
        source: String,
        start: f64,
        stop: f64,
        step: f64,
    },
    Tran {
        tstep: f64,
        tstop: f64,
        method: Option<IntegrationMethod>,
    },
    Measure(MeasureSpec),
}

/// Parsed netlist. Subcircuit and model maps are keyed by lowercase name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetlistAst {
    pub title: String,
    pub elements: Vec<ElementSpec>,
    pub subckt_defs: BTreeMap<String, SubcktDef>,
    pub models: BTreeMap<String, ModelSpec>,
    pub params: BTreeMap<String, f64>,
    pub directives: Vec<Directive>,
}

impl NetlistAst {
    /// Overrides (or defines) a `.param`. Names are case-insensitive.
    pub fn set_param(&mut self, name: &str, value: f64) {
        self.params.insert(name.to_ascii_lowercase(), value);
    }

    pub fn tran(&self) -> Option<(f64, f64, Option<IntegrationMethod>)> {
        self.directives.iter().find_map(|d| match d {
            Directive::Tran {
                tstep,
                tstop,
                method,
            } => Some((*tstep, *tstop, *method)),
            _ => None,
        })
    }

    pub fn measures(&self) -> impl Iterator<Item = &MeasureSpec> {
        self.directives.iter().filter_map(|d| match d {
            Directive::Measure(m) => Some(m),
            _ => None,
        })
    }
}

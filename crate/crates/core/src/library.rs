//! Built-in amplifier netlists and the closed-form formulas they are
//! checked against.
//!
//! Three topologies are available:
//!
//! * `proposed_1cc`: input at Y, `R1` from X to ground, `R2` from Z to
//!   ground. Ideal gain `R2/R1`, loaded gain `R2/(R1 + R_X)`.
//! * `ferri_1cc`: the same single-conveyor arrangement built from a CCII+.
//! * `ferri_2cc`: two conveyors with `R1` between their X ports. The first
//!   conveyor's Y is grounded and its Z is left floating; the second drives
//!   `R2`. Loaded gain `R2/(R1 + 2·R_X)`.
//!
//! Each can use a behavioral conveyor (`U` element) or the transistor-level
//! translinear conveyor emitted as a subcircuit.

use std::fmt::{self, Display, Formatter, Write as _};
use std::str::FromStr;

use crate::dc::{newton_dc, SolverOptions};
use crate::devices::conveyor::conveyor_rx;
use crate::devices::source::SourceSpec;
use crate::error::{Error, Result};
use crate::mna::{index_unknowns, terminal_currents};
use crate::netlist::{expand_hierarchy, parse_netlist, Device, FlatCircuit, NodeId};
use crate::par::{self, Execution};
use crate::runner::{run_text, RunOptions, RunOutput};
use crate::transient::Waveform;

/// Loaded voltage gain `r2 / (r1 + rx)`.
pub fn loaded_gain(r1: f64, r2: f64, rx: f64) -> Result<f64> {
    if !(r1 + rx > 0.0) {
        return Err(Error::Domain(format!("loaded gain needs r1 + rx > 0, got {r1} + {rx}")));
    }
    Ok(r2 / (r1 + rx))
}

/// Tolerance band around unity gain.
pub const UNITY_BAND: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TuningCase {
    Attenuating,
    Amplifying,
    Unity,
}

impl TuningCase {
    pub fn of_gain(gain: f64) -> Self {
        if gain < 1.0 - UNITY_BAND {
            TuningCase::Attenuating
        } else if gain > 1.0 + UNITY_BAND {
            TuningCase::Amplifying
        } else {
            TuningCase::Unity
        }
    }
}

impl Display for TuningCase {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TuningCase::Attenuating => "attenuating",
            TuningCase::Amplifying => "amplifying",
            TuningCase::Unity => "unity",
        })
    }
}

pub fn tuning_case(r1: f64, r2: f64, rx: f64) -> Result<TuningCase> {
    loaded_gain(r1, r2, rx).map(TuningCase::of_gain)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Topology {
    Proposed1cc,
    Ferri1cc,
    Ferri2cc,
}

impl Topology {
    pub fn conveyor_count(self) -> usize {
        match self {
            Topology::Ferri2cc => 2,
            _ => 1,
        }
    }

    /// Conveyor family used when the configuration does not choose one.
    pub fn default_family(self) -> Family {
        match self {
            Topology::Proposed1cc => Family::Cccii,
            Topology::Ferri1cc | Topology::Ferri2cc => Family::Ccii,
        }
    }
}

/// Second-generation conveyor (fixed R_X) or its current-controlled variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Ccii,
    Cccii,
}

impl Display for Family {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Ccii => "ccii",
            Family::Cccii => "cccii",
        })
    }
}

/// Square-law parameters for the translinear conveyor's transistors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslinearCards {
    /// Loop transistors (Y and X branches).
    pub loop_beta: f64,
    /// Bias and output mirrors.
    pub mirror_beta: f64,
    pub vth: f64,
    pub lambda: f64,
}

impl Default for TranslinearCards {
    fn default() -> Self {
        Self {
            loop_beta: 1e-3,
            mirror_beta: 4e-3,
            vth: 0.4,
            lambda: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslinearConfig {
    pub ib: f64,
    pub cards: TranslinearCards,
    /// Supplies are `+rails` and `−rails`.
    pub rails: f64,
}

impl Default for TranslinearConfig {
    fn default() -> Self {
        Self {
            ib: 50e-6,
            cards: TranslinearCards::default(),
            rails: 1.0,
        }
    }
}

impl TranslinearConfig {
    /// Small-signal R_X predicted for the loop transistors.
    pub fn predicted_rx(&self) -> Result<f64> {
        conveyor_rx(self.cards.loop_beta, self.ib)
    }

    fn validate(&self) -> Result<()> {
        let c = &self.cards;
        let ok = [self.ib, self.rails, c.loop_beta, c.mirror_beta, c.vth]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite())
            && c.lambda >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid translinear configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConveyorStyle {
    /// Behavioral conveyor with a fixed intrinsic resistance.
    Behavioral { rx: f64 },
    /// Behavioral conveyor with R_X set by a bias current.
    Biased { ib: f64, beta_n: f64 },
    Translinear(TranslinearConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmplifierConfig {
    pub r1: f64,
    pub r2: f64,
    pub conveyor: ConveyorStyle,
    pub input: SourceSpec,
    pub topology: Topology,
    /// `None` picks the topology's default.
    pub family: Option<Family>,
    /// Optional behavioral output clamp `(vmin, vmax)`.
    pub clip: Option<(f64, f64)>,
    pub dt: f64,
    pub periods: usize,
}

impl Default for AmplifierConfig {
    fn default() -> Self {
        Self {
            r1: 1e3,
            r2: 100e3,
            conveyor: ConveyorStyle::Behavioral { rx: 0.0 },
            input: SourceSpec::Sin {
                offset: 0.0,
                amplitude: 0.05,
                freq: 1e3,
                delay: 0.0,
            },
            topology: Topology::Proposed1cc,
            family: None,
            clip: None,
            dt: 1e-6,
            periods: 5,
        }
    }
}

impl AmplifierConfig {
    pub fn family(&self) -> Family {
        self.family.unwrap_or(self.topology.default_family())
    }

    /// R_X of one conveyor as configured (predicted for transistor level).
    pub fn rx(&self) -> Result<f64> {
        match self.conveyor {
            ConveyorStyle::Behavioral { rx } => Ok(rx),
            ConveyorStyle::Biased { ib, beta_n } => conveyor_rx(beta_n, ib),
            ConveyorStyle::Translinear(t) => t.predicted_rx(),
        }
    }

    /// Closed-form gain for the configured topology.
    pub fn expected_gain(&self) -> Result<f64> {
        let rx = self.rx()?;
        match self.topology {
            Topology::Proposed1cc | Topology::Ferri1cc => loaded_gain(self.r1, self.r2, rx),
            Topology::Ferri2cc => loaded_gain(self.r1, self.r2, 2.0 * rx),
        }
    }

    fn stop_time(&self) -> Result<f64> {
        let freq = match self.input {
            SourceSpec::Sin { freq, .. } => freq,
            SourceSpec::Pulse { period, .. } => 1.0 / period,
            SourceSpec::Dc(_) => 1e3,
        };
        if self.periods == 0 || !(self.dt > 0.0) {
            return Err(Error::Argument("simulation needs periods ≥ 1 and dt > 0".into()));
        }
        Ok(self.periods as f64 / freq)
    }

    fn validate(&self) -> Result<()> {
        if !(self.r1 > 0.0 && self.r2 > 0.0 && self.r1.is_finite() && self.r2.is_finite()) {
            return Err(Error::Domain(format!(
                "amplifier resistors must be positive, got r1={} r2={}",
                self.r1, self.r2
            )));
        }
        match self.conveyor {
            ConveyorStyle::Behavioral { rx } if !(rx >= 0.0) => {
                Err(Error::Domain(format!("rx must be ≥ 0, got {rx}")))
            }
            ConveyorStyle::Biased { ib, beta_n } => conveyor_rx(beta_n, ib).map(|_| ()),
            ConveyorStyle::Translinear(t) => t.validate(),
            _ => Ok(()),
        }
    }
}

/// The built-in example circuits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Example {
    ProposedAmp,
    Ferri1cc,
    Ferri2cc,
    ProposedAmpTranslinear,
    CcciiChar,
}

impl Example {
    pub const ALL: [Example; 5] = [
        Example::ProposedAmp,
        Example::Ferri1cc,
        Example::Ferri2cc,
        Example::ProposedAmpTranslinear,
        Example::CcciiChar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Example::ProposedAmp => "proposed_amp",
            Example::Ferri1cc => "ferri_1cc",
            Example::Ferri2cc => "ferri_2cc",
            Example::ProposedAmpTranslinear => "proposed_amp_translinear",
            Example::CcciiChar => "cccii_char",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Example::ProposedAmp => "tunable amplifier: one CCCII+, R1 at X, R2 at Z",
            Example::Ferri1cc => "single CCII+ amplifier in the same resistor arrangement",
            Example::Ferri2cc => "two cascaded CCII+ with R1 between the X ports, first Z floating",
            Example::ProposedAmpTranslinear => "tunable amplifier with the MOS translinear CCCII+",
            Example::CcciiChar => "conveyor characterization: test current into X, Z into 0 V",
        }
    }
}

impl Display for Example {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Example {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Example::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<&str> = Example::ALL.iter().map(|e| e.name()).collect();
                Error::Argument(format!("unknown example '{s}' (known: {})", names.join(", ")))
            })
    }
}

/// Netlist text for a named example. The configuration supplies values;
/// the example name fixes the topology (and, for the translinear example,
/// the conveyor style).
pub fn emit_example(example: Example, cfg: &AmplifierConfig) -> Result<String> {
    let mut cfg = cfg.clone();
    match example {
        Example::ProposedAmp => cfg.topology = Topology::Proposed1cc,
        Example::Ferri1cc => cfg.topology = Topology::Ferri1cc,
        Example::Ferri2cc => cfg.topology = Topology::Ferri2cc,
        Example::ProposedAmpTranslinear => {
            cfg.topology = Topology::Proposed1cc;
            if !matches!(cfg.conveyor, ConveyorStyle::Translinear(_)) {
                let mut t = TranslinearConfig::default();
                if let ConveyorStyle::Biased { ib, .. } = cfg.conveyor {
                    t.ib = ib;
                }
                cfg.conveyor = ConveyorStyle::Translinear(t);
            }
        }
        Example::CcciiChar => return characterization_netlist(&cfg.conveyor, cfg.family.unwrap_or(Family::Cccii), 0.0),
    }
    amplifier_netlist(&cfg)
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn source_text(s: &SourceSpec) -> String {
    match *s {
        SourceSpec::Dc(v) => num(v),
        SourceSpec::Sin {
            offset,
            amplitude,
            freq,
            delay,
        } => {
            if delay == 0.0 {
                format!("SIN({} {} {})", num(offset), num(amplitude), num(freq))
            } else {
                format!("SIN({} {} {} {})", num(offset), num(amplitude), num(freq), num(delay))
            }
        }
        SourceSpec::Pulse {
            v1,
            v2,
            delay,
            rise,
            fall,
            width,
            period,
        } => format!(
            "PULSE({})",
            [v1, v2, delay, rise, fall, width, period].map(num).join(" ")
        ),
    }
}

fn subckt_name(family: Family) -> String {
    format!("{family}_tl")
}

/// Model cards and the translinear conveyor subcircuit (ports y x z vdd vss).
fn translinear_subckt(family: Family, cards: &TranslinearCards) -> String {
    let mut s = String::new();
    let model = |name: &str, kind: &str, beta: f64| {
        format!(
            ".model {name} {kind} vth={} beta={} lambda={}\n",
            num(cards.vth),
            num(beta),
            num(cards.lambda)
        )
    };
    s += &model("nloop", "nmos", cards.loop_beta);
    s += &model("ploop", "pmos", cards.loop_beta);
    s += &model("nmir", "nmos", cards.mirror_beta);
    s += &model("pmir", "pmos", cards.mirror_beta);
    let _ = writeln!(s, ".subckt {} y x z vdd vss", subckt_name(family));
    match family {
        Family::Cccii => {
            s += "Ibn vdd nbr {ib}\n";
            s += "MNR nbr nbr vss vss nmir\n";
            s += "Ibp pbr vss {ib}\n";
            s += "MPR pbr pbr vdd vdd pmir\n";
        }
        Family::Ccii => {
            s += "MPR pbr pbr vdd vdd pmir\n";
            s += "Iref pbr nbr {ib}\n";
            s += "MNR nbr nbr vss vss nmir\n";
        }
    }
    s += "MPB a pbr vdd vdd pmir\n";
    s += "MNB b nbr vss vss nmir\n";
    s += "M1 a a y vss nloop\n";
    s += "M2 b b y vdd ploop\n";
    s += "M3 c a x vss nloop\n";
    s += "M4 d b x vdd ploop\n";
    s += "MPC c c vdd vdd pmir\n";
    s += "MPZ z c vdd vdd pmir\n";
    s += "MND d d vss vss nmir\n";
    s += "MNZ z d vss vss nmir\n";
    s += ".ends\n";
    s
}

/// Element line for one conveyor between `y`, `x`, `z`.
fn conveyor_line(name_index: usize, y: &str, x: &str, z: &str, cfg: &AmplifierConfig) -> String {
    let family = cfg.family();
    match cfg.conveyor {
        ConveyorStyle::Translinear(_) => {
            format!("X{name_index} {y} {x} {z} vdd vss {}\n", subckt_name(family))
        }
        style => {
            let value = match (style, family) {
                (ConveyorStyle::Biased { .. }, Family::Cccii) => "ib={ib} beta={beta}".to_string(),
                _ => "rx={rx}".to_string(),
            };
            let clip = cfg
                .clip
                .map(|(lo, hi)| format!(" vmin={} vmax={}", num(lo), num(hi)))
                .unwrap_or_default();
            format!("U{name_index} {y} {x} {z} {family}+ {value}{clip}\n")
        }
    }
}

fn param_lines(cfg: &AmplifierConfig) -> Result<String> {
    let mut p = format!(".param r1={} r2={}", num(cfg.r1), num(cfg.r2));
    match (cfg.conveyor, cfg.family()) {
        (ConveyorStyle::Behavioral { rx }, _) => p += &format!(" rx={}", num(rx)),
        (ConveyorStyle::Biased { ib, beta_n }, Family::Cccii) => {
            p += &format!(" ib={} beta={}", num(ib), num(beta_n))
        }
        (ConveyorStyle::Biased { .. }, Family::Ccii) => p += &format!(" rx={}", num(cfg.rx()?)),
        (ConveyorStyle::Translinear(t), _) => {
            p += &format!(" ib={} vdd={} vss={}", num(t.ib), num(t.rails), num(-t.rails))
        }
    }
    p.push('\n');
    Ok(p)
}

/// Complete netlist for an amplifier configuration, with `.tran` over the
/// configured number of input periods and gain/pp/rms (and supply power
/// for transistor-level conveyors) measurements.
pub fn amplifier_netlist(cfg: &AmplifierConfig) -> Result<String> {
    cfg.validate()?;
    let tstop = cfg.stop_time()?;
    let family = cfg.family();
    let mut s = String::new();
    let style = match cfg.conveyor {
        ConveyorStyle::Translinear(_) => "translinear",
        _ => "behavioral",
    };
    let title = match cfg.topology {
        Topology::Proposed1cc => "tunable voltage amplifier",
        Topology::Ferri1cc => "single-conveyor voltage amplifier",
        Topology::Ferri2cc => "two-conveyor voltage amplifier",
    };
    let _ = writeln!(s, "{title} ({style} {family}+)");
    s += &param_lines(cfg)?;
    if let ConveyorStyle::Translinear(t) = cfg.conveyor {
        s += &translinear_subckt(family, &t.cards);
        s += "Vdd vdd 0 {vdd}\nVss vss 0 {vss}\n";
    }
    let _ = writeln!(s, "Vin in 0 {}", source_text(&cfg.input));
    match cfg.topology {
        Topology::Proposed1cc | Topology::Ferri1cc => {
            s += &conveyor_line(1, "in", "x", "out", cfg);
            s += "R1 x 0 {r1}\n";
        }
        Topology::Ferri2cc => {
            s += &conveyor_line(1, "0", "x1", "z1", cfg);
            s += "R1 x1 x2 {r1}\n";
            s += &conveyor_line(2, "in", "x2", "out", cfg);
        }
    }
    s += "R2 out 0 {r2}\n";
    let _ = writeln!(s, ".tran {} {} method=trap", num(cfg.dt), num(tstop));
    s += ".measure gain gain v(in) v(out)\n";
    s += ".measure vout_pp pp v(out)\n";
    s += ".measure vout_rms rms v(out)\n";
    if matches!(cfg.conveyor, ConveyorStyle::Translinear(_)) {
        s += ".measure pavg avgpow vdd vss\n";
        s += ".measure ppeak peakpow vdd vss\n";
    }
    s += ".end\n";
    Ok(s)
}

/// Conveyor with Y held at 0 V and Z returned to ground through a 0 V
/// source. The test current `itest` flows from ground into X.
pub fn characterization_netlist(style: &ConveyorStyle, family: Family, itest: f64) -> Result<String> {
    let cfg = AmplifierConfig {
        conveyor: *style,
        family: Some(family),
        ..Default::default()
    };
    cfg.validate()?;
    let mut s = format!("{family}+ characterization\n");
    let mut p = param_lines(&cfg)?;
    p.insert_str(p.len() - 1, &format!(" itest={}", num(itest)));
    s += &p;
    if let ConveyorStyle::Translinear(t) = style {
        s += &translinear_subckt(family, &t.cards);
        s += "Vdd vdd 0 {vdd}\nVss vss 0 {vss}\n";
    }
    s += "Vy y 0 0\n";
    s += "Itest 0 x {itest}\n";
    s += &conveyor_line(1, "y", "x", "z", &cfg);
    s += "Vz z 0 0\n";
    s += ".op\n.end\n";
    Ok(s)
}

/// Extracts R_X of the transistor-level conveyor from two DC solves with
/// ±`ib/100` injected into X.
pub fn measure_rx_emergent(cfg: &TranslinearConfig) -> Result<f64> {
    measure_rx_with(cfg, cfg.ib / 100.0, Execution::default())
}

/// R_X by central difference with test current `delta`.
pub fn measure_rx_with(cfg: &TranslinearConfig, delta: f64, exec: Execution) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("test current must be > 0, got {delta}")));
    }
    let text = characterization_netlist(&ConveyorStyle::Translinear(*cfg), Family::Cccii, 0.0)?;
    let base = expand_hierarchy(&parse_netlist(&text)?)?;
    let vx_at = |i: f64| -> Result<f64> {
        let mut c = base.clone();
        if let Some(Device::ISource { source, .. }) = c.element_mut("Itest").map(|e| &mut e.device) {
            *source = SourceSpec::Dc(i);
        }
        let u = index_unknowns(&c);
        let op = newton_dc(&c, &u, &SolverOptions::default())?;
        let x = c.node("x").ok_or_else(|| Error::Netlist("characterization netlist lacks node x".into()))?;
        Ok(u.voltage(&op.x, x))
    };
    let (hi, lo) = par::join(exec, || vx_at(delta), || vx_at(-delta));
    Ok((hi? - lo?) / (2.0 * delta))
}

/// Runs an amplifier configuration end to end.
pub fn simulate(cfg: &AmplifierConfig) -> Result<RunOutput> {
    run_text(&amplifier_netlist(cfg)?, &RunOptions::default())
}

/// Largest port-equation violations of one behavioral conveyor over a
/// waveform. Port currents come from KCL on the surrounding elements
/// (including the gmin floor), not from the conveyor's own unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct PortResidual {
    pub element: String,
    /// max |I_Y|
    pub iy: f64,
    /// max |I_Z − polarity·I_X|
    pub iz: f64,
    /// max |V_X − V_Y − R_X·I_X|
    pub vx: f64,
}

pub fn port_residuals(c: &FlatCircuit, wave: &Waveform, gmin_floor: f64) -> Result<Vec<PortResidual>> {
    let u = index_unknowns(c);
    let cols: Vec<&[f64]> = u
        .names()
        .iter()
        .map(|n| {
            wave.column(n)
                .ok_or_else(|| Error::Measurement(format!("waveform lacks column {n}")))
        })
        .collect::<Result<_>>()?;
    let cap_cols: Vec<Option<&[f64]>> = c
        .elements
        .iter()
        .map(|e| match e.device {
            Device::Capacitor { .. } => wave.column(&format!("i({})", e.name.to_ascii_lowercase())),
            _ => None,
        })
        .collect();

    let mut out = Vec::new();
    for (ci, conv) in c.elements.iter().enumerate() {
        let Device::Conveyor { y, x, z, params } = &conv.device else {
            continue;
        };
        let mut r = PortResidual {
            element: conv.name.clone(),
            iy: 0.0,
            iz: 0.0,
            vx: 0.0,
        };
        let mut xk = vec![0.0; u.len()];
        for k in 0..wave.len() {
            for (v, col) in xk.iter_mut().zip(&cols) {
                *v = col[k];
            }
            let t = wave.times[k];
            // Current into the conveyor at `node` = −(current into everything else).
            let port = |node: NodeId| -> f64 {
                let mut others = gmin_floor * u.voltage(&xk, node);
                for (ei, e) in c.elements.iter().enumerate() {
                    if ei == ci {
                        continue;
                    }
                    let icap = cap_cols[ei].map_or(0.0, |col| col[k]);
                    for (n, i) in terminal_currents(e, &u, &xk, t, icap) {
                        if n == node {
                            others += i;
                        }
                    }
                }
                -others
            };
            let own = terminal_currents(conv, &u, &xk, t, 0.0);
            let ix = if x.is_ground() { own[1].1 } else { port(*x) };
            let iy = if y.is_ground() { own[0].1 } else { port(*y) };
            let iz = if z.is_ground() { own[2].1 } else { port(*z) };
            r.iy = r.iy.max(iy.abs());
            r.iz = r.iz.max((iz - params.polarity.sign() * ix).abs());
            let vx = u.voltage(&xk, *x) - u.voltage(&xk, *y) - params.rx * ix;
            r.vx = r.vx.max(vx.abs());
        }
        out.push(r);
    }
    Ok(out)
}

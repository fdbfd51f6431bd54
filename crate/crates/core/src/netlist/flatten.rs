use std::collections::{BTreeMap, HashMap};

use super::ast::*;
use crate::devices::conveyor::ConveyorParams;
use crate::devices::mosfet::MosfetParams;
use crate::devices::source::SourceSpec;
use crate::error::{Error, Result};

/// Dense node index; ground is always 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const GROUND: NodeId = NodeId(0);

    pub fn is_ground(self) -> bool {
        self.0 == 0
    }
}

/// A fully resolved device. Every value is a number.
#[derive(Debug, Clone, PartialEq)]
pub enum Device {
    Resistor {
        a: NodeId,
        b: NodeId,
        ohms: f64,
    },
    Capacitor {
        a: NodeId,
        b: NodeId,
        farads: f64,
    },
    /// Branch current flows into `pos`, through the source, out of `neg`.
    VSource {
        pos: NodeId,
        neg: NodeId,
        source: SourceSpec,
    },
    /// Current flows from `pos` through the source into `neg`.
    ISource {
        pos: NodeId,
        neg: NodeId,
        source: SourceSpec,
    },
    Mosfet {
        d: NodeId,
        g: NodeId,
        s: NodeId,
        b: NodeId,
        params: MosfetParams,
    },
    Conveyor {
        y: NodeId,
        x: NodeId,
        z: NodeId,
        params: ConveyorParams,
    },
}

impl Device {
    pub fn nodes(&self) -> Vec<NodeId> {
        match *self {
            Device::Resistor { a, b, .. } | Device::Capacitor { a, b, .. } => vec![a, b],
            Device::VSource { pos, neg, .. } | Device::ISource { pos, neg, .. } => vec![pos, neg],
            Device::Mosfet { d, g, s, b, .. } => vec![d, g, s, b],
            Device::Conveyor { y, x, z, .. } => vec![y, x, z],
        }
    }

    /// Whether the element owns a branch-current unknown.
    pub fn has_branch(&self) -> bool {
        matches!(self, Device::VSource { .. } | Device::Conveyor { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub name: String,
    pub device: Device,
}

/// A circuit with hierarchy expanded and all parameters resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatCircuit {
    pub title: String,
    /// Node names by index; `nodes[0]` is `"0"`.
    pub nodes: Vec<String>,
    pub elements: Vec<Element>,
    pub directives: Vec<Directive>,
}

impl FlatCircuit {
    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n == name).map(NodeId)
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.nodes[id.0]
    }

    /// Element lookup, case-insensitive.
    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements
            .iter()
            .find(|e| e.name.eq_ignore_ascii_case(name))
    }

    pub fn element_mut(&mut self, name: &str) -> Option<&mut Element> {
        self.elements
            .iter_mut()
            .find(|e| e.name.eq_ignore_ascii_case(name))
    }

    pub fn is_linear(&self) -> bool {
        !self
            .elements
            .iter()
            .any(|e| matches!(e.device, Device::Mosfet { .. }))
    }

    pub fn has_capacitors(&self) -> bool {
        self.elements
            .iter()
            .any(|e| matches!(e.device, Device::Capacitor { .. }))
    }
}

struct Flattener<'a> {
    ast: &'a NetlistAst,
    node_index: HashMap<String, NodeId>,
    nodes: Vec<String>,
    elements: Vec<Element>,
    stack: Vec<String>,
}

impl<'a> Flattener<'a> {
    fn intern(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.node_index.get(name) {
            return id;
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(name.to_string());
        self.node_index.insert(name.to_string(), id);
        id
    }

    fn resolve(&self, v: &Value, elem: &ElementSpec) -> Result<f64> {
        v.resolve(&self.ast.params).map_err(|e| match e {
            Error::Netlist(msg) => Error::Netlist(format!("{} (line {}): {msg}", elem.name, elem.line)),
            other => other,
        })
    }

    fn source(&self, s: &SourceExpr, e: &ElementSpec) -> Result<SourceSpec> {
        let r = |v: &Value| self.resolve(v, e);
        let spec = match s {
            SourceExpr::Dc(v) => Ok(SourceSpec::Dc(r(v)?)),
            SourceExpr::Sin {
                offset,
                amplitude,
                freq,
                delay,
            } => {
                let delay = delay.as_ref().map(r).transpose()?.unwrap_or(0.0);
                SourceSpec::sin_delayed(r(offset)?, r(amplitude)?, r(freq)?, delay)
            }
            SourceExpr::Pulse(a) => SourceSpec::pulse(
                r(&a[0])?,
                r(&a[1])?,
                r(&a[2])?,
                r(&a[3])?,
                r(&a[4])?,
                r(&a[5])?,
                r(&a[6])?,
            ),
        };
        spec.map_err(|err| Error::Netlist(format!("{}: {err}", e.name)))
    }

    fn model(&self, name: &str, e: &ElementSpec) -> Result<MosfetParams> {
        let m = self.ast.models.get(name).ok_or_else(|| {
            Error::Netlist(format!("{} (line {}): undefined model '{name}'", e.name, e.line))
        })?;
        let lambda = m.lambda.unwrap_or(0.0);
        let params = match m.beta {
            Some(beta) => MosfetParams::new(m.polarity, m.vth, beta, lambda),
            None => MosfetParams::from_geometry(
                m.polarity,
                m.vth,
                m.un_cox.unwrap_or(0.0),
                m.w.unwrap_or(0.0),
                m.l.unwrap_or(0.0),
                lambda,
            ),
        };
        params.map_err(|err| Error::Netlist(format!("model '{name}': {err}")))
    }

    fn conveyor(&self, c: &ConveyorSpec, e: &ElementSpec) -> Result<ConveyorParams> {
        let r = |v: &Option<Value>| v.as_ref().map(|v| self.resolve(v, e)).transpose();
        let base = match (r(&c.rx)?, r(&c.ib)?, r(&c.beta)?) {
            (Some(rx), None, None) => ConveyorParams::with_rx(c.polarity, c.controlled, rx),
            (None, None, None) if !c.controlled => ConveyorParams::with_rx(c.polarity, false, 0.0),
            (None, Some(ib), Some(beta)) if c.controlled => {
                ConveyorParams::with_bias(c.polarity, ib, beta)
            }
            _ => Err(Error::Netlist("inconsistent conveyor parameters".into())),
        };
        base.and_then(|p| p.clamped(r(&c.vmin)?, r(&c.vmax)?))
            .map_err(|err| Error::Netlist(format!("{}: {err}", e.name)))
    }

    /// Expands `elements` with `prefix` ("" at top level) and the node alias
    /// map for subcircuit ports.
    fn expand(
        &mut self,
        elements: &[ElementSpec],
        prefix: &str,
        ports: &HashMap<String, String>,
    ) -> Result<()> {
        for e in elements {
            let local = |n: &String| -> String {
                if n == "0" {
                    "0".to_string()
                } else if let Some(outer) = ports.get(n) {
                    outer.clone()
                } else if prefix.is_empty() {
                    n.clone()
                } else {
                    format!("{prefix}.{n}")
                }
            };
            let name = if prefix.is_empty() {
                e.name.clone()
            } else {
                format!("{prefix}.{}", e.name)
            };
            let node_names: Vec<String> = e.nodes.iter().map(local).collect();

            if let ElementBody::Instance { subckt } = &e.body {
                let def = self.ast.subckt_defs.get(subckt).ok_or_else(|| {
                    Error::Netlist(format!("{name}: undefined subcircuit '{subckt}'"))
                })?;
                if self.stack.iter().any(|s| s == subckt) {
                    return Err(Error::Netlist(format!(
                        "recursive subcircuit: {} -> {subckt}",
                        self.stack.join(" -> ")
                    )));
                }
                if def.ports.len() != node_names.len() {
                    return Err(Error::Netlist(format!(
                        "{name}: subcircuit '{subckt}' has {} ports, {} nodes given",
                        def.ports.len(),
                        node_names.len()
                    )));
                }
                let inner_ports: HashMap<String, String> =
                    def.ports.iter().cloned().zip(node_names).collect();
                self.stack.push(subckt.clone());
                self.expand(&def.elements, &name, &inner_ports)?;
                self.stack.pop();
                continue;
            }

            let ids: Vec<NodeId> = node_names.iter().map(|n| self.intern(n)).collect();
            let device = match &e.body {
                ElementBody::Resistor(v) => {
                    let ohms = self.resolve(v, e)?;
                    if ohms == 0.0 || !ohms.is_finite() {
                        return Err(Error::Netlist(format!("{name}: resistance must be finite and non-zero")));
                    }
                    Device::Resistor {
                        a: ids[0],
                        b: ids[1],
                        ohms,
                    }
                }
                ElementBody::Capacitor(v) => {
                    let farads = self.resolve(v, e)?;
                    if !(farads > 0.0) {
                        return Err(Error::Netlist(format!("{name}: capacitance must be > 0")));
                    }
                    Device::Capacitor {
                        a: ids[0],
                        b: ids[1],
                        farads,
                    }
                }
                ElementBody::VSource(s) => Device::VSource {
                    pos: ids[0],
                    neg: ids[1],
                    source: self.source(s, e)?,
                },
                ElementBody::ISource(s) => Device::ISource {
                    pos: ids[0],
                    neg: ids[1],
                    source: self.source(s, e)?,
                },
                ElementBody::Mosfet { model } => Device::Mosfet {
                    d: ids[0],
                    g: ids[1],
                    s: ids[2],
                    b: ids[3],
                    params: self.model(model, e)?,
                },
                ElementBody::Conveyor(c) => Device::Conveyor {
                    y: ids[0],
                    x: ids[1],
                    z: ids[2],
                    params: self.conveyor(c, e)?,
                },
                ElementBody::Instance { .. } => unreachable!(),
            };
            self.elements.push(Element { name, device });
        }
        Ok(())
    }
}

/// Flattens subcircuit instances and resolves every parameter.
///
/// Internal subcircuit nodes become `<instance>.<node>`, element names
/// `<instance>.<name>`; ports alias the caller's nodes and `0` stays global.
pub fn expand_hierarchy(ast: &NetlistAst) -> Result<FlatCircuit> {
    let mut f = Flattener {
        ast,
        node_index: HashMap::new(),
        nodes: Vec::new(),
        elements: Vec::new(),
        stack: Vec::new(),
    };
    f.intern("0");
    f.expand(&ast.elements, "", &HashMap::new())?;

    if f.elements.is_empty() {
        return Err(Error::Netlist("circuit has no elements".into()));
    }
    let touches_ground = f
        .elements
        .iter()
        .any(|e| e.device.nodes().contains(&NodeId::GROUND));
    if !touches_ground {
        return Err(Error::Netlist("no element is connected to ground node 0".into()));
    }
    let mut names: BTreeMap<String, &str> = BTreeMap::new();
    for e in &f.elements {
        if let Some(prev) = names.insert(e.name.to_ascii_lowercase(), &e.name) {
            return Err(Error::Netlist(format!(
                "flattened element names collide: '{prev}' and '{}'",
                e.name
            )));
        }
    }

    Ok(FlatCircuit {
        title: ast.title.clone(),
        nodes: f.nodes,
        elements: f.elements,
        directives: ast.directives.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::parse_netlist;

    fn flat(text: &str) -> FlatCircuit {
        expand_hierarchy(&parse_netlist(text).unwrap()).unwrap()
    }

    #[test]
    fn identity_without_instances() {
        let c = flat("t\nV1 a 0 1\nR1 a b 1k\nR2 b 0 2k\n");
        assert_eq!(c.nodes, ["0", "a", "b"]);
        let names: Vec<_> = c.elements.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["V1", "R1", "R2"]);
        assert_eq!(
            c.elements[2].device,
            Device::Resistor {
                a: NodeId(2),
                b: NodeId(0),
                ohms: 2000.0
            }
        );
    }

    #[test]
    fn one_level_instance() {
        let c = flat(
            "t\n.subckt amp2 in out\nR1 in n1 1k\nR2 n1 out 2k\n.ends\nV1 a 0 1\nXA a b amp2\nR9 b 0 1k\n",
        );
        // hand-flattened
        let want = flat("t\nV1 a 0 1\nR1 a XA.n1 1k\nR2 XA.n1 b 2k\nR9 b 0 1k\n");
        let devices = |f: &FlatCircuit| f.elements.iter().map(|e| e.device.clone()).collect::<Vec<_>>();
        assert_eq!(devices(&c), devices(&want));
        let names: Vec<&str> = c.elements.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["V1", "XA.R1", "XA.R2", "R9"]);
        assert_eq!(c.nodes, want.nodes);
        assert!(c.node("XA.n1").is_some());
    }

    #[test]
    fn nested_instances() {
        let c = flat(
            "t\n.subckt inner p q\nR1 p q 1k\n.ends\n.subckt outer a b\nXB a m inner\nR2 m b 1k\n.ends\nXA in 0 outer\nV1 in 0 1\n",
        );
        let names: Vec<_> = c.elements.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["XA.XB.R1", "XA.R2", "V1"]);
        assert_eq!(c.nodes, ["0", "in", "XA.m"]);
    }

    #[test]
    fn params_resolve() {
        let c = flat("t\n.param rload=2.2k\nV1 a 0 1\nR1 a 0 {RLOAD}\n");
        assert_eq!(
            c.elements[1].device,
            Device::Resistor {
                a: NodeId(1),
                b: NodeId(0),
                ohms: 2200.0
            }
        );
        let err = expand_hierarchy(&parse_netlist("t\nR1 a 0 {nope}\n").unwrap()).unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
    }

    #[test]
    fn conveyor_rx_from_bias() {
        let c = flat("t\nV1 y 0 0\nU1 y x z cccii+ ib=50u beta=1m\nR1 x 0 1k\nR2 z 0 1k\n");
        let Device::Conveyor { params, .. } = c.elements[1].device else {
            panic!()
        };
        assert!((params.rx - 1581.1388).abs() < 1e-3);
        let c = flat("t\nV1 y 0 0\nU1 y x z ccii- vmax=1\nR1 x 0 1k\nR2 z 0 1k\n");
        let Device::Conveyor { params, .. } = c.elements[1].device else {
            panic!()
        };
        assert_eq!(params.rx, 0.0);
        assert_eq!(params.vmax, Some(1.0));
    }

    #[test]
    fn structural_errors() {
        let cases = [
            ("t\nXA a b missing\nR1 a 0 1\n", "undefined subcircuit"),
            (
                "t\n.subckt s1 a\nX1 a s2\n.ends\n.subckt s2 a\nX1 a s1\n.ends\nXT n s1\nR1 n 0 1\n",
                "recursive",
            ),
            ("t\nR1 a b 1k\n", "ground"),
            ("t\n", "no elements"),
            ("t\nR1 a 0 0\n", "non-zero"),
            ("t\nM1 d g 0 0 nomodel\n", "undefined model"),
        ];
        for (text, needle) in cases {
            let err = expand_hierarchy(&parse_netlist(text).unwrap()).unwrap_err();
            assert!(err.to_string().contains(needle), "{text:?}: {err}");
        }
    }

    #[test]
    fn arity_mismatch_in_built_ast() {
        let mut ast = parse_netlist("t\n.subckt s a b\nR1 a b 1\n.ends\nXA n 0 s\n").unwrap();
        ast.elements[0].nodes.pop();
        let err = expand_hierarchy(&ast).unwrap_err();
        assert!(err.to_string().contains("ports"), "{err}");
    }

    #[test]
    fn node_indices_are_dense() {
        let c = flat(
            "t\n.subckt s a b\nR1 a m 1\nR2 m b 1\n.ends\nX1 p q s\nX2 q 0 s\nV1 p 0 1\n",
        );
        let mut seen = vec![false; c.nodes.len()];
        for e in &c.elements {
            for n in e.device.nodes() {
                seen[n.0] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(c.nodes[0], "0");
    }
}

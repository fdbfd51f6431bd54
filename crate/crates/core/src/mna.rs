//! Modified nodal analysis: unknown allocation and element stamps.
//!
//! Unknowns are the non-ground node voltages followed by one branch current
//! per voltage source and one per conveyor (its X-port current). KCL rows
//! balance currents leaving each node through elements against the
//! right-hand side; every terminal current is measured into the device.

use std::collections::HashMap;

use crate::devices::mosfet::mosfet_eval;
use crate::devices::source::source_value;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::netlist::{Device, Element, FlatCircuit, NodeId};
use crate::transient::IntegrationMethod;

/// Row/column layout of the MNA system.
#[derive(Debug, Clone, PartialEq)]
pub struct UnknownMap {
    pub n_nodes: usize,
    branches: HashMap<String, usize>,
    names: Vec<String>,
}

impl UnknownMap {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn n_branches(&self) -> usize {
        self.names.len() - self.n_nodes
    }

    /// Row of a node voltage; ground has none.
    pub fn node_row(&self, n: NodeId) -> Option<usize> {
        n.0.checked_sub(1)
    }

    /// Row of an element's branch current (exact flattened name).
    pub fn branch_row(&self, element: &str) -> Option<usize> {
        self.branches.get(element).copied()
    }

    /// Column name: `v(<node>)` or `i(<element, lowercase>)`.
    pub fn name(&self, row: usize) -> &str {
        &self.names[row]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn voltage(&self, x: &[f64], n: NodeId) -> f64 {
        self.node_row(n).map_or(0.0, |r| x[r])
    }
}

/// Allocates one unknown per non-ground node, then one branch current per
/// voltage source and per conveyor, in element order.
pub fn index_unknowns(c: &FlatCircuit) -> UnknownMap {
    let n_nodes = c.nodes.len() - 1;
    let mut names: Vec<String> = c.nodes[1..].iter().map(|n| format!("v({n})")).collect();
    let mut branches = HashMap::new();
    for e in &c.elements {
        if e.device.has_branch() {
            branches.insert(e.name.clone(), names.len());
            names.push(format!("i({})", e.name.to_ascii_lowercase()));
        }
    }
    UnknownMap {
        n_nodes,
        branches,
        names,
    }
}

/// Dense MNA system `a·x = b`.
#[derive(Debug, Clone, PartialEq)]
pub struct MnaSystem {
    pub a: DenseMatrix,
    pub b: Vec<f64>,
    pub x: Vec<f64>,
}

impl MnaSystem {
    pub fn new(n: usize) -> Self {
        Self {
            a: DenseMatrix::zeros(n),
            b: vec![0.0; n],
            x: vec![0.0; n],
        }
    }

    pub fn clear(&mut self) {
        self.a.clear();
        self.b.fill(0.0);
    }

    fn add(&mut self, row: Option<usize>, col: Option<usize>, v: f64) {
        if let (Some(r), Some(c)) = (row, col) {
            self.a[(r, c)] += v;
        }
    }

    fn add_rhs(&mut self, row: Option<usize>, v: f64) {
        if let Some(r) = row {
            self.b[r] += v;
        }
    }

    fn conductance(&mut self, u: &UnknownMap, a: NodeId, b: NodeId, g: f64) {
        let (ra, rb) = (u.node_row(a), u.node_row(b));
        self.add(ra, ra, g);
        self.add(rb, rb, g);
        self.add(ra, rb, -g);
        self.add(rb, ra, -g);
    }

    /// A current `i` leaving node `from` and entering node `to` through an
    /// element, moved to the right-hand side.
    fn current(&mut self, u: &UnknownMap, from: NodeId, to: NodeId, i: f64) {
        self.add_rhs(u.node_row(from), -i);
        self.add_rhs(u.node_row(to), i);
    }

    /// `b − a·x`, infinity norm.
    pub fn residual_norm(&self, x: &[f64]) -> f64 {
        self.a
            .mul_vec(x)
            .iter()
            .zip(&self.b)
            .map(|(ax, b)| (b - ax).abs())
            .fold(0.0, f64::max)
    }
}

/// Stamps a linear element (R, V, I, conveyor) with sources evaluated at `t`.
/// Capacitors are open at DC and stamp nothing here.
pub fn stamp_linear(e: &Element, u: &UnknownMap, sys: &mut MnaSystem, t: f64) -> Result<()> {
    match &e.device {
        Device::Resistor { a, b, ohms } => sys.conductance(u, *a, *b, 1.0 / ohms),
        Device::Capacitor { .. } => {}
        Device::VSource { pos, neg, source } => {
            let br = branch(e, u)?;
            let (rp, rn) = (u.node_row(*pos), u.node_row(*neg));
            sys.add(rp, Some(br), 1.0);
            sys.add(rn, Some(br), -1.0);
            sys.add(Some(br), rp, 1.0);
            sys.add(Some(br), rn, -1.0);
            sys.b[br] += source_value(source, t);
        }
        Device::ISource { pos, neg, source } => {
            sys.current(u, *pos, *neg, source_value(source, t));
        }
        Device::Conveyor { y, x, z, params } => {
            let br = branch(e, u)?;
            // I_Y = 0: nothing enters Y's row.
            sys.add(u.node_row(*x), Some(br), 1.0);
            sys.add(u.node_row(*z), Some(br), params.polarity.sign());
            // V_X − V_Y − R_X·I_X = 0
            sys.add(Some(br), u.node_row(*x), 1.0);
            sys.add(Some(br), u.node_row(*y), -1.0);
            sys.add(Some(br), Some(br), -params.rx);
        }
        Device::Mosfet { .. } => {
            return Err(Error::Argument(format!(
                "internal: {} is nonlinear and cannot be stamped as a linear element",
                e.name
            )))
        }
    }
    Ok(())
}

fn branch(e: &Element, u: &UnknownMap) -> Result<usize> {
    u.branch_row(&e.name)
        .ok_or_else(|| Error::Argument(format!("internal: no branch unknown for {}", e.name)))
}

/// Newton linearization of a MOSFET around `x_est`.
pub fn stamp_nonlinear(e: &Element, x_est: &[f64], u: &UnknownMap, sys: &mut MnaSystem) -> Result<()> {
    let Device::Mosfet { d, g, s, params, .. } = &e.device else {
        return Err(Error::Argument(format!("internal: {} is not a MOSFET", e.name)));
    };
    let vs = u.voltage(x_est, *s);
    let vgs = u.voltage(x_est, *g) - vs;
    let vds = u.voltage(x_est, *d) - vs;
    let ev = mosfet_eval(vgs, vds, params);
    let ieq = ev.id - ev.gm * vgs - ev.gds * vds;
    let (rd, rg, rs) = (u.node_row(*d), u.node_row(*g), u.node_row(*s));
    // id leaves the drain node and enters the source node.
    sys.add(rd, rg, ev.gm);
    sys.add(rd, rs, -ev.gm - ev.gds);
    sys.add(rd, rd, ev.gds);
    sys.add(rs, rg, -ev.gm);
    sys.add(rs, rs, ev.gm + ev.gds);
    sys.add(rs, rd, -ev.gds);
    sys.current(u, *d, *s, ieq);
    Ok(())
}

/// Capacitor voltage (a − b) and current (a → b) at the previous time point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CapState {
    pub v: f64,
    pub i: f64,
}

/// Companion conductance and equivalent current for one step, such that the
/// capacitor current is `geq·v − ieq`.
pub fn companion(method: IntegrationMethod, farads: f64, dt: f64, prev: CapState) -> (f64, f64) {
    match method {
        IntegrationMethod::BackwardEuler => {
            let geq = farads / dt;
            (geq, geq * prev.v)
        }
        IntegrationMethod::Trapezoidal => {
            let geq = 2.0 * farads / dt;
            (geq, geq * prev.v + prev.i)
        }
    }
}

/// Stamps a capacitor's companion model and returns `(geq, ieq)`.
pub fn companion_stamp(
    e: &Element,
    method: IntegrationMethod,
    dt: f64,
    prev: CapState,
    u: &UnknownMap,
    sys: &mut MnaSystem,
) -> Result<(f64, f64)> {
    let Device::Capacitor { a, b, farads } = &e.device else {
        return Err(Error::Argument(format!("internal: {} is not a capacitor", e.name)));
    };
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("time step must be > 0, got {dt}")));
    }
    let (geq, ieq) = companion(method, *farads, dt, prev);
    sys.conductance(u, *a, *b, geq);
    sys.current(u, *b, *a, ieq);
    Ok((geq, ieq))
}

/// Integration context for a transient step.
#[derive(Debug, Clone, Copy)]
pub struct Companions<'a> {
    pub method: IntegrationMethod,
    pub dt: f64,
    /// Indexed like `FlatCircuit::elements`; entries for non-capacitors are ignored.
    pub states: &'a [CapState],
}

/// Full assembly at `x_est` and time `t`, with `gmin` from every node to ground.
pub fn assemble(
    c: &FlatCircuit,
    u: &UnknownMap,
    sys: &mut MnaSystem,
    x_est: &[f64],
    t: f64,
    gmin: f64,
    companions: Option<Companions<'_>>,
) -> Result<()> {
    sys.clear();
    for (idx, e) in c.elements.iter().enumerate() {
        match &e.device {
            Device::Mosfet { .. } => stamp_nonlinear(e, x_est, u, sys)?,
            Device::Capacitor { .. } => {
                if let Some(comp) = companions {
                    companion_stamp(e, comp.method, comp.dt, comp.states[idx], u, sys)?;
                }
            }
            _ => stamp_linear(e, u, sys, t)?,
        }
    }
    if gmin > 0.0 {
        for r in 0..u.n_nodes {
            sys.a[(r, r)] += gmin;
        }
    }
    Ok(())
}

/// Currents into each terminal of `e` at solution `x`, paired with the
/// terminal's node. Capacitors need their present current from the caller.
pub fn terminal_currents(e: &Element, u: &UnknownMap, x: &[f64], t: f64, cap_current: f64) -> Vec<(NodeId, f64)> {
    let v = |n: NodeId| u.voltage(x, n);
    match &e.device {
        Device::Resistor { a, b, ohms } => {
            let i = (v(*a) - v(*b)) / ohms;
            vec![(*a, i), (*b, -i)]
        }
        Device::Capacitor { a, b, .. } => vec![(*a, cap_current), (*b, -cap_current)],
        Device::VSource { pos, neg, .. } => {
            let i = u.branch_row(&e.name).map_or(0.0, |r| x[r]);
            vec![(*pos, i), (*neg, -i)]
        }
        Device::ISource { pos, neg, source } => {
            let i = source_value(source, t);
            vec![(*pos, i), (*neg, -i)]
        }
        Device::Mosfet { d, g, s, b, params } => {
            let id = mosfet_eval(v(*g) - v(*s), v(*d) - v(*s), params).id;
            vec![(*d, id), (*g, 0.0), (*s, -id), (*b, 0.0)]
        }
        Device::Conveyor { y, x: xn, z, params } => {
            let ix = u.branch_row(&e.name).map_or(0.0, |r| x[r]);
            let (iy, ix, iz) = params.terminal_currents(ix);
            vec![(*y, iy), (*xn, ix), (*z, iz)]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::solve_linear;
    use crate::netlist::{expand_hierarchy, parse_netlist};

    fn circuit(text: &str) -> FlatCircuit {
        expand_hierarchy(&parse_netlist(text).unwrap()).unwrap()
    }

    fn assembled(c: &FlatCircuit, gmin: f64) -> (UnknownMap, MnaSystem) {
        let u = index_unknowns(c);
        let mut sys = MnaSystem::new(u.len());
        let x = vec![0.0; u.len()];
        assemble(c, &u, &mut sys, &x, 0.0, gmin, None).unwrap();
        (u, sys)
    }

    #[test]
    fn counting_unknowns() {
        let c = circuit("t\nV1 a 0 1\nR1 a 0 1k\n");
        assert_eq!(index_unknowns(&c).len(), 2);
        let c = circuit(
            "t\nVin in 0 0.1\nU1 in x out cccii+ rx=0\nR1 x 0 1k\nR2 out 0 100k\n",
        );
        let u = index_unknowns(&c);
        assert_eq!((u.len(), u.n_nodes, u.n_branches()), (5, 3, 2));
        assert_eq!(u.names(), ["v(in)", "v(x)", "v(out)", "i(vin)", "i(u1)"]);
    }

    #[test]
    fn resistor_pattern() {
        let c = circuit("t\nR1 a b 1k\nR2 b 0 1\n");
        let u = index_unknowns(&c);
        let mut sys = MnaSystem::new(u.len());
        stamp_linear(&c.elements[0], &u, &mut sys, 0.0).unwrap();
        assert_eq!(sys.a, DenseMatrix::from_rows(&[vec![1e-3, -1e-3], vec![-1e-3, 1e-3]]));
    }

    #[test]
    fn ideal_conveyor_amplifier() {
        let c = circuit("t\nVin y 0 0.1\nU1 y x z cccii+ rx=0\nR1 x 0 1k\nR2 z 0 100k\n");
        let (u, sys) = assembled(&c, 0.0);
        let x = solve_linear(&sys.a, &sys.b).unwrap();
        let vx = x[u.node_row(c.node("x").unwrap()).unwrap()];
        let vz = x[u.node_row(c.node("z").unwrap()).unwrap()];
        let ix = x[u.branch_row("U1").unwrap()];
        assert!((vx - 0.1).abs() < 1e-15);
        assert!((ix + 1e-4).abs() < 1e-18);
        assert!((vz - 10.0).abs() < 1e-12);
    }

    #[test]
    fn loaded_conveyor_amplifier() {
        let c = circuit("t\nVin y 0 0.1\nU1 y x z cccii+ rx=1581\nR1 x 0 1k\nR2 z 0 100k\n");
        let (u, sys) = assembled(&c, 0.0);
        let x = solve_linear(&sys.a, &sys.b).unwrap();
        let vz = x[u.node_row(c.node("z").unwrap()).unwrap()];
        assert!((vz - 0.1 * 100e3 / 2581.0).abs() < 1e-12);
        assert!((vz - 3.874).abs() < 1e-3);
    }

    #[test]
    fn minus_conveyor_inverts() {
        let c = circuit("t\nVin y 0 0.1\nU1 y x z cccii- rx=0\nR1 x 0 1k\nR2 z 0 1k\n");
        let (u, sys) = assembled(&c, 0.0);
        let x = solve_linear(&sys.a, &sys.b).unwrap();
        assert!((x[u.node_row(c.node("z").unwrap()).unwrap()] + 0.1).abs() < 1e-14);
    }

    #[test]
    fn cutoff_mosfet_stamps_nothing() {
        let c = circuit("t\nM1 d g s 0 n\n.model n nmos vth=0.4 beta=1m\nR1 d 0 1\n");
        let u = index_unknowns(&c);
        let mut sys = MnaSystem::new(u.len());
        stamp_nonlinear(&c.elements[0], &[0.0; 3], &u, &mut sys).unwrap();
        assert_eq!(sys, MnaSystem::new(u.len()));
    }

    #[test]
    fn shared_node_stamps_superpose() {
        let text = "t\nM1 d g 0 0 n\nM2 d g2 0 0 n\n.model n nmos vth=0.4 beta=1m lambda=0.1\n";
        let c = circuit(text);
        let u = index_unknowns(&c);
        let x = vec![1.0, 0.9, 1.2];
        let mut both = MnaSystem::new(u.len());
        stamp_nonlinear(&c.elements[0], &x, &u, &mut both).unwrap();
        stamp_nonlinear(&c.elements[1], &x, &u, &mut both).unwrap();
        let mut s1 = MnaSystem::new(u.len());
        stamp_nonlinear(&c.elements[0], &x, &u, &mut s1).unwrap();
        let mut s2 = MnaSystem::new(u.len());
        stamp_nonlinear(&c.elements[1], &x, &u, &mut s2).unwrap();
        for i in 0..u.len() {
            for j in 0..u.len() {
                assert_eq!(both.a[(i, j)], s1.a[(i, j)] + s2.a[(i, j)]);
            }
            assert_eq!(both.b[i], s1.b[i] + s2.b[i]);
        }
    }

    #[test]
    fn companion_values() {
        let c = circuit("t\nC1 a 0 1u\nR1 a 0 1\n");
        let u = index_unknowns(&c);
        let mut sys = MnaSystem::new(u.len());
        let prev = CapState { v: 0.5, i: 1e-3 };
        let (g, ieq) =
            companion_stamp(&c.elements[0], IntegrationMethod::BackwardEuler, 1e-6, prev, &u, &mut sys)
                .unwrap();
        assert_eq!((g, ieq), (1.0, 0.5));
        let (g, ieq) =
            companion_stamp(&c.elements[0], IntegrationMethod::Trapezoidal, 1e-6, prev, &u, &mut sys)
                .unwrap();
        assert_eq!((g, ieq), (2.0, 1.0 + 1e-3));
        assert!(companion_stamp(&c.elements[0], IntegrationMethod::Trapezoidal, 0.0, prev, &u, &mut sys)
            .is_err());
    }

    #[test]
    fn dc_leaves_capacitor_open() {
        let c = circuit("t\nC1 a 0 1u\nR1 a 0 1\n");
        let u = index_unknowns(&c);
        let mut sys = MnaSystem::new(u.len());
        stamp_linear(&c.elements[0], &u, &mut sys, 0.0).unwrap();
        assert_eq!(sys, MnaSystem::new(u.len()));
    }

    #[test]
    fn floating_network_rows_sum_to_zero() {
        // Nothing touches ground except a dummy resistor on an isolated node,
        // which is excluded from the check.
        let c = circuit(
            "t\nR1 a b 1k\nR2 b c 2k\nR3 c a 3.3k\nM1 a b c c n\nM2 c a b b p\nRg g 0 1\n.model n nmos vth=0.4 beta=1m lambda=0.05\n.model p pmos vth=0.4 beta=2m lambda=0.1\n",
        );
        let u = index_unknowns(&c);
        let mut sys = MnaSystem::new(u.len());
        let x = vec![1.3, 0.2, -0.6, 0.0];
        assemble(&c, &u, &mut sys, &x, 0.0, 0.0, None).unwrap();
        for r in 0..3 {
            let sum: f64 = (0..3).map(|j| sys.a[(r, j)]).sum();
            let scale: f64 = (0..3).map(|j| sys.a[(r, j)].abs()).sum();
            assert!(sum.abs() <= 1e-15 * scale, "row {r}: {sum}");
        }
    }

    #[test]
    fn element_order_does_not_change_matrix() {
        let text = [
            "Vin in 0 sin(0 1 1k)",
            "R1 in a 1k",
            "R2 a 0 2k",
            "U1 a x z ccii- rx=10",
            "R3 x 0 3k",
            "R4 z 0 4k",
            "M1 z a 0 0 n",
            "I1 z 0 1m",
        ];
        let build = |order: &[usize]| {
            let mut s = String::from("t\n.model n nmos vth=0.4 beta=1m lambda=0.05\n");
            for &i in order {
                s.push_str(text[i]);
                s.push('\n');
            }
            circuit(&s)
        };
        let c1 = build(&[0, 1, 2, 3, 4, 5, 6, 7]);
        let c2 = build(&[7, 6, 5, 4, 3, 2, 1, 0]);
        let (u1, s1) = assembled(&c1, 1e-12);
        let (u2, s2) = assembled(&c2, 1e-12);
        // Same unknown names, different order: compare entry by name.
        let pos = |u: &UnknownMap, name: &str| u.names().iter().position(|n| n == name).unwrap();
        for ni in u1.names() {
            for nj in u1.names() {
                let a = s1.a[(pos(&u1, ni), pos(&u1, nj))];
                let b = s2.a[(pos(&u2, ni), pos(&u2, nj))];
                assert!((a - b).abs() <= 1e-15 * a.abs().max(1e-12), "{ni},{nj}: {a} vs {b}");
            }
            let a = s1.b[pos(&u1, ni)];
            let b = s2.b[pos(&u2, ni)];
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1e-12));
        }
    }
}

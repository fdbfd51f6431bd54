//! DC operating points: damped Newton–Raphson with a gmin-stepping fallback.

use crate::devices::source::SourceSpec;
use crate::error::{Error, Result};
use crate::linalg::LuFactors;
use crate::mna::{assemble, index_unknowns, Companions, MnaSystem, UnknownMap};
use crate::netlist::{Device, FlatCircuit};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub reltol: f64,
    /// Volts.
    pub vntol: f64,
    /// Amps (KCL rows) and volts (branch rows) of residual.
    pub abstol: f64,
    pub maxiter: usize,
    /// Always present from every node to ground.
    pub gmin_floor: f64,
    /// Largest per-iteration change of a node voltage (nonlinear circuits).
    pub max_step: f64,
    pub gmin_start: f64,
    pub gmin_stop: f64,
    /// Skip the plain Newton attempt and go straight to the gmin ladder.
    pub force_gmin_stepping: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            reltol: 1e-6,
            vntol: 1e-9,
            abstol: 1e-12,
            maxiter: 100,
            gmin_floor: 1e-12,
            max_step: 0.5,
            gmin_start: 1e-3,
            gmin_stop: 1e-12,
            force_gmin_stepping: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub x: Vec<f64>,
    pub residual_norm: f64,
    /// Newton iterations summed over every attempt.
    pub iterations: usize,
    /// Smallest stepping conductance used; 0 when plain Newton converged.
    pub gmin_final: f64,
}

/// One solve problem: a circuit at time `t`, optionally with capacitor
/// companions for a transient step.
#[derive(Clone, Copy)]
pub(crate) struct Problem<'a> {
    pub c: &'a FlatCircuit,
    pub u: &'a UnknownMap,
    pub t: f64,
    pub companions: Option<Companions<'a>>,
}

enum Failure {
    Singular(usize),
    NoConvergence(f64),
}

struct Converged {
    x: Vec<f64>,
    iterations: usize,
    residual: f64,
}

fn newton(
    p: &Problem<'_>,
    sys: &mut MnaSystem,
    x0: &[f64],
    gmin_extra: f64,
    opts: &SolverOptions,
) -> Result<Result<Converged, (Failure, usize)>> {
    let gmin = opts.gmin_floor + gmin_extra;
    let mut x = x0.to_vec();

    if p.c.is_linear() {
        assemble(p.c, p.u, sys, &x, p.t, gmin, p.companions)?;
        let lu = match LuFactors::factor(&sys.a) {
            Ok(lu) => lu,
            Err(s) => return Ok(Err((Failure::Singular(s.column), 1))),
        };
        x = lu.solve(&sys.b);
        let mut residual = sys.residual_norm(&x);
        // A couple of refinement passes recover digits lost to pivoting.
        for _ in 0..2 {
            if residual < opts.abstol {
                break;
            }
            let ax = sys.a.mul_vec(&x);
            let r: Vec<f64> = sys.b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
            for (xi, di) in x.iter_mut().zip(lu.solve(&r)) {
                *xi += di;
            }
            residual = sys.residual_norm(&x);
        }
        return Ok(if residual < opts.abstol && residual.is_finite() {
            Ok(Converged {
                x,
                iterations: 1,
                residual,
            })
        } else {
            Err((Failure::NoConvergence(residual), 1))
        });
    }

    let n_nodes = p.u.n_nodes;
    let mut iterations = 0;
    let mut step_small = false;
    loop {
        assemble(p.c, p.u, sys, &x, p.t, gmin, p.companions)?;
        let residual = sys.residual_norm(&x);
        if step_small && residual < opts.abstol {
            return Ok(Ok(Converged {
                x,
                iterations,
                residual,
            }));
        }
        if iterations == opts.maxiter || !residual.is_finite() {
            return Ok(Err((Failure::NoConvergence(residual), iterations)));
        }
        let next = match LuFactors::factor(&sys.a) {
            Ok(lu) => lu.solve(&sys.b),
            Err(s) => return Ok(Err((Failure::Singular(s.column), iterations))),
        };
        iterations += 1;
        step_small = true;
        for (i, (xi, ni)) in x.iter_mut().zip(&next).enumerate() {
            let mut d = ni - *xi;
            if i < n_nodes {
                if d.abs() > opts.max_step {
                    d = opts.max_step.copysign(d);
                    step_small = false;
                }
                if d.abs() > opts.reltol * xi.abs().max(ni.abs()) + opts.vntol {
                    step_small = false;
                }
            }
            *xi += d;
        }
    }
}

/// Newton from `x0`, falling back to a gmin ladder on failure.
pub(crate) fn solve_point(p: &Problem<'_>, x0: &[f64], opts: &SolverOptions) -> Result<OperatingPoint> {
    let mut sys = MnaSystem::new(p.u.len());
    let mut total = 0;
    let fail = |f: Failure, what: &str| match f {
        Failure::Singular(col) => Error::Singular {
            unknown: p.u.name(col).to_string(),
        },
        Failure::NoConvergence(residual) => Error::Convergence {
            message: what.to_string(),
            residual,
            at_time: p.companions.map(|_| p.t),
        },
    };

    if !opts.force_gmin_stepping {
        match newton(p, &mut sys, x0, 0.0, opts)? {
            Ok(c) => {
                return Ok(OperatingPoint {
                    x: c.x,
                    residual_norm: c.residual,
                    iterations: c.iterations,
                    gmin_final: 0.0,
                })
            }
            Err((_, it)) => total += it,
        }
    }

    let mut x = x0.to_vec();
    let mut k = 0;
    let mut gmin_final = opts.gmin_start;
    loop {
        let g = opts.gmin_start / 10f64.powi(k);
        if g < opts.gmin_stop * 0.5 {
            break;
        }
        match newton(p, &mut sys, &x, g, opts)? {
            Ok(c) => {
                total += c.iterations;
                x = c.x;
                gmin_final = g;
            }
            Err((f, _)) => return Err(fail(f, &format!("gmin stepping stalled at {g:.0e} S"))),
        }
        k += 1;
    }
    match newton(p, &mut sys, &x, 0.0, opts)? {
        Ok(c) => Ok(OperatingPoint {
            x: c.x,
            residual_norm: c.residual,
            iterations: total + c.iterations,
            gmin_final,
        }),
        Err((f, _)) => Err(fail(f, "final solve after gmin stepping")),
    }
}

/// Applies optional conveyor output clamps to a solution in place.
pub(crate) fn apply_clamps(c: &FlatCircuit, u: &UnknownMap, x: &mut [f64]) {
    for e in &c.elements {
        if let Device::Conveyor { z, params, .. } = &e.device {
            if params.is_clamped() {
                if let Some(r) = u.node_row(*z) {
                    x[r] = params.clamp(x[r]);
                }
            }
        }
    }
}

/// DC operating point from a zero initial guess (sources at t = 0).
pub fn newton_dc(c: &FlatCircuit, u: &UnknownMap, opts: &SolverOptions) -> Result<OperatingPoint> {
    operating_point_at(c, u, 0.0, opts)
}

/// Operating point with sources frozen at time `t`.
pub fn operating_point_at(c: &FlatCircuit, u: &UnknownMap, t: f64, opts: &SolverOptions) -> Result<OperatingPoint> {
    let p = Problem {
        c,
        u,
        t,
        companions: None,
    };
    let mut op = solve_point(&p, &vec![0.0; u.len()], opts)?;
    apply_clamps(c, u, &mut op.x);
    Ok(op)
}

/// Result of a `.dc` sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct DcSweep {
    pub source: String,
    pub values: Vec<f64>,
    pub names: Vec<String>,
    pub points: Vec<OperatingPoint>,
}

/// Values `start, start+step, …` up to `stop` inclusive (half-step slack).
pub fn sweep_values(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step != 0.0 && step.is_finite()) || (stop - start) * step < 0.0 {
        return Err(Error::Argument(format!(
            "dc sweep from {start} to {stop} cannot use step {step}"
        )));
    }
    let n = ((stop - start) / step + 0.5).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

/// Sweeps the DC value of an independent source, continuing each point
/// from the previous solution.
pub fn dc_sweep(c: &FlatCircuit, source: &str, values: &[f64], opts: &SolverOptions) -> Result<DcSweep> {
    let mut c = c.clone();
    let idx = c
        .elements
        .iter()
        .position(|e| e.name.eq_ignore_ascii_case(source))
        .ok_or_else(|| Error::Netlist(format!("dc sweep source {source} not found")))?;
    let u = index_unknowns(&c);
    let mut x = vec![0.0; u.len()];
    let mut points = Vec::with_capacity(values.len());
    for &v in values {
        match &mut c.elements[idx].device {
            Device::VSource { source, .. } | Device::ISource { source, .. } => {
                *source = std::mem::replace(source, SourceSpec::Dc(0.0)).with_dc(v);
            }
            _ => return Err(Error::Netlist(format!("{source} is not an independent source"))),
        }
        let p = Problem {
            c: &c,
            u: &u,
            t: 0.0,
            companions: None,
        };
        let mut op = solve_point(&p, &x, opts)?;
        apply_clamps(&c, &u, &mut op.x);
        x.clone_from(&op.x);
        points.push(op);
    }
    Ok(DcSweep {
        source: c.elements[idx].name.clone(),
        values: values.to_vec(),
        names: u.names().to_vec(),
        points,
    })
}

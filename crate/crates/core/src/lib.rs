//! `conveyor-sim`: a compact nonlinear analog circuit simulator with
//! first-class second-generation current conveyor (CCII± / CCCII±) support.
//!
//! The pipeline is the usual one for a SPICE-like tool:
//!
//! 1. [`netlist`] parses the netlist dialect and flattens subcircuits into a
//!    [`netlist::FlatCircuit`].
//! 2. [`mna`] allocates unknowns and stamps every element into a dense
//!    modified-nodal-analysis system.
//! 3. [`dc`] finds operating points (damped Newton with gmin stepping),
//!    [`transient`] integrates in time with backward Euler or trapezoidal
//!    companion models.
//! 4. [`measure`] reduces waveforms to RMS, peak-to-peak, gain, supply power
//!    and histograms.
//!
//! [`library`] generates the amplifier netlists studied with this tool and
//! the closed-form gain / intrinsic-resistance formulas they are checked
//! against. [`runner`] executes a parsed netlist's directives and drives
//! parameter sweeps, optionally in parallel (see [`par`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dc;
pub mod devices;
pub mod error;
pub mod library;
pub mod linalg;
pub mod measure;
pub mod mna;
pub mod netlist;
pub mod par;
pub mod runner;
pub mod transient;
pub mod units;

pub use error::{Error, Result};

//! Netlist front end: a small SPICE dialect.
//!
//! ```text
//! proposed amplifier           <- first line is always the title
//! * comment
//! .param r1=1k
//! Vin in 0 SIN(0 0.05 1k)
//! U1 in x out cccii+ ib=50u beta=1m   ; inline comment
//! R1 x 0 {r1}
//! R2 out 0 100k
//! .tran 1u 5m method=trap
//! .measure g gain v(in) v(out)
//! .end
//! ```
//!
//! Keywords and element names are case-insensitive; node names keep their
//! case. `{name}` refers to a `.param` value (literals only, no arithmetic).

mod ast;
mod flatten;
mod parse;
mod print;

pub use ast::{
    ConveyorSpec, Directive, ElementBody, ElementSpec, ModelSpec, NetlistAst, SourceExpr,
    SubcktDef, Value,
};
pub use flatten::{expand_hierarchy, Device, Element, FlatCircuit, NodeId};
pub use parse::parse_netlist;

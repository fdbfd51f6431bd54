//! Device constitutive relations.

pub mod conveyor;
pub mod mosfet;
pub mod source;

pub use conveyor::{conveyor_rx, ConveyorParams, Polarity};
pub use mosfet::{mosfet_eval, MosfetEval, MosfetParams, MosfetPolarity};
pub use source::{source_value, SourceSpec};

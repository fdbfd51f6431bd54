//! Level-1 (square-law) MOSFET.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MosfetPolarity {
    Nmos,
    Pmos,
}

/// Model card. `vth` is a magnitude for both polarities; `beta` is
/// μCox·W/L in A/V².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosfetParams {
    pub polarity: MosfetPolarity,
    pub vth: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl MosfetParams {
    pub fn new(polarity: MosfetPolarity, vth: f64, beta: f64, lambda: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Domain(format!("MOSFET beta must be > 0, got {beta}")));
        }
        if !(lambda >= 0.0) {
            return Err(Error::Domain(format!(
                "MOSFET lambda must be >= 0, got {lambda}"
            )));
        }
        Ok(Self {
            polarity,
            vth,
            beta,
            lambda,
        })
    }

    /// Builds the card from process transconductance and geometry,
    /// beta = un_cox · W / L.
    pub fn from_geometry(
        polarity: MosfetPolarity,
        vth: f64,
        un_cox: f64,
        w: f64,
        l: f64,
        lambda: f64,
    ) -> Result<Self> {
        if !(l > 0.0) {
            return Err(Error::Domain(format!("MOSFET length must be > 0, got {l}")));
        }
        Self::new(polarity, vth, un_cox * w / l, lambda)
    }

    /// Default NMOS card for examples: vth 0.4 V, 100 µA/V², W/L = 1, λ 0.05 /V.
    /// These are generic round numbers, not extracted from any process.
    pub fn default_nmos() -> Self {
        Self {
            polarity: MosfetPolarity::Nmos,
            vth: 0.4,
            beta: 100e-6,
            lambda: 0.05,
        }
    }

    /// Default PMOS card: vth 0.4 V (magnitude), 40 µA/V², W/L = 1, λ 0.05 /V.
    pub fn default_pmos() -> Self {
        Self {
            polarity: MosfetPolarity::Pmos,
            vth: 0.4,
            beta: 40e-6,
            lambda: 0.05,
        }
    }
}

/// Drain current (flowing into the drain terminal) and its partial
/// derivatives with respect to vgs and vds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MosfetEval {
    pub id: f64,
    pub gm: f64,
    pub gds: f64,
}

/// Evaluates the square-law model at terminal voltages `vgs`, `vds`.
///
/// The returned `gm`/`gds` are the exact partials of `id` for the region the
/// point falls in, including after PMOS sign flipping and drain/source
/// swapping, so a Newton stamp can use them without further case analysis.
pub fn mosfet_eval(vgs: f64, vds: f64, p: &MosfetParams) -> MosfetEval {
    match p.polarity {
        MosfetPolarity::Nmos => nmos_any(vgs, vds, p),
        MosfetPolarity::Pmos => {
            // id_p(vgs, vds) = -id_n(-vgs, -vds); the two sign flips cancel
            // in the derivatives.
            let n = nmos_any(-vgs, -vds, p);
            MosfetEval {
                id: -n.id,
                gm: n.gm,
                gds: n.gds,
            }
        }
    }
}

fn nmos_any(vgs: f64, vds: f64, p: &MosfetParams) -> MosfetEval {
    if vds >= 0.0 {
        return nmos_forward(vgs, vds, p);
    }
    // Reverse mode: the physical source is the drain terminal.
    // id = -f(vgd, vsd) with vgd = vgs - vds, vsd = -vds.
    let r = nmos_forward(vgs - vds, -vds, p);
    MosfetEval {
        id: -r.id,
        gm: -r.gm,
        gds: r.gm + r.gds,
    }
}

fn nmos_forward(vgs: f64, vds: f64, p: &MosfetParams) -> MosfetEval {
    let vov = vgs - p.vth;
    if vov <= 0.0 {
        return MosfetEval::default();
    }
    let clm = 1.0 + p.lambda * vds;
    if vds < vov {
        let core = vov * vds - 0.5 * vds * vds;
        MosfetEval {
            id: p.beta * core * clm,
            gm: p.beta * vds * clm,
            gds: p.beta * ((vov - vds) * clm + core * p.lambda),
        }
    } else {
        let core = 0.5 * vov * vov;
        MosfetEval {
            id: p.beta * core * clm,
            gm: p.beta * vov * clm,
            gds: p.beta * core * p.lambda,
        }
    }
}

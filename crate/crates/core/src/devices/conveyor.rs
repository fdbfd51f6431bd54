//! Behavioral second-generation current conveyor (CCII± / CCCII±).
//!
//! Port relations, with every terminal current measured into the device:
//! I_Y = 0, V_X = V_Y + R_X·I_X, I_Z = ±I_X.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Plus,
    Minus,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Plus => 1.0,
            Polarity::Minus => -1.0,
        }
    }
}

/// Intrinsic X-port resistance of a square-law translinear stage biased at
/// `ib`: R_X = 1/(2·gm) = 1/sqrt(8·beta_n·ib).
pub fn conveyor_rx(beta_n: f64, ib: f64) -> Result<f64> {
    if !(beta_n > 0.0) || !(ib > 0.0) {
        return Err(Error::Domain(format!(
            "conveyor_rx needs beta_n > 0 and ib > 0 (got beta_n={beta_n}, ib={ib})"
        )));
    }
    Ok(1.0 / (8.0 * beta_n * ib).sqrt())
}

/// Resolved conveyor parameters.
///
/// For a current-controlled conveyor `bias` holds `(ib, beta_n)` when R_X was
/// derived from the bias; it is `None` when R_X was given explicitly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConveyorParams {
    pub polarity: Polarity,
    pub controlled: bool,
    pub rx: f64,
    pub bias: Option<(f64, f64)>,
    /// Optional output clamp applied to V_Z after each solve.
    pub vmin: Option<f64>,
    pub vmax: Option<f64>,
}

impl ConveyorParams {
    pub fn with_rx(polarity: Polarity, controlled: bool, rx: f64) -> Result<Self> {
        if !(rx >= 0.0) {
            return Err(Error::Domain(format!("conveyor rx must be >= 0, got {rx}")));
        }
        Ok(Self {
            polarity,
            controlled,
            rx,
            bias: None,
            vmin: None,
            vmax: None,
        })
    }

    pub fn with_bias(polarity: Polarity, ib: f64, beta_n: f64) -> Result<Self> {
        Ok(Self {
            polarity,
            controlled: true,
            rx: conveyor_rx(beta_n, ib)?,
            bias: Some((ib, beta_n)),
            vmin: None,
            vmax: None,
        })
    }

    pub fn clamped(mut self, vmin: Option<f64>, vmax: Option<f64>) -> Result<Self> {
        if let (Some(lo), Some(hi)) = (vmin, vmax) {
            if lo > hi {
                return Err(Error::Domain(format!(
                    "conveyor clamp vmin={lo} exceeds vmax={hi}"
                )));
            }
        }
        self.vmin = vmin;
        self.vmax = vmax;
        Ok(self)
    }

    /// Terminal currents into (Y, X, Z) for a given X-branch current.
    pub fn terminal_currents(&self, ix: f64) -> (f64, f64, f64) {
        (0.0, ix, self.polarity.sign() * ix)
    }

    pub fn clamp(&self, vz: f64) -> f64 {
        let v = self.vmax.map_or(vz, |hi| vz.min(hi));
        self.vmin.map_or(v, |lo| v.max(lo))
    }

    pub fn is_clamped(&self) -> bool {
        self.vmin.is_some() || self.vmax.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rx_reference_values() {
        let rx = conveyor_rx(1e-3, 5e-5).unwrap();
        assert!((rx - 1581.14).abs() < 0.01, "{rx}");
        let rx4 = conveyor_rx(1e-3, 2e-4).unwrap();
        assert!((rx4 - 790.57).abs() < 0.01, "{rx4}");
        assert!((rx / rx4 - 2.0).abs() < 1e-12);
        let rxb = conveyor_rx(4e-3, 5e-5).unwrap();
        assert!((rx / rxb - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rx_domain() {
        assert!(conveyor_rx(0.0, 1e-5).is_err());
        assert!(conveyor_rx(1e-3, -1e-5).is_err());
        assert!(conveyor_rx(f64::NAN, 1e-5).is_err());
    }

    #[test]
    fn clamp_bounds() {
        let c = ConveyorParams::with_rx(Polarity::Plus, false, 0.0)
            .unwrap()
            .clamped(Some(-0.5), Some(0.5))
            .unwrap();
        assert_eq!(c.clamp(3.0), 0.5);
        assert_eq!(c.clamp(-3.0), -0.5);
        assert_eq!(c.clamp(0.2), 0.2);
        assert!(c.clamped(Some(1.0), Some(0.0)).is_err());
    }

    #[test]
    fn port_currents() {
        let p = ConveyorParams::with_rx(Polarity::Minus, true, 10.0).unwrap();
        assert_eq!(p.terminal_currents(2e-3), (0.0, 2e-3, -2e-3));
    }

    proptest! {
        #[test]
        fn rx_monotone_and_exact(beta in 1e-6f64..1e-1, ib in 1e-7f64..1e-2, k in 1.01f64..10.0) {
            let rx = conveyor_rx(beta, ib).unwrap();
            prop_assert!(conveyor_rx(beta, ib * k).unwrap() < rx);
            prop_assert!(conveyor_rx(beta * k, ib).unwrap() < rx);
            prop_assert!((rx * rx * 8.0 * beta * ib - 1.0).abs() < 1e-12);
        }
    }
}

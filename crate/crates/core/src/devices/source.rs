//! Independent source waveforms.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceSpec {
    Dc(f64),
    /// `offset + amplitude·sin(2πf(t − delay))` for t ≥ delay, `offset` before.
    Sin {
        offset: f64,
        amplitude: f64,
        freq: f64,
        delay: f64,
    },
    Pulse {
        v1: f64,
        v2: f64,
        delay: f64,
        rise: f64,
        fall: f64,
        width: f64,
        period: f64,
    },
}

impl SourceSpec {
    pub fn sin(offset: f64, amplitude: f64, freq: f64) -> Result<Self> {
        Self::sin_delayed(offset, amplitude, freq, 0.0)
    }

    pub fn sin_delayed(offset: f64, amplitude: f64, freq: f64, delay: f64) -> Result<Self> {
        if !(freq > 0.0) {
            return Err(Error::Domain(format!("SIN frequency must be > 0, got {freq}")));
        }
        if !(delay >= 0.0) {
            return Err(Error::Domain(format!("SIN delay must be >= 0, got {delay}")));
        }
        Ok(SourceSpec::Sin {
            offset,
            amplitude,
            freq,
            delay,
        })
    }

    pub fn pulse(
        v1: f64,
        v2: f64,
        delay: f64,
        rise: f64,
        fall: f64,
        width: f64,
        period: f64,
    ) -> Result<Self> {
        if !(rise >= 0.0 && fall >= 0.0) {
            return Err(Error::Domain(format!(
                "PULSE rise/fall must be >= 0 (rise={rise}, fall={fall})"
            )));
        }
        if !(delay >= 0.0 && width >= 0.0) {
            return Err(Error::Domain("PULSE delay and width must be >= 0".into()));
        }
        if !(period > 0.0) {
            return Err(Error::Domain(format!("PULSE period must be > 0, got {period}")));
        }
        Ok(SourceSpec::Pulse {
            v1,
            v2,
            delay,
            rise,
            fall,
            width,
            period,
        })
    }

    /// The DC part of the source, used when a sweep overrides its value.
    pub fn with_dc(self, value: f64) -> Self {
        match self {
            SourceSpec::Dc(_) => SourceSpec::Dc(value),
            other => other,
        }
    }

    /// Times in `[0, tstop]` where the waveform has a slope discontinuity.
    /// t = 0 is always included.
    pub fn breakpoints(&self, tstop: f64) -> Vec<f64> {
        let mut out = vec![0.0];
        match *self {
            SourceSpec::Dc(_) => {}
            SourceSpec::Sin { delay, .. } => {
                if delay > 0.0 && delay <= tstop {
                    out.push(delay);
                }
            }
            SourceSpec::Pulse {
                delay,
                rise,
                fall,
                width,
                period,
                ..
            } => {
                let limit = tstop * (1.0 + 1e-12);
                for k in 0.. {
                    let start = delay + k as f64 * period;
                    if start > limit {
                        break;
                    }
                    for corner in [0.0, rise, rise + width, rise + width + fall] {
                        let t = start + corner;
                        if t <= limit {
                            out.push(t);
                        }
                    }
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }
}

/// Value of `s` at time `t` (volts or amps).
pub fn source_value(s: &SourceSpec, t: f64) -> f64 {
    match *s {
        SourceSpec::Dc(v) => v,
        SourceSpec::Sin {
            offset,
            amplitude,
            freq,
            delay,
        } => {
            if t < delay {
                offset
            } else {
                offset + amplitude * (2.0 * PI * freq * (t - delay)).sin()
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
        } => {
            if t < delay {
                return v1;
            }
            let tau = (t - delay) % period;
            if tau < rise {
                v1 + (v2 - v1) * tau / rise
            } else if tau < rise + width {
                v2
            } else if tau < rise + width + fall {
                v2 + (v1 - v2) * (tau - rise - width) / fall
            } else {
                v1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sin_values() {
        let s = SourceSpec::sin(0.0, 0.05, 1e3).unwrap();
        assert_eq!(source_value(&s, 0.0), 0.0);
        assert!((source_value(&s, 0.25e-3) - 0.05).abs() < 1e-15);
        assert!(SourceSpec::sin(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn delayed_sin_holds_offset() {
        let s = SourceSpec::sin_delayed(0.3, 1.0, 1e3, 1e-3).unwrap();
        assert_eq!(source_value(&s, 0.5e-3), 0.3);
        assert!((source_value(&s, 1.25e-3) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn pulse_timing_diagram() {
        // v1=0 v2=1 delay=0 rise=1u fall=1u width=5u period=10u
        let p = SourceSpec::pulse(0.0, 1.0, 0.0, 1e-6, 1e-6, 5e-6, 10e-6).unwrap();
        assert_eq!(source_value(&p, 0.0), 0.0);
        assert!((source_value(&p, 0.5e-6) - 0.5).abs() < 1e-12);
        assert_eq!(source_value(&p, 3e-6), 1.0);
        assert!((source_value(&p, 6.5e-6) - 0.5).abs() < 1e-9);
        assert_eq!(source_value(&p, 8e-6), 0.0);
        // next period
        assert_eq!(source_value(&p, 13e-6), 1.0);
    }

    #[test]
    fn pulse_validation() {
        assert!(SourceSpec::pulse(0.0, 1.0, 0.0, -1.0, 0.0, 1.0, 2.0).is_err());
        assert!(SourceSpec::pulse(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn breakpoints_cover_corners() {
        let p = SourceSpec::pulse(0.0, 1.0, 1e-6, 1e-6, 1e-6, 2e-6, 10e-6).unwrap();
        let bp = p.breakpoints(12e-6);
        let want = [0.0, 1e-6, 2e-6, 4e-6, 5e-6, 11e-6, 12e-6];
        assert_eq!(bp.len(), want.len(), "{bp:?}");
        for (a, b) in bp.iter().zip(want) {
            assert!((a - b).abs() < 1e-18, "{bp:?}");
        }
        assert_eq!(SourceSpec::Dc(1.0).breakpoints(1.0), vec![0.0]);
    }
}

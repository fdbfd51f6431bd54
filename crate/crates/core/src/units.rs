//! SI-suffixed number parsing and the fixed output number format.

use crate::error::{Error, Result};

/// Scale suffixes, longest first so `meg` wins over `m`.
const SUFFIXES: &[(&str, i32)] = &[
    ("meg", 6),
    ("f", -15),
    ("p", -12),
    ("n", -9),
    ("u", -6),
    ("m", -3),
    ("k", 3),
    ("g", 9),
];

/// Parses `number [suffix] [unit-letters]`, e.g. `100k`, `50uA`, `2.2meg`.
///
/// Exponent notation is accepted only without a scale suffix (`1e3` is fine,
/// `1e3k` is not). Letters after the suffix are treated as units and ignored.
/// `line` is only used for the error message.
pub fn parse_value(token: &str, line: usize) -> Result<f64> {
    let err = || Error::parse(line, format!("malformed number '{token}'"));
    let lower = token.to_ascii_lowercase();
    let bytes = lower.as_bytes();

    // Mantissa: sign, digits, optional fraction.
    let mut i = 0;
    if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
        i += 1;
    }
    let digits_start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    let mut ndigits = i - digits_start;
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        ndigits += i - frac_start;
    }
    if ndigits == 0 {
        return Err(err());
    }

    // Exponent, only if followed by digits (so "1meg" is not an exponent).
    let mut has_exponent = false;
    if i < bytes.len() && bytes[i] == b'e' {
        let mut j = i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        let exp_digits = j;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        if j > exp_digits {
            has_exponent = true;
            i = j;
        }
    }
    let mantissa: f64 = lower[..i].parse().map_err(|_| err())?;

    let rest = &lower[i..];
    if rest.is_empty() {
        return Ok(mantissa);
    }
    if !rest.bytes().all(|c| c.is_ascii_alphabetic()) {
        return Err(err());
    }
    let scale = SUFFIXES
        .iter()
        .find(|(s, _)| rest.starts_with(s))
        .map(|&(_, scale)| scale);
    match scale {
        Some(_) if has_exponent => Err(Error::parse(
            line,
            format!("'{token}': exponent and scale suffix cannot be combined"),
        )),
        // Re-parse with the decimal exponent so `50u` is the double nearest 5e-5.
        Some(exp) => format!("{}e{exp}", &lower[..i]).parse().map_err(|_| err()),
        // Pure unit letters, e.g. "5V".
        None => Ok(mantissa),
    }
}

/// Scientific notation with 9 significant digits, independent of locale.
pub fn format_sci(value: f64) -> String {
    format!("{value:.8e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffix_table() {
        let cases = [
            ("1f", 1e-15),
            ("1p", 1e-12),
            ("1n", 1e-9),
            ("1u", 1e-6),
            ("1m", 1e-3),
            ("1k", 1e3),
            ("1meg", 1e6),
            ("1g", 1e9),
            ("1MEG", 1e6),
            ("1Meg", 1e6),
            ("1K", 1e3),
        ];
        for (tok, want) in cases {
            let got = parse_value(tok, 1).unwrap();
            assert!((got - want).abs() <= 1e-12 * want, "{tok}: {got} vs {want}");
        }
    }

    #[test]
    fn spec_values() {
        assert_eq!(parse_value("100k", 1).unwrap(), 1.0e5);
        assert!((parse_value("50u", 1).unwrap() - 5.0e-5).abs() < 1e-20);
        assert!((parse_value("2.2meg", 1).unwrap() - 2.2e6).abs() < 1e-9);
    }

    #[test]
    fn units_after_suffix_are_ignored() {
        assert!((parse_value("50uA", 1).unwrap() - 5e-5).abs() < 1e-20);
        assert_eq!(parse_value("10kohm", 1).unwrap(), 1e4);
        assert_eq!(parse_value("5V", 1).unwrap(), 5.0);
        assert_eq!(parse_value("1mv", 1).unwrap(), 1e-3);
    }

    #[test]
    fn exponents() {
        assert_eq!(parse_value("1e3", 1).unwrap(), 1e3);
        assert_eq!(parse_value("-2.5E-3", 1).unwrap(), -2.5e-3);
        assert_eq!(parse_value(".5", 1).unwrap(), 0.5);
        assert_eq!(parse_value("+3.", 1).unwrap(), 3.0);
    }

    #[test]
    fn exponent_with_suffix_is_rejected() {
        let e = parse_value("1e3k", 7).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 7, .. }), "{e}");
    }

    #[test]
    fn malformed() {
        for tok in ["", "k", "abc", "1.2.3", "1k5", "--1", "."] {
            assert!(parse_value(tok, 3).is_err(), "{tok} should fail");
        }
    }

    #[test]
    fn sci_format() {
        assert_eq!(format_sci(1.0), "1.00000000e0");
        assert_eq!(format_sci(-2.5e-3), "-2.50000000e-3");
        assert_eq!(format_sci(1.0 / 3.0), "3.33333333e-1");
    }
}

//! C-style `%.<p>g` rendering for the text artifacts.

/// Renders `x` the way C's `printf("%.<precision>g", x)` does.
pub fn format_g(x: f64, precision: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let p = precision.max(1);
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Rounds to `precision` significant digits through the `%g` text.
pub fn round_sig(x: f64, precision: usize) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format_g(x, precision).parse().unwrap_or(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_printf_reference_strings() {
        let cases: &[(f64, usize, &str)] = &[
            (0.0, 12, "0"),
            (1.0, 12, "1"),
            (-16.125, 12, "-16.125"),
            (0.1, 17, "0.10000000000000001"),
            (1e-5, 12, "1e-05"),
            (123456789012345.0, 12, "1.23456789012e+14"),
            (0.0001234, 12, "0.0001234"),
            (2.0 / 3.0, 12, "0.666666666667"),
            (1e100, 17, "1e+100"),
            (999999999999.5, 12, "1e+12"),
        ];
        for &(x, p, want) in cases {
            assert_eq!(format_g(x, p), want, "x={x} p={p}");
        }
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for &x in &[std::f64::consts::PI, -1.0 / 3.0, 6.02214076e23, 1.5e-300] {
            assert_eq!(format_g(x, 17).parse::<f64>().unwrap(), x);
        }
    }
}

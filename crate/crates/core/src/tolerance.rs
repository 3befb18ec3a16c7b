//! Relative slack for comparisons that hold exactly in exact arithmetic.

/// Relative slack granted to floating-point evaluations of exact relations.
pub const SLACK: f64 = 1e-12;

/// `a <= b` up to [`SLACK`] relative to the larger magnitude.
pub fn le(a: f64, b: f64) -> bool {
    a <= b + SLACK * a.abs().max(b.abs()) + f64::MIN_POSITIVE
}

/// `a <= b` up to the relative slack `rel`.
pub fn le_rel(a: f64, b: f64, rel: f64) -> bool {
    a <= b + rel * a.abs().max(b.abs()) + f64::MIN_POSITIVE
}

/// `|a - b|` within [`SLACK`] relative to the larger magnitude, or within `abs` absolutely.
pub fn close(a: f64, b: f64, abs: f64) -> bool {
    (a - b).abs() <= abs.max(SLACK * a.abs().max(b.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slack_is_relative() {
        assert!(le(1.0 + 1e-14, 1.0));
        assert!(!le(1.0 + 1e-9, 1.0));
        assert!(le(0.0, 0.0));
        assert!(close(1e6, 1e6 + 1e-7, 0.0));
        assert!(!close(1.0, 1.1, 1e-3));
    }
}

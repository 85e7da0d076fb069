//! Mixed absolute/relative comparisons.

pub const ATOL: f64 = 1e-12;

/// `|a - b| <= ATOL + rtol * max(|a|, |b|)`
pub fn close(a: f64, b: f64, rtol: f64) -> bool {
    (a - b).abs() <= ATOL + rtol * a.abs().max(b.abs())
}

/// The relative gap `|a - b| / max(1, |a|, |b|)`.
pub fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Largest absolute entry.
pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Worst entrywise gap between two arrays, scaled by the larger array's max entry.
///
/// Entries much smaller than the dominant ones are compared against the
/// dominant scale, not their own size.
pub fn rel_max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = max_abs(a).max(max_abs(b)).max(f64::MIN_POSITIVE);
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max)
        / scale
}

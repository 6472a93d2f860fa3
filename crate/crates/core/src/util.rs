//! Small internal numeric helpers.

/// Ceiling of `frac * n` computed robustly against float noise, so that
/// e.g. `frac = 0.4, n = 5` yields 2 rather than 3.
pub(crate) fn ceil_frac(frac: f64, n: usize) -> usize {
    let x = frac * n as f64;
    let nearest = x.round();
    let v = if (x - nearest).abs() < 1e-9 {
        nearest
    } else {
        x.ceil()
    };
    v.max(0.0) as usize
}

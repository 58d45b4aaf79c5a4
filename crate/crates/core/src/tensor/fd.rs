//! Central finite differences, the reference for every analytic gradient.

use super::DenseArray;

/// Numerical gradient of `f` at `x` with central differences of step `h`.
pub fn central_diff(x: &DenseArray, h: f64, mut f: impl FnMut(&DenseArray) -> f64) -> DenseArray {
    let mut probe = x.clone();
    let mut out = DenseArray::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    out
}

/// Largest elementwise relative error `|a - n| / max(|a|, |n|, floor)`.
///
/// The floor keeps entries whose true gradient is ~0 from dominating with
/// pure rounding noise.
pub fn max_rel_error(analytic: &DenseArray, numeric: &DenseArray, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

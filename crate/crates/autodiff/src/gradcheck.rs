//! Central finite differences, used to validate analytic gradients.
//!
//! These helpers only ever evaluate the function; they share no code with
//! the backward rules they check.

/// Default step for 64-bit checks.
pub const STEP: f64 = 1e-4;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every index in `indices`.
pub fn central_difference<F>(mut f: F, x: &[f64], indices: &[usize], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    indices
        .iter()
        .map(|&i| {
            probe[i] = x[i] + h;
            let plus = f(&probe);
            probe[i] = x[i] - h;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`. The floor keeps gradients that are
/// zero up to rounding from reporting huge relative errors.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / scale
}

/// Largest [`relative_error`] over paired slices.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, f64::max)
}

/// Central differences at step `h`, or `None` where they disagree with
/// central differences at `h / 2` by more than `kink_tol` (relative,
/// floored like [`relative_error`]). For a smooth function the two agree to
/// `O(h^2)`; a larger gap means a kink of a piecewise smooth function lies
/// within one step of `x`.
pub fn smooth_central_difference<F>(mut f: F, x: &[f64], indices: &[usize], h: f64, kink_tol: f64) -> Vec<Option<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let wide = central_difference(&mut f, x, indices, h);
    let narrow = central_difference(&mut f, x, indices, h / 2.0);
    wide.into_iter().zip(narrow).map(|(w, n)| (relative_error(w, n, 1e-6) <= kink_tol).then_some(w)).collect()
}

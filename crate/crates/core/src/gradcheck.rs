//! Central finite differences, used to check analytic gradients.
//!
//! This module only evaluates a scalar function at perturbed points; it does
//! not touch the tape, so it serves as an independent oracle for it.

/// Central-difference gradient of `f` at `point` with step `h`.
pub fn central_difference<F>(mut f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            x[i] = point[i] + h;
            let plus = f(&x);
            x[i] = point[i] - h;
            let minus = f(&x);
            x[i] = point[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`.
///
/// Returns 0 when both vectors are below `1e-12` in norm, where the ratio
/// carries no information.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

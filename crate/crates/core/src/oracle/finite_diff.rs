/// Central difference `(f(x+h) - f(x-h)) / 2h` of coordinate `i`.
pub fn central_difference(x: &[f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut p = x.to_vec();
    p[i] = x[i] + h;
    let up = f(&p);
    p[i] = x[i] - h;
    let down = f(&p);
    (up - down) / (2.0 * h)
}

/// `|a - b| / max(|a|, |b|, floor)`.
///
/// The floor keeps derivatives that are analytically zero from turning
/// rounding noise into a large relative error.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

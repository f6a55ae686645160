use nalgebra::DVector;

/// Unicycle inputs `(nu, omega)` that realize the look-ahead velocity `u`.
pub fn unicycle_io(u: &DVector<f64>, theta: f64, b_offset: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (c * u[0] + s * u[1], (-s * u[0] + c * u[1]) / b_offset)
}

/// Look-ahead velocity produced by unicycle inputs `(nu, omega)`.
pub fn unicycle_io_inverse(nu: f64, omega: f64, theta: f64, b_offset: f64) -> DVector<f64> {
    let (s, c) = theta.sin_cos();
    DVector::from_column_slice(&[c * nu - b_offset * s * omega, s * nu + b_offset * c * omega])
}

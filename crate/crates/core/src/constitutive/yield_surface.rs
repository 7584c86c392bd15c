use nalgebra::Matrix6;

use super::{ModelParams, Stress, Voigt};

/// Quadratic form `P(B)` with `phi(sigma)^2 = sigma^T P sigma`.
pub fn hill_matrix(anisotropy: f64) -> Matrix6<f64> {
    let mut p = Matrix6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            p[(i, j)] = if i == j { 2.0 / 3.0 } else { -1.0 / 3.0 };
        }
        p[(i + 3, i + 3)] = 0.5 * anisotropy;
    }
    p
}

/// Modified Hill equivalent stress
/// `sqrt((1/3)((s22-s33)^2 + (s11-s33)^2 + (s22-s11)^2) + (B/2)(s23^2 + s13^2 + s12^2))`.
pub fn hill_equivalent(sigma: &Stress, anisotropy: f64) -> f64 {
    let s = &sigma.0;
    let normal = (s[1] - s[2]).powi(2) + (s[0] - s[2]).powi(2) + (s[1] - s[0]).powi(2);
    let shear = s[3] * s[3] + s[4] * s[4] + s[5] * s[5];
    (normal / 3.0 + 0.5 * anisotropy * shear).max(0.0).sqrt()
}

/// Gradient of [`hill_equivalent`] with respect to the Voigt stress; zero at
/// the apex where the surface is not differentiable.
pub fn hill_gradient(sigma: &Stress, anisotropy: f64) -> Voigt {
    let phi = hill_equivalent(sigma, anisotropy);
    if phi == 0.0 {
        return Voigt::zeros();
    }
    hill_matrix(anisotropy) * sigma.0 / phi
}

/// Yield function `g = phi(sigma) - (Y0 + H ep)`.
pub fn yield_value(sigma: &Stress, ep: f64, params: &ModelParams) -> f64 {
    hill_equivalent(sigma, params.anisotropy) - (params.yield_stress + params.hardening * ep)
}

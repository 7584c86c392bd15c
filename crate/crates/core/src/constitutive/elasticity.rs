use nalgebra::Matrix6;

use crate::error::{Error, Result};

/// Below this magnitude `1 - 2 nu^2 nu_perp` is treated as singular.
const SINGULAR_TOL: f64 = 1e-12;

/// Assembles a matrix with transverse-isotropic sparsity (axis 1 distinguished).
fn assemble(c11: f64, c22: f64, c12: f64, c23: f64, c44: f64, c66: f64) -> Matrix6<f64> {
    let mut c = Matrix6::zeros();
    c[(0, 0)] = c11;
    c[(1, 1)] = c22;
    c[(2, 2)] = c22;
    c[(0, 1)] = c12;
    c[(1, 0)] = c12;
    c[(0, 2)] = c12;
    c[(2, 0)] = c12;
    c[(1, 2)] = c23;
    c[(2, 1)] = c23;
    c[(3, 3)] = c44;
    c[(4, 4)] = c66;
    c[(5, 5)] = c66;
    c
}

/// Transversely isotropic stiffness.
///
/// Entries: `C1111 = E(1-nu_p)/D`, `C2222 = C3333 = E(1-nu^2)/D`,
/// `C1122 = C1133 = E nu/D`, `C2233 = E(nu^2+nu_p)/(D(1+nu_p))`,
/// `C1212 = C1313 = E/(1-nu)`, `C2323 = E/(1-nu_p)` with
/// `D = 1 - 2 nu^2 nu_p`. Shear entries multiply engineering strains.
pub fn stiffness_transverse_isotropic(young: f64, poisson: f64, poisson_perp: f64) -> Result<Matrix6<f64>> {
    let d = 1.0 - 2.0 * poisson * poisson * poisson_perp;
    if d.abs() < SINGULAR_TOL || (1.0 + poisson_perp).abs() < SINGULAR_TOL {
        return Err(Error::SingularStiffness(d));
    }
    if (1.0 - poisson).abs() < SINGULAR_TOL || (1.0 - poisson_perp).abs() < SINGULAR_TOL {
        return Err(Error::InvalidParameter("Poisson ratio equal to one".into()));
    }
    let nu2 = poisson * poisson;
    Ok(assemble(
        young * (1.0 - poisson_perp) / d,
        young * (1.0 - nu2) / d,
        young * poisson / d,
        young * (nu2 + poisson_perp) / (d * (1.0 + poisson_perp)),
        young / (1.0 - poisson_perp),
        young / (1.0 - poisson),
    ))
}

/// Derivatives of [`stiffness_transverse_isotropic`] with respect to
/// `(E, nu, nu_perp)`.
pub fn stiffness_transverse_isotropic_derivatives(
    young: f64,
    poisson: f64,
    poisson_perp: f64,
) -> Result<[Matrix6<f64>; 3]> {
    let (e, v, p) = (young, poisson, poisson_perp);
    let d = 1.0 - 2.0 * v * v * p;
    if d.abs() < SINGULAR_TOL || (1.0 + p).abs() < SINGULAR_TOL {
        return Err(Error::SingularStiffness(d));
    }
    let d_v = -4.0 * v * p;
    let d_p = -2.0 * v * v;
    let d2 = d * d;

    // C2233 = E n / q with n = v^2 + p, q = d (1 + p)
    let n = v * v + p;
    let q = d * (1.0 + p);
    let q2 = q * q;
    let q_v = d_v * (1.0 + p);
    let q_p = d_p * (1.0 + p) + d;

    let de = assemble(
        (1.0 - p) / d,
        (1.0 - v * v) / d,
        v / d,
        n / q,
        1.0 / (1.0 - p),
        1.0 / (1.0 - v),
    );
    let dv = assemble(
        -e * (1.0 - p) * d_v / d2,
        e * (-2.0 * v * d - (1.0 - v * v) * d_v) / d2,
        e * (d - v * d_v) / d2,
        e * (2.0 * v * q - n * q_v) / q2,
        0.0,
        e / ((1.0 - v) * (1.0 - v)),
    );
    let dp = assemble(
        e * (-d - (1.0 - p) * d_p) / d2,
        -e * (1.0 - v * v) * d_p / d2,
        -e * v * d_p / d2,
        e * (q - n * q_p) / q2,
        e / ((1.0 - p) * (1.0 - p)),
        0.0,
    );
    Ok([de, dv, dp])
}

/// Isotropic stiffness `K 1x1 + 2G (I - 1x1/3)` in Voigt form; the shear
/// diagonal is `G` because strains carry engineering shears.
pub fn stiffness_isotropic(bulk: f64, shear: f64) -> Matrix6<f64> {
    let [dk, dg] = stiffness_isotropic_derivatives();
    dk * bulk + dg * shear
}

/// Derivatives of [`stiffness_isotropic`] with respect to `(K, G)`.
pub fn stiffness_isotropic_derivatives() -> [Matrix6<f64>; 2] {
    let mut dk = Matrix6::zeros();
    let mut dg = Matrix6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            dk[(i, j)] = 1.0;
            dg[(i, j)] = if i == j { 4.0 / 3.0 } else { -2.0 / 3.0 };
        }
        dg[(i + 3, i + 3)] = 1.0;
    }
    [dk, dg]
}

/// Scalar volumetric/deviatoric law of the elastic game.
///
/// Convention: `eps_v = tr(eps)` and `sig_v = tr(sigma)/3` (the factor 3 is
/// absorbed into the mean stress), `eps_s` is the engineering shear strain
/// `gamma_12 = 2 eps_12` and `sig_s = sigma_12` (the factor 2 is absorbed into
/// the engineering strain). With these definitions the scalar laws coincide
/// with [`stiffness_isotropic`] applied to the corresponding tensors.
pub fn isotropic_vol_dev_response(bulk: f64, shear: f64, eps_v: f64, eps_s: f64) -> (f64, f64) {
    (bulk * eps_v, shear * eps_s)
}

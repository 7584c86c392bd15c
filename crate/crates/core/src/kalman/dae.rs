//! Exact one-step sensitivities for models of the form
//! `dz/dt = f(z, sigma, theta)`, `0 = g(z, sigma, theta)` discretized by
//! backward Euler, with the stress as the observable.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Partial derivatives of `f` and `g` at the converged step `k`.
#[derive(Clone, Debug)]
pub struct DaePartials {
    pub dz_f: DMatrix<f64>,
    pub dsigma_f: DMatrix<f64>,
    pub dtheta_f: DMatrix<f64>,
    pub dz_g: DMatrix<f64>,
    pub dsigma_g: DMatrix<f64>,
    pub dtheta_g: DMatrix<f64>,
}

/// Placement of the parameter identity block in the joint transition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockLayout {
    /// `[[dz_next, dtheta_next], [0, I]]`: parameters persist unchanged.
    DiagonalIdentity,
    /// `[[dz_next, dtheta_next], [I, 0]]` exactly as printed in the source
    /// derivation; only defined when `z` and `theta` have equal dimension.
    AsPrinted,
}

#[derive(Clone, Debug)]
pub struct DaeSensitivities {
    /// `d z_k / d z_{k-1}`.
    pub dz_next: DMatrix<f64>,
    /// `d z_k / d theta`.
    pub dtheta_next: DMatrix<f64>,
    /// `d sigma_k / d z_k` from the algebraic constraint alone.
    pub dz_obs: DMatrix<f64>,
    /// `d sigma_k / d theta`, including the change of `z` over the step.
    pub dtheta_obs: DMatrix<f64>,
    /// Joint transition `F_k` over `(z, theta)`.
    pub transition: DMatrix<f64>,
    /// Joint observation matrix `A_k = [dz_obs, dtheta_obs]`.
    pub observation: DMatrix<f64>,
}

/// Assembles
/// `dz_next = (I - dt f_z + dt f_s g_s^-1 g_z)^-1`,
/// `dtheta_next = dz_next (dt f_th - dt f_s g_s^-1 g_th)`,
/// `dz_obs = -g_s^-1 g_z` and `dtheta_obs = -g_s^-1 (g_z dtheta_next + g_th)`.
pub fn dae_sensitivities(p: &DaePartials, dt: f64, layout: BlockLayout) -> Result<DaeSensitivities> {
    let nz = p.dz_f.nrows();
    let ns = p.dsigma_g.nrows();
    let nt = p.dtheta_f.ncols();
    let shapes = [
        (&p.dz_f, nz, nz),
        (&p.dsigma_f, nz, ns),
        (&p.dtheta_f, nz, nt),
        (&p.dz_g, ns, nz),
        (&p.dsigma_g, ns, ns),
        (&p.dtheta_g, ns, nt),
    ];
    for (m, r, c) in shapes {
        if m.nrows() != r || m.ncols() != c {
            return Err(Error::Dimension(format!("partial is {}x{}, expected {r}x{c}", m.nrows(), m.ncols())));
        }
    }
    let gs_lu = p.dsigma_g.clone().lu();
    let gs_inv_gz = gs_lu.solve(&p.dz_g).ok_or(Error::IndexViolation)?;
    let gs_inv_gth = gs_lu.solve(&p.dtheta_g).ok_or(Error::IndexViolation)?;

    let lhs = DMatrix::identity(nz, nz) - &p.dz_f * dt + &p.dsigma_f * &gs_inv_gz * dt;
    let dz_next = lhs
        .try_inverse()
        .ok_or_else(|| Error::NonFinite("singular implicit-step Jacobian".into()))?;
    let dtheta_next = &dz_next * ((&p.dtheta_f - &p.dsigma_f * &gs_inv_gth) * dt);
    let dz_obs = -&gs_inv_gz;
    let dtheta_obs = -(gs_lu
        .solve(&(&p.dz_g * &dtheta_next + &p.dtheta_g))
        .ok_or(Error::IndexViolation)?);

    let mut transition = DMatrix::zeros(nz + nt, nz + nt);
    transition.view_mut((0, 0), (nz, nz)).copy_from(&dz_next);
    transition.view_mut((0, nz), (nz, nt)).copy_from(&dtheta_next);
    match layout {
        BlockLayout::DiagonalIdentity => {
            transition.view_mut((nz, nz), (nt, nt)).fill_with_identity();
        }
        BlockLayout::AsPrinted => {
            if nz != nt {
                return Err(Error::Dimension(format!(
                    "printed block layout needs dim(z) == dim(theta), got {nz} and {nt}"
                )));
            }
            transition.view_mut((nz, 0), (nt, nz)).fill_with_identity();
        }
    }
    let mut observation = DMatrix::zeros(ns, nz + nt);
    observation.view_mut((0, 0), (ns, nz)).copy_from(&dz_obs);
    observation.view_mut((0, nz), (ns, nt)).copy_from(&dtheta_obs);
    Ok(DaeSensitivities { dz_next, dtheta_next, dz_obs, dtheta_obs, transition, observation })
}

/// Joint covariance propagation `F P F^T + Q`.
pub fn joint_covariance_predict(cov: &DMatrix<f64>, transition: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let p = transition * cov * transition.transpose() + q;
    (&p + p.transpose()) * 0.5
}

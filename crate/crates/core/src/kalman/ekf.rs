use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::ParameterBelief;
use crate::error::{Error, Result};

/// Result of one Kalman measurement update.
#[derive(Clone, Debug)]
pub struct EkfUpdate {
    pub belief: ParameterBelief,
    pub gain: DMatrix<f64>,
    /// Residual covariance `A Sigma A^T + R` (after any regularization).
    pub innovation_cov: DMatrix<f64>,
    /// Log density of the residual under `N(0, S)`.
    pub log_likelihood: f64,
    /// True when `S` needed diagonal jitter to factorize.
    pub regularized: bool,
}

fn check_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name.to_string()))
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetrizes and clips negative eigenvalues to zero.
pub(crate) fn psd_project(m: &DMatrix<f64>) -> DMatrix<f64> {
    let s = symmetrize(m);
    if s.nrows() == 0 {
        return s;
    }
    let eig = SymmetricEigen::new(s.clone());
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return s;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&clipped) * v.transpose()))
}

/// Cholesky factorization of a symmetric matrix, adding diagonal jitter when
/// the plain factorization fails.
pub(crate) fn factorize(s: &DMatrix<f64>) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, DMatrix<f64>, bool)> {
    if let Some(ch) = s.clone().cholesky() {
        return Ok((ch, s.clone(), false));
    }
    let n = s.nrows();
    let scale = (s.trace() / n.max(1) as f64).abs().max(1.0);
    let mut jitter = 1e-12 * scale;
    for _ in 0..30 {
        let reg = s + DMatrix::identity(n, n) * jitter;
        if let Some(ch) = reg.clone().cholesky() {
            return Ok((ch, reg, true));
        }
        jitter *= 10.0;
    }
    Err(Error::NonFinite("residual covariance could not be factorized".into()))
}

/// `log N(r; 0, S)` from a Cholesky factor of `S`.
pub(crate) fn gaussian_log_density(r: &DVector<f64>, chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    let n = r.len() as f64;
    let z = chol.l().solve_lower_triangular(r).unwrap_or_else(|| r.clone());
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    -0.5 * (z.norm_squared() + log_det + n * (2.0 * std::f64::consts::PI).ln())
}

/// Extended Kalman update of a parameter belief:
/// `S = A Sigma A^T + R`, `K = Sigma A^T S^-1`, `mu' = mu + K r`,
/// `Sigma' = Sigma - K S K^T`.
pub fn ekf_update(
    belief: &ParameterBelief,
    a: &DMatrix<f64>,
    residual: &DVector<f64>,
    r: &DMatrix<f64>,
) -> Result<EkfUpdate> {
    update_core(belief, a, residual, r, None)
}

/// [`ekf_update`] with the sensitivity columns of masked parameters zeroed
/// and their gain rows suppressed, so masked means and covariance rows stay
/// bitwise unchanged. `active[i] == false` masks parameter `i`.
pub fn masked_update(
    belief: &ParameterBelief,
    a: &DMatrix<f64>,
    residual: &DVector<f64>,
    r: &DMatrix<f64>,
    active: &[bool],
) -> Result<EkfUpdate> {
    if active.len() != belief.dim() {
        return Err(Error::Dimension(format!("mask has {} entries for {} parameters", active.len(), belief.dim())));
    }
    update_core(belief, a, residual, r, Some(active))
}

fn update_core(
    belief: &ParameterBelief,
    a: &DMatrix<f64>,
    residual: &DVector<f64>,
    r: &DMatrix<f64>,
    active: Option<&[bool]>,
) -> Result<EkfUpdate> {
    let n = belief.dim();
    let m = residual.len();
    if a.nrows() != m || a.ncols() != n || r.nrows() != m || r.ncols() != m {
        return Err(Error::Dimension(format!(
            "A is {}x{}, residual {}, R {}x{}, belief {}",
            a.nrows(),
            a.ncols(),
            m,
            r.nrows(),
            r.ncols(),
            n
        )));
    }
    check_finite("sensitivity matrix", a.as_slice())?;
    check_finite("residual", residual.as_slice())?;
    check_finite("noise covariance", r.as_slice())?;
    check_finite("belief mean", belief.mean.as_slice())?;
    check_finite("belief covariance", belief.cov.as_slice())?;

    let mut a = a.clone();
    if let Some(active) = active {
        for (j, &on) in active.iter().enumerate() {
            if !on {
                a.column_mut(j).fill(0.0);
            }
        }
    }
    let sigma = &belief.cov;
    let a_sigma = &a * sigma;
    let s = symmetrize(&(&a_sigma * a.transpose() + r));
    let (chol, s, regularized) = factorize(&s)?;
    // K = Sigma A^T S^-1 = (S^-1 A Sigma)^T since S and Sigma are symmetric.
    let mut gain = chol.solve(&a_sigma).transpose();
    if let Some(active) = active {
        for (i, &on) in active.iter().enumerate() {
            if !on {
                gain.row_mut(i).fill(0.0);
            }
        }
    }
    let mean = &belief.mean + &gain * residual;
    let raw = sigma - &gain * &s * gain.transpose();
    let mut cov = psd_project(&raw);
    if let Some(active) = active {
        // eigenvalue clipping may perturb every entry; masked rows are restored
        for (i, &on) in active.iter().enumerate() {
            if !on {
                cov.row_mut(i).copy_from(&sigma.row(i));
                cov.column_mut(i).copy_from(&sigma.column(i));
            }
        }
    }
    let log_likelihood = gaussian_log_density(residual, &chol);
    Ok(EkfUpdate { belief: ParameterBelief { mean, cov }, gain, innovation_cov: s, log_likelihood, regularized })
}

/// Predictive distribution of observables at a new input: mean from the
/// model at the belief mean, covariance `A* Sigma A*^T`.
pub fn predict(belief: &ParameterBelief, a_star: &DMatrix<f64>, model_mean: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if a_star.ncols() != belief.dim() || a_star.nrows() != model_mean.len() {
        return Err(Error::Dimension(format!(
            "A* is {}x{} for {} parameters and {} observables",
            a_star.nrows(),
            a_star.ncols(),
            belief.dim(),
            model_mean.len()
        )));
    }
    let cov = symmetrize(&(a_star * &belief.cov * a_star.transpose()));
    Ok((model_mean.clone(), cov))
}

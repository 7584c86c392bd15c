use nalgebra::{DMatrix, Matrix6, SMatrix, SVector};

use super::yield_surface::{hill_equivalent, hill_matrix};
use super::{ModelParams, ParamId, Strain, Stress, Voigt};
use crate::error::{Error, Result};

/// State of the virtual specimen.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct MaterialState {
    /// Total strain.
    pub eps: Strain,
    /// Plastic strain.
    pub eps_p: Strain,
    /// Equivalent plastic strain (the plastic multiplier accumulated so far).
    pub ep: f64,
    /// Stress at the last converged step.
    pub sigma: Stress,
}

impl MaterialState {
    /// Weighted average of states, used when mixtures of filter branches are
    /// collapsed.
    pub fn blend(states: &[(f64, &MaterialState)]) -> MaterialState {
        let mut out = MaterialState::default();
        for &(w, s) in states {
            out.eps.0 += s.eps.0 * w;
            out.eps_p.0 += s.eps_p.0 * w;
            out.ep += s.ep * w;
            out.sigma.0 += s.sigma.0 * w;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepMode {
    Elastic,
    Plastic,
}

/// Which submodel advances the state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    /// Elastic predictor with return mapping when the trial state yields.
    Elastoplastic,
    /// Elastic predictor only; plastic strain is frozen.
    ElasticOnly,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SensitivityMethod {
    /// Closed form in the elastic branch, implicit differentiation of the
    /// converged return mapping in the plastic branch.
    Analytic,
    /// Central differences of the full step with the given relative perturbation.
    FiniteDifference { rel_step: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReturnMapOptions {
    pub tol_g: f64,
    pub max_iters: usize,
}

impl Default for ReturnMapOptions {
    fn default() -> Self {
        Self { tol_g: 1e-10, max_iters: 50 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub state: MaterialState,
    pub sigma: Stress,
    pub mode: StepMode,
    pub newton_iters: usize,
}

/// Converged return mapping.
struct PlasticSolution {
    sigma: Voigt,
    dlambda: f64,
    iters: usize,
}

/// Advances `state` by the strain increment `deps`.
pub fn integrate_step(
    state: &MaterialState,
    deps: &Strain,
    params: &ModelParams,
    tol_g: f64,
    max_iters: usize,
) -> Result<StepResult> {
    integrate_step_with(
        state,
        deps,
        params,
        StepKind::Elastoplastic,
        &ReturnMapOptions { tol_g, max_iters },
    )
}

pub fn integrate_step_with(
    state: &MaterialState,
    deps: &Strain,
    params: &ModelParams,
    kind: StepKind,
    opts: &ReturnMapOptions,
) -> Result<StepResult> {
    let c = params.stiffness()?;
    advance(state, deps, params, &c, kind, opts).map(|(r, _)| r)
}

fn advance(
    state: &MaterialState,
    deps: &Strain,
    params: &ModelParams,
    c: &Matrix6<f64>,
    kind: StepKind,
    opts: &ReturnMapOptions,
) -> Result<(StepResult, Option<PlasticSolution>)> {
    if !(opts.tol_g > 0.0) {
        return Err(Error::InvalidParameter(format!("tol_g must be positive, got {}", opts.tol_g)));
    }
    if !deps.is_finite() {
        return Err(Error::NonFinite("strain increment".into()));
    }
    let eps = state.eps + *deps;
    let trial = c * (eps.0 - state.eps_p.0);
    let mut next = MaterialState { eps, eps_p: state.eps_p, ep: state.ep, sigma: Stress(trial) };

    let y_n = params.yield_stress + params.hardening * state.ep;
    let g_trial = hill_equivalent(&Stress(trial), params.anisotropy) - y_n;
    if kind == StepKind::ElasticOnly || !(g_trial > 0.0) {
        let r = StepResult { state: next, sigma: next.sigma, mode: StepMode::Elastic, newton_iters: 0 };
        return Ok((r, None));
    }

    let sol = return_map(&trial, c, params, state.ep, g_trial, opts)?;
    let p = hill_matrix(params.anisotropy);
    let y = params.yield_stress + params.hardening * (state.ep + sol.dlambda);
    next.eps_p.0 += p * sol.sigma * (sol.dlambda / y);
    next.ep += sol.dlambda;
    next.sigma = Stress(sol.sigma);
    let r = StepResult { state: next, sigma: next.sigma, mode: StepMode::Plastic, newton_iters: sol.iters };
    Ok((r, Some(sol)))
}

/// Closest-point projection for the quadratic surface. For a multiplier
/// `dl` the stress solves `(I + dl/Y(dl) C P) sigma = sigma_trial`, which
/// leaves the scalar consistency condition `phi(sigma(dl)) = Y(dl)`.
fn return_map(
    trial: &Voigt,
    c: &Matrix6<f64>,
    params: &ModelParams,
    ep_n: f64,
    g_trial: f64,
    opts: &ReturnMapOptions,
) -> Result<PlasticSolution> {
    let b = params.anisotropy;
    let h = params.hardening;
    let y0 = params.yield_stress;
    let cp = c * hill_matrix(b);
    let p = hill_matrix(b);

    let eval = |dl: f64| -> Option<(f64, f64, Voigt)> {
        let y = y0 + h * (ep_n + dl);
        let m = Matrix6::identity() + cp * (dl / y);
        let lu = m.lu();
        let sigma = lu.solve(trial)?;
        let phi = hill_equivalent(&Stress(sigma), b);
        let g = phi - y;
        let dalpha = (y - dl * h) / (y * y);
        let dsigma = lu.solve(&(cp * sigma * (-dalpha)))?;
        let n = if phi > 0.0 { p * sigma / phi } else { Voigt::zeros() };
        Some((g, n.dot(&dsigma) - h, sigma))
    };

    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    let mut x = 0.0;
    let mut g = g_trial;
    for iter in 1..=opts.max_iters {
        let (gx, dg, sigma) = eval(x).ok_or(Error::ReturnMapping { iterations: iter, residual: g })?;
        g = gx;
        if !g.is_finite() {
            break;
        }
        if g.abs() <= opts.tol_g && x > 0.0 {
            return Ok(PlasticSolution { sigma, dlambda: x, iters: iter });
        }
        if g > 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let newton = x - g / dg;
        x = if dg < 0.0 && newton > lo && newton < hi {
            newton
        } else if hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            2.0 * x.max(g_trial / (c.norm() + h))
        };
    }
    Err(Error::ReturnMapping { iterations: opts.max_iters, residual: g })
}

/// Sensitivities of the stress after one step with respect to `ids`,
/// holding the incoming state fixed (6 x `ids.len()`).
pub fn sensitivities(
    state: &MaterialState,
    deps: &Strain,
    params: &ModelParams,
    ids: &[ParamId],
    opts: &ReturnMapOptions,
) -> Result<DMatrix<f64>> {
    step_with_sensitivities(state, deps, params, ids, StepKind::Elastoplastic, opts, SensitivityMethod::Analytic)
        .map(|(_, a)| a)
}

/// One step together with its parameter sensitivities.
pub fn step_with_sensitivities(
    state: &MaterialState,
    deps: &Strain,
    params: &ModelParams,
    ids: &[ParamId],
    kind: StepKind,
    opts: &ReturnMapOptions,
    method: SensitivityMethod,
) -> Result<(StepResult, DMatrix<f64>)> {
    let c = params.stiffness()?;
    let (result, sol) = advance(state, deps, params, &c, kind, opts)?;
    let a = match method {
        SensitivityMethod::FiniteDifference { rel_step } => {
            sensitivities_fd(state, deps, params, ids, kind, opts, rel_step)?
        }
        SensitivityMethod::Analytic => match sol {
            None => elastic_sensitivities(state, deps, params, ids)?,
            Some(sol) => plastic_sensitivities(state, deps, params, &c, &sol, ids)?,
        },
    };
    Ok((result, a))
}

fn elastic_sensitivities(
    state: &MaterialState,
    deps: &Strain,
    params: &ModelParams,
    ids: &[ParamId],
) -> Result<DMatrix<f64>> {
    let eps_e = state.eps.0 + deps.0 - state.eps_p.0;
    let mut a = DMatrix::zeros(6, ids.len());
    for (j, &id) in ids.iter().enumerate() {
        let col = params.stiffness_derivative(id)? * eps_e;
        a.column_mut(j).copy_from(&col);
    }
    Ok(a)
}

/// Implicit differentiation of the converged system
/// `F = M(dl, theta) sigma - C(theta) eps_e_trial = 0`, `G = phi(sigma) - Y(dl, theta) = 0`.
fn plastic_sensitivities(
    state: &MaterialState,
    deps: &Strain,
    params: &ModelParams,
    c: &Matrix6<f64>,
    sol: &PlasticSolution,
    ids: &[ParamId],
) -> Result<DMatrix<f64>> {
    let b = params.anisotropy;
    let h = params.hardening;
    let dl = sol.dlambda;
    let sigma = sol.sigma;
    let p = hill_matrix(b);
    let y = params.yield_stress + h * (state.ep + dl);
    let alpha = dl / y;
    let phi = hill_equivalent(&Stress(sigma), b);
    let n = p * sigma / phi;
    let cp_sigma = c * p * sigma;
    let eps_e_trial = state.eps.0 + deps.0 - state.eps_p.0;

    let mut jac = SMatrix::<f64, 7, 7>::zeros();
    let m = Matrix6::identity() + c * p * alpha;
    jac.fixed_view_mut::<6, 6>(0, 0).copy_from(&m);
    let dalpha_dl = (y - dl * h) / (y * y);
    jac.fixed_view_mut::<6, 1>(0, 6).copy_from(&(cp_sigma * dalpha_dl));
    jac.fixed_view_mut::<1, 6>(6, 0).copy_from(&n.transpose());
    jac[(6, 6)] = -h;
    let lu = jac.lu();

    let mut dp_db = Matrix6::zeros();
    for i in 3..6 {
        dp_db[(i, i)] = 0.5;
    }

    let mut a = DMatrix::zeros(6, ids.len());
    for (j, &id) in ids.iter().enumerate() {
        let dc = params.stiffness_derivative(id)?;
        let dy = match id {
            ParamId::YieldStress => 1.0,
            ParamId::Hardening => state.ep + dl,
            _ => 0.0,
        };
        let dp = if id == ParamId::Anisotropy { dp_db } else { Matrix6::zeros() };
        let dalpha = -dl / (y * y) * dy;
        let df: Voigt = cp_sigma * dalpha + (dc * p + c * dp) * sigma * alpha - dc * eps_e_trial;
        let dg = sigma.dot(&(dp * sigma)) / (2.0 * phi) - dy;
        let mut rhs = SVector::<f64, 7>::zeros();
        rhs.fixed_rows_mut::<6>(0).copy_from(&(-df));
        rhs[6] = -dg;
        let du = lu
            .solve(&rhs)
            .ok_or_else(|| Error::NonFinite("singular return-mapping Jacobian".into()))?;
        a.column_mut(j).copy_from(&du.fixed_rows::<6>(0));
    }
    Ok(a)
}

/// Central finite differences of the full step with respect to `ids`.
pub fn sensitivities_fd(
    state: &MaterialState,
    deps: &Strain,
    params: &ModelParams,
    ids: &[ParamId],
    kind: StepKind,
    opts: &ReturnMapOptions,
    rel_step: f64,
) -> Result<DMatrix<f64>> {
    let mut a = DMatrix::zeros(6, ids.len());
    for (j, &id) in ids.iter().enumerate() {
        let v = params
            .get(id)
            .ok_or_else(|| Error::InvalidParameter(format!("{id} is not part of this parameterization")))?;
        if !v.is_finite() {
            continue;
        }
        let h = rel_step * v.abs().max(1e-3);
        let mut plus = *params;
        plus.set(id, v + h)?;
        let mut minus = *params;
        minus.set(id, v - h)?;
        let sp = integrate_step_with(state, deps, &plus, kind, opts)?.sigma;
        let sm = integrate_step_with(state, deps, &minus, kind, opts)?.sigma;
        a.column_mut(j).copy_from(&((sp.0 - sm.0) / (2.0 * h)));
    }
    Ok(a)
}

/// Rows of the hidden-state tangent: plastic strain (6) then `ep`.
pub const HIDDEN_DIM: usize = 7;

/// One step with history-aware sensitivities. `tangent` holds
/// `d(eps_p, ep)/d theta` of the incoming state (7 x `ids.len()`); the
/// returned stress sensitivity is the total derivative through that history
/// and the returned tangent belongs to the new state.
pub fn step_with_tangent(
    state: &MaterialState,
    deps: &Strain,
    params: &ModelParams,
    ids: &[ParamId],
    kind: StepKind,
    opts: &ReturnMapOptions,
    tangent: &DMatrix<f64>,
) -> Result<(StepResult, DMatrix<f64>, DMatrix<f64>)> {
    let n = ids.len();
    if tangent.nrows() != HIDDEN_DIM || tangent.ncols() != n {
        return Err(Error::Dimension(format!(
            "tangent is {}x{}, expected {HIDDEN_DIM}x{n}",
            tangent.nrows(),
            tangent.ncols()
        )));
    }
    let c = params.stiffness()?;
    let (result, sol) = advance(state, deps, params, &c, kind, opts)?;
    let mut a = DMatrix::zeros(6, n);
    let mut t_out = tangent.clone();
    let eps_e_trial = state.eps.0 + deps.0 - state.eps_p.0;
    let Some(sol) = sol else {
        for (j, &id) in ids.iter().enumerate() {
            let dep: Voigt = tangent.fixed_view::<6, 1>(0, j).into_owned();
            let col = params.stiffness_derivative(id)? * eps_e_trial - c * dep;
            a.column_mut(j).copy_from(&col);
        }
        return Ok((result, a, t_out));
    };

    let b = params.anisotropy;
    let h = params.hardening;
    let dl = sol.dlambda;
    let sigma = sol.sigma;
    let p = hill_matrix(b);
    let y = params.yield_stress + h * (state.ep + dl);
    let alpha = dl / y;
    let phi = hill_equivalent(&Stress(sigma), b);
    let nrm = p * sigma / phi;
    let cp_sigma = c * p * sigma;

    let mut jac = SMatrix::<f64, 7, 7>::zeros();
    jac.fixed_view_mut::<6, 6>(0, 0).copy_from(&(Matrix6::identity() + c * p * alpha));
    let dalpha_dl = (y - dl * h) / (y * y);
    jac.fixed_view_mut::<6, 1>(0, 6).copy_from(&(cp_sigma * dalpha_dl));
    jac.fixed_view_mut::<1, 6>(6, 0).copy_from(&nrm.transpose());
    jac[(6, 6)] = -h;
    let lu = jac.lu();

    let mut dp_db = Matrix6::zeros();
    for i in 3..6 {
        dp_db[(i, i)] = 0.5;
    }
    for (j, &id) in ids.iter().enumerate() {
        let dc = params.stiffness_derivative(id)?;
        let dep_n: Voigt = tangent.fixed_view::<6, 1>(0, j).into_owned();
        let dep_scalar = tangent[(6, j)];
        let (dy0, dh) = match id {
            ParamId::YieldStress => (1.0, 0.0),
            ParamId::Hardening => (0.0, 1.0),
            _ => (0.0, 0.0),
        };
        let dp = if id == ParamId::Anisotropy { dp_db } else { Matrix6::zeros() };
        // Y derivative at fixed dl
        let dy = dy0 + dh * (state.ep + dl) + h * dep_scalar;
        let dalpha = -dl / (y * y) * dy;
        let df: Voigt =
            cp_sigma * dalpha + (dc * p + c * dp) * sigma * alpha - dc * eps_e_trial + c * dep_n;
        let dg = sigma.dot(&(dp * sigma)) / (2.0 * phi) - dy;
        let mut rhs = SVector::<f64, 7>::zeros();
        rhs.fixed_rows_mut::<6>(0).copy_from(&(-df));
        rhs[6] = -dg;
        let du = lu
            .solve(&rhs)
            .ok_or_else(|| Error::NonFinite("singular return-mapping Jacobian".into()))?;
        let dsigma: Voigt = du.fixed_rows::<6>(0).into_owned();
        let ddl = du[6];
        a.column_mut(j).copy_from(&dsigma);

        let dy_total = dy + h * ddl;
        let dalpha_total = (ddl * y - dl * dy_total) / (y * y);
        let deps_p: Voigt = dep_n + p * sigma * dalpha_total + (dp * sigma + p * dsigma) * alpha;
        t_out.fixed_view_mut::<6, 1>(0, j).copy_from(&deps_p);
        t_out[(6, j)] = dep_scalar + ddl;
    }
    Ok((result, a, t_out))
}

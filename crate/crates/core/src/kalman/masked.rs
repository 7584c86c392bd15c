use nalgebra::{DMatrix, DVector};

use super::ekf::{factorize, masked_update};
use super::{CalibrationModel, ConvergenceMask, FilterConfig, ParameterBelief, StepReport, TrackedState};
use crate::constitutive::{StepKind, Strain};
use crate::error::Result;

/// EKF with Cauchy-convergence masking of the sensitivity matrix.
///
/// Before the data leaves the elastic range the model is advanced with the
/// elastic submodel, so the plastic parameters see no sensitivity and stay
/// at their prior. Yield is declared once the elastic residual exceeds
/// `gate_threshold` in squared Mahalanobis distance; from then on the full
/// elastoplastic step is used.
#[derive(Clone, Debug)]
pub struct MaskedEkf {
    pub belief: ParameterBelief,
    pub state: TrackedState,
    pub mask: ConvergenceMask,
    pub yield_detected: bool,
    r: DMatrix<f64>,
    yield_gate: bool,
    gate_threshold: f64,
    recompute_state: bool,
    history: bool,
}

impl MaskedEkf {
    pub fn new(prior: ParameterBelief, r: DMatrix<f64>, cfg: &FilterConfig) -> Self {
        let mask = ConvergenceMask::new(prior.dim(), cfg.tol_cauchy, cfg.window);
        let state = TrackedState::new(prior.dim());
        Self {
            belief: prior,
            state,
            mask,
            yield_detected: !cfg.yield_gate,
            r,
            yield_gate: cfg.yield_gate,
            gate_threshold: cfg.gate_threshold,
            recompute_state: cfg.recompute_state,
            history: cfg.history_sensitivity,
        }
    }

    pub fn assimilate(&mut self, model: &CalibrationModel, deps: &Strain, datum: &DVector<f64>) -> Result<StepReport> {
        let active = self.mask.active();
        let mut kind = StepKind::Elastoplastic;
        if self.yield_gate && !self.yield_detected {
            let elastic = model.predict(&self.state, deps, &self.belief.mean, StepKind::ElasticOnly, self.history)?;
            let residual = datum - &elastic.obs;
            let s = &elastic.sens * &self.belief.cov * elastic.sens.transpose() + &self.r;
            let (chol, _, _) = factorize(&s)?;
            let d2 = residual.dot(&chol.solve(&residual));
            if d2 > self.gate_threshold {
                self.yield_detected = true;
            } else {
                kind = StepKind::ElasticOnly;
            }
        }

        let pred = model.predict(&self.state, deps, &self.belief.mean, kind, self.history)?;
        let residual = datum - &pred.obs;
        let upd = masked_update(&self.belief, &pred.sens, &residual, &self.r, &active)?;
        let dtheta = &upd.belief.mean - &self.belief.mean;
        self.belief = upd.belief;
        let next = if self.recompute_state {
            let incoming = if self.history { self.state.corrected(&dtheta) } else { self.state.clone() };
            model.predict(&incoming, deps, &self.belief.mean, kind, self.history)?
        } else {
            pred.clone()
        };
        self.state = TrackedState { material: next.step.state, tangent: next.tangent };
        let before = self.mask.masked().to_vec();
        self.mask.record(&self.belief);
        // a frozen parameter is treated as known: dropping its correlations
        // keeps later masked updates positive semi-definite
        for (i, (&was, &now)) in before.iter().zip(self.mask.masked()).enumerate() {
            if now && !was {
                let keep = self.belief.cov[(i, i)];
                self.belief.cov.row_mut(i).fill(0.0);
                self.belief.cov.column_mut(i).fill(0.0);
                self.belief.cov[(i, i)] = keep;
            }
        }
        Ok(StepReport {
            predicted: pred.obs,
            mode_prob: None,
            masked: self.mask.masked().to_vec(),
            regularized: upd.regularized,
            fallback: false,
        })
    }
}

use nalgebra::{DMatrix, DVector};

use super::ekf::{ekf_update, psd_project};
use super::{CalibrationModel, FilterConfig, ModeSelection, ParameterBelief, StepReport, TrackedState};
use crate::constitutive::{StepKind, Strain};
use crate::error::{Error, Result};

pub const ELASTIC: usize = 0;
pub const PLASTIC: usize = 1;

const KINDS: [StepKind; 2] = [StepKind::ElasticOnly, StepKind::Elastoplastic];

/// Two-mode (elastic, plastic) switching state.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchState {
    pub mode_prob: [f64; 2],
    pub beliefs: [ParameterBelief; 2],
    /// Hidden model state carried by each mode.
    pub states: [TrackedState; 2],
    /// `transition[from][to]`.
    pub transition: [[f64; 2]; 2],
    /// Set when every branch likelihood underflowed and the step fell back
    /// to the transition prior.
    pub fallback: bool,
}

impl SwitchState {
    pub fn new(prior: ParameterBelief, transition: [[f64; 2]; 2]) -> Self {
        let state = TrackedState::new(prior.dim());
        Self {
            mode_prob: [1.0, 0.0],
            beliefs: [prior.clone(), prior],
            states: [state.clone(), state],
            transition,
            fallback: false,
        }
    }

    /// Mode with the larger probability; the elastic mode wins ties.
    pub fn winning_mode(&self) -> usize {
        if self.mode_prob[PLASTIC] > self.mode_prob[ELASTIC] {
            PLASTIC
        } else {
            ELASTIC
        }
    }
}

struct Branch {
    log_weight: f64,
    belief: ParameterBelief,
    state: TrackedState,
}

/// Per-step switches of [`skf_step`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SkfOptions {
    /// Collapse the mode probabilities to 0/1 after every step.
    pub hard_assignment: bool,
    /// Re-run each branch's step with its posterior mean.
    pub recompute_state: bool,
    /// Propagate hidden-state sensitivities between steps.
    pub history: bool,
}

/// One GPB2 step: every (from, to) mode pair runs the `to`-mode EKF update
/// from the `from`-mode belief, pairs are weighted by
/// `N(r; 0, S) Z(from, to) M(from)`, and the joint posterior is collapsed to
/// one Gaussian per mode by moment matching.
///
/// A pair whose update fails (e.g. its mean leaves the admissible parameter
/// range) is dropped; the step fails only if every pair does.
pub fn skf_step(
    sw: &SwitchState,
    model: &CalibrationModel,
    deps: &Strain,
    datum: &DVector<f64>,
    r: &DMatrix<f64>,
    opts: SkfOptions,
) -> Result<SwitchState> {
    let run_branch = |belief: &ParameterBelief, state: &TrackedState, kind: StepKind| -> Result<Branch> {
        let pred = model.predict(state, deps, &belief.mean, kind, opts.history)?;
        let residual = datum - &pred.obs;
        let upd = ekf_update(belief, &pred.sens, &residual, r)?;
        let next = if opts.recompute_state {
            let incoming = if opts.history { state.corrected(&(&upd.belief.mean - &belief.mean)) } else { state.clone() };
            model.predict(&incoming, deps, &upd.belief.mean, kind, opts.history)?
        } else {
            pred
        };
        let state = TrackedState { material: next.step.state, tangent: next.tangent };
        Ok(Branch { log_weight: upd.log_likelihood, belief: upd.belief, state })
    };
    let mut branches: [[Option<Branch>; 2]; 2] = Default::default();
    let mut first_err = None;
    for alpha in 0..2 {
        for beta in 0..2 {
            let prior_weight = sw.transition[alpha][beta] * sw.mode_prob[alpha];
            if !(prior_weight > 0.0) {
                continue;
            }
            match run_branch(&sw.beliefs[alpha], &sw.states[alpha], KINDS[beta]) {
                Ok(mut b) => {
                    b.log_weight += prior_weight.ln();
                    branches[alpha][beta] = Some(b);
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
    }
    if branches.iter().flatten().all(Option::is_none) {
        return Err(first_err.unwrap_or_else(|| Error::NonFinite("switching filter weights".into())));
    }

    let max_lw = branches
        .iter()
        .flatten()
        .flatten()
        .map(|b| b.log_weight)
        .filter(|w| w.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let fallback = !max_lw.is_finite();
    let mut joint = [[0.0; 2]; 2];
    for alpha in 0..2 {
        for beta in 0..2 {
            if let Some(b) = &branches[alpha][beta] {
                joint[alpha][beta] = if fallback {
                    sw.transition[alpha][beta] * sw.mode_prob[alpha]
                } else if b.log_weight.is_finite() {
                    (b.log_weight - max_lw).exp()
                } else {
                    0.0
                };
            }
        }
    }
    let total: f64 = joint.iter().flatten().sum();
    if !(total > 0.0) {
        return Err(Error::NonFinite("switching filter weights".into()));
    }
    for row in joint.iter_mut() {
        for w in row.iter_mut() {
            *w /= total;
        }
    }

    let mut mode_prob = [joint[0][0] + joint[1][0], joint[0][1] + joint[1][1]];
    let mut beliefs = sw.beliefs.clone();
    let mut states = sw.states.clone();
    for beta in 0..2 {
        let parts: Vec<(f64, &Branch)> = (0..2)
            .filter_map(|alpha| branches[alpha][beta].as_ref().map(|b| (joint[alpha][beta], b)))
            .filter(|(w, _)| *w > 0.0)
            .collect();
        if parts.is_empty() {
            // Mode carries no mass: advance its hidden state so it stays
            // aligned with the loading history.
            let kind = KINDS[beta];
            if let Ok(p) = model.predict(&sw.states[beta], deps, &sw.beliefs[beta].mean, kind, opts.history) {
                states[beta] = TrackedState { material: p.step.state, tangent: p.tangent };
            }
            continue;
        }
        if parts.len() == 1 {
            beliefs[beta] = parts[0].1.belief.clone();
            states[beta] = parts[0].1.state.clone();
            continue;
        }
        let mass: f64 = parts.iter().map(|(w, _)| w).sum();
        let n = sw.beliefs[beta].dim();
        let mut mean = DVector::zeros(n);
        for (w, b) in &parts {
            mean += &b.belief.mean * (w / mass);
        }
        let mut cov = DMatrix::zeros(n, n);
        for (w, b) in &parts {
            let d = &b.belief.mean - &mean;
            cov += (&b.belief.cov + &d * d.transpose()) * (w / mass);
        }
        beliefs[beta] = ParameterBelief { mean, cov: psd_project(&cov) };
        let weighted: Vec<(f64, &TrackedState)> = parts.iter().map(|(w, b)| (w / mass, &b.state)).collect();
        states[beta] = TrackedState::blend(&weighted);
    }

    if opts.hard_assignment {
        let win = if mode_prob[PLASTIC] > mode_prob[ELASTIC] { PLASTIC } else { ELASTIC };
        mode_prob = [0.0; 2];
        mode_prob[win] = 1.0;
    }
    Ok(SwitchState { mode_prob, beliefs, states, transition: sw.transition, fallback })
}

/// Switching Kalman filter over the elastic and plastic submodels.
#[derive(Clone, Debug)]
pub struct SwitchingFilter {
    pub state: SwitchState,
    pub kl_mode: ModeSelection,
    r: DMatrix<f64>,
    opts: SkfOptions,
}

impl SwitchingFilter {
    pub fn new(prior: ParameterBelief, r: DMatrix<f64>, cfg: &FilterConfig) -> Self {
        Self {
            state: SwitchState::new(prior, cfg.transition),
            kl_mode: cfg.kl_mode,
            r,
            opts: SkfOptions {
                hard_assignment: cfg.hard_assignment,
                recompute_state: cfg.recompute_state,
                history: cfg.history_sensitivity,
            },
        }
    }

    pub fn assimilate(&mut self, model: &CalibrationModel, deps: &Strain, datum: &DVector<f64>) -> Result<StepReport> {
        let win = self.state.winning_mode();
        let predicted = model
            .predict(&self.state.states[win], deps, &self.state.beliefs[win].mean, KINDS[win], self.opts.history)?
            .obs;
        self.state = skf_step(&self.state, model, deps, datum, &self.r, self.opts)?;
        Ok(StepReport {
            predicted,
            mode_prob: Some(self.state.mode_prob),
            masked: Vec::new(),
            regularized: false,
            fallback: self.state.fallback,
        })
    }

    pub fn winning_mode(&self) -> usize {
        self.state.winning_mode()
    }

    /// Belief of the winning mode.
    pub fn belief(&self) -> &ParameterBelief {
        &self.state.beliefs[self.winning_mode()]
    }

    pub fn select(&self, sel: ModeSelection) -> &ParameterBelief {
        match sel {
            ModeSelection::MostProbable => self.belief(),
            ModeSelection::Elastic => &self.state.beliefs[ELASTIC],
            ModeSelection::Plastic => &self.state.beliefs[PLASTIC],
        }
    }
}

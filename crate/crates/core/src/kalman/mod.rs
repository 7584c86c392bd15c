//! Online Bayesian calibration of model parameters.
//!
//! [`ekf_update`] and [`masked_update`] are the measurement updates;
//! [`MaskedEkf`] and [`SwitchingFilter`] drive them step by step against a
//! [`CalibrationModel`]. [`dae_sensitivities`] assembles exact one-step
//! derivatives for models written as semi-explicit index-1 DAEs.

mod dae;
mod ekf;
mod mask;
mod masked;
mod model;
mod switching;

pub use dae::{dae_sensitivities, joint_covariance_predict, BlockLayout, DaePartials, DaeSensitivities};
pub use ekf::{ekf_update, masked_update, predict, EkfUpdate};
pub use mask::{update_mask, ConvergenceMask};
pub use masked::MaskedEkf;
pub use model::{CalibrationModel, ObservationMap, Prediction, TrackedState};
pub use switching::{skf_step, SkfOptions, SwitchState, SwitchingFilter, ELASTIC, PLASTIC};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constitutive::{MaterialState, ParamId, Strain};
use crate::error::{Error, Result};

/// Gaussian belief over the calibrated parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl ParameterBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Dimension(format!(
                "mean has {} entries but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("belief".into()));
        }
        Ok(Self { mean, cov: ekf::symmetrize(&cov) })
    }

    /// Independent Gaussian prior with the given means and standard deviations.
    pub fn diagonal(mean: &[f64], std: &[f64]) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::Dimension("prior mean and std lengths differ".into()));
        }
        let var: Vec<f64> = std.iter().map(|s| s * s).collect();
        Self::new(DVector::from_column_slice(mean), DMatrix::from_diagonal(&DVector::from_vec(var)))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> DVector<f64> {
        self.cov.diagonal().map(|v| v.max(0.0).sqrt())
    }

    /// Portable snapshot for logs.
    pub fn snapshot(&self, params: &[ParamId]) -> BeliefSnapshot {
        BeliefSnapshot {
            format: "belief".into(),
            version: BeliefSnapshot::VERSION,
            params: params.iter().map(|p| p.name().to_string()).collect(),
            mean: self.mean.iter().copied().collect(),
            cov: (0..self.dim()).map(|i| self.cov.row(i).iter().copied().collect()).collect(),
        }
    }
}

/// Serialized belief: `{"format":"belief","version":1,"params":[..],"mean":[..],"cov":[[..],..]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefSnapshot {
    pub format: String,
    pub version: u32,
    pub params: Vec<String>,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl BeliefSnapshot {
    pub const VERSION: u32 = 1;

    pub fn to_belief(&self) -> Result<ParameterBelief> {
        if self.format != "belief" || self.version != Self::VERSION {
            return Err(Error::Config(format!("unsupported belief snapshot {} v{}", self.format, self.version)));
        }
        let n = self.mean.len();
        if self.cov.len() != n || self.cov.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("belief snapshot covariance shape".into()));
        }
        ParameterBelief::new(
            DVector::from_column_slice(&self.mean),
            DMatrix::from_fn(n, n, |i, j| self.cov[i][j]),
        )
    }
}

/// Noise covariances. Only `r` enters the parameter filters; the process
/// terms belong to the joint state-parameter formulation.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    pub r: DMatrix<f64>,
    pub q_eta: Option<DMatrix<f64>>,
    pub q_delta: Option<DMatrix<f64>>,
}

impl NoiseModel {
    pub fn isotropic(n_obs: usize, variance: f64) -> Self {
        Self { r: DMatrix::identity(n_obs, n_obs) * variance, q_eta: None, q_delta: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Masked,
    Switching,
}

impl std::str::FromStr for FilterKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "masked" => Ok(FilterKind::Masked),
            "switching" => Ok(FilterKind::Switching),
            other => Err(Error::Config(format!("unknown filter `{other}` (expected masked|switching)"))),
        }
    }
}

/// Which switching-filter belief feeds the information reward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSelection {
    MostProbable,
    Elastic,
    Plastic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub kind: FilterKind,
    /// Diagonal of the observation-noise covariance `R`.
    pub noise_variance: f64,
    pub tol_cauchy: f64,
    pub window: usize,
    /// Masked filter: keep the plastic submodel off until the data departs
    /// from the elastic prediction.
    pub yield_gate: bool,
    /// Squared Mahalanobis distance of the elastic residual that signals yield.
    pub gate_threshold: f64,
    /// Mode transition matrix `Z[from][to]`, modes ordered (elastic, plastic).
    pub transition: [[f64; 2]; 2],
    /// Collapse the mode probabilities to the winning mode after each step.
    pub hard_assignment: bool,
    /// Re-run the step with the posterior mean to advance the hidden state.
    pub recompute_state: bool,
    /// Carry the derivative of the hidden state with respect to the
    /// parameters from step to step, so sensitivities see the whole history.
    pub history_sensitivity: bool,
    pub kl_mode: ModeSelection,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            kind: FilterKind::Masked,
            noise_variance: 1e-6,
            tol_cauchy: 1e-4,
            window: 5,
            yield_gate: true,
            gate_threshold: 50.0,
            transition: [[0.98, 0.02], [0.0, 1.0]],
            hard_assignment: false,
            recompute_state: true,
            history_sensitivity: true,
            kl_mode: ModeSelection::MostProbable,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_variance > 0.0) {
            return Err(Error::Config("noise_variance must be positive".into()));
        }
        if self.window < 2 {
            return Err(Error::Config("window must be at least 2".into()));
        }
        for row in &self.transition {
            if row.iter().any(|&z| !(0.0..=1.0).contains(&z)) || ((row[0] + row[1]) - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("transition rows must be probability vectors, got {row:?}")));
            }
        }
        Ok(())
    }
}

/// Per-step filter diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Model observables at the prior mean.
    pub predicted: DVector<f64>,
    pub mode_prob: Option<[f64; 2]>,
    /// Masked-filter convergence flags (`true` = frozen).
    pub masked: Vec<bool>,
    pub regularized: bool,
    pub fallback: bool,
}

/// A parameter filter selected at run time.
#[derive(Clone, Debug)]
pub enum Calibrator {
    Masked(MaskedEkf),
    Switching(SwitchingFilter),
}

impl Calibrator {
    pub fn new(cfg: &FilterConfig, prior: ParameterBelief, n_obs: usize) -> Result<Self> {
        cfg.validate()?;
        let r = DMatrix::identity(n_obs, n_obs) * cfg.noise_variance;
        Ok(match cfg.kind {
            FilterKind::Masked => Calibrator::Masked(MaskedEkf::new(prior, r, cfg)),
            FilterKind::Switching => Calibrator::Switching(SwitchingFilter::new(prior, r, cfg)),
        })
    }

    /// Assimilates one measured datum after the strain increment `deps`.
    pub fn assimilate(&mut self, model: &CalibrationModel, deps: &Strain, datum: &DVector<f64>) -> Result<StepReport> {
        match self {
            Calibrator::Masked(f) => f.assimilate(model, deps, datum),
            Calibrator::Switching(f) => f.assimilate(model, deps, datum),
        }
    }

    /// The reported calibration (the winning mode for the switching filter).
    pub fn belief(&self) -> &ParameterBelief {
        match self {
            Calibrator::Masked(f) => &f.belief,
            Calibrator::Switching(f) => f.belief(),
        }
    }

    /// Belief used for the information reward.
    pub fn reward_belief(&self) -> &ParameterBelief {
        match self {
            Calibrator::Masked(f) => &f.belief,
            Calibrator::Switching(f) => f.select(f.kl_mode),
        }
    }

    /// Hidden state of the calibrated model (the winning mode's).
    pub fn model_state(&self) -> &MaterialState {
        match self {
            Calibrator::Masked(f) => &f.state.material,
            Calibrator::Switching(f) => &f.state.states[f.winning_mode()].material,
        }
    }
}

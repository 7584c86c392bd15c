use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constitutive::{
    sensitivities_fd, step_with_tangent, MaterialState, ModelParams, ParamId, ReturnMapOptions, SensitivityMethod,
    StepKind, StepResult, Strain, Stress, HIDDEN_DIM,
};
use crate::error::{Error, Result};

/// Which stress components the experiment measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMap {
    /// All six Voigt stress components.
    FullStress,
    /// Mean stress `tr(sigma)/3` and shear stress `sigma_12`.
    VolDev,
}

impl ObservationMap {
    pub fn dim(self) -> usize {
        match self {
            ObservationMap::FullStress => 6,
            ObservationMap::VolDev => 2,
        }
    }

    /// Linear operator from Voigt stress to observables.
    pub fn matrix(self) -> DMatrix<f64> {
        match self {
            ObservationMap::FullStress => DMatrix::identity(6, 6),
            ObservationMap::VolDev => {
                let mut h = DMatrix::zeros(2, 6);
                for j in 0..3 {
                    h[(0, j)] = 1.0 / 3.0;
                }
                h[(1, 5)] = 1.0;
                h
            }
        }
    }

    pub fn observe(self, sigma: &Stress) -> DVector<f64> {
        match self {
            ObservationMap::FullStress => DVector::from_column_slice(sigma.0.as_slice()),
            ObservationMap::VolDev => DVector::from_vec(vec![sigma.mean(), sigma.0[5]]),
        }
    }
}

/// Observation model `m(theta)` used by the filters: the constitutive step
/// evaluated with the calibrated parameters substituted into `base`.
#[derive(Clone, Debug)]
pub struct CalibrationModel {
    /// Values of the parameters that are not calibrated.
    pub base: ModelParams,
    /// Calibrated parameters, in belief order.
    pub active: Vec<ParamId>,
    pub observation: ObservationMap,
    pub return_map: ReturnMapOptions,
    pub sensitivity: SensitivityMethod,
}

/// Model output for one step.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub obs: DVector<f64>,
    /// `n_obs x n_active`.
    pub sens: DMatrix<f64>,
    pub step: StepResult,
    /// Hidden-state tangent of the new state.
    pub tangent: DMatrix<f64>,
}

/// Model state carried by a filter: the hidden material state and its
/// derivative with respect to the calibrated parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackedState {
    pub material: MaterialState,
    /// `d(eps_p, ep) / d theta`; kept at zero when history sensitivities are off.
    pub tangent: DMatrix<f64>,
}

impl TrackedState {
    pub fn new(n_params: usize) -> Self {
        Self { material: MaterialState::default(), tangent: DMatrix::zeros(HIDDEN_DIM, n_params) }
    }

    /// First-order shift of the hidden state for a parameter change
    /// `dtheta`, keeping it consistent with the updated parameters.
    pub fn corrected(&self, dtheta: &DVector<f64>) -> TrackedState {
        let shift = &self.tangent * dtheta;
        let mut material = self.material;
        for i in 0..6 {
            material.eps_p.0[i] += shift[i];
        }
        material.ep = (material.ep + shift[6]).max(0.0);
        TrackedState { material, tangent: self.tangent.clone() }
    }

    /// Weighted average used when filter branches are collapsed.
    pub fn blend(parts: &[(f64, &TrackedState)]) -> TrackedState {
        let materials: Vec<(f64, &MaterialState)> = parts.iter().map(|(w, s)| (*w, &s.material)).collect();
        let mut tangent = DMatrix::zeros(HIDDEN_DIM, parts.first().map_or(0, |p| p.1.tangent.ncols()));
        for (w, s) in parts {
            tangent += &s.tangent * *w;
        }
        TrackedState { material: MaterialState::blend(&materials), tangent }
    }
}

impl CalibrationModel {
    pub fn new(base: ModelParams, active: Vec<ParamId>, observation: ObservationMap) -> Result<Self> {
        base.values(&active)?;
        Ok(Self {
            base,
            active,
            observation,
            return_map: ReturnMapOptions::default(),
            sensitivity: SensitivityMethod::Analytic,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.observation.dim()
    }

    pub fn n_params(&self) -> usize {
        self.active.len()
    }

    pub fn params_at(&self, theta: &DVector<f64>) -> Result<ModelParams> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter mean".into()));
        }
        let params = self.base.with_values(&self.active, theta.as_slice())?;
        params.validate()?;
        Ok(params)
    }

    /// Advances `state` with parameters `theta` and returns observables and
    /// their sensitivities. With `history` set, the sensitivities include the
    /// dependence of the incoming hidden state on the parameters; otherwise
    /// the incoming state is held fixed.
    pub fn predict(
        &self,
        state: &TrackedState,
        deps: &Strain,
        theta: &DVector<f64>,
        kind: StepKind,
        history: bool,
    ) -> Result<Prediction> {
        let params = self.params_at(theta)?;
        let n = self.active.len();
        let zero;
        let tangent_in = if history {
            &state.tangent
        } else {
            zero = DMatrix::zeros(HIDDEN_DIM, n);
            &zero
        };
        let (step, mut a, mut tangent) =
            step_with_tangent(&state.material, deps, &params, &self.active, kind, &self.return_map, tangent_in)?;
        if let SensitivityMethod::FiniteDifference { rel_step } = self.sensitivity {
            a = sensitivities_fd(&state.material, deps, &params, &self.active, kind, &self.return_map, rel_step)?;
            tangent = DMatrix::zeros(HIDDEN_DIM, n);
        }
        if !history {
            tangent = DMatrix::zeros(HIDDEN_DIM, n);
        }
        let h = self.observation.matrix();
        let obs = self.observation.observe(&step.sigma);
        let sens = match self.observation {
            ObservationMap::FullStress => a,
            ObservationMap::VolDev => h * a,
        };
        Ok(Prediction { obs, sens, step, tangent })
    }
}

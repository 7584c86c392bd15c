use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{encode_state, GameSpec};
use crate::constitutive::{integrate_step_with, MaterialState, ReturnMapOptions, StepKind, Strain, Stress};
use crate::error::{Error, Result};
use crate::kalman::{CalibrationModel, Calibrator, ParameterBelief, StepReport};
use crate::reward::{kl_between, kl_reward, nse, KlTrace, RewardKind};

/// One virtual test in progress: the specimen, the calibrator and the
/// action history.
#[derive(Clone, Debug)]
pub struct Environment<'a> {
    pub spec: &'a GameSpec,
    pub model: CalibrationModel,
    pub history: Vec<u8>,
    pub step_index: usize,
    /// State of the virtual specimen.
    pub specimen: MaterialState,
    pub calibrator: Calibrator,
    pub prior: ParameterBelief,
    /// Reward belief after each action, starting with the prior.
    pub beliefs: Vec<ParameterBelief>,
    /// Measured (possibly noisy) stress after every sub-step.
    pub measured: Vec<Stress>,
    /// Total strain after every sub-step.
    pub strains: Vec<Strain>,
    pub reports: Vec<StepReport>,
    noise: Option<(ChaCha8Rng, Normal<f64>)>,
    kl_prev: f64,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// Measured stresses of the action's sub-steps.
    pub observations: Vec<Stress>,
    pub delta_kl: f64,
}

impl<'a> Environment<'a> {
    pub fn new(spec: &'a GameSpec, noise_seed: u64) -> Result<Self> {
        spec.validate()?;
        let model = CalibrationModel::new(spec.truth, spec.calibrate.clone(), spec.observation)?;
        let prior = spec.prior_belief()?;
        let calibrator = Calibrator::new(&spec.filter, prior.clone(), model.n_obs())?;
        let noise = if spec.noise_std > 0.0 {
            let normal = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
            Some((ChaCha8Rng::seed_from_u64(noise_seed), normal))
        } else {
            None
        };
        Ok(Self {
            spec,
            model,
            history: vec![0; spec.n_steps],
            step_index: 0,
            specimen: MaterialState::default(),
            calibrator,
            beliefs: vec![prior.clone()],
            prior,
            measured: Vec::new(),
            strains: Vec::new(),
            reports: Vec::new(),
            noise,
            kl_prev: 0.0,
        })
    }

    pub fn is_terminal(&self) -> bool {
        self.step_index >= self.spec.n_steps
    }

    pub fn legal_actions(&self) -> Vec<u8> {
        self.spec.legal_actions(&self.history)
    }

    /// Applies one action: the specimen is strained in `substeps` equal
    /// increments and each measured stress is assimilated.
    pub fn step(&mut self, code: u8) -> Result<StepOutcome> {
        if self.is_terminal() {
            return Err(Error::Config("step on a terminal state".into()));
        }
        let total = self.spec.action_to_strain(code)?;
        let s = self.spec.substeps;
        let deps = total * (1.0 / s as f64);
        let opts = ReturnMapOptions::default();
        let mut observations = Vec::with_capacity(s);
        for _ in 0..s {
            let step = integrate_step_with(&self.specimen, &deps, &self.spec.truth, StepKind::Elastoplastic, &opts)?;
            self.specimen = step.state;
            let mut sigma = step.sigma;
            if let Some((rng, normal)) = self.noise.as_mut() {
                for v in sigma.0.iter_mut() {
                    *v += normal.sample(rng);
                }
            }
            let datum = self.spec.observation.observe(&sigma);
            let report = self.calibrator.assimilate(&self.model, &deps, &datum)?;
            self.reports.push(report);
            self.measured.push(sigma);
            self.strains.push(self.specimen.eps);
            observations.push(sigma);
        }
        self.history[self.step_index] = code;
        self.step_index += 1;
        let belief = self.calibrator.reward_belief().clone();
        let kl = kl_between(&self.prior, &belief)?.value;
        let delta_kl = kl - self.kl_prev;
        self.kl_prev = kl;
        self.beliefs.push(belief);
        Ok(StepOutcome { observations, delta_kl })
    }

    pub fn encode(&self) -> Result<Vec<f64>> {
        encode_state(&self.history, self.spec, self.spec.encode, Some(self.calibrator.reward_belief()))
    }
}

/// Result of replaying a path through the specimen and the calibrator.
#[derive(Clone, Debug)]
pub struct CalibrationOutcome {
    pub path: Vec<u8>,
    /// Reported calibration (winning mode for the switching filter).
    pub belief: ParameterBelief,
    /// Reward belief after each action, starting with the prior.
    pub trace: Vec<ParameterBelief>,
    pub kl: KlTrace,
    pub nse: Option<f64>,
    /// Reward in `[0, 1]` after scaling.
    pub reward: f64,
    pub strains: Vec<Strain>,
    pub measured: Vec<Stress>,
    pub reports: Vec<StepReport>,
}

/// Replays `path` and scores the resulting calibration with the game's reward.
pub fn calibrate_path(spec: &GameSpec, path: &[u8], noise_seed: u64) -> Result<CalibrationOutcome> {
    if path.len() != spec.n_steps {
        return Err(Error::Config(format!("path has {} actions, game needs {}", path.len(), spec.n_steps)));
    }
    let mut env = Environment::new(spec, noise_seed)?;
    for &code in path {
        env.step(code)?;
    }
    let kl = kl_reward(&env.beliefs)?;
    let belief = env.calibrator.belief().clone();
    let nse_value = match spec.reward.kind {
        RewardKind::Kl => None,
        _ => Some(blind_test_nse(spec, &env.model, &belief.mean)?),
    };
    let reward = spec.reward.score(Some(kl.total), nse_value)?;
    Ok(CalibrationOutcome {
        path: path.to_vec(),
        belief,
        trace: env.beliefs,
        kl,
        nse: nse_value,
        reward,
        strains: env.strains,
        measured: env.measured,
        reports: env.reports,
    })
}

/// NSE of the calibrated model against the specimen on the game's blind test,
/// over all six stress components of every step.
pub fn blind_test_nse(spec: &GameSpec, model: &CalibrationModel, theta: &DVector<f64>) -> Result<f64> {
    let blind = spec.blind_test.as_ref().ok_or_else(|| Error::Config("game has no blind test".into()))?;
    let calibrated = model.params_at(theta)?;
    let opts = ReturnMapOptions::default();
    let mut truth_state = MaterialState::default();
    let mut model_state = MaterialState::default();
    let mut data = Vec::new();
    let mut pred = Vec::new();
    for deps in blind.increments() {
        let t = integrate_step_with(&truth_state, &deps, &spec.truth, StepKind::Elastoplastic, &opts)?;
        let m = integrate_step_with(&model_state, &deps, &calibrated, StepKind::Elastoplastic, &opts)?;
        truth_state = t.state;
        model_state = m.state;
        data.extend(t.sigma.0.iter());
        pred.extend(m.sigma.0.iter());
    }
    nse(&data, &pred)
}

/// Calibration of an external record.
#[derive(Clone, Debug)]
pub struct RecordCalibration {
    pub belief: ParameterBelief,
    /// Reward belief after every row, starting with the prior.
    pub trace: Vec<ParameterBelief>,
    pub kl: KlTrace,
    pub reports: Vec<StepReport>,
}

/// Feeds a measured record (total strain and stress per row, starting from
/// the unstrained state) through the game's calibrator.
pub fn calibrate_record(spec: &GameSpec, strains: &[Strain], stresses: &[Stress]) -> Result<RecordCalibration> {
    if strains.len() != stresses.len() {
        return Err(Error::Dimension(format!("{} strain rows but {} stress rows", strains.len(), stresses.len())));
    }
    if strains.is_empty() {
        return Err(Error::DegenerateData("record has no rows".into()));
    }
    spec.validate()?;
    let model = CalibrationModel::new(spec.truth, spec.calibrate.clone(), spec.observation)?;
    let prior = spec.prior_belief()?;
    let mut calibrator = Calibrator::new(&spec.filter, prior.clone(), model.n_obs())?;
    let mut trace = vec![prior];
    let mut reports = Vec::with_capacity(strains.len());
    let mut prev = Strain::default();
    for (eps, sigma) in strains.iter().zip(stresses) {
        let deps = *eps - prev;
        prev = *eps;
        let datum = spec.observation.observe(sigma);
        reports.push(calibrator.assimilate(&model, &deps, &datum)?);
        trace.push(calibrator.reward_belief().clone());
    }
    let kl = kl_reward(&trace)?;
    Ok(RecordCalibration { belief: calibrator.belief().clone(), trace, kl, reports })
}

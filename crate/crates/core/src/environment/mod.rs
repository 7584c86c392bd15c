//! The experiment-design game: actions are strain increments, an episode is
//! a root-to-leaf path of the decision tree, and the terminal reward comes
//! from calibrating a model on the resulting virtual test.

mod episode;
mod presets;

pub use episode::{blind_test_nse, calibrate_path, calibrate_record, CalibrationOutcome, Environment, RecordCalibration, StepOutcome};
pub use presets::{preset, PRESET_NAMES};

use serde::{Deserialize, Serialize};

use crate::constitutive::{voigt_index, ModelParams, ParamId, Strain, VOIGT_LABELS};
use crate::error::{Error, Result};
use crate::kalman::{FilterConfig, ObservationMap, ParameterBelief};
use crate::reward::RewardConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Game {
    /// Two actions: volumetric compression (1) and simple shear (2).
    ElasticVolDev,
    /// Four deviatoric actions in the principal frame: `+de1, +de2, -de1, -de2`
    /// with the third principal increment keeping the trace at zero.
    VonMisesPiPlane,
    /// Twelve actions: `+/-` one strain tensor component.
    HillFullStrain,
}

/// Network input layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodeMode {
    /// The action history with zeros for steps not yet taken.
    HistoryOnly,
    /// History, belief mean and the upper triangle of the belief covariance.
    HistoryPlusBelief,
}

/// Prior belief over the calibrated parameters. Missing explicit values are
/// derived from the truth: `mean = mean_factor * truth`, `std = rel_std * mean`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    pub mean_factor: f64,
    pub rel_std: f64,
    pub mean: Option<Vec<f64>>,
    pub std: Option<Vec<f64>>,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { mean_factor: 0.5, rel_std: 0.5, mean: None, std: None }
    }
}

/// Piecewise-linear strain program used to score forecasts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlindTest {
    /// Cumulative Voigt strains (engineering shear) visited in order,
    /// starting from the undeformed state.
    pub waypoints: Vec<[f64; 6]>,
    pub steps_per_segment: usize,
}

impl BlindTest {
    /// Strain increments of the whole program.
    pub fn increments(&self) -> Vec<Strain> {
        let mut out = Vec::new();
        let mut prev = [0.0; 6];
        let n = self.steps_per_segment.max(1);
        for w in &self.waypoints {
            let mut d = [0.0; 6];
            for i in 0..6 {
                d[i] = (w[i] - prev[i]) / n as f64;
            }
            out.extend(std::iter::repeat_n(Strain::from_array(d), n));
            prev = *w;
        }
        out
    }
}

/// Full description of one game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameSpec {
    pub name: String,
    pub game: Game,
    pub n_steps: usize,
    /// Increment magnitude per action.
    pub delta_eps: f64,
    /// Parameters of the virtual specimen.
    pub truth: ModelParams,
    /// Parameters estimated by the calibrator; the rest are taken from `truth`.
    pub calibrate: Vec<ParamId>,
    pub observation: ObservationMap,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub filter: FilterConfig,
    pub reward: RewardConfig,
    /// Filter sub-steps per action.
    pub substeps: usize,
    /// Standard deviation of Gaussian noise added to measured stresses.
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default = "default_encode")]
    pub encode: EncodeMode,
    /// Hill action table, e.g. `["+11", "+22", ..., "-13"]`; codes are the
    /// 1-based positions.
    #[serde(default)]
    pub action_table: Vec<String>,
    #[serde(default)]
    pub blind_test: Option<BlindTest>,
}

fn default_encode() -> EncodeMode {
    EncodeMode::HistoryOnly
}

/// Hill codes 1-6 increase and 7-12 decrease the components 11, 22, 33,
/// 12, 23, 13 in that order, so code 4 is `+de12` and code 12 is `-de13`.
pub const DEFAULT_HILL_ACTIONS: [&str; 12] =
    ["+11", "+22", "+33", "+12", "+23", "+13", "-11", "-22", "-33", "-12", "-23", "-13"];

fn parse_action(label: &str) -> Result<(usize, f64)> {
    let bad = || Error::Config(format!("bad action label `{label}` (expected e.g. +11 or -23)"));
    let (sign, rest) = match label.as_bytes().first() {
        Some(b'+') => (1.0, &label[1..]),
        Some(b'-') => (-1.0, &label[1..]),
        _ => return Err(bad()),
    };
    let digits: Vec<usize> = rest.chars().map(|c| c.to_digit(10).map(|d| d as usize)).collect::<Option<_>>().ok_or_else(bad)?;
    if digits.len() != 2 {
        return Err(bad());
    }
    let idx = voigt_index(digits[0], digits[1]).ok_or_else(bad)?;
    Ok((idx, sign))
}

impl GameSpec {
    pub fn action_count(&self) -> usize {
        match self.game {
            Game::ElasticVolDev => 2,
            Game::VonMisesPiPlane => 4,
            Game::HillFullStrain => self.action_table.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(format!("game `{}`: {m}", self.name)));
        if self.n_steps == 0 {
            return err("n_steps must be positive".into());
        }
        if self.substeps == 0 {
            return err("substeps must be positive".into());
        }
        if !(self.delta_eps > 0.0 && self.delta_eps.is_finite()) {
            return err(format!("delta_eps must be positive, got {}", self.delta_eps));
        }
        if !(self.noise_std >= 0.0) {
            return err("noise_std must be non-negative".into());
        }
        if self.calibrate.is_empty() {
            return err("no calibrated parameters".into());
        }
        self.truth.validate()?;
        self.truth.values(&self.calibrate)?;
        self.filter.validate()?;
        self.reward.validate()?;
        if self.game == Game::HillFullStrain {
            if self.action_table.is_empty() {
                return err("Hill game needs an action table".into());
            }
            for a in &self.action_table {
                parse_action(a)?;
            }
        } else if !self.action_table.is_empty() {
            return err("action_table only applies to the Hill game".into());
        }
        if self.action_count() > u8::MAX as usize {
            return err("too many actions".into());
        }
        if self.reward.kind != crate::reward::RewardKind::Kl && self.blind_test.is_none() {
            return err("NSE-based rewards need a blind_test".into());
        }
        self.prior_belief()?;
        Ok(())
    }

    /// Every action is available at every non-terminal node.
    pub fn legal_actions(&self, history: &[u8]) -> Vec<u8> {
        if history.iter().filter(|&&c| c != 0).count() >= self.n_steps {
            return Vec::new();
        }
        (1..=self.action_count() as u8).collect()
    }

    /// Total strain increment of one action (before sub-cycling).
    pub fn action_to_strain(&self, code: u8) -> Result<Strain> {
        let n = self.action_count();
        if code == 0 || code as usize > n {
            return Err(Error::Config(format!("action {code} outside 1..={n}")));
        }
        let d = self.delta_eps;
        let a = match self.game {
            Game::ElasticVolDev => match code {
                1 => [-d / 3.0, -d / 3.0, -d / 3.0, 0.0, 0.0, 0.0],
                _ => [0.0, 0.0, 0.0, 0.0, 0.0, d],
            },
            Game::VonMisesPiPlane => match code {
                1 => [d, 0.0, -d, 0.0, 0.0, 0.0],
                2 => [0.0, d, -d, 0.0, 0.0, 0.0],
                3 => [-d, 0.0, d, 0.0, 0.0, 0.0],
                _ => [0.0, -d, d, 0.0, 0.0, 0.0],
            },
            Game::HillFullStrain => {
                let (idx, sign) = parse_action(&self.action_table[code as usize - 1])?;
                let mut a = [0.0; 6];
                // tensor component increment; Voigt shear slots hold 2 eps_ij
                a[idx] = sign * d * if idx >= 3 { 2.0 } else { 1.0 };
                a
            }
        };
        Ok(Strain::from_array(a))
    }

    /// Human-readable action name, e.g. `+de11`.
    pub fn action_label(&self, code: u8) -> String {
        match self.game {
            Game::ElasticVolDev => match code {
                1 => "compression".into(),
                _ => "shear".into(),
            },
            Game::VonMisesPiPlane => ["+de1", "+de2", "-de1", "-de2"][(code as usize - 1).min(3)].into(),
            Game::HillFullStrain => self
                .action_table
                .get(code as usize - 1)
                .map(|a| format!("{}de{}", &a[..1], &a[1..]))
                .unwrap_or_else(|| format!("action{code}")),
        }
    }

    pub fn prior_belief(&self) -> Result<ParameterBelief> {
        let truth = self.truth.values(&self.calibrate)?;
        let mean = match &self.prior.mean {
            Some(m) => m.clone(),
            None => truth.iter().map(|v| v * self.prior.mean_factor).collect(),
        };
        let std = match &self.prior.std {
            Some(s) => s.clone(),
            None => mean.iter().map(|v| (v * self.prior.rel_std).abs()).collect(),
        };
        if mean.len() != self.calibrate.len() || std.len() != self.calibrate.len() {
            return Err(Error::Config("prior length differs from the calibrated parameter list".into()));
        }
        if std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("prior standard deviations must be positive".into()));
        }
        ParameterBelief::diagonal(&mean, &std)
    }

    /// Length of the network input vector.
    pub fn encoding_len(&self) -> usize {
        let n = self.calibrate.len();
        match self.encode {
            EncodeMode::HistoryOnly => self.n_steps,
            EncodeMode::HistoryPlusBelief => self.n_steps + n + n * (n + 1) / 2,
        }
    }
}

/// Network features of a node. `belief` is required for
/// [`EncodeMode::HistoryPlusBelief`].
pub fn encode_state(history: &[u8], spec: &GameSpec, mode: EncodeMode, belief: Option<&ParameterBelief>) -> Result<Vec<f64>> {
    if history.len() != spec.n_steps {
        return Err(Error::Dimension(format!("history has {} entries, game has {} steps", history.len(), spec.n_steps)));
    }
    let mut x: Vec<f64> = history.iter().map(|&c| c as f64).collect();
    if mode == EncodeMode::HistoryPlusBelief {
        let b = belief.ok_or_else(|| Error::Config("belief-augmented encoding needs a belief".into()))?;
        x.extend(b.mean.iter());
        for i in 0..b.dim() {
            for j in i..b.dim() {
                x.push(b.cov[(i, j)]);
            }
        }
    }
    Ok(x)
}

/// `(total nodes, leaves)` of a tree with `actions` choices per level and
/// `steps` levels.
pub fn tree_counts(actions: u64, steps: u32) -> (u64, u64) {
    let mut total = 0u64;
    let mut level = 1u64;
    for _ in 0..=steps {
        total += level;
        level *= actions;
    }
    (total, actions.pow(steps))
}

/// Strain labels for strain-program files.
pub fn strain_columns() -> Vec<String> {
    VOIGT_LABELS.iter().map(|l| format!("eps{l}")).collect()
}

/// Stress labels matching [`strain_columns`].
pub fn stress_columns() -> Vec<String> {
    VOIGT_LABELS.iter().map(|l| format!("sig{l}")).collect()
}

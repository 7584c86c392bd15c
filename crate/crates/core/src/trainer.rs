//! Self-play loop: episodes of tree search, retraining on their examples and
//! greedy design from the trained network.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{calibrate_path, CalibrationOutcome, GameSpec};
use crate::error::{Error, Result};
use crate::mcts::{policy_from_visits, reward_to_value, DesignGame, RewardCache, SearchConfig, SearchGame, SearchTree};
use crate::policynet::{NetConfig, PolicyValueNet, TrainExample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub n_iterations: usize,
    pub episodes_per_iteration: usize,
    pub c_puct_start: f64,
    pub c_puct_end: f64,
    /// Temperature for sampling episode actions from visit counts.
    pub temperature: f64,
    pub seed: u64,
    /// Largest tolerated fraction of failed episodes per iteration.
    pub failure_budget: f64,
    /// Run the episodes of an iteration on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            n_iterations: 10,
            episodes_per_iteration: 10,
            c_puct_start: 10.0,
            c_puct_end: 1.0,
            temperature: 1.0,
            seed: 0,
            failure_budget: 0.2,
            parallel: false,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 || self.episodes_per_iteration == 0 {
            return Err(Error::Config("schedule needs at least one iteration and one episode".into()));
        }
        if !(self.c_puct_end > 0.0 && self.c_puct_end <= self.c_puct_start && self.c_puct_start.is_finite()) {
            return Err(Error::Config(format!(
                "c_puct schedule must satisfy 0 < end <= start, got {} -> {}",
                self.c_puct_start, self.c_puct_end
            )));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be non-negative, got {}", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.failure_budget) {
            return Err(Error::Config(format!("failure budget must lie in [0, 1], got {}", self.failure_budget)));
        }
        Ok(())
    }

    /// Linear interpolation from start at the first iteration to end at the last.
    pub fn c_puct(&self, iteration: usize) -> f64 {
        if self.n_iterations <= 1 {
            return self.c_puct_start;
        }
        let t = iteration as f64 / (self.n_iterations - 1) as f64;
        self.c_puct_start + (self.c_puct_end - self.c_puct_start) * t
    }

    /// Seed of one episode, independent of execution order.
    pub fn episode_rng(&self, iteration: usize, episode: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((iteration as u64) << 32) | episode as u64);
        rng
    }
}

/// Everything needed to train on one game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSetup {
    pub schedule: TrainSchedule,
    pub search: SearchConfig,
    pub net: NetConfig,
}

/// Default schedule, search budget and network for a named game preset.
pub fn training_preset(name: &str, spec: &GameSpec) -> Result<TrainingSetup> {
    let net = |hidden: Vec<usize>, epochs: usize| NetConfig {
        input_dim: spec.encoding_len(),
        hidden,
        policy_dim: spec.action_count(),
        epochs,
        batch_size: 32,
        ..NetConfig::default()
    };
    let schedule = |n_iterations, episodes_per_iteration, c_puct_start| TrainSchedule {
        n_iterations,
        episodes_per_iteration,
        c_puct_start,
        ..TrainSchedule::default()
    };
    let search = |n_simulations| SearchConfig { n_simulations, ..SearchConfig::default() };
    let setup = match name {
        "elastic" => TrainingSetup { schedule: schedule(10, 10, 10.0), search: search(25), net: net(vec![50, 50], 100) },
        "vonmises" => TrainingSetup { schedule: schedule(20, 10, 10.0), search: search(50), net: net(vec![100, 100], 500) },
        "hill_b05" | "hill_b20" => {
            TrainingSetup { schedule: schedule(30, 10, 5.0), search: search(80), net: net(vec![100, 100], 500) }
        }
        "hill_vm_reduction" => {
            TrainingSetup { schedule: schedule(20, 20, 5.0), search: search(80), net: net(vec![100, 100], 500) }
        }
        other => return Err(Error::Config(format!("no training preset named {other:?}"))),
    };
    Ok(setup)
}

/// One decision of an episode.
#[derive(Clone, Debug, Serialize)]
pub struct Decision {
    pub features: Vec<f64>,
    /// Root visit counts over all action codes.
    pub visits: Vec<u32>,
    pub policy: Vec<f64>,
    pub action: u8,
}

#[derive(Clone, Debug)]
pub struct Episode {
    pub decisions: Vec<Decision>,
    pub path: Vec<u8>,
    /// Scaled reward in `[0, 1]`.
    pub score: f64,
    pub outcome: CalibrationOutcome,
}

impl Episode {
    /// Every traversed state labelled with its visit policy and the final
    /// reward on the value-head scale.
    pub fn examples(&self) -> Vec<TrainExample> {
        let value = reward_to_value(self.score);
        self.decisions
            .iter()
            .map(|d| TrainExample { features: d.features.clone(), policy: d.policy.clone(), value })
            .collect()
    }
}

/// Plays one game from the root, sampling each action from the visit policy
/// of a search that keeps its tree for the whole episode.
pub fn run_episode(
    net: &PolicyValueNet,
    spec: &GameSpec,
    search: &SearchConfig,
    temperature: f64,
    noise_seed: u64,
    cache: &RewardCache,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    search.validate()?;
    let game = DesignGame { spec, noise_seed, cache };
    let mut tree = SearchTree::new();
    let mut path = Vec::with_capacity(spec.n_steps);
    let mut decisions = Vec::with_capacity(spec.n_steps);
    while path.len() < spec.n_steps {
        let visits = tree.search(&path, &game, net, search)?;
        let policy = policy_from_visits(&visits, temperature)?;
        let idx = WeightedIndex::new(&policy).map_err(|e| Error::Search(e.to_string()))?.sample(rng);
        let action = idx as u8 + 1;
        decisions.push(Decision { features: game.features(&path)?, visits, policy, action });
        path.push(action);
    }
    let outcome = calibrate_path(spec, &path, noise_seed)?;
    cache.insert(&path, outcome.reward);
    Ok(Episode { decisions, score: outcome.reward, path, outcome })
}

/// Greedy rollout of the network policy over legal actions; ties go to the
/// lower code. `noise_seed` only matters for belief features of noisy games.
pub fn design_experiment(net: &PolicyValueNet, spec: &GameSpec, noise_seed: u64) -> Result<Vec<u8>> {
    let cache = RewardCache::default();
    let game = DesignGame { spec, noise_seed, cache: &cache };
    let mut path = Vec::with_capacity(spec.n_steps);
    while path.len() < spec.n_steps {
        let (policy, _) = net.forward(&game.features(&path)?)?;
        let mut best: Option<(u8, f64)> = None;
        for a in game.legal_actions(&path) {
            let p = policy[a as usize - 1];
            if best.is_none_or(|(_, b)| p > b) {
                best = Some((a, p));
            }
        }
        let (a, _) = best.ok_or_else(|| Error::Search(format!("no legal action after {path:?}")))?;
        path.push(a);
    }
    Ok(path)
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub c_puct: f64,
    /// Scores of the completed episodes in episode order.
    pub scores: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `scores`.
    pub std: f64,
    pub failures: usize,
    /// Final epoch loss of the retraining, if any examples were collected.
    pub loss: Option<f64>,
    pub greedy_path: Vec<u8>,
    pub greedy_score: f64,
    /// Calibrated parameter mean on the greedy path.
    pub greedy_params: Vec<f64>,
}

pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-episode result handed to the iteration callback; `Err` holds the
/// failure message of a discarded episode.
pub type EpisodeResult = std::result::Result<Episode, String>;

/// Number of failed episodes, or an error when they exceed `budget` as a
/// fraction of the iteration or leave nothing to train on.
pub fn check_failure_budget(episodes: &[EpisodeResult], budget: f64) -> Result<usize> {
    let failed = episodes.iter().filter(|e| e.is_err()).count();
    if failed as f64 > budget * episodes.len() as f64 || failed == episodes.len() {
        let last = episodes.iter().rev().find_map(|e| e.as_ref().err().cloned()).unwrap_or_default();
        return Err(Error::FailureBudget { failed, total: episodes.len(), last });
    }
    Ok(failed)
}

/// Runs the full schedule. `on_iteration` sees each report, the episodes it
/// came from and the retrained network, e.g. to write artifacts.
pub fn run_training<F>(
    spec: &GameSpec,
    setup: &TrainingSetup,
    mut net: PolicyValueNet,
    mut on_iteration: F,
) -> Result<(PolicyValueNet, Vec<IterationReport>)>
where
    F: FnMut(&IterationReport, &[EpisodeResult], &PolicyValueNet) -> Result<()>,
{
    let sched = &setup.schedule;
    sched.validate()?;
    setup.search.validate()?;
    net.check_shape(spec.encoding_len(), spec.action_count())?;
    let noise_seed = sched.seed;
    let mut reports = Vec::with_capacity(sched.n_iterations);
    for it in 0..sched.n_iterations {
        let c_puct = sched.c_puct(it);
        let search = SearchConfig { c_puct, ..setup.search.clone() };
        let cache = RewardCache::default();
        let play = |ep: usize| -> EpisodeResult {
            let mut rng = sched.episode_rng(it, ep);
            run_episode(&net, spec, &search, sched.temperature, noise_seed, &cache, &mut rng).map_err(|e| e.to_string())
        };
        let episodes: Vec<EpisodeResult> = if sched.parallel {
            (0..sched.episodes_per_iteration).into_par_iter().map(play).collect()
        } else {
            (0..sched.episodes_per_iteration).map(play).collect()
        };
        let failures = check_failure_budget(&episodes, sched.failure_budget)?;
        let scores: Vec<f64> = episodes.iter().filter_map(|e| e.as_ref().ok().map(|e| e.score)).collect();
        let examples: Vec<TrainExample> = episodes.iter().filter_map(|e| e.as_ref().ok()).flat_map(|e| e.examples()).collect();
        let losses = net.train(&examples, sched.seed.wrapping_add(it as u64))?;
        let greedy_path = design_experiment(&net, spec, noise_seed)?;
        let greedy = calibrate_path(spec, &greedy_path, noise_seed)?;
        let (mean, std) = mean_std(&scores);
        let report = IterationReport {
            iteration: it,
            c_puct,
            scores,
            mean,
            std,
            failures,
            loss: losses.last().copied(),
            greedy_path,
            greedy_score: greedy.reward,
            greedy_params: greedy.belief.mean.iter().copied().collect(),
        };
        on_iteration(&report, &episodes, &net)?;
        reports.push(report);
    }
    Ok((net, reports))
}

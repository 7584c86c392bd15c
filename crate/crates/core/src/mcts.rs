//! PUCT Monte-Carlo tree search over action histories.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::environment::{calibrate_path, encode_state, EncodeMode, Environment, GameSpec};
use crate::error::{Error, Result};
use crate::policynet::PolicyValueNet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Simulations per decision.
    pub n_simulations: usize,
    pub c_puct: f64,
    /// Visit-count temperature; 0 picks the most visited action.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { n_simulations: 25, c_puct: 1.0, temperature: 1.0, seed: 0 }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_simulations == 0 {
            return Err(Error::Config("n_simulations must be at least 1".into()));
        }
        if !(self.c_puct > 0.0 && self.c_puct.is_finite()) {
            return Err(Error::Config(format!("c_puct must be positive, got {}", self.c_puct)));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be non-negative, got {}", self.temperature)));
        }
        Ok(())
    }
}

/// Policy and value source for leaf expansion.
pub trait Evaluator {
    fn evaluate(&self, features: &[f64]) -> Result<(Vec<f64>, f64)>;
}

impl Evaluator for PolicyValueNet {
    fn evaluate(&self, features: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.forward(features)
    }
}

/// The part of a game the search needs. Paths are 1-based action codes from
/// the root.
pub trait SearchGame {
    fn n_steps(&self) -> usize;
    fn action_count(&self) -> usize;
    fn legal_actions(&self, path: &[u8]) -> Vec<u8>;
    fn features(&self, path: &[u8]) -> Result<Vec<f64>>;
    /// Scaled reward in `[0, 1]` of a complete path.
    fn terminal_reward(&self, path: &[u8]) -> Result<f64>;
}

/// Terminal rewards keyed by leaf path, shared by the episodes of one
/// iteration.
#[derive(Debug, Default)]
pub struct RewardCache {
    map: Mutex<HashMap<Vec<u8>, f64>>,
}

impl RewardCache {
    pub fn get(&self, path: &[u8]) -> Option<f64> {
        self.map.lock().unwrap().get(path).copied()
    }

    pub fn insert(&self, path: &[u8], reward: f64) {
        self.map.lock().unwrap().insert(path.to_vec(), reward);
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// [`SearchGame`] backed by a [`GameSpec`]: terminal rewards come from
/// replaying the path through the calibrator.
pub struct DesignGame<'a> {
    pub spec: &'a GameSpec,
    pub noise_seed: u64,
    pub cache: &'a RewardCache,
}

impl SearchGame for DesignGame<'_> {
    fn n_steps(&self) -> usize {
        self.spec.n_steps
    }

    fn action_count(&self) -> usize {
        self.spec.action_count()
    }

    fn legal_actions(&self, path: &[u8]) -> Vec<u8> {
        self.spec.legal_actions(&padded(path, self.spec.n_steps))
    }

    fn features(&self, path: &[u8]) -> Result<Vec<f64>> {
        match self.spec.encode {
            EncodeMode::HistoryOnly => encode_state(&padded(path, self.spec.n_steps), self.spec, EncodeMode::HistoryOnly, None),
            EncodeMode::HistoryPlusBelief => {
                let mut env = Environment::new(self.spec, self.noise_seed)?;
                for &a in path {
                    env.step(a)?;
                }
                env.encode()
            }
        }
    }

    fn terminal_reward(&self, path: &[u8]) -> Result<f64> {
        if let Some(r) = self.cache.get(path) {
            return Ok(r);
        }
        let r = calibrate_path(self.spec, path, self.noise_seed)?.reward;
        self.cache.insert(path, r);
        Ok(r)
    }
}

/// History vector of a partial path: codes followed by zeros.
pub fn padded(path: &[u8], n_steps: usize) -> Vec<u8> {
    let mut h = path.to_vec();
    h.resize(n_steps, 0);
    h
}

/// Maps a `[0, 1]` reward to the value-head range `[-1, 1]`.
pub fn reward_to_value(r: f64) -> f64 {
    2.0 * r - 1.0
}

/// Edge statistics of one expanded node.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Node {
    pub actions: Vec<u8>,
    pub prior: Vec<f64>,
    pub visits: Vec<u32>,
    pub q: Vec<f64>,
}

impl Node {
    pub fn total_visits(&self) -> u32 {
        self.visits.iter().sum()
    }

    /// Visit counts over all `action_count` codes (zero for illegal ones).
    pub fn visit_vector(&self, action_count: usize) -> Vec<u32> {
        let mut out = vec![0; action_count];
        for (a, n) in self.actions.iter().zip(&self.visits) {
            out[*a as usize - 1] = *n;
        }
        out
    }
}

#[derive(Clone, Debug, Default)]
pub struct SearchTree {
    pub nodes: HashMap<Vec<u8>, Node>,
}

/// Index maximizing `Q + c p sqrt(sum N) / (1 + N)`; ties go to the larger
/// prior, then to the lower index.
pub fn select_action(visits: &[u32], q: &[f64], prior: &[f64], c_puct: f64) -> usize {
    let total: u32 = visits.iter().sum();
    let sqrt_total = (total as f64).sqrt();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for i in 0..visits.len() {
        let s = q[i] + c_puct * prior[i] * sqrt_total / (1.0 + visits[i] as f64);
        if s > best_score || (s == best_score && prior[i] > prior[best]) {
            best = i;
            best_score = s;
        }
    }
    best
}

/// `pi(a) = N(a)^(1/tau) / sum_b N(b)^(1/tau)`; `tau = 0` is one-hot on the
/// most visited action, split evenly over ties.
pub fn policy_from_visits(visits: &[u32], tau: f64) -> Result<Vec<f64>> {
    let max = visits.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(Error::Search("no visits to turn into a policy".into()));
    }
    if !(tau >= 0.0) {
        return Err(Error::Config(format!("temperature must be non-negative, got {tau}")));
    }
    let w: Vec<f64> = if tau == 0.0 {
        visits.iter().map(|&n| if n == max { 1.0 } else { 0.0 }).collect()
    } else {
        let lm = (max as f64).ln();
        visits.iter().map(|&n| if n == 0 { 0.0 } else { (((n as f64).ln() - lm) / tau).exp() }).collect()
    };
    let s: f64 = w.iter().sum();
    Ok(w.iter().map(|v| v / s).collect())
}

impl SearchTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&self, path: &[u8]) -> Option<&Node> {
        self.nodes.get(path)
    }

    fn expand<G: SearchGame, E: Evaluator>(&mut self, path: &[u8], game: &G, eval: &E) -> Result<f64> {
        let actions = game.legal_actions(path);
        if actions.is_empty() {
            return Err(Error::Search(format!("node {path:?} has no legal actions")));
        }
        let (policy, value) = eval.evaluate(&game.features(path)?)?;
        if policy.len() != game.action_count() {
            return Err(Error::Dimension(format!("policy has {} entries for {} actions", policy.len(), game.action_count())));
        }
        let mut prior: Vec<f64> = actions.iter().map(|&a| policy[a as usize - 1].max(0.0)).collect();
        let s: f64 = prior.iter().sum();
        if s > 0.0 && s.is_finite() {
            prior.iter_mut().for_each(|p| *p /= s);
        } else {
            prior = vec![1.0 / actions.len() as f64; actions.len()];
        }
        let n = actions.len();
        self.nodes.insert(path.to_vec(), Node { actions, prior, visits: vec![0; n], q: vec![0.0; n] });
        Ok(value)
    }

    /// One selection-expansion-backup pass from `root`. Returns the backed-up
    /// value. On error the edge statistics are left untouched.
    pub fn simulate<G: SearchGame, E: Evaluator>(&mut self, root: &[u8], game: &G, eval: &E, c_puct: f64) -> Result<f64> {
        if root.len() >= game.n_steps() {
            return Err(Error::Search("search root is terminal".into()));
        }
        if !self.nodes.contains_key(root) {
            self.expand(root, game, eval)?;
        }
        let mut path = root.to_vec();
        let mut edges: Vec<(Vec<u8>, usize)> = Vec::new();
        let value = loop {
            if path.len() == game.n_steps() {
                break reward_to_value(game.terminal_reward(&path)?);
            }
            let Some(node) = self.nodes.get(&path) else {
                break self.expand(&path, game, eval)?;
            };
            let i = select_action(&node.visits, &node.q, &node.prior, c_puct);
            let a = node.actions[i];
            edges.push((path.clone(), i));
            path.push(a);
        };
        for (key, i) in edges {
            let node = self.nodes.get_mut(&key).expect("visited node exists");
            node.visits[i] += 1;
            node.q[i] += (value - node.q[i]) / node.visits[i] as f64;
        }
        Ok(value)
    }

    /// Runs `n_simulations` passes from `root` and returns the root visit
    /// counts over all action codes.
    pub fn search<G: SearchGame, E: Evaluator>(&mut self, root: &[u8], game: &G, eval: &E, cfg: &SearchConfig) -> Result<Vec<u32>> {
        for _ in 0..cfg.n_simulations {
            self.simulate(root, game, eval, cfg.c_puct)?;
        }
        Ok(self.nodes[root].visit_vector(game.action_count()))
    }

    /// One JSON object per edge, ordered by node path then action.
    pub fn dump(&self) -> Vec<String> {
        let sorted: BTreeMap<&Vec<u8>, &Node> = self.nodes.iter().collect();
        let mut out = Vec::new();
        for (path, node) in sorted {
            for i in 0..node.actions.len() {
                out.push(
                    serde_json::json!({
                        "state": path,
                        "action": node.actions[i],
                        "n": node.visits[i],
                        "q": node.q[i],
                        "p": node.prior[i],
                    })
                    .to_string(),
                );
            }
        }
        out
    }
}

/// Most visited root-to-leaf path (ties to the lower code); stops at the
/// first unexpanded node.
pub fn most_visited_path(tree: &SearchTree, n_steps: usize) -> Vec<u8> {
    let mut path = Vec::new();
    while path.len() < n_steps {
        let Some(node) = tree.node(&path) else { break };
        let mut best = 0;
        for i in 1..node.actions.len() {
            if node.visits[i] > node.visits[best] {
                best = i;
            }
        }
        if node.visits[best] == 0 {
            break;
        }
        path.push(node.actions[best]);
    }
    path
}

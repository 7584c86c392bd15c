//! Self-check suites run by `expdesign validate`: each compares an
//! implementation against an independent oracle.

use std::collections::HashMap;
use std::time::Instant;

use expdesign::constitutive::{
    integrate_step, sensitivities_fd, step_with_sensitivities, yield_value, MaterialState, ModelParams, ReturnMapOptions,
    SensitivityMethod, StepKind, StepMode, Strain, Stress,
};
use expdesign::environment::{calibrate_path, preset, tree_counts};
use expdesign::mcts::{most_visited_path, padded, reward_to_value, Evaluator, SearchGame, SearchTree};
use expdesign::policynet::{NetConfig, PolicyValueNet, TrainExample};
use expdesign::reward::kl_gaussian;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Level {
    Fast,
    Full,
}

#[derive(Clone, Debug)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub measured: String,
    pub bound: String,
    pub pass: bool,
}

fn check(suite: &'static str, name: impl Into<String>, measured: impl Into<String>, bound: impl Into<String>, pass: bool) -> Check {
    Check { suite, name: name.into(), measured: measured.into(), bound: bound.into(), pass }
}

pub fn run(level: Level) -> Vec<Check> {
    let mut out = Vec::new();
    out.extend(tree_count_suite());
    out.extend(fd_suite(level));
    out.extend(kl_suite(level));
    out.extend(mcts_suite(level));
    out.extend(net_suite(level));
    out
}

fn tree_count_suite() -> Vec<Check> {
    let mut out = Vec::new();
    for (label, a, s, want) in [
        ("elastic 2x2", 2, 2, (7, 4)),
        ("von Mises 4x6", 4, 6, (5461, 4096)),
        ("Hill 12x5", 12, 5, (271453, 248832)),
    ] {
        let t = Instant::now();
        let got = tree_counts(a, s);
        let us = t.elapsed().as_secs_f64() * 1e6;
        out.push(check("tree-counts", label, format!("{got:?} in {us:.1} us"), format!("{want:?}, < 1 ms"), got == want && us < 1000.0));
    }
    out
}

fn col_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for j in 0..a.ncols() {
        let diff = (a.column(j) - b.column(j)).norm();
        let scale = a.column(j).norm().max(b.column(j).norm());
        worst = worst.max(if scale > 1e-9 { diff / scale } else { diff });
    }
    worst
}

fn random_params(rng: &mut ChaCha8Rng) -> ModelParams {
    if rng.gen_bool(0.5) {
        ModelParams::hill(
            rng.gen_range(0.8..2.0),
            rng.gen_range(0.05..0.4),
            rng.gen_range(0.05..0.4),
            rng.gen_range(0.3..3.0),
            rng.gen_range(0.05..0.3),
            rng.gen_range(0.0..1.0),
        )
    } else {
        ModelParams::von_mises(rng.gen_range(0.5..2.0), rng.gen_range(0.3..1.5), rng.gen_range(0.05..0.4), rng.gen_range(0.0..2.0))
    }
}

fn random_increment(rng: &mut ChaCha8Rng, scale: f64) -> Strain {
    let mut a = [0.0; 6];
    for v in a.iter_mut() {
        *v = rng.gen_range(-scale..scale);
    }
    Strain::from_array(a)
}

fn fd_suite(level: Level) -> Vec<Check> {
    let cases = if level == Level::Fast { 80 } else { 400 };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tight = ReturnMapOptions { tol_g: 1e-13, max_iters: 50 };
    let mut worst = [0.0_f64; 2];
    let mut count = [0usize; 2];
    let mut errors = 0;
    for _ in 0..cases {
        let p = random_params(&mut rng);
        let ids = p.ids();
        let mut state = MaterialState::default();
        for _ in 0..rng.gen_range(0..6) {
            match integrate_step(&state, &random_increment(&mut rng, 0.08), &p, 1e-12, 50) {
                Ok(r) => state = r.state,
                Err(_) => errors += 1,
            }
        }
        let deps = random_increment(&mut rng, 0.05);
        let Ok(c) = p.stiffness() else { continue };
        let trial = Stress(c * (state.eps.0 + deps.0 - state.eps_p.0));
        if yield_value(&trial, state.ep, &p).abs() < 1e-3 {
            continue;
        }
        let analytic = step_with_sensitivities(&state, &deps, &p, &ids, StepKind::Elastoplastic, &tight, SensitivityMethod::Analytic);
        let fd = sensitivities_fd(&state, &deps, &p, &ids, StepKind::Elastoplastic, &tight, 1e-6);
        match (analytic, fd) {
            (Ok((r, a)), Ok(fd)) => {
                let i = (r.mode == StepMode::Plastic) as usize;
                count[i] += 1;
                worst[i] = worst[i].max(col_rel_err(&a, &fd));
            }
            _ => errors += 1,
        }
    }
    vec![
        check("fd-sensitivity", format!("elastic steps ({})", count[0]), format!("{:.2e}", worst[0]), "< 1e-5", worst[0] < 1e-5 && count[0] > 0),
        check("fd-sensitivity", format!("plastic steps ({})", count[1]), format!("{:.2e}", worst[1]), "< 1e-3", worst[1] < 1e-3 && count[1] > 0),
        check("fd-sensitivity", "integration failures", errors.to_string(), "0", errors == 0),
    ]
}

fn mvn_log_density(x: &DVector<f64>, mu: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let z = chol.l().solve_lower_triangular(&(x - mu)).unwrap_or_else(|| DVector::from_element(x.len(), f64::NAN));
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    -0.5 * (z.norm_squared() + log_det + x.len() as f64 * (2.0 * std::f64::consts::PI).ln())
}

fn kl_suite(level: Level) -> Vec<Check> {
    let (dims, samples) = if level == Level::Fast { (2..=3, 200_000) } else { (2..=6, 1_000_000) };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut out = Vec::new();
    for n in dims {
        let spd = |rng: &mut ChaCha8Rng, floor: f64| {
            let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            &l * l.transpose() / n as f64 + DMatrix::identity(n, n) * floor
        };
        let mu0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let muk = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let s0 = spd(&mut rng, 0.5);
        let sk = spd(&mut rng, 0.1);
        let (Ok(exact), Some(c0), Some(ck)) = (kl_gaussian(&mu0, &s0, &muk, &sk), s0.cholesky(), sk.cholesky()) else {
            out.push(check("kl-monte-carlo", format!("dim {n}"), "setup failed", "< 1%", false));
            continue;
        };
        let mut acc = 0.0;
        for _ in 0..samples {
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = &muk + ck.l() * z;
            acc += mvn_log_density(&x, &muk, &ck) - mvn_log_density(&x, &mu0, &c0);
        }
        let mc = acc / samples as f64;
        let rel = (mc - exact.value).abs() / exact.value;
        out.push(check("kl-monte-carlo", format!("dim {n}, {samples} samples"), format!("{:.2}%", 100.0 * rel), "< 1%", rel < 0.01));
    }
    out
}

/// Complete tree with a reward table over its leaves.
struct TableGame {
    actions: usize,
    steps: usize,
    rewards: HashMap<Vec<u8>, f64>,
}

impl TableGame {
    fn best_from(&self, path: &[u8]) -> f64 {
        self.rewards.iter().filter(|(p, _)| p.starts_with(path)).map(|(_, r)| *r).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn leaves(actions: usize, steps: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    for _ in 0..steps {
        out = out.into_iter().flat_map(|p| (1..=actions as u8).map(move |a| [p.clone(), vec![a]].concat())).collect();
    }
    out
}

impl SearchGame for TableGame {
    fn n_steps(&self) -> usize {
        self.steps
    }
    fn action_count(&self) -> usize {
        self.actions
    }
    fn legal_actions(&self, path: &[u8]) -> Vec<u8> {
        if path.len() >= self.steps {
            vec![]
        } else {
            (1..=self.actions as u8).collect()
        }
    }
    fn features(&self, path: &[u8]) -> expdesign::Result<Vec<f64>> {
        Ok(padded(path, self.steps).iter().map(|&c| c as f64).collect())
    }
    fn terminal_reward(&self, path: &[u8]) -> expdesign::Result<f64> {
        Ok(self.rewards[path])
    }
}

/// Uniform priors and the exact optimal value below the node.
struct PerfectValue<'a>(&'a TableGame);

impl Evaluator for PerfectValue<'_> {
    fn evaluate(&self, features: &[f64]) -> expdesign::Result<(Vec<f64>, f64)> {
        let path: Vec<u8> = features.iter().take_while(|&&f| f > 0.0).map(|&f| f as u8).collect();
        Ok((vec![1.0 / self.0.actions as f64; self.0.actions], reward_to_value(self.0.best_from(&path))))
    }
}

fn mcts_suite(level: Level) -> Vec<Check> {
    let mut out = Vec::new();
    let elastic = match preset("elastic") {
        Ok(spec) => {
            let rewards: Option<HashMap<Vec<u8>, f64>> =
                leaves(2, 2).into_iter().map(|p| calibrate_path(&spec, &p, 0).ok().map(|o| (p, o.reward))).collect();
            rewards.map(|rewards| TableGame { actions: 2, steps: 2, rewards })
        }
        Err(_) => None,
    };
    match elastic {
        Some(game) => {
            let mut tree = SearchTree::new();
            let ok = (0..200).all(|_| tree.simulate(&[], &game, &PerfectValue(&game), 1.0).is_ok());
            let path = most_visited_path(&tree, 2);
            let best = game.best_from(&[]);
            let optimal = ok && game.rewards.get(&path) == Some(&best);
            out.push(check("mcts-small-tree", "elastic 2x2, 200 simulations", format!("{path:?}"), "[1, 2] or [2, 1]", optimal && path[0] != path[1]));
        }
        None => out.push(check("mcts-small-tree", "elastic 2x2, 200 simulations", "calibration failed", "[1, 2] or [2, 1]", false)),
    }
    let seeds = if level == Level::Fast { 10 } else { 40 };
    let mut worst = 0.0_f64;
    let mut exact = 0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rewards = leaves(3, 3).into_iter().map(|p| (p, rng.gen_range(0.0..1.0))).collect();
        let game = TableGame { actions: 3, steps: 3, rewards };
        let mut tree = SearchTree::new();
        for _ in 0..50 * 27 {
            if tree.simulate(&[], &game, &PerfectValue(&game), 1.0).is_err() {
                break;
            }
        }
        let path = most_visited_path(&tree, 3);
        let regret = game.best_from(&[]) - game.rewards.get(&path).copied().unwrap_or(f64::NEG_INFINITY);
        worst = worst.max(regret);
        exact += (regret == 0.0) as usize;
    }
    out.push(check("mcts-small-tree", format!("random 3x3 trees ({seeds}), worst regret"), format!("{worst:.4}"), "< 0.1", worst < 0.1));
    let share = exact as f64 / seeds as f64;
    out.push(check("mcts-small-tree", "random 3x3 trees, exact optimum", format!("{exact}/{seeds}"), ">= 80%", share >= 0.8));
    out
}

fn random_net(rng: &mut ChaCha8Rng, scale: f64) -> Option<PolicyValueNet> {
    let cfg = NetConfig { input_dim: 3, hidden: vec![5, 4], policy_dim: 3, ..NetConfig::default() };
    let mut net = PolicyValueNet::new(cfg).ok()?;
    let p: Vec<f64> = net.flat_params().iter().map(|_| rng.gen_range(-scale..scale)).collect();
    net.set_flat_params(&p).ok()?;
    Some(net)
}

fn random_example(rng: &mut ChaCha8Rng) -> TrainExample {
    let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    TrainExample {
        features: (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        policy: raw.iter().map(|v| v / s).collect(),
        value: rng.gen_range(-0.9..0.9),
    }
}

/// Relative error of the backpropagated gradient against central differences.
fn gradient_error(net: &PolicyValueNet, batch: &[TrainExample]) -> Option<f64> {
    let h = 1e-6;
    let p0 = net.flat_params();
    let mut probe = net.clone();
    let mut fd = vec![0.0; p0.len()];
    for i in 0..p0.len() {
        let mut p = p0.clone();
        p[i] += h;
        probe.set_flat_params(&p).ok()?;
        let up = probe.loss(batch).ok()?;
        p[i] -= 2.0 * h;
        probe.set_flat_params(&p).ok()?;
        fd[i] = (up - probe.loss(batch).ok()?) / (2.0 * h);
    }
    let (_, grads) = net.loss_and_gradient(batch).ok()?;
    probe.layers = grads;
    let an = probe.flat_params();
    let num: f64 = an.iter().zip(&fd).map(|(a, f)| (a - f).powi(2)).sum::<f64>().sqrt();
    let den: f64 = fd.iter().map(|f| f * f).sum::<f64>().sqrt();
    Some(num / den)
}

fn net_suite(level: Level) -> Vec<Check> {
    let nets = if level == Level::Fast { 5 } else { 20 };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0_f64;
    let mut heads_ok = true;
    for k in 0..nets {
        let Some(net) = random_net(&mut rng, 1.0) else {
            worst = f64::INFINITY;
            break;
        };
        let batch: Vec<TrainExample> = (0..4).map(|_| random_example(&mut rng)).collect();
        worst = worst.max(gradient_error(&net, &batch).unwrap_or(f64::INFINITY));
        // large weights saturate the heads without breaking them
        let big = random_net(&mut rng, 10.0 + 5.0 * k as f64);
        for ex in &batch {
            match big.as_ref().map(|n| n.forward(&ex.features)) {
                Some(Ok((p, v))) => {
                    let sum: f64 = p.iter().sum();
                    heads_ok &= (sum - 1.0).abs() < 1e-12 && p.iter().all(|x| x.is_finite() && *x >= 0.0) && v.abs() <= 1.0;
                }
                _ => heads_ok = false,
            }
        }
    }
    vec![
        check("net-gradient", format!("backprop vs central FD ({nets} nets)"), format!("{worst:.2e}"), "< 1e-4", worst < 1e-4),
        check("net-gradient", "softmax sums to 1, |tanh value| <= 1", if heads_ok { "ok" } else { "violated" }, "all outputs", heads_ok),
    ]
}

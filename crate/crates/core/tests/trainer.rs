use expdesign::environment::preset;
use expdesign::mcts::{RewardCache, SearchConfig};
use expdesign::policynet::{NetConfig, PolicyValueNet};
use expdesign::trainer::*;
use expdesign::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn elastic_setup(seed: u64) -> (expdesign::environment::GameSpec, TrainingSetup) {
    let spec = preset("elastic").unwrap();
    let mut setup = training_preset("elastic", &spec).unwrap();
    setup.schedule.seed = seed;
    setup.net.seed = seed;
    (spec, setup)
}

fn path_probability(net: &PolicyValueNet, path: &[u8]) -> f64 {
    let mut features = vec![0.0; path.len()];
    let mut p = 1.0;
    for (i, &a) in path.iter().enumerate() {
        p *= net.forward(&features).unwrap().0[a as usize - 1];
        features[i] = a as f64;
    }
    p
}

#[test]
fn c_puct_schedule_is_linear() {
    let s = TrainSchedule::default();
    assert_eq!(s.c_puct(0), 10.0);
    assert_eq!(s.c_puct(9), 1.0);
    for k in 0..10 {
        assert!((s.c_puct(k) - (10.0 - k as f64)).abs() < 1e-12);
    }
    let single = TrainSchedule { n_iterations: 1, ..TrainSchedule::default() };
    assert_eq!(single.c_puct(0), 10.0);
}

#[test]
fn schedule_validation() {
    let ok = TrainSchedule::default();
    ok.validate().unwrap();
    for bad in [
        TrainSchedule { n_iterations: 0, ..ok.clone() },
        TrainSchedule { episodes_per_iteration: 0, ..ok.clone() },
        TrainSchedule { c_puct_start: 1.0, c_puct_end: 2.0, ..ok.clone() },
        TrainSchedule { c_puct_end: 0.0, ..ok.clone() },
        TrainSchedule { temperature: -1.0, ..ok.clone() },
        TrainSchedule { failure_budget: 1.5, ..ok.clone() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
}

#[test]
fn episode_rngs_are_distinct_and_reproducible() {
    use rand::RngCore;
    let s = TrainSchedule { seed: 4, ..TrainSchedule::default() };
    let draw = |it, ep| s.episode_rng(it, ep).next_u64();
    assert_eq!(draw(1, 2), draw(1, 2));
    assert_ne!(draw(1, 2), draw(2, 1));
    assert_ne!(draw(0, 0), draw(0, 1));
}

#[test]
fn training_presets_match_game_shapes() {
    for name in ["elastic", "vonmises", "hill_b05", "hill_b20", "hill_vm_reduction"] {
        let spec = preset(name).unwrap();
        let setup = training_preset(name, &spec).unwrap();
        setup.schedule.validate().unwrap();
        setup.search.validate().unwrap();
        setup.net.validate().unwrap();
        assert_eq!(setup.net.input_dim, spec.encoding_len());
        assert_eq!(setup.net.policy_dim, spec.action_count());
    }
    let spec = preset("elastic").unwrap();
    assert!(training_preset("chess", &spec).is_err());
}

#[test]
fn episode_has_one_example_per_decision_and_is_reproducible() {
    let spec = preset("vonmises").unwrap();
    let net = PolicyValueNet::new(NetConfig { input_dim: 6, hidden: vec![8], policy_dim: 4, seed: 1, ..NetConfig::default() }).unwrap();
    let search = SearchConfig { n_simulations: 6, ..SearchConfig::default() };
    let play = |seed| {
        let cache = RewardCache::default();
        run_episode(&net, &spec, &search, 1.0, 0, &cache, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    };
    let a = play(3);
    let b = play(3);
    assert_eq!(a.decisions.len(), 6);
    assert_eq!(a.examples().len(), 6);
    assert_eq!(a.path, b.path);
    assert_eq!(a.score.to_bits(), b.score.to_bits());
    for (x, y) in a.decisions.iter().zip(&b.decisions) {
        assert_eq!(x.visits, y.visits);
        assert_eq!(x.policy, y.policy);
    }
    // the tree is kept: later roots have seen more passes than one search
    assert!(a.decisions[1].visits.iter().sum::<u32>() > 6);
    for (i, d) in a.decisions.iter().enumerate() {
        assert!((d.policy.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(d.features[..i], a.path[..i].iter().map(|&c| c as f64).collect::<Vec<_>>()[..]);
        assert!(d.features[i..].iter().all(|&f| f == 0.0));
    }
    let v = a.examples()[0].value;
    assert!((v - (2.0 * a.score - 1.0)).abs() < 1e-15);
}

#[test]
fn elastic_scores_are_binary_on_played_paths() {
    let (spec, setup) = elastic_setup(0);
    let net = PolicyValueNet::new(setup.net.clone()).unwrap();
    let cache = RewardCache::default();
    for seed in 0..8 {
        let ep = run_episode(&net, &spec, &setup.search, 1.0, 0, &cache, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mixed = ep.path[0] != ep.path[1];
        assert_eq!(ep.score, if mixed { 1.0 } else { 0.0 }, "{:?}", ep.path);
    }
}

#[test]
fn untrained_design_follows_tie_break() {
    let spec = preset("vonmises").unwrap();
    let zero = PolicyValueNet::zeros(NetConfig { input_dim: 6, policy_dim: 4, ..NetConfig::default() }).unwrap();
    assert_eq!(design_experiment(&zero, &spec, 0).unwrap(), vec![1; 6]);
    let spec = preset("hill_b05").unwrap();
    let zero = PolicyValueNet::zeros(NetConfig { input_dim: 5, policy_dim: 12, ..NetConfig::default() }).unwrap();
    let path = design_experiment(&zero, &spec, 0).unwrap();
    assert_eq!(path.len(), 5);
    assert_eq!(path, design_experiment(&zero, &spec, 0).unwrap());
}

#[test]
fn elastic_training_converges_and_reports_are_consistent() {
    let (spec, setup) = elastic_setup(0);
    let net = PolicyValueNet::new(setup.net.clone()).unwrap();
    let mut seen = 0;
    let (net, reports) = run_training(&spec, &setup, net, |r, eps, _| {
        assert_eq!(r.iteration, seen);
        assert_eq!(eps.len(), 10);
        seen += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(reports.len(), 10);
    for r in &reports {
        let mean = r.scores.iter().sum::<f64>() / r.scores.len() as f64;
        assert!((r.mean - mean).abs() < 1e-12);
        let var = r.scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / r.scores.len() as f64;
        assert!((r.std - var.sqrt()).abs() < 1e-12);
        assert_eq!(r.scores.len() + r.failures, 10);
    }
    let last = reports.last().unwrap();
    assert!(last.mean >= 0.95, "final mean {}", last.mean);
    let mass = path_probability(&net, &[1, 2]) + path_probability(&net, &[2, 1]);
    assert!(mass >= 0.9, "mixed-path mass {mass}");
    assert!([vec![1, 2], vec![2, 1]].contains(&last.greedy_path));
    assert_eq!(last.greedy_score, 1.0);
}

#[test]
fn training_is_reproducible_serial_or_parallel() {
    let (spec, mut setup) = elastic_setup(2);
    setup.schedule.n_iterations = 3;
    let run = |parallel| {
        let mut s = setup.clone();
        s.schedule.parallel = parallel;
        let (net, reports) = run_training(&spec, &s, PolicyValueNet::new(s.net.clone()).unwrap(), |_, _, _| Ok(())).unwrap();
        (net.flat_params(), reports.iter().map(|r| (r.scores.clone(), r.greedy_path.clone())).collect::<Vec<_>>())
    };
    let a = run(false);
    assert_eq!(a, run(false));
    assert_eq!(a, run(true));
}

#[test]
fn failure_budget_is_enforced() {
    let mut eps: Vec<EpisodeResult> = (0..10).map(|_| Err("placeholder".into())).collect();
    assert!(matches!(check_failure_budget(&eps, 0.2), Err(Error::FailureBudget { failed: 10, total: 10, .. })));
    let (spec, setup) = elastic_setup(0);
    let net = PolicyValueNet::new(setup.net.clone()).unwrap();
    let cache = RewardCache::default();
    let good = run_episode(&net, &spec, &setup.search, 1.0, 0, &cache, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for e in eps.iter_mut().take(8) {
        *e = Ok(good.clone());
    }
    assert_eq!(check_failure_budget(&eps, 0.2).unwrap(), 2);
    eps[7] = Err("late".into());
    match check_failure_budget(&eps, 0.2) {
        Err(Error::FailureBudget { failed: 3, total: 10, last }) => assert_eq!(last, "placeholder"),
        other => panic!("{other:?}"),
    }
    assert!(check_failure_budget(&eps, 0.3).is_ok());
}

#[test]
fn mismatched_network_is_rejected() {
    let (spec, setup) = elastic_setup(0);
    let net = PolicyValueNet::new(NetConfig { input_dim: 6, policy_dim: 4, ..NetConfig::default() }).unwrap();
    assert!(run_training(&spec, &setup, net, |_, _, _| Ok(())).is_err());
}

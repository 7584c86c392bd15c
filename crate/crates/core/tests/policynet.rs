use expdesign::policynet::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config(seed: u64) -> NetConfig {
    NetConfig { input_dim: 3, hidden: vec![5, 4], policy_dim: 3, seed, ..NetConfig::default() }
}

fn random_example(rng: &mut ChaCha8Rng, cfg: &NetConfig) -> TrainExample {
    let raw: Vec<f64> = (0..cfg.policy_dim).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    TrainExample {
        features: (0..cfg.input_dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        policy: raw.iter().map(|v| v / s).collect(),
        value: rng.gen_range(-0.9..0.9),
    }
}

fn randomized_net(seed: u64) -> PolicyValueNet {
    let mut net = PolicyValueNet::new(tiny_config(seed)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let p: Vec<f64> = net.flat_params().iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
    net.set_flat_params(&p).unwrap();
    net
}

#[test]
fn backprop_matches_central_differences() {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let net = randomized_net(seed);
        assert!(net.n_params() <= 200);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch: Vec<TrainExample> = (0..4).map(|_| random_example(&mut rng, &net.config)).collect();
        let h = 1e-6;
        let p0 = net.flat_params();
        let mut fd = vec![0.0; p0.len()];
        for i in 0..p0.len() {
            let mut probe = net.clone();
            let mut p = p0.clone();
            p[i] += h;
            probe.set_flat_params(&p).unwrap();
            let up = probe.loss(&batch).unwrap();
            p[i] -= 2.0 * h;
            probe.set_flat_params(&p).unwrap();
            let down = probe.loss(&batch).unwrap();
            fd[i] = (up - down) / (2.0 * h);
        }
        let (loss, grads) = net.loss_and_gradient(&batch).unwrap();
        assert!((loss - net.loss(&batch).unwrap()).abs() < 1e-14);
        let mut flat_net = net.clone();
        flat_net.layers = grads;
        let an = flat_net.flat_params();
        let num: f64 = an.iter().zip(&fd).map(|(a, f)| (a - f).powi(2)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|f| f * f).sum::<f64>().sqrt();
        worst = worst.max(num / den);
    }
    assert!(worst < 1e-4, "relative gradient error {worst}");
}

#[test]
fn glorot_init_is_deterministic_and_bounded() {
    let cfg = NetConfig { input_dim: 6, hidden: vec![100, 100], policy_dim: 4, seed: 3, ..NetConfig::default() };
    let a = PolicyValueNet::new(cfg.clone()).unwrap();
    let b = PolicyValueNet::new(cfg.clone()).unwrap();
    assert_eq!(a, b);
    let c = PolicyValueNet::new(NetConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(a, c);
    for l in &a.layers {
        assert!(l.b.iter().all(|&v| v == 0.0));
        let bound = (6.0 / (l.w.nrows() + l.w.ncols()) as f64).sqrt();
        assert!(l.w.iter().all(|v| v.abs() <= bound));
        assert!(l.w.iter().any(|v| v.abs() > 0.5 * bound));
    }
    assert_eq!(a.layers.len(), 4);
    assert_eq!(a.layers[2].w.shape(), (4, 100));
    assert_eq!(a.layers[3].w.shape(), (1, 100));
}

#[test]
fn zero_network_is_uniform_and_neutral() {
    let net = PolicyValueNet::zeros(NetConfig { input_dim: 6, policy_dim: 4, ..NetConfig::default() }).unwrap();
    let (p, v) = net.forward(&[1.0, 2.0, 3.0, 4.0, 1.0, 2.0]).unwrap();
    assert_eq!(p, vec![0.25; 4]);
    assert_eq!(v, 0.0);
    assert!(net.forward(&[1.0]).is_err());
}

#[test]
fn softmax_is_stable_for_large_logits() {
    let p = softmax(&nalgebra::DVector::from_vec(vec![1000.0, 1000.0, -1000.0]));
    assert!((p[0] - 0.5).abs() < 1e-15 && p[2] >= 0.0);
}

#[test]
fn overfits_a_single_example() {
    let cfg = NetConfig { epochs: 600, learning_rate: 1e-2, ..tiny_config(5) };
    let mut net = PolicyValueNet::new(cfg).unwrap();
    let ex = TrainExample { features: vec![1.0, 0.0, 2.0], policy: vec![0.7, 0.2, 0.1], value: 0.6 };
    let losses = net.train(&vec![ex.clone(); 8], 1).unwrap();
    assert!(*losses.last().unwrap() < 1e-3, "final loss {}", losses.last().unwrap());
    let (p, v) = net.forward(&ex.features).unwrap();
    assert!((p[0] - 0.7).abs() < 0.03 && (v - 0.6).abs() < 0.03);
}

#[test]
fn loss_decreases_on_fixed_batch() {
    let cfg = NetConfig { epochs: 50, ..tiny_config(6) };
    let mut net = PolicyValueNet::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let batch: Vec<TrainExample> = (0..40).map(|_| random_example(&mut rng, &net.config)).collect();
    let before = net.loss(&batch).unwrap();
    let losses = net.train(&batch, 2).unwrap();
    assert_eq!(losses.len(), 50);
    assert!(net.loss(&batch).unwrap() < before);
    assert!(losses.last().unwrap() < &losses[0]);
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = NetConfig { epochs: 5, batch_size: 4, ..tiny_config(7) };
    let batch: Vec<TrainExample> = (0..10).map(|_| random_example(&mut rng, &cfg)).collect();
    let mut a = PolicyValueNet::new(cfg.clone()).unwrap();
    let mut b = PolicyValueNet::new(cfg).unwrap();
    a.train(&batch, 9).unwrap();
    b.train(&batch, 9).unwrap();
    assert_eq!(a.flat_params(), b.flat_params());
}

#[test]
fn bad_training_input_is_rejected() {
    let mut net = PolicyValueNet::new(tiny_config(0)).unwrap();
    assert!(net.train(&[], 0).is_err());
    let wrong = TrainExample { features: vec![0.0; 3], policy: vec![1.0], value: 0.0 };
    assert!(net.train(&[wrong], 0).is_err());
    let nan = TrainExample { features: vec![f64::NAN; 3], policy: vec![0.2, 0.3, 0.5], value: 0.0 };
    assert!(matches!(net.train(&[nan], 0), Err(expdesign::Error::Training(_))));
}

#[test]
fn checkpoint_round_trip_is_lossless() {
    let net = randomized_net(11);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.bin");
    net.save(&path).unwrap();
    let back = PolicyValueNet::load(&path).unwrap();
    assert_eq!(back, net);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (p1, v1) = net.forward(&x).unwrap();
        let (p2, v2) = back.forward(&x).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(v1.to_bits(), v2.to_bits());
    }
    back.check_shape(3, 3).unwrap();
    assert!(back.check_shape(6, 3).is_err());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let bytes = randomized_net(12).to_bytes().unwrap();
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(PolicyValueNet::from_bytes(&bad_magic).is_err());
    let mut bad_version = bytes.clone();
    bad_version[8] = 99;
    assert!(matches!(PolicyValueNet::from_bytes(&bad_version), Err(expdesign::Error::Checkpoint(m)) if m.contains("version")));
    assert!(PolicyValueNet::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(PolicyValueNet::from_bytes(&extra).is_err());
    assert!(PolicyValueNet::from_bytes(&[]).is_err());
    assert!(PolicyValueNet::load(std::path::Path::new("/nonexistent/net.bin")).is_err());
}

proptest! {
    #[test]
    fn heads_stay_normalized_and_bounded(seed in 0u64..1000, scale in 0.1f64..50.0) {
        let net = randomized_net(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        let (p, v) = net.forward(&x).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&q| q >= 0.0));
        prop_assert!(v > -1.0 - 1e-15 && v < 1.0 + 1e-15 && v.abs() <= 1.0);
    }
}

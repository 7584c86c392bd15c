use expdesign::kalman::ParameterBelief;
use expdesign::reward::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn one(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

fn var(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &l * l.transpose() / n as f64 + DMatrix::identity(n, n) * floor
}

#[test]
fn kl_closed_form_examples() {
    assert_eq!(kl_gaussian(&one(0.3), &var(2.0), &one(0.3), &var(2.0)).unwrap().value, 0.0);
    let shift = kl_gaussian(&one(0.0), &var(1.0), &one(1.0), &var(1.0)).unwrap().value;
    assert!((shift - 0.5).abs() < 1e-14);
    let halved = kl_gaussian(&one(0.0), &var(1.0), &one(0.0), &var(0.5)).unwrap().value;
    assert!((halved - 0.5 * (2f64.ln() - 0.5)).abs() < 1e-14);
    assert!((halved - 0.09657).abs() < 1e-5);
}

#[test]
fn singular_posterior_is_regularized() {
    let kl = kl_gaussian(&DVector::zeros(2), &DMatrix::identity(2, 2), &DVector::zeros(2), &DMatrix::zeros(2, 2)).unwrap();
    assert!(kl.regularized);
    assert!(kl.value.is_finite() && kl.value > 0.0);
}

fn mvn_log_density(x: &DVector<f64>, mu: &DVector<f64>, chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    let d = x - mu;
    let z = chol.l().solve_lower_triangular(&d).unwrap();
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    -0.5 * (z.norm_squared() + log_det + x.len() as f64 * (2.0 * std::f64::consts::PI).ln())
}

#[test]
fn kl_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for n in 2..=6 {
        let mu0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let muk = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let s0 = random_spd(&mut rng, n, 0.5);
        let sk = random_spd(&mut rng, n, 0.1);
        let exact = kl_gaussian(&mu0, &s0, &muk, &sk).unwrap().value;
        let c0 = s0.clone().cholesky().unwrap();
        let ck = sk.clone().cholesky().unwrap();
        let samples = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..samples {
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = &muk + ck.l() * z;
            acc += mvn_log_density(&x, &muk, &ck) - mvn_log_density(&x, &mu0, &c0);
        }
        let mc = acc / samples as f64;
        let rel = (mc - exact).abs() / exact;
        assert!(rel < 0.01, "n={n}: exact {exact}, mc {mc}, rel {rel}");
    }
}

#[test]
fn kl_trajectory_telescopes() {
    assert_eq!(kl_reward(&[]).unwrap().total, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let traj: Vec<ParameterBelief> = (0..12)
        .map(|k| {
            let scale = 1.0 / (1.0 + k as f64);
            ParameterBelief::new(
                DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0) * (1.0 - scale)),
                DMatrix::identity(3, 3) * scale,
            )
            .unwrap()
        })
        .collect();
    let tr = kl_reward(&traj).unwrap();
    assert_eq!(tr.increments.len(), 11);
    let sum: f64 = tr.increments.iter().sum();
    assert!((sum - tr.total).abs() < 1e-12);
    assert!((tr.total - tr.cumulative[10]).abs() == 0.0);
    assert!(kl_reward(&traj[..1]).unwrap().total == 0.0);
}

#[test]
fn nse_examples() {
    let d = [0.0, 1.0, 2.0];
    assert_eq!(nse(&d, &d).unwrap(), 1.0);
    assert_eq!(nse(&d, &[1.0, 1.0, 1.0]).unwrap(), 0.0);
    assert!((nse(&d, &[0.0, 0.0, 0.0]).unwrap() + 0.5).abs() < 1e-15);
    assert!(matches!(nse(&[1.0, 1.0], &[1.0, 2.0]), Err(expdesign::Error::DegenerateData(_))));
    assert!(matches!(nse(&[1.0], &[1.0]), Err(expdesign::Error::DegenerateData(_))));
}

#[test]
fn mixed_reward_examples() {
    let cfg = RewardConfig {
        kind: RewardKind::Mixed,
        w_nse: 0.5,
        w_kl: 0.5,
        kl_scaling: Scaling::Affine { lo: 0.0, hi: 10.0 },
        nse_scaling: Scaling::Affine { lo: -1.0, hi: 1.0 },
    };
    cfg.validate().unwrap();
    assert_eq!(mixed_reward(1.0, 10.0, &cfg), 1.0);
    assert!((mixed_reward(0.6, 4.0, &cfg) - 0.6).abs() < 1e-15);
    let pure = RewardConfig { w_nse: 1.0, w_kl: 0.0, ..cfg.clone() };
    assert_eq!(mixed_reward(0.6, 123.0, &pure), 0.8);
    let bad = RewardConfig { w_nse: 0.7, w_kl: 0.7, ..cfg };
    assert!(bad.validate().is_err());
}

#[test]
fn binary_scaling() {
    let s = Scaling::Binary { threshold: 2.0 };
    assert_eq!(s.apply(1.999), 0.0);
    assert_eq!(s.apply(2.0), 1.0);
}

proptest! {
    #[test]
    fn kl_is_nonnegative_and_zero_on_identity(seed in 0u64..5000, n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu0 = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let muk = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let s0 = random_spd(&mut rng, n, 0.05);
        let sk = random_spd(&mut rng, n, 0.05);
        prop_assert!(kl_gaussian(&mu0, &s0, &muk, &sk).unwrap().value >= 0.0);
        prop_assert!(kl_gaussian(&mu0, &s0, &mu0, &s0).unwrap().value.abs() < 1e-10);
    }

    #[test]
    fn nse_bounded_and_order_invariant(seed in 0u64..5000, n in 2usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let m: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let v = nse(&d, &m).unwrap();
        prop_assert!(v <= 1.0);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.reverse();
        idx.rotate_left(seed as usize % n);
        let d2: Vec<f64> = idx.iter().map(|&i| d[i]).collect();
        let m2: Vec<f64> = idx.iter().map(|&i| m[i]).collect();
        prop_assert!((nse(&d2, &m2).unwrap() - v).abs() < 1e-12);
    }

    #[test]
    fn mixed_reward_is_monotone(a in -3.0f64..3.0, b in -3.0f64..3.0, da in 0.0f64..2.0, db in 0.0f64..2.0, w in 0.0f64..1.0) {
        let cfg = RewardConfig {
            kind: RewardKind::Mixed,
            w_nse: w,
            w_kl: 1.0 - w,
            kl_scaling: Scaling::Affine { lo: -1.0, hi: 1.0 },
            nse_scaling: Scaling::Affine { lo: -2.0, hi: 1.0 },
        };
        let base = mixed_reward(a, b, &cfg);
        prop_assert!(mixed_reward(a + da, b, &cfg) >= base);
        prop_assert!(mixed_reward(a, b + db, &cfg) >= base);
        prop_assert!((0.0..=1.0).contains(&base));
    }
}

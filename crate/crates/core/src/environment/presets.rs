use super::{BlindTest, EncodeMode, Game, GameSpec, PriorSpec, DEFAULT_HILL_ACTIONS};
use crate::constitutive::{ModelParams, ParamId};
use crate::error::{Error, Result};
use crate::kalman::{FilterConfig, FilterKind, ObservationMap};
use crate::reward::{RewardConfig, RewardKind, Scaling};

pub const PRESET_NAMES: [&str; 5] = ["elastic", "vonmises", "hill_b05", "hill_b20", "hill_vm_reduction"];

const HILL_PARAMS: [ParamId; 6] = [
    ParamId::Young,
    ParamId::Poisson,
    ParamId::PoissonPerp,
    ParamId::Anisotropy,
    ParamId::YieldStress,
    ParamId::Hardening,
];

fn pi_plane_blind_test() -> BlindTest {
    BlindTest {
        waypoints: vec![
            [0.08, 0.0, -0.08, 0.0, 0.0, 0.0],
            [0.0, 0.08, -0.08, 0.0, 0.0, 0.0],
            [-0.08, 0.04, 0.04, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ],
        steps_per_segment: 10,
    }
}

fn full_strain_blind_test() -> BlindTest {
    BlindTest {
        waypoints: vec![
            [0.15, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.15, -0.05, 0.0, 0.0, 0.0, 0.15],
            [0.05, 0.05, 0.05, 0.1, 0.05, 0.05],
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ],
        steps_per_segment: 10,
    }
}

fn hill_game(name: &str, truth: ModelParams, blind_test: BlindTest) -> GameSpec {
    GameSpec {
        name: name.into(),
        game: Game::HillFullStrain,
        n_steps: 5,
        delta_eps: 0.4,
        truth,
        calibrate: HILL_PARAMS.to_vec(),
        observation: ObservationMap::FullStress,
        prior: PriorSpec::default(),
        filter: FilterConfig { kind: FilterKind::Switching, ..FilterConfig::default() },
        reward: RewardConfig {
            kind: RewardKind::Mixed,
            w_nse: 0.5,
            w_kl: 0.5,
            kl_scaling: Scaling::Affine { lo: 30.0, hi: 50.0 },
            nse_scaling: Scaling::Affine { lo: 0.8, hi: 1.0 },
        },
        substeps: 40,
        noise_std: 0.0,
        encode: EncodeMode::HistoryOnly,
        action_table: DEFAULT_HILL_ACTIONS.iter().map(|s| s.to_string()).collect(),
        blind_test: Some(blind_test),
    }
}

/// Game settings of a named preset.
pub fn preset(name: &str) -> Result<GameSpec> {
    Ok(match name {
        "elastic" => GameSpec {
            name: name.into(),
            game: Game::ElasticVolDev,
            n_steps: 2,
            delta_eps: 0.1,
            truth: ModelParams::isotropic_elastic(1.0, 0.7),
            calibrate: vec![ParamId::Bulk, ParamId::Shear],
            observation: ObservationMap::VolDev,
            prior: PriorSpec::default(),
            filter: FilterConfig { yield_gate: false, ..FilterConfig::default() },
            reward: RewardConfig::kl(Scaling::Binary { threshold: 7.5 }),
            substeps: 1,
            noise_std: 0.0,
            encode: EncodeMode::HistoryOnly,
            action_table: Vec::new(),
            blind_test: None,
        },
        "vonmises" => GameSpec {
            name: name.into(),
            game: Game::VonMisesPiPlane,
            n_steps: 6,
            delta_eps: 0.04,
            truth: ModelParams::von_mises(1.0, 0.7, 0.3, 1.0),
            calibrate: vec![ParamId::YieldStress, ParamId::Hardening],
            observation: ObservationMap::FullStress,
            prior: PriorSpec::default(),
            filter: FilterConfig { kind: FilterKind::Switching, ..FilterConfig::default() },
            reward: RewardConfig::kl(Scaling::Affine { lo: 0.0, hi: 12.5 }),
            substeps: 40,
            noise_std: 0.0,
            encode: EncodeMode::HistoryOnly,
            action_table: Vec::new(),
            blind_test: Some(pi_plane_blind_test()),
        },
        "hill_b05" => hill_game(name, ModelParams::hill(1.5, 0.3, 0.2, 0.5, 0.1, 0.1), full_strain_blind_test()),
        "hill_b20" => hill_game(name, ModelParams::hill(1.5, 0.3, 0.2, 2.0, 0.15, 0.2), full_strain_blind_test()),
        "hill_vm_reduction" => {
            hill_game(name, ModelParams::hill(1.5, 0.3, 0.3, 1.0, 0.1, 0.1), pi_plane_blind_test())
        }
        other => {
            return Err(Error::Config(format!("unknown preset `{other}` (expected one of {})", PRESET_NAMES.join(", "))))
        }
    })
}

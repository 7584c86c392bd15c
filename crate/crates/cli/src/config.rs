//! Run configuration: a preset name plus partial overrides, resolved into a
//! complete game and training setup.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use expdesign::environment::{preset, GameSpec, PRESET_NAMES};
use expdesign::kalman::FilterKind;
use expdesign::mcts::SearchConfig;
use expdesign::policynet::NetConfig;
use expdesign::reward::RewardKind;
use expdesign::trainer::{training_preset, TrainSchedule, TrainingSetup};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Contents of a `--config` file. Tables are merged key by key over the
/// preset, so a file only needs the settings it changes.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub parallel: Option<bool>,
    pub filter: Option<FilterKind>,
    pub reward: Option<RewardKind>,
    /// Game overrides, or a complete game when no preset is named.
    pub game: Option<toml::Table>,
    pub schedule: Option<toml::Table>,
    pub search: Option<toml::Table>,
    pub net: Option<toml::Table>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub parallel: bool,
    pub filter: Option<FilterKind>,
    pub reward: Option<RewardKind>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Resolved {
    pub preset: Option<String>,
    pub seed: u64,
    /// Not part of the configuration hash.
    #[serde(skip)]
    pub out: PathBuf,
    pub game: GameSpec,
    pub schedule: TrainSchedule,
    pub search: SearchConfig,
    pub net: NetConfig,
}

impl Resolved {
    pub fn setup(&self) -> TrainingSetup {
        TrainingSetup { schedule: self.schedule.clone(), search: self.search.clone(), net: self.net.clone() }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing resolved configuration")
    }

    /// SHA-256 of the resolved configuration, in hex.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("invalid configuration {}", path.display()))
}

pub fn parse(text: &str) -> Result<RunConfig> {
    Ok(toml::from_str(text)?)
}

/// Recursively overlays `patch` on `base`.
fn merge(base: &mut toml::Table, patch: &toml::Table) {
    for (k, v) in patch {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(p)) => merge(b, p),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn overlay<T>(base: &T, patch: Option<&toml::Table>, section: &str) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let Some(patch) = patch else {
        return Ok(toml::Value::try_from(base)?.try_into()?);
    };
    let mut table = match toml::Value::try_from(base)? {
        toml::Value::Table(t) => t,
        _ => toml::Table::new(),
    };
    merge(&mut table, patch);
    toml::Value::Table(table).try_into().with_context(|| format!("in [{section}]"))
}

pub fn resolve(cfg: &RunConfig, cli: &Overrides) -> Result<Resolved> {
    let name = cli.preset.clone().or_else(|| cfg.preset.clone());
    let mut game = match (&name, &cfg.game) {
        (Some(n), patch) => {
            let base = preset(n).with_context(|| format!("known presets: {}", PRESET_NAMES.join(", ")))?;
            overlay(&base, patch.as_ref(), "game")?
        }
        (None, Some(full)) => toml::Value::Table(full.clone()).try_into().context("in [game]")?,
        (None, None) => bail!("no game given: pass --preset or set `preset` or [game] in the configuration"),
    };
    if let Some(kind) = cli.filter.or(cfg.filter) {
        game.filter.kind = kind;
    }
    if let Some(kind) = cli.reward.or(cfg.reward) {
        game.reward.kind = kind;
    }
    game.validate()?;
    game.reward.validate()?;
    if game.reward.kind != RewardKind::Kl && game.blind_test.is_none() {
        bail!("reward {:?} needs a blind test in [game.blind_test]", game.reward.kind);
    }

    let base = match name.as_deref().map(|n| training_preset(n, &game)) {
        Some(Ok(setup)) => setup,
        _ => TrainingSetup {
            schedule: TrainSchedule::default(),
            search: SearchConfig::default(),
            net: NetConfig { hidden: vec![100, 100], ..NetConfig::default() },
        },
    };
    let mut schedule = overlay(&base.schedule, cfg.schedule.as_ref(), "schedule")?;
    let mut search = overlay(&base.search, cfg.search.as_ref(), "search")?;
    let mut net = overlay(&base.net, cfg.net.as_ref(), "net")?;
    net.input_dim = game.encoding_len();
    net.policy_dim = game.action_count();

    let seed = cli.seed.or(cfg.seed).unwrap_or(schedule.seed);
    schedule.seed = seed;
    search.seed = seed;
    net.seed = seed;
    schedule.parallel = cli.parallel || cfg.parallel.unwrap_or(schedule.parallel);
    schedule.validate()?;
    search.validate()?;
    net.validate()?;

    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(name.as_deref().unwrap_or(&game.name)));
    Ok(Resolved { preset: name, seed, out, game, schedule, search, net })
}

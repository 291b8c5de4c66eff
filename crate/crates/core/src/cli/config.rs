//! Run configuration: a preset, optionally overlaid by a TOML file, then by
//! command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::BootstrapConfig;
use crate::experiment::DeskConfig;
use crate::reward::SeverityMap;
use crate::rl::{RewardSpec, RlConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Short sentences, lexicon 200: MLE competence.
    Cipher,
    /// Sentences up to 64 words: RL comparisons.
    Long,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Preset,
    /// Seeds for multi-seed commands (`compare`, `ablate-severity`).
    pub seeds: Vec<u64>,
    /// Severity maps for `ablate-severity`: preset names or map files.
    pub maps: Vec<String>,
    pub desk: DeskConfig,
    pub rl: RlConfig,
    pub reward: RewardSpec,
    pub bootstrap: BootstrapConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let desk = match preset {
            Preset::Cipher => DeskConfig::cipher(),
            Preset::Long => DeskConfig::long_sequence(),
        };
        Self {
            preset,
            seeds: vec![1, 2, 3],
            maps: SeverityMap::presets().into_iter().map(|m| m.name).collect(),
            desk,
            rl: RlConfig {
                max_episodes: 2_000,
                seed: 1,
                ..RlConfig::default()
            },
            reward: RewardSpec::oracle(SeverityMap::our()),
            bootstrap: BootstrapConfig::default(),
        }
    }

    /// Reads a TOML file over the defaults of its `preset` key (or of
    /// `preset` when given, which wins over the file).
    pub fn load(path: &Path, preset: Option<Preset>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, preset).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str, preset: Option<Preset>) -> Result<Self> {
        let overlay: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        let file_preset = match overlay.get("preset") {
            Some(v) => Some(
                v.clone()
                    .try_into::<Preset>()
                    .map_err(|e| Error::InvalidConfig(format!("preset: {e}")))?,
            ),
            None => None,
        };
        let preset = preset.or(file_preset).unwrap_or(Preset::Long);
        let mut base = toml::Table::try_from(Self::preset(preset)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        merge(&mut base, overlay.clone());
        base.insert("preset".into(), toml::Value::try_from(preset).expect("unit enum"));
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        // every key of the file must land somewhere; serde would drop typos
        let resolved = toml::Table::try_from(&cfg).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if let Some(key) = unknown_key(&overlay, &resolved, "") {
            return Err(Error::InvalidConfig(format!("unknown key `{key}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.rl.validate()?;
        self.desk.mle.validate()?;
        self.desk.task.validate()?;
        self.reward.check(self.rl.granularity)?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        Ok(())
    }

    /// The snapshot stored in each run directory; loading it reproduces the
    /// configuration exactly.
    pub fn snapshot(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

/// Recursively overlays `top` onto `base`; tables merge, everything else is
/// replaced.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn unknown_key(top: &toml::Table, known: &toml::Table, prefix: &str) -> Option<String> {
    for (k, v) in top {
        let path = format!("{prefix}{k}");
        match (known.get(k), v) {
            (None, _) => return Some(path),
            (Some(toml::Value::Table(kt)), toml::Value::Table(t)) => {
                if let Some(bad) = unknown_key(t, kt, &format!("{path}.")) {
                    return Some(bad);
                }
            }
            _ => {}
        }
    }
    None
}

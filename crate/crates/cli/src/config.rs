//! Layered run configuration: defaults, then a TOML file, then the
//! `XMORPH_SEED` variable, then command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};
use xmorph::data::{Behavior, Modality};
use xmorph::eval::ProtocolConfig;
use xmorph::featurize::SignalKind;
use xmorph::{EdnConfig, KemaConfig, LabelKind, SynthConfig};

use crate::error::CliError;

pub const SEED_VAR: &str = "XMORPH_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// When set, replaces every per-section seed.
    pub seed: Option<u64>,
    pub synth: SynthConfig,
    pub featurize: FeaturizeOptions,
    pub augment: AugmentOptions,
    pub train: TrainOptions,
    pub evaluate: ProtocolConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            synth: SynthConfig::default(),
            featurize: FeaturizeOptions::default(),
            augment: AugmentOptions::default(),
            train: TrainOptions::default(),
            evaluate: ProtocolConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct FeaturizeOptions {
    /// `None` infers audio from a `.wav` extension.
    pub kind: Option<SignalKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentOptions {
    pub k: usize,
    pub seed: u64,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions {
            k: xmorph::augment::DEFAULT_AUGMENT_K,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub source: String,
    pub target: String,
    pub behavior: Behavior,
    pub modality: Modality,
    /// Object identity, or a shared weight or content value.
    pub pairing: LabelKind,
    pub edn: EdnConfig,
    pub kema: KemaConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            source: "baxter".into(),
            target: "ur5".into(),
            behavior: Behavior::Shake,
            modality: Modality::Force,
            pairing: LabelKind::ObjectId,
            edn: EdnConfig::default(),
            kema: KemaConfig::default(),
        }
    }
}

impl RunConfig {
    fn apply_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.synth.seed = seed;
            self.augment.seed = seed;
            self.train.edn.seed = seed;
            self.train.kema.seed = seed;
            self.evaluate.seed = seed;
            self.evaluate.edn.seed = seed;
            self.evaluate.kema.seed = seed;
            self.evaluate.svm.seed = seed;
        }
    }
}

/// Recursively overlays `top` onto `base`.
pub fn deep_merge(base: &mut Table, top: Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(t)) => deep_merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Parses the right-hand side of `--set key=value`: a TOML value when it
/// parses as one, a bare string otherwise.
pub fn parse_value(text: &str) -> Value {
    let doc = format!("v = {text}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(text.to_string())),
        Err(_) => Value::String(text.to_string()),
    }
}

/// Sets a dotted key, creating intermediate tables.
pub fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::usage(format!("malformed key `{key}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(CliError::usage(format!("`{key}`: `{part}` is not a table"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Dotted paths present in `given` but not in `known`.
pub fn unknown_keys(given: &Table, known: &Table, prefix: &str, out: &mut Vec<String>) {
    for (key, value) in given {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (value, known.get(key)) {
            (_, None) => out.push(path),
            (Value::Table(g), Some(Value::Table(k))) => unknown_keys(g, k, &path, out),
            _ => {}
        }
    }
}

fn to_table(config: &RunConfig) -> Result<Table, CliError> {
    Table::try_from(config).map_err(|e| CliError::config(None, format!("cannot encode configuration: {e}")))
}

/// Resolves the configuration for one run. `overrides` are dotted keys
/// collected from command-line flags, applied last.
pub fn resolve(
    file: Option<&Path>,
    env_seed: Option<String>,
    overrides: &[(String, Value)],
) -> Result<RunConfig, CliError> {
    let mut merged = to_table(&RunConfig::default())?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::config(Some(path.to_path_buf()), format!("cannot read config file: {e}"))
        })?;
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::config(Some(path.to_path_buf()), e.message().to_string()))?;
        deep_merge(&mut merged, table);
    }
    if let Some(raw) = env_seed {
        let seed: u64 = raw
            .trim()
            .parse()
            .map_err(|_| CliError::config(None, format!("{SEED_VAR}=`{raw}` is not an unsigned integer")))?;
        merged.insert("seed".into(), Value::Integer(seed as i64));
    }
    for (key, value) in overrides {
        set_dotted(&mut merged, key, value.clone())?;
    }

    let source: Option<PathBuf> = file.map(Path::to_path_buf);
    let mut config: RunConfig = merged
        .clone()
        .try_into()
        .map_err(|e: toml::de::Error| CliError::config(source.clone(), e.message().to_string()))?;
    let mut unknown = Vec::new();
    unknown_keys(&merged, &to_table(&config)?, "", &mut unknown);
    for key in unknown {
        log::warn!("ignoring unknown configuration key `{key}`");
    }
    config.apply_seed();
    Ok(config)
}

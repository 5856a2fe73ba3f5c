//! Run configuration: a TOML file with one section per concern, plus
//! `section.key=value` overrides from the command line.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use mvgmp_core::simulator::ScenarioConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Inputs of the `analyze` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    /// Number of views for the failure-probability table.
    pub views: u16,
    pub ranges: Vec<u16>,
    /// Per-view loss probabilities.
    pub losses: Vec<f64>,
    /// Spacings for the spaced-transmission table.
    pub spacings: Vec<u16>,
    /// Periodic Zipf cases.
    pub zipf: Vec<ZipfCase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZipfCase {
    pub period: usize,
    pub exponent: f64,
    /// Per-view reception (success) probability.
    pub success: f64,
    /// Largest subscription probability; sets the Zipf scale.
    pub peak: f64,
    pub range: u16,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            views: 6,
            ranges: vec![1, 2, 3, 4],
            losses: vec![0.1, 0.2, 0.3, 0.5],
            spacings: vec![1, 2, 3],
            zipf: vec![
                ZipfCase { period: 3, exponent: 1.0, success: 0.5, peak: 0.9, range: 3 },
                ZipfCase { period: 5, exponent: 1.0, success: 0.6, peak: 0.9, range: 3 },
            ],
        }
    }
}

/// Inputs and tolerances of the `validate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSettings {
    pub seed: u64,
    /// Largest view count of the enumeration grid (from 2).
    pub max_views: u16,
    /// Largest synthesis range of the enumeration grid (from 1).
    pub max_range: u16,
    pub losses: Vec<f64>,
    /// Random two-channel, two-rate plans added to the enumeration grid.
    pub random_plans: usize,
    /// Transmissions per plan in the enumeration grid.
    pub max_transmissions: u32,
    pub exact_tolerance: f64,
    /// Monte Carlo trials per randomized acquisition-ratio instance.
    pub trials: u64,
    pub random_instances: usize,
    pub sigmas: f64,
    /// Views per simulated sequence.
    pub sequence_length: u64,
    pub select: f64,
    pub sequence_tolerance: f64,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        ValidationSettings {
            seed: 2024,
            max_views: 6,
            max_range: 3,
            losses: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            random_plans: 400,
            max_transmissions: 8,
            exact_tolerance: 1e-12,
            trials: 1_000_000,
            random_instances: 10,
            sigmas: 4.0,
            sequence_length: 1_000_000,
            select: 0.8,
            sequence_tolerance: 5e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scenario: ScenarioConfig,
    pub analysis: AnalysisSettings,
    pub validate: ValidationSettings,
}

impl Config {
    /// Reads `path` (or the defaults when `None`) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        Config::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Config> {
        let mut value: toml::Table = toml::from_str(text).context("parsing config")?;
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| anyhow!("override `{o}` is not key=value"))?;
            set_dotted(&mut value, key.trim(), parse_value(raw.trim()))?;
        }
        let config: Config = toml::Value::Table(value).try_into().context("invalid config")?;
        config.scenario.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}

/// Interprets an override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| anyhow!("empty override key"))?;
    let mut cur = table;
    for part in parts {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override `{key}`: `{part}` is not a section"),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use mvgmp_core::simulator::Preference;

    #[test]
    fn defaults_and_overrides() {
        let c = Config::parse("", &[]).unwrap();
        assert_eq!(c, Config::default());
        let c = Config::parse(
            "[scenario]\nviews = 8\n",
            &["scenario.range=2".into(), "scenario.preference=zipf".into(), "scenario.loss.radius=30".into()],
        )
        .unwrap();
        assert_eq!(c.scenario.views, 8);
        assert_eq!(c.scenario.range, 2);
        assert_eq!(c.scenario.preference, Preference::Zipf);
        assert_eq!(c.scenario.loss.radius, 30.0);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(Config::parse("[scenario]\nbogus = 1\n", &[]).is_err());
        assert!(Config::parse("", &["scenario.arrival=1.5".into()]).is_err());
        assert!(Config::parse("", &["scenario.views".into()]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = Config::default();
        let b = Config::parse("", &["scenario.seed=9".into()]).unwrap();
        assert_eq!(a.hash(), Config::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(Config::parse(&a.to_toml(), &[]).unwrap(), a);
    }
}

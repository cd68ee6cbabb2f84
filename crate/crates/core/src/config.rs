//! Pipeline configuration read from TOML or JSON.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::AgentConfig;
use crate::backtest::Strategy;
use crate::env::EnvConfig;
use crate::error::{CrnError, Result};
use crate::indicators::{FeatureGroup, IndicatorParams};
use crate::pgm::PgmParams;

/// Input locations. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Holds `{coin}.csv` with `date,open,high,low,close,volume` columns and
    /// optionally already-aligned exogenous columns.
    pub dir: PathBuf,
    /// Optional `date,gold,msci,sp500,usdx,wti` file shared by all coins.
    pub macro_file: Option<PathBuf>,
    /// Optional directory of `{coin}_tweets.csv` files.
    pub tweets_dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: PathBuf::from("data"),
            macro_file: None,
            tweets_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub coins: Vec<String>,
    pub data: DataConfig,
    /// Pinned feature group per coin; coins not listed are auto-selected.
    pub feature_groups: BTreeMap<String, FeatureGroup>,
    pub indicators: IndicatorParams,
    pub pgm: PgmParams,
    pub env: EnvConfig,
    pub agents: AgentConfig,
    /// Environment steps per training run.
    pub train_steps: usize,
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
    /// Whether buy-and-hold pays the trading fee; off reproduces a fee-free benchmark.
    pub buy_and_hold_fees: bool,
    /// Output directory; the command line and `CRN_OUT` take precedence.
    pub output_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            coins: Vec::new(),
            data: DataConfig::default(),
            feature_groups: BTreeMap::new(),
            indicators: IndicatorParams::default(),
            pgm: PgmParams::default(),
            env: EnvConfig::default(),
            agents: AgentConfig::default(),
            train_steps: 100_000,
            seeds: vec![1, 2, 3, 4, 5],
            strategies: Strategy::ALL.to_vec(),
            buy_and_hold_fees: true,
            output_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.coins.is_empty() {
            return Err(CrnError::Config("`coins` must list at least one coin".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.coins {
            if c.is_empty() || c.contains(['/', '\\']) || !seen.insert(c) {
                return Err(CrnError::Config(format!("invalid or duplicate coin name `{c}`")));
            }
        }
        if let Some(c) = self.feature_groups.keys().find(|c| !self.coins.contains(c)) {
            return Err(CrnError::Config(format!("feature group pinned for unknown coin `{c}`")));
        }
        if self.seeds.is_empty() {
            return Err(CrnError::Config("`seeds` must not be empty".into()));
        }
        if self.strategies.is_empty() {
            return Err(CrnError::Config("`strategies` must not be empty".into()));
        }
        if self.train_steps == 0 {
            return Err(CrnError::Config("`train_steps` must be positive".into()));
        }
        if self.pgm.bins < 2 {
            return Err(CrnError::Config("`pgm.bins` must be at least 2".into()));
        }
        self.indicators.validate()?;
        self.env.validate()?;
        self.agents.validate()
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| CrnError::Config(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| CrnError::Config(e.to_string()))
    }

    /// Reads, parses and validates a config file; `.json` files are JSON,
    /// anything else TOML. Relative data paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CrnError::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed = if is_json {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        };
        let mut cfg = parsed.map_err(|e| match e {
            CrnError::Config(m) => CrnError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.dir);
        if let Some(p) = &mut self.data.macro_file {
            fix(p);
        }
        if let Some(p) = &mut self.data.tweets_dir {
            fix(p);
        }
        if let Some(p) = &mut self.output_dir {
            fix(p);
        }
    }

    /// SHA-256 over the canonical JSON form, ignoring input and output
    /// locations so relocated runs hash alike.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        c.data = DataConfig::default();
        let json = serde_json::to_string(&c).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

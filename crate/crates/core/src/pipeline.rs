//! End-to-end experiment: data preparation, direction forecasts, agent
//! training and evaluation, and the file-based stages behind the CLI.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{evaluate_policy, train_agent, write_training_log, TrainOutput, TrainedPolicy};
use crate::backtest::{aggregate_all, buy_and_hold_log, emit_report, Report, RunResult, Strategy};
use crate::config::PipelineConfig;
use crate::env::{write_trade_log, MarketSeries, Normalizer, TradeRecord, TradingEnv};
use crate::error::{CrnError, Result};
use crate::indicators::{compute_feature_frame, FeatureFrame, FeatureGroup};
use crate::market_data::{align_calendar, load_macro_csv, load_ohlcv_csv, load_tweets_csv, Dataset, ExoField, OHLCV_COLUMNS};
use crate::pgm::dbn::prediction_accuracy;
use crate::pgm::selection::labelled_train_rows;
use crate::pgm::{discretize_frame, fit_dbn, predict_series, select_feature_group, DbnModel, DirectionPrediction, DiscreteFrame, Selection};

/// Reads one coin's prices and joins any configured exogenous series.
pub fn load_coin(cfg: &PipelineConfig, coin: &str) -> Result<Dataset> {
    let path = cfg.data.dir.join(format!("{coin}.csv"));
    let has_macro = cfg.data.macro_file.is_some();
    let tweets = cfg.data.tweets_dir.as_ref().map(|d| d.join(format!("{coin}_tweets.csv")));
    if !has_macro && tweets.is_none() {
        // The file may already carry aligned exogenous columns.
        let ds = Dataset::read_csv(coin, &path)?;
        for c in OHLCV_COLUMNS {
            ds.column(c)?;
        }
        load_ohlcv_csv(&path)?;
        return Ok(ds);
    }
    let bars = load_ohlcv_csv(&path)?;
    let mut exo = Vec::new();
    if let Some(m) = &cfg.data.macro_file {
        exo.extend(load_macro_csv(m)?);
    }
    if let Some(t) = tweets.filter(|t| t.exists()) {
        exo.extend(load_tweets_csv(&t)?);
    }
    align_calendar(coin, &bars, &exo, &[])
}

/// Everything the agents of one coin need: the chosen feature frame, the
/// fitted forecaster with its per-row forecasts, and the row ranges.
#[derive(Debug, Clone)]
pub struct PreparedCoin {
    pub coin: String,
    pub dataset: Dataset,
    pub frame: FeatureFrame,
    pub discrete: DiscreteFrame,
    pub model: DbnModel,
    pub predictions: Vec<Option<DirectionPrediction>>,
    /// First test row.
    pub split: usize,
    /// First row with a forecast; agents trade from here.
    pub start: usize,
}

fn discretize_for_training(frame: &FeatureFrame, split: usize, cfg: &PipelineConfig) -> Result<DiscreteFrame> {
    discretize_frame(frame, cfg.pgm.bins, labelled_train_rows(frame.warmup(), split), cfg.pgm.tie)
}

impl PreparedCoin {
    /// Builds the feature frame for `group` and fits the forecaster on the
    /// training split.
    pub fn fit(ds: &Dataset, group: FeatureGroup, cfg: &PipelineConfig) -> Result<Self> {
        let frame = compute_feature_frame(ds, group, &cfg.indicators)?;
        let split = ds.split_index();
        let discrete = discretize_for_training(&frame, split, cfg)?;
        let model = fit_dbn(&discrete, split, &cfg.pgm.dbn)?;
        Self::assemble(ds, frame, discrete, model)
    }

    /// Rebuilds from a previously fitted forecaster.
    pub fn with_model(ds: &Dataset, group: FeatureGroup, model: DbnModel, cfg: &PipelineConfig) -> Result<Self> {
        let frame = compute_feature_frame(ds, group, &cfg.indicators)?;
        let discrete = discretize_for_training(&frame, ds.split_index(), cfg)?;
        let names: Vec<&str> = discrete.variables.iter().map(|v| v.name.as_str()).collect();
        let model_names: Vec<&str> = model.variables[..model.target].iter().map(|v| v.name.as_str()).collect();
        if names != model_names || discrete.variables.iter().zip(&model.variables).any(|(a, b)| a.cardinality != b.cardinality) {
            return Err(CrnError::Config(format!(
                "saved forecaster for {} does not match the {group} features",
                ds.asset
            )));
        }
        Self::assemble(ds, frame, discrete, model)
    }

    fn assemble(ds: &Dataset, frame: FeatureFrame, discrete: DiscreteFrame, model: DbnModel) -> Result<Self> {
        let predictions = predict_series(&model, &discrete)?;
        let split = ds.split_index();
        let start = discrete.start + model.window - 1;
        if start + 2 > split || split + 2 > ds.len() {
            return Err(CrnError::InsufficientData(format!(
                "{}: forecasts start at row {start}, the test split at row {split} of {}",
                ds.asset,
                ds.len()
            )));
        }
        Ok(PreparedCoin {
            coin: ds.asset.clone(),
            dataset: ds.clone(),
            frame,
            discrete,
            model,
            predictions,
            split,
            start,
        })
    }

    pub fn group(&self) -> FeatureGroup {
        self.frame.group
    }

    pub fn test_days(&self) -> usize {
        self.dataset.len() - self.split
    }

    /// Directional accuracy of the forecasts on the labelled test rows.
    pub fn test_accuracy(&self) -> Option<f64> {
        prediction_accuracy(&self.predictions, &self.discrete, self.split..self.dataset.len() - 1)
    }

    /// Observation series for a strategy: the selected features plus
    /// forecasts for CRN agents, raw OHLCV only for base agents.
    pub fn series(&self, strategy: Strategy) -> Result<MarketSeries> {
        let (names, cols): (Vec<String>, Vec<&[f64]>) = if strategy.uses_forecasts() {
            (
                self.frame.columns.iter().map(|c| c.name.clone()).collect(),
                self.frame.columns.iter().map(|c| c.values.as_slice()).collect(),
            )
        } else {
            let cols = OHLCV_COLUMNS.iter().map(|c| self.dataset.column(c)).collect::<Result<Vec<_>>>()?;
            (OHLCV_COLUMNS.iter().map(|c| c.to_string()).collect(), cols)
        };
        let n = self.dataset.len();
        let series = MarketSeries {
            dates: self.dataset.dates.clone(),
            closes: self.dataset.closes()?.to_vec(),
            feature_names: names,
            features: (0..n).map(|t| cols.iter().map(|c| c[t]).collect()).collect(),
            predictions: strategy.uses_forecasts().then(|| self.predictions.clone()),
        };
        let expected = series.feature_names.len() + 2 + if strategy.uses_forecasts() { 2 } else { 0 };
        if series.obs_dim() != expected {
            return Err(CrnError::Contract("observation layout does not match the strategy".into()));
        }
        Ok(series)
    }

    /// Training and test environments sharing one scaler fitted on the
    /// training rows.
    pub fn environments(&self, strategy: Strategy, cfg: &PipelineConfig) -> Result<(TradingEnv, TradingEnv)> {
        let series = Arc::new(self.series(strategy)?);
        let scaler = Arc::new(Normalizer::fit(&series.features[self.start..self.split], &series.feature_names)?);
        let train = TradingEnv::new(cfg.env, series.clone(), scaler.clone(), self.start, self.split)?;
        let test = TradingEnv::new(cfg.env, series, scaler, self.split, self.dataset.len())?;
        Ok((train, test))
    }
}

/// Feature group for `coin`: the pinned one, or the best-scoring one.
pub fn choose_group(ds: &Dataset, cfg: &PipelineConfig) -> Result<(FeatureGroup, Option<Selection>)> {
    if let Some(g) = cfg.feature_groups.get(&ds.asset) {
        return Ok((*g, None));
    }
    let sel = select_feature_group(ds, &cfg.indicators, &cfg.pgm)?;
    Ok((sel.group, Some(sel)))
}

pub fn prepare_coin(ds: &Dataset, cfg: &PipelineConfig) -> Result<PreparedCoin> {
    let (group, _) = choose_group(ds, cfg)?;
    PreparedCoin::fit(ds, group, cfg)
}

pub fn train_strategy(prep: &PreparedCoin, strategy: Strategy, seed: u64, cfg: &PipelineConfig) -> Result<TrainOutput> {
    let algo = strategy
        .algorithm()
        .ok_or_else(|| CrnError::Contract(format!("{strategy} has no agent to train")))?;
    let (mut env, _) = prep.environments(strategy, cfg)?;
    train_agent(algo, &mut env, cfg.train_steps, seed, &cfg.agents)
}

/// Runs a strategy over the test split and returns its result and trade log.
pub fn evaluate_strategy(
    prep: &PreparedCoin,
    strategy: Strategy,
    seed: u64,
    policy: Option<&TrainedPolicy>,
    cfg: &PipelineConfig,
) -> Result<(RunResult, Vec<TradeRecord>)> {
    let log = match (strategy, policy) {
        (Strategy::BuyAndHold, _) => {
            let fee = if cfg.buy_and_hold_fees { cfg.env.fee_rate } else { 0.0 };
            let closes = &prep.dataset.closes()?[prep.split..];
            buy_and_hold_log(&prep.dataset.dates[prep.split..], closes, cfg.env.initial_cash, fee)?
        }
        (_, Some(p)) => {
            if Some(p.algorithm()) != strategy.algorithm() {
                return Err(CrnError::Config(format!("{strategy} cannot run a {} policy", p.algorithm())));
            }
            let (_, mut test) = prep.environments(strategy, cfg)?;
            evaluate_policy(p, &mut test)?
        }
        (_, None) => return Err(CrnError::Config(format!("{strategy} needs a trained policy"))),
    };
    let seed = if strategy.is_seeded() { seed } else { 0 };
    let result = RunResult::from_log(&prep.coin, strategy, seed, cfg.env.initial_cash, prep.test_days(), &log)?;
    Ok((result, log))
}

/// Trains (when needed) and evaluates one strategy.
pub fn run_strategy(prep: &PreparedCoin, strategy: Strategy, seed: u64, cfg: &PipelineConfig) -> Result<(RunResult, Vec<TradeRecord>)> {
    let trained = strategy.algorithm().map(|_| train_strategy(prep, strategy, seed, cfg)).transpose()?;
    evaluate_strategy(prep, strategy, seed, trained.as_ref().map(|t| &t.policy), cfg)
}

/// Mean test ROI of a strategy over `seeds`, trained one seed per thread.
pub fn mean_test_roi(prep: &PreparedCoin, strategy: Strategy, seeds: &[u64], cfg: &PipelineConfig) -> Result<f64> {
    let results = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| s.spawn(move || run_strategy(prep, strategy, seed, cfg).map(|r| r.0.roi)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect::<Result<Vec<f64>>>()
    })?;
    Ok(results.iter().sum::<f64>() / results.len() as f64)
}

// ---- file-based stages ----

/// Output layout of the stages.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

fn group_file(g: FeatureGroup) -> String {
    g.id().to_ascii_lowercase().replace('+', "_")
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn dataset(&self, coin: &str) -> PathBuf {
        self.root.join("ingest").join(format!("{coin}.csv"))
    }

    pub fn features(&self, coin: &str, g: FeatureGroup) -> PathBuf {
        self.root.join("features").join(coin).join(format!("{}.csv", group_file(g)))
    }

    pub fn selection(&self, coin: &str) -> PathBuf {
        self.root.join("selection").join(format!("{coin}.json"))
    }

    pub fn model(&self, coin: &str) -> PathBuf {
        self.root.join("dbn").join(format!("{coin}.json"))
    }

    pub fn forecasts(&self, coin: &str) -> PathBuf {
        self.root.join("dbn").join(format!("{coin}_forecasts.csv"))
    }

    pub fn policy(&self, coin: &str, s: Strategy, seed: u64) -> PathBuf {
        self.root.join("agents").join(coin).join(format!("{}_seed{seed}.json", s.id()))
    }

    pub fn training_log(&self, coin: &str, s: Strategy, seed: u64) -> PathBuf {
        self.root.join("agents").join(coin).join(format!("{}_seed{seed}_training.csv", s.id()))
    }

    pub fn trade_log_name(s: Strategy, seed: u64) -> String {
        format!("{}_seed{seed}_trades.csv", s.id())
    }

    pub fn trade_log(&self, coin: &str, s: Strategy, seed: u64) -> PathBuf {
        self.root.join("backtest").join(coin).join(Self::trade_log_name(s, seed))
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("backtest").join("runs.json")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn metadata(&self) -> PathBuf {
        self.root.join("metadata.json")
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| CrnError::io(dir, e)),
        None => Ok(()),
    }
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, body).map_err(|e| CrnError::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CrnError::Config(format!("{} is missing; run the earlier stages first", path.display())),
        _ => CrnError::io(path, e),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Indicators,
    SelectFeatures,
    TrainDbn,
    TrainAgent,
    Backtest,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Indicators,
        Stage::SelectFeatures,
        Stage::TrainDbn,
        Stage::TrainAgent,
        Stage::Backtest,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Indicators => "indicators",
            Stage::SelectFeatures => "select-features",
            Stage::TrainDbn => "train-dbn",
            Stage::TrainAgent => "train-agent",
            Stage::Backtest => "backtest",
            Stage::Report => "report",
        }
    }
}

fn now_rfc3339() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs() as i64);
    chrono::DateTime::from_timestamp(secs, 0).map_or_else(String::new, |t| t.to_rfc3339())
}

/// Records when a stage last finished. Kept apart from the artifacts so
/// they stay byte-identical across runs.
fn stamp(layout: &Layout, stage: Stage, cfg: &PipelineConfig) -> Result<()> {
    let path = layout.metadata();
    let mut meta: BTreeMap<String, serde_json::Value> = match std::fs::read_to_string(&path) {
        Ok(s) => serde_json::from_str(&s).unwrap_or_default(),
        Err(_) => BTreeMap::new(),
    };
    meta.insert("config_hash".into(), cfg.hash().into());
    meta.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    meta.insert(
        format!("{}_finished_at", stage.name()),
        now_rfc3339().into(),
    );
    write(&path, serde_json::to_string_pretty(&meta)?)
}

fn load_ingested(layout: &Layout, coin: &str) -> Result<Dataset> {
    let path = layout.dataset(coin);
    read(&path)?;
    Dataset::read_csv(coin, &path)
}

fn stage_ingest(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    for coin in &cfg.coins {
        let ds = load_coin(cfg, coin)?;
        log::info!("{coin}: {} rows, {} columns", ds.len(), ds.columns.len());
        write(&layout.dataset(coin), ds.to_csv_string())?;
    }
    Ok(())
}

fn stage_indicators(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    for coin in &cfg.coins {
        let ds = load_ingested(layout, coin)?;
        for g in FeatureGroup::ALL_GROUPS {
            match compute_feature_frame(&ds, g, &cfg.indicators) {
                Ok(frame) => write(&layout.features(coin, g), frame.to_csv_string())?,
                Err(CrnError::MissingData(m)) => log::warn!("{coin}: no {g} features: {m}"),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(())
}

/// Stored choice of feature group for one coin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupChoice {
    pub coin: String,
    pub group: FeatureGroup,
    pub pinned: bool,
    pub selection: Option<Selection>,
}

fn stage_select(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    for coin in &cfg.coins {
        let ds = load_ingested(layout, coin)?;
        let (group, selection) = choose_group(&ds, cfg)?;
        let choice = GroupChoice {
            coin: coin.clone(),
            group,
            pinned: selection.is_none(),
            selection,
        };
        log::info!("{coin}: feature group {group}");
        write(&layout.selection(coin), serde_json::to_string_pretty(&choice)?)?;
    }
    Ok(())
}

fn load_choice(layout: &Layout, coin: &str) -> Result<GroupChoice> {
    Ok(serde_json::from_str(&read(&layout.selection(coin))?)?)
}

fn forecasts_csv(prep: &PreparedCoin) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["date", "p_up", "p_down", "direction"])?;
    for t in prep.start..prep.dataset.len() {
        let p = prep.predictions[t].expect("forecast rows start at `start`");
        let label = prep.discrete.direction_at(t).map_or(String::new(), |d| d.to_string());
        w.write_record([prep.dataset.dates[t].to_string(), p.p_up.to_string(), p.p_down.to_string(), label])?;
    }
    let bytes = w.into_inner().map_err(|e| CrnError::Contract(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn stage_train_dbn(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    for coin in &cfg.coins {
        let ds = load_ingested(layout, coin)?;
        let choice = load_choice(layout, coin)?;
        let prep = PreparedCoin::fit(&ds, choice.group, cfg)?;
        if let Some(acc) = prep.test_accuracy() {
            log::info!("{coin}: forecast accuracy on the test split {acc:.4}");
        }
        write(&layout.model(coin), prep.model.to_json()?)?;
        write(&layout.forecasts(coin), forecasts_csv(&prep)?)?;
    }
    Ok(())
}

fn load_prepared(cfg: &PipelineConfig, layout: &Layout, coin: &str) -> Result<PreparedCoin> {
    let ds = load_ingested(layout, coin)?;
    let choice = load_choice(layout, coin)?;
    let model = DbnModel::from_json(&read(&layout.model(coin))?)?;
    PreparedCoin::with_model(&ds, choice.group, model, cfg)
}

fn agent_strategies(cfg: &PipelineConfig) -> Vec<Strategy> {
    cfg.strategies.iter().copied().filter(|s| s.algorithm().is_some()).collect()
}

fn stage_train_agents(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    for coin in &cfg.coins {
        let prep = load_prepared(cfg, layout, coin)?;
        for strategy in agent_strategies(cfg) {
            let outputs = std::thread::scope(|s| {
                let prep = &prep;
                let handles: Vec<_> = cfg
                    .seeds
                    .iter()
                    .map(|&seed| s.spawn(move || train_strategy(prep, strategy, seed, cfg).map(|o| (seed, o))))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect::<Result<Vec<_>>>()
            })?;
            for (seed, out) in outputs {
                log::info!("{coin} {strategy} seed {seed}: trained");
                write(&layout.policy(coin, strategy, seed), out.policy.to_json()?)?;
                let path = layout.training_log(coin, strategy, seed);
                ensure_parent(&path)?;
                write_training_log(&path, &out.log)?;
            }
        }
    }
    Ok(())
}

fn stage_backtest(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let mut runs = Vec::new();
    for coin in &cfg.coins {
        let prep = load_prepared(cfg, layout, coin)?;
        for &strategy in &cfg.strategies {
            let seeds: Vec<u64> = if strategy.is_seeded() { cfg.seeds.clone() } else { vec![0] };
            for seed in seeds {
                let policy = match strategy.algorithm() {
                    Some(_) => Some(TrainedPolicy::load(&layout.policy(coin, strategy, seed)).map_err(|e| match e {
                        CrnError::Io { path, .. } => CrnError::Config(format!("{} is missing; run train-agent first", path.display())),
                        other => other,
                    })?),
                    None => None,
                };
                let (mut result, log) = evaluate_strategy(&prep, strategy, seed, policy.as_ref(), cfg)?;
                let name = Layout::trade_log_name(strategy, seed);
                let path = layout.trade_log(coin, strategy, seed);
                ensure_parent(&path)?;
                write_trade_log(&path, &log)?;
                result.trade_log = Some(name);
                log::info!("{coin} {strategy} seed {seed}: ROI {:.4}", result.roi);
                runs.push(result);
            }
        }
    }
    write(&layout.runs(), serde_json::to_string_pretty(&runs)?)
}

fn stage_report(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let runs: Vec<RunResult> = serde_json::from_str(&read(&layout.runs())?)?;
    let report = Report::new(cfg.hash(), aggregate_all(&runs)?);
    emit_report(&report, &layout.report_dir())
}

pub fn run_stage(stage: Stage, cfg: &PipelineConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let layout = Layout::new(out);
    match stage {
        Stage::Ingest => stage_ingest(cfg, &layout)?,
        Stage::Indicators => stage_indicators(cfg, &layout)?,
        Stage::SelectFeatures => stage_select(cfg, &layout)?,
        Stage::TrainDbn => stage_train_dbn(cfg, &layout)?,
        Stage::TrainAgent => stage_train_agents(cfg, &layout)?,
        Stage::Backtest => stage_backtest(cfg, &layout)?,
        Stage::Report => stage_report(cfg, &layout)?,
    }
    stamp(&layout, stage, cfg)
}

pub fn run_all(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    for stage in Stage::ALL {
        run_stage(stage, cfg, out)?;
    }
    Ok(())
}

/// Exogenous columns a dataset lacks for `group`.
pub fn missing_columns(ds: &Dataset, group: FeatureGroup) -> Vec<&'static str> {
    group
        .required_exo()
        .iter()
        .map(|f: &ExoField| f.column_name())
        .filter(|c| !ds.has_column(c))
        .collect()
}

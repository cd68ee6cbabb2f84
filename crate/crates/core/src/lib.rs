//! Cryptocurrency trading research pipeline: market data, technical
//! indicators, Bayesian-network direction forecasts, a trading environment,
//! PPO and DDPG agents, and backtest reporting.

pub mod agents;
pub mod backtest;
pub mod config;
pub mod env;
pub mod error;
pub mod indicators;
pub mod market_data;
pub mod neural;
pub mod pgm;
pub mod pipeline;
pub mod synthetic;

pub use error::{CrnError, Result};

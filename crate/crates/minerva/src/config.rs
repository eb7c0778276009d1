//! Plain-text configuration: one `key = value` per line, `#` comments.
//!
//! ```text
//! net.peers = 4
//! net.latency = exponential
//! net.latency.mean_ms = 50
//! net.seed = 42
//! net.placement = all
//! net.bytes_per_ms = 100000
//! net.connect_timeout_ms = 3000
//! cache.meta.enabled = true
//! cache.peer.enabled = true
//! cache.capacity = 4096
//! cache.ttl_ms = 600000
//! scheduler.strategy = load_balance
//! scheduler.max_providers = 3
//! gpr.enabled = false
//! gpr.alpha_bytes = 4194304
//! gpr.delta_ms = 150
//! flatten.pool_size = 0
//! chunk.size_bytes = 1048576
//! chunk.fanout = 16
//! compute.cost_ms_per_row = 0.01
//! write.hash_ms_per_chunk = 1
//! write.publish_ms = 190
//! write.allow_oversize = false
//! ```
//!
//! Unknown keys are rejected so typos surface before any run.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::cache::{CacheConfig, CacheMode};
use crate::coordinator::{GprConfig, SelectionParams, Strategy};
use crate::dhtnet::{LatencyDistribution, NetworkOptions, PlacementPolicy};
use crate::error::{Error, Result};
use crate::executor::WriteCosts;

/// Everything a simulation run needs: network topology plus engine knobs.
#[derive(Clone, Debug)]
pub struct Config {
    pub net: NetworkOptions,
    pub placement: PlacementPolicy,
    pub cache_mode: CacheMode,
    pub cache: CacheConfig,
    pub selection: SelectionParams,
    pub gpr: GprConfig,
    pub chunk_size: usize,
    pub fanout: usize,
    pub write_costs: WriteCosts,
    pub allow_oversize: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            net: NetworkOptions::default(),
            placement: PlacementPolicy::All,
            cache_mode: CacheMode::Both,
            cache: CacheConfig::default(),
            selection: SelectionParams::default(),
            gpr: GprConfig::default(),
            chunk_size: 1 << 20,
            fanout: 16,
            write_costs: WriteCosts::default(),
            allow_oversize: false,
        }
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected true/false, got {other:?}"))),
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("{key}: bad numeric value {value:?}")))
}

impl Config {
    /// Parse the documented key set, rejecting unknown keys.
    pub fn parse(text: &str) -> Result<Config> {
        let mut pairs: BTreeMap<String, String> = BTreeMap::new();
        for (number, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", number + 1))
            })?;
            pairs.insert(key.trim().to_string(), value.trim().to_string());
        }
        Config::from_pairs(pairs)
    }

    fn from_pairs(pairs: BTreeMap<String, String>) -> Result<Config> {
        let mut config = Config::default();
        let mut latency_kind: Option<String> = None;
        let mut latency_params: BTreeMap<String, String> = BTreeMap::new();
        let mut meta_enabled = true;
        let mut peer_enabled = true;

        for (key, value) in &pairs {
            match key.as_str() {
                "net.peers" => config.net.peer_count = parse_num(key, value)?,
                "net.latency" => latency_kind = Some(value.clone()),
                "net.latency.value_ms"
                | "net.latency.mean_ms"
                | "net.latency.mu"
                | "net.latency.sigma"
                | "net.latency.samples" => {
                    latency_params.insert(key.clone(), value.clone());
                }
                "net.seed" => config.net.seed = parse_num(key, value)?,
                "net.placement" => config.placement = value.parse()?,
                "net.bytes_per_ms" => config.net.bytes_per_ms = parse_num(key, value)?,
                "net.connect_timeout_ms" => {
                    config.net.connect_timeout_ms = parse_num(key, value)?
                }
                "cache.meta.enabled" => meta_enabled = parse_bool(key, value)?,
                "cache.peer.enabled" => peer_enabled = parse_bool(key, value)?,
                "cache.capacity" => config.cache.capacity = parse_num(key, value)?,
                "cache.ttl_ms" => config.cache.ttl_ms = parse_num(key, value)?,
                "scheduler.strategy" => config.selection.strategy = value.parse()?,
                "scheduler.max_providers" => {
                    config.selection.max_providers = parse_num(key, value)?
                }
                "gpr.enabled" => config.gpr.enabled = parse_bool(key, value)?,
                "gpr.alpha_bytes" => config.gpr.alpha_bytes = parse_num(key, value)?,
                "gpr.delta_ms" => config.gpr.delta_ms = parse_num(key, value)?,
                "flatten.pool_size" => config.net.pool_size = parse_num(key, value)?,
                "chunk.size_bytes" => config.chunk_size = parse_num(key, value)?,
                "chunk.fanout" => config.fanout = parse_num(key, value)?,
                "compute.cost_ms_per_row" => {
                    config.net.compute_cost_ms_per_row = parse_num(key, value)?
                }
                "write.hash_ms_per_chunk" => {
                    config.write_costs.hash_ms_per_chunk = parse_num(key, value)?
                }
                "write.publish_ms" => config.write_costs.publish_ms = parse_num(key, value)?,
                "write.allow_oversize" => config.allow_oversize = parse_bool(key, value)?,
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }

        if let Some(kind) = latency_kind {
            config.net.latency = match kind.as_str() {
                "constant" => LatencyDistribution::constant(
                    latency_params
                        .get("net.latency.value_ms")
                        .map(|v| parse_num("net.latency.value_ms", v))
                        .transpose()?
                        .unwrap_or(50.0),
                )?,
                "exponential" => LatencyDistribution::exponential(
                    latency_params
                        .get("net.latency.mean_ms")
                        .map(|v| parse_num("net.latency.mean_ms", v))
                        .transpose()?
                        .unwrap_or(50.0),
                )?,
                "lognormal" => {
                    let mu = latency_params
                        .get("net.latency.mu")
                        .map(|v| parse_num("net.latency.mu", v))
                        .transpose()?
                        .unwrap_or(3.5);
                    let sigma = latency_params
                        .get("net.latency.sigma")
                        .map(|v| parse_num("net.latency.sigma", v))
                        .transpose()?
                        .unwrap_or(0.5);
                    LatencyDistribution::log_normal(mu, sigma)?
                }
                "empirical" => {
                    let samples = latency_params
                        .get("net.latency.samples")
                        .ok_or_else(|| {
                            Error::Config("empirical latency needs net.latency.samples".into())
                        })?
                        .split(',')
                        .map(|s| parse_num::<f64>("net.latency.samples", s.trim()))
                        .collect::<Result<Vec<_>>>()?;
                    LatencyDistribution::empirical(samples)?
                }
                other => {
                    return Err(Error::Config(format!("unknown latency kind {other:?}")))
                }
            };
        }

        config.cache_mode = match (meta_enabled, peer_enabled) {
            (true, true) => CacheMode::Both,
            (true, false) => CacheMode::ProvidersOnly,
            (false, true) => CacheMode::PeersOnly,
            (false, false) => CacheMode::Off,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(Error::Config("chunk.size_bytes must be >= 1".into()));
        }
        if self.fanout < 2 {
            return Err(Error::Config("chunk.fanout must be >= 2".into()));
        }
        if self.selection.max_providers == 0 {
            return Err(Error::Config("scheduler.max_providers must be >= 1".into()));
        }
        self.net.latency.validate()?;
        CacheConfig::new(self.cache.capacity, self.cache.ttl_ms)?;
        Ok(())
    }

    /// Overall strategy knob for the bench harness.
    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.selection.strategy = strategy;
        self
    }

    pub fn with_cache_mode(mut self, mode: CacheMode) -> Self {
        self.cache_mode = mode;
        self
    }
}

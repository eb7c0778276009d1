//! End-to-end experiment harness.
//!
//! Four experiments drive queries through the full stack and emit rows in
//! the stats CSV schema, each varying one independent variable: chunk count
//! (tree-shape comparison), cache mode, chunk size, and worker count.
//! Execution time is deterministic in virtual time for a fixed placement,
//! so repetitions re-randomize only the lookup-bound planning phase.

use std::str::FromStr;
use std::sync::Arc;

use crate::cache::{CacheMode, MinervaCache};
use crate::config::Config;
use crate::coordinator::{flatten_at, flatten_hashes};
use crate::dhtnet::{Network, PlacementPolicy};
use crate::error::{Error, Result};
use crate::executor::DataFormat;
use crate::merkle::{build_fat_tree, build_standard_tree, TreeShape};
use crate::queryfront::{parse_query, Session};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    DhtReduction,
    CacheAblation,
    ChunkSizeSweep,
    ParallelWidth,
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dht_reduction" => Ok(Experiment::DhtReduction),
            "cache_ablation" => Ok(Experiment::CacheAblation),
            "chunk_size_sweep" => Ok(Experiment::ChunkSizeSweep),
            "parallel_width" => Ok(Experiment::ParallelWidth),
            other => Err(Error::Config(format!("unknown experiment {other:?}"))),
        }
    }
}

/// One line of the stats CSV.
#[derive(Clone, Debug)]
pub struct StatsRow {
    pub experiment: String,
    pub n_chunks: usize,
    pub strategy: String,
    pub cache_mode: String,
    pub plan_ms: f64,
    pub exec_ms: f64,
    pub total_ms: f64,
    pub dht_lookups: u64,
    pub bytes_shipped: u64,
}

pub const STATS_HEADER: &str =
    "experiment,n_chunks,strategy,cache_mode,plan_ms,exec_ms,total_ms,dht_lookups,bytes_shipped";

pub fn stats_csv(rows: &[StatsRow]) -> String {
    let mut out = String::from(STATS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.3},{:.3},{:.3},{},{}\n",
            row.experiment,
            row.n_chunks,
            row.strategy,
            row.cache_mode,
            row.plan_ms,
            row.exec_ms,
            row.total_ms,
            row.dht_lookups,
            row.bytes_shipped
        ));
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub struct BenchConfig {
    /// Planning-phase repetitions per configuration point.
    pub reps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { reps: 30 }
    }
}

/// Deterministic synthetic CSV of roughly `target_bytes`.
pub fn synthetic_csv(target_bytes: usize, seed: u64) -> String {
    let mut out = String::from("id,tag,payload,v\n");
    let mut i = 0u64;
    let mut state = seed | 1;
    while out.len() < target_bytes {
        // Cheap xorshift keeps the generator self-contained.
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        out.push_str(&format!(
            "{},tag{},p{:08x},{}\n",
            i,
            i % 7,
            state & 0xffff_ffff,
            (state % 1000) as f64 / 10.0
        ));
        i += 1;
    }
    out
}

pub fn run_bench(
    experiment: Experiment,
    config: &Config,
    bench: &BenchConfig,
) -> Result<Vec<StatsRow>> {
    config.validate()?;
    match experiment {
        Experiment::DhtReduction => dht_reduction(config, bench),
        Experiment::CacheAblation => cache_ablation(config),
        Experiment::ChunkSizeSweep => chunk_size_sweep(config, bench),
        Experiment::ParallelWidth => parallel_width(config, bench),
    }
}

/// Flattening time of standard vs fat trees as the chunk count grows.
fn dht_reduction(config: &Config, bench: &BenchConfig) -> Result<Vec<StatsRow>> {
    let chunk_counts = [8usize, 32, 128, 512, 1024];
    let k = 4;
    let mut rows = Vec::new();
    for &n in &chunk_counts {
        let mut net_opts = config.net.clone();
        net_opts.peer_count = net_opts.peer_count.max(2);
        let net = Network::new(net_opts)?;
        let peers = net.peer_ids().to_vec();

        let data: Vec<u8> = (0..n * 8).map(|i| (i % 251) as u8).collect();
        let chunks = crate::chunkstore::chunk_bytes(&data, 8)?;
        let std_tree = build_standard_tree(&chunks, k)?;
        let fat_tree = build_fat_tree(&chunks, k)?;
        let placement = PlacementPolicy::All.assign(&std_tree.leaves, &peers);
        net.publish_object(&std_tree, &chunks, &placement, &peers[0], None)?;
        net.publish_object(&fat_tree, &chunks, &placement, &peers[0], None)?;

        let cache = MinervaCache::disabled();
        for (label, root) in [("standard", std_tree.root), ("fat", fat_tree.root)] {
            let mut hash_sum = 0.0;
            let mut total_sum = 0.0;
            let mut lookups = 0u64;
            for _ in 0..bench.reps.max(1) {
                let flat = flatten_at(&net, &cache, &root, net.now())?;
                hash_sum += flat.hash_elapsed;
                total_sum += flat.elapsed;
                lookups = flat.lookups;
            }
            let reps = bench.reps.max(1) as f64;
            rows.push(StatsRow {
                experiment: format!("dht_reduction:{label}"),
                n_chunks: n,
                strategy: config.selection.strategy.name().to_string(),
                cache_mode: "off".to_string(),
                plan_ms: hash_sum / reps,
                exec_ms: 0.0,
                total_ms: total_sum / reps,
                dht_lookups: lookups,
                bytes_shipped: 0,
            });
        }
    }
    Ok(rows)
}

/// Repeat-query lookup counts under the four cache modes.
fn cache_ablation(config: &Config) -> Result<Vec<StatsRow>> {
    let modes = [
        CacheMode::Off,
        CacheMode::ProvidersOnly,
        CacheMode::PeersOnly,
        CacheMode::Both,
    ];
    let mode_name = |mode: CacheMode| match mode {
        CacheMode::Off => "off",
        CacheMode::ProvidersOnly => "providers_only",
        CacheMode::PeersOnly => "peers_only",
        CacheMode::Both => "both",
    };
    let table = synthetic_csv(96 * 1024, 7);
    let mut rows = Vec::new();
    for mode in modes {
        let mut run_config = config.clone().with_cache_mode(mode);
        run_config.chunk_size = 4096;
        let net = Arc::new(Network::new(run_config.net.clone())?);
        let mut session = Session::new(net, run_config);
        let cid = session.put_bytes(table.as_bytes(), DataFormat::Csv, TreeShape::Fat)?;
        let sql = format!("select count(*) from ipfs.`/ipfs/{cid}#csv`");
        let n_chunks = {
            let ast = parse_query(&sql)?;
            session.plan_query(&ast)?.flatten.leaves.len()
        };
        for phase in ["cold", "repeat"] {
            let (_, stats) = session.run_query(&sql)?;
            rows.push(StatsRow {
                experiment: format!("cache_ablation:{phase}"),
                n_chunks,
                strategy: session.config.selection.strategy.name().to_string(),
                cache_mode: mode_name(mode).to_string(),
                plan_ms: stats.plan_ms,
                exec_ms: stats.exec_ms,
                total_ms: stats.total_ms,
                dht_lookups: stats.dht_lookups,
                bytes_shipped: stats.bytes_shipped,
            });
        }
    }
    Ok(rows)
}

/// Total query latency across chunk sizes on a fixed table. Plan time is
/// lookup-bound and re-randomized per rep; execution is deterministic for a
/// placement, so its one measurement stands for every rep.
fn chunk_size_sweep(config: &Config, bench: &BenchConfig) -> Result<Vec<StatsRow>> {
    let sizes: [usize; 8] = [
        64 << 10,
        128 << 10,
        256 << 10,
        512 << 10,
        1 << 20,
        2 << 20,
        4 << 20,
        8 << 20,
    ];
    let table = synthetic_csv(10 << 20, 11);
    let mut rows = Vec::new();
    for &chunk_size in &sizes {
        let mut run_config = config.clone().with_cache_mode(CacheMode::Off);
        run_config.chunk_size = chunk_size;
        run_config.placement = PlacementPolicy::All;
        let net = Arc::new(Network::new(run_config.net.clone())?);
        let mut session = Session::new(net, run_config);
        let cid = session.put_bytes(table.as_bytes(), DataFormat::Csv, TreeShape::Fat)?;
        let sql = format!("select count(*) from ipfs.`/ipfs/{cid}#csv`");
        let ast = parse_query(&sql)?;

        let (_, full) = session.run_query(&sql)?;
        let n_chunks = table.len().div_ceil(chunk_size);
        rows.push(StatsRow {
            experiment: "chunk_size_sweep".to_string(),
            n_chunks,
            strategy: session.config.selection.strategy.name().to_string(),
            cache_mode: "off".to_string(),
            plan_ms: full.plan_ms,
            exec_ms: full.exec_ms,
            total_ms: full.total_ms,
            dht_lookups: full.dht_lookups,
            bytes_shipped: full.bytes_shipped,
        });
        for _ in 1..bench.reps.max(1) {
            let before = session.net.lookup_count();
            let plan = session.plan_query(&ast)?;
            let lookups = session.net.lookup_count() - before;
            rows.push(StatsRow {
                experiment: "chunk_size_sweep".to_string(),
                n_chunks,
                strategy: session.config.selection.strategy.name().to_string(),
                cache_mode: "off".to_string(),
                plan_ms: plan.plan_elapsed,
                exec_ms: full.exec_ms,
                total_ms: plan.plan_elapsed + full.exec_ms,
                dht_lookups: lookups,
                bytes_shipped: full.bytes_shipped,
            });
        }
    }
    Ok(rows)
}

/// Query latency as the number of participating workers grows: execution
/// shrinks with added parallel width while planning pays for the extra
/// address resolution.
fn parallel_width(config: &Config, bench: &BenchConfig) -> Result<Vec<StatsRow>> {
    let table = synthetic_csv(4 << 20, 13);
    let mut rows = Vec::new();
    for width in 1..=8usize {
        let mut run_config = config.clone().with_cache_mode(CacheMode::Off);
        run_config.net.peer_count = 8;
        run_config.chunk_size = 64 << 10;
        let net = Arc::new(Network::new(run_config.net.clone())?);
        let mut session = Session::new(net.clone(), run_config);

        // Replicate the object over the first `width` peers only.
        let chunks = crate::chunkstore::chunk_bytes(table.as_bytes(), 64 << 10)?;
        let tree = build_fat_tree(&chunks, session.config.fanout)?;
        let workers = &net.peer_ids()[..width];
        let placement = PlacementPolicy::All.assign(&tree.leaves, workers);
        let header = table.lines().next().unwrap_or_default().to_string();
        net.publish_object(&tree, &chunks, &placement, &workers[0], Some(header))?;

        let sql = format!("select count(*) from ipfs.`/ipfs/{}#csv`", tree.root);
        let ast = parse_query(&sql)?;
        let (_, full) = session.run_query(&sql)?;
        rows.push(StatsRow {
            experiment: format!("parallel_width:w={width}"),
            n_chunks: tree.leaf_count,
            strategy: session.config.selection.strategy.name().to_string(),
            cache_mode: "off".to_string(),
            plan_ms: full.plan_ms,
            exec_ms: full.exec_ms,
            total_ms: full.total_ms,
            dht_lookups: full.dht_lookups,
            bytes_shipped: full.bytes_shipped,
        });
        for _ in 1..bench.reps.max(1) {
            let plan = session.plan_query(&ast)?;
            rows.push(StatsRow {
                experiment: format!("parallel_width:w={width}"),
                n_chunks: tree.leaf_count,
                strategy: session.config.selection.strategy.name().to_string(),
                cache_mode: "off".to_string(),
                plan_ms: plan.plan_elapsed,
                exec_ms: full.exec_ms,
                total_ms: plan.plan_elapsed + full.exec_ms,
                dht_lookups: full.dht_lookups,
                bytes_shipped: full.bytes_shipped,
            });
        }
    }
    Ok(rows)
}

/// Mean flattening times measured in simulation for both shapes; used by
/// the tree-shape experiment and its acceptance check.
pub fn measured_flatten_means(
    net: &Network,
    std_root: &crate::chunkstore::ContentId,
    fat_root: &crate::chunkstore::ContentId,
    reps: usize,
) -> Result<(f64, f64)> {
    let cache = MinervaCache::disabled();
    let mut std_sum = 0.0;
    let mut fat_sum = 0.0;
    for _ in 0..reps.max(1) {
        std_sum += flatten_hashes(net, &cache, std_root, net.now())?.elapsed;
        fat_sum += flatten_hashes(net, &cache, fat_root, net.now())?.elapsed;
    }
    Ok((std_sum / reps.max(1) as f64, fat_sum / reps.max(1) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_names_parse() {
        assert_eq!(
            "dht_reduction".parse::<Experiment>().unwrap(),
            Experiment::DhtReduction
        );
        assert!("bogus".parse::<Experiment>().is_err());
    }

    #[test]
    fn csv_schema_is_stable() {
        let rows = vec![StatsRow {
            experiment: "x".into(),
            n_chunks: 4,
            strategy: "load_balance".into(),
            cache_mode: "off".into(),
            plan_ms: 1.5,
            exec_ms: 2.5,
            total_ms: 4.0,
            dht_lookups: 9,
            bytes_shipped: 100,
        }];
        let text = stats_csv(&rows);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), STATS_HEADER);
        assert_eq!(lines.next().unwrap(), "x,4,load_balance,off,1.500,2.500,4.000,9,100");
    }

    #[test]
    fn synthetic_csv_is_deterministic_and_sized() {
        let a = synthetic_csv(10_000, 3);
        let b = synthetic_csv(10_000, 3);
        assert_eq!(a, b);
        assert!(a.len() >= 10_000);
        assert!(a.starts_with("id,tag,payload,v\n"));
    }

    #[test]
    fn cache_ablation_repeat_rows_follow_the_contract() {
        let mut config = Config::default();
        config.net.peer_count = 3;
        config.net.seed = 99;
        let rows = cache_ablation(&config).unwrap();
        assert_eq!(rows.len(), 8);
        let repeat = |mode: &str| {
            rows.iter()
                .find(|r| r.experiment == "cache_ablation:repeat" && r.cache_mode == mode)
                .unwrap()
        };
        let cold = rows
            .iter()
            .find(|r| r.experiment == "cache_ablation:cold" && r.cache_mode == "off")
            .unwrap();
        assert_eq!(repeat("both").dht_lookups, 0);
        let providers_only = repeat("providers_only").dht_lookups;
        let peers_only = repeat("peers_only").dht_lookups;
        assert!(providers_only > 0 && providers_only < cold.dht_lookups);
        assert!(peers_only > 0 && peers_only < cold.dht_lookups);
        assert_eq!(repeat("off").dht_lookups, cold.dht_lookups);
    }
}

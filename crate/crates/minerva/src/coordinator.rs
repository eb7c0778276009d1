//! MinervaCoordinator: parallel object flattening, provider selection under
//! three strategies, and greedy provider resolving (GPR).
//!
//! Flattening resolves a top id down to all leaf chunks level by level.
//! Nodes at the same tree level are looked up in parallel, so virtual time
//! composes as the makespan within a level and sums across levels; the
//! provider phase for all leaves is one more parallel round. Fat-tree middle
//! nodes declare their children to be leaves, which is exactly the round the
//! flat shape saves.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cache::{MetaEntry, MinervaCache};
use crate::chunkstore::ContentId;
use crate::dhtnet::{
    pool_makespan, Network, ObjectMeta, PeerId, ProbeOutcome, RecordKey, RecordValue, SimMs,
};
use crate::error::{Error, Result};

/// Outcome of resolving a top id to its leaf sequence and providers.
#[derive(Clone, Debug)]
pub struct FlattenResult {
    /// Leaf ids in object order (duplicate content keeps its positions).
    pub leaves: Vec<ContentId>,
    /// Sorted provider list per distinct leaf.
    pub providers: HashMap<ContentId, Vec<PeerId>>,
    /// Sequential DHT phases incurred.
    pub rounds: u32,
    /// Total dht_lookup calls.
    pub lookups: u64,
    pub elapsed: SimMs,
    pub hash_elapsed: SimMs,
    pub provider_elapsed: SimMs,
    pub root_meta: Option<ObjectMeta>,
    /// Peer hosting the top hash, learned from the root lookup.
    pub top_host: Option<PeerId>,
    pub fully_cached: bool,
}

/// Hash-resolution half of a flatten: every leaf id is known but providers
/// may still be missing for leaves that no cached sub-result covered.
#[derive(Clone, Debug)]
pub struct HashFlatten {
    pub top: ContentId,
    pub leaves: Vec<ContentId>,
    pub cached_providers: HashMap<ContentId, Vec<PeerId>>,
    pub rounds: u32,
    pub lookups: u64,
    pub elapsed: SimMs,
    pub root_meta: Option<ObjectMeta>,
    pub top_host: Option<PeerId>,
    pub fully_cached: bool,
}

enum Resolution {
    Leaf,
    Internal(Vec<ContentId>),
    CachedSub(std::sync::Arc<MetaEntry>),
}

/// Resolve the Merkle structure under `top`, consulting the metadata cache
/// for the top and for any intermediate node before spending a lookup on it.
pub fn flatten_hashes(
    net: &Network,
    cache: &MinervaCache,
    top: &ContentId,
    start: SimMs,
) -> Result<HashFlatten> {
    let mut resolved: HashMap<ContentId, Resolution> = HashMap::new();
    let mut rounds = 0u32;
    let mut lookups = 0u64;
    let mut elapsed = 0.0;
    let mut root_meta = None;
    let mut top_host = None;

    let mut frontier = vec![*top];
    while !frontier.is_empty() {
        let mut to_lookup: Vec<ContentId> = Vec::new();
        let mut seen_this_round: HashSet<ContentId> = HashSet::new();
        for cid in &frontier {
            if resolved.contains_key(cid) || !seen_this_round.insert(*cid) {
                continue;
            }
            if let Some(entry) = cache.meta_get(cid, start + elapsed) {
                if cid == top {
                    root_meta = entry.meta.clone();
                }
                resolved.insert(*cid, Resolution::CachedSub(entry));
            } else {
                to_lookup.push(*cid);
            }
        }
        if to_lookup.is_empty() {
            break;
        }
        let keys: Vec<RecordKey> = to_lookup.iter().map(|c| RecordKey::Node(*c)).collect();
        let (records, phase) = net.dht_lookup_batch(&keys);
        rounds += 1;
        lookups += keys.len() as u64;
        elapsed += phase;

        let mut next = Vec::new();
        for (cid, record) in to_lookup.iter().zip(records) {
            let record = record.ok_or(Error::FlattenFailure {
                cid: cid.to_string(),
            })?;
            match record.value {
                RecordValue::Node {
                    children,
                    leaf_children,
                    host,
                    meta,
                } => {
                    if cid == top {
                        root_meta = meta;
                        top_host = Some(host);
                    }
                    if children.is_empty() {
                        resolved.insert(*cid, Resolution::Leaf);
                    } else if leaf_children {
                        // Third-level nodes of a fat tree are leaves by
                        // protocol: no identity lookup is charged for them.
                        for child in &children {
                            resolved.entry(*child).or_insert(Resolution::Leaf);
                        }
                        resolved.insert(*cid, Resolution::Internal(children));
                    } else {
                        next.extend(children.iter().cloned());
                        resolved.insert(*cid, Resolution::Internal(children));
                    }
                }
                _ => {
                    return Err(Error::FlattenFailure {
                        cid: cid.to_string(),
                    })
                }
            }
        }
        frontier = next;
    }

    // Reassemble the leaf sequence in object order: depth-first walk with
    // children pushed in reverse.
    let mut leaves = Vec::new();
    let mut cached_providers: HashMap<ContentId, Vec<PeerId>> = HashMap::new();
    let mut stack = vec![*top];
    while let Some(cid) = stack.pop() {
        match resolved.get(&cid) {
            Some(Resolution::Leaf) => leaves.push(cid),
            Some(Resolution::CachedSub(entry)) => {
                leaves.extend(entry.leaves.iter().cloned());
                for (leaf, providers) in &entry.providers {
                    cached_providers.insert(*leaf, providers.clone());
                }
            }
            Some(Resolution::Internal(children)) => {
                for child in children.iter().rev() {
                    stack.push(*child);
                }
            }
            None => {
                return Err(Error::FlattenFailure {
                    cid: cid.to_string(),
                })
            }
        }
    }

    let fully_cached = lookups == 0;
    Ok(HashFlatten {
        top: *top,
        leaves,
        cached_providers,
        rounds,
        lookups,
        elapsed,
        root_meta,
        top_host,
        fully_cached,
    })
}

/// Provider phase: one parallel round of provider lookups for every distinct
/// leaf the cache did not already cover.
pub fn resolve_providers(
    net: &Network,
    flat: &HashFlatten,
) -> Result<(HashMap<ContentId, Vec<PeerId>>, SimMs, u64, u32)> {
    let mut providers = flat.cached_providers.clone();
    let mut missing: Vec<ContentId> = Vec::new();
    let mut seen = HashSet::new();
    for leaf in &flat.leaves {
        if seen.insert(*leaf) && !providers.contains_key(leaf) {
            missing.push(*leaf);
        }
    }
    if missing.is_empty() {
        return Ok((providers, 0.0, 0, 0));
    }
    let keys: Vec<RecordKey> = missing.iter().map(|c| RecordKey::Providers(*c)).collect();
    let (records, elapsed) = net.dht_lookup_batch(&keys);
    for (cid, record) in missing.iter().zip(records) {
        match record.map(|r| r.value) {
            Some(RecordValue::Providers(list)) if !list.is_empty() => {
                providers.insert(*cid, list);
            }
            _ => {
                return Err(Error::FlattenFailure {
                    cid: cid.to_string(),
                })
            }
        }
    }
    Ok((providers, elapsed, missing.len() as u64, 1))
}

fn meta_entry(
    leaves: &[ContentId],
    providers: &HashMap<ContentId, Vec<PeerId>>,
    meta: Option<ObjectMeta>,
) -> MetaEntry {
    MetaEntry {
        leaves: leaves.to_vec(),
        providers: providers.clone(),
        meta,
    }
}

/// Full flatten: hash resolution plus the provider round, with the complete
/// mapping written back to the metadata cache.
pub fn flatten(net: &Network, cache: &MinervaCache, top: &ContentId) -> Result<FlattenResult> {
    flatten_at(net, cache, top, net.now())
}

pub fn flatten_at(
    net: &Network,
    cache: &MinervaCache,
    top: &ContentId,
    start: SimMs,
) -> Result<FlattenResult> {
    let hash = flatten_hashes(net, cache, top, start)?;
    let (providers, provider_elapsed, provider_lookups, provider_rounds) =
        resolve_providers(net, &hash)?;
    let fully_cached = hash.fully_cached && provider_lookups == 0;
    if !fully_cached {
        cache.meta_put(
            *top,
            meta_entry(&hash.leaves, &providers, hash.root_meta.clone()),
            start + hash.elapsed + provider_elapsed,
        );
    }
    Ok(FlattenResult {
        leaves: hash.leaves,
        providers,
        rounds: hash.rounds + provider_rounds,
        lookups: hash.lookups + provider_lookups,
        elapsed: hash.elapsed + provider_elapsed,
        hash_elapsed: hash.elapsed,
        provider_elapsed,
        root_meta: hash.root_meta,
        top_host: hash.top_host,
        fully_cached,
    })
}

/// Provider-selection strategy of the scheduler.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Random,
    LoadBalance,
    ResponsePriority,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::LoadBalance => "load_balance",
            Strategy::ResponsePriority => "response_priority",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "load_balance" => Ok(Strategy::LoadBalance),
            "response_priority" => Ok(Strategy::ResponsePriority),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Chosen provider per leaf plus the scheduler's workload bookkeeping.
#[derive(Clone, Debug)]
pub struct Assignment {
    pub chosen: BTreeMap<ContentId, PeerId>,
    pub workload: BTreeMap<PeerId, u64>,
    pub strategy: Strategy,
    pub max_providers: usize,
    /// Probe-phase cost (zero for the computation-only strategies).
    pub elapsed: SimMs,
}

#[derive(Clone, Copy, Debug)]
pub struct SelectionParams {
    pub strategy: Strategy,
    pub max_providers: usize,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams {
            strategy: Strategy::LoadBalance,
            max_providers: 3,
        }
    }
}

/// Uniform choice over the candidate list.
pub fn strategy_random(candidates: &[PeerId], rng: &mut ChaCha8Rng) -> Result<PeerId> {
    match candidates {
        [] => Err(Error::SchedulingFailure("empty provider list".into())),
        [only] => Ok(only.clone()),
        _ => Ok(candidates[rng.gen_range(0..candidates.len())].clone()),
    }
}

/// Greedy argmin over the shared workload map; absent peers count as zero,
/// ties break on the lowest peer id. The winner's load is bumped.
pub fn strategy_load_balance(
    candidates: &[PeerId],
    workload: &mut BTreeMap<PeerId, u64>,
) -> Result<PeerId> {
    let chosen = candidates
        .iter()
        .min_by_key(|p| (workload.get(*p).copied().unwrap_or(0), (*p).clone()))
        .cloned()
        .ok_or_else(|| Error::SchedulingFailure("empty provider list".into()))?;
    *workload.entry(chosen.clone()).or_insert(0) += 1;
    Ok(chosen)
}

/// Probe every candidate in parallel and pick the earliest responder. The
/// local node answers instantly and always wins; equal response times break
/// on the lowest peer id.
pub fn strategy_response_priority(
    candidates: &[PeerId],
    net: &Network,
    local: Option<&PeerId>,
) -> Result<(PeerId, SimMs)> {
    if candidates.is_empty() {
        return Err(Error::SchedulingFailure("empty provider list".into()));
    }
    if let Some(local) = local {
        if candidates.contains(local) {
            return Ok((local.clone(), 0.0));
        }
    }
    let mut best: Option<(SimMs, PeerId)> = None;
    let mut any_response = false;
    for candidate in candidates {
        match net.connect_probe(candidate) {
            ProbeOutcome::Responded(t) => {
                any_response = true;
                let key = (t, candidate.clone());
                if best.as_ref().map_or(true, |b| key < *b) {
                    best = Some(key);
                }
            }
            ProbeOutcome::TimedOut(_) => {}
        }
    }
    if !any_response {
        return Err(Error::SchedulingFailure(format!(
            "no provider among {} candidates responded",
            candidates.len()
        )));
    }
    let (t, peer) = best.unwrap();
    Ok((peer, t))
}

/// Run the configured strategy over every leaf. Selection over leaves
/// proceeds in parallel in the shared pool, so the probe phase composes as
/// a makespan over the per-leaf response times.
pub fn select_providers(
    net: &Network,
    flat: &FlattenResult,
    params: SelectionParams,
    foreman: Option<&PeerId>,
) -> Result<Assignment> {
    let mut chosen: BTreeMap<ContentId, PeerId> = BTreeMap::new();
    let mut workload: BTreeMap<PeerId, u64> = BTreeMap::new();
    let mut probe_times: Vec<SimMs> = Vec::new();

    let mut position_count: HashMap<ContentId, u64> = HashMap::new();
    let mut distinct: Vec<ContentId> = Vec::new();
    for leaf in &flat.leaves {
        let count = position_count.entry(*leaf).or_insert(0);
        if *count == 0 {
            distinct.push(*leaf);
        }
        *count += 1;
    }

    for leaf in &distinct {
        let all = flat
            .providers
            .get(leaf)
            .filter(|list| !list.is_empty())
            .ok_or_else(|| Error::SchedulingFailure(format!("leaf {leaf} has no providers")))?;
        let candidates = &all[..all.len().min(params.max_providers.max(1))];
        let positions = position_count[leaf];
        let peer = match params.strategy {
            Strategy::Random => net.with_rng(|rng| strategy_random(candidates, rng))?,
            Strategy::LoadBalance => {
                let peer = strategy_load_balance(candidates, &mut workload)?;
                // strategy_load_balance bumped by one; account the remaining
                // positions of a duplicated chunk.
                *workload.get_mut(&peer).unwrap() += positions - 1;
                peer
            }
            Strategy::ResponsePriority => {
                let (peer, t) = strategy_response_priority(candidates, net, foreman)?;
                probe_times.push(t);
                peer
            }
        };
        if params.strategy != Strategy::LoadBalance {
            *workload.entry(peer.clone()).or_insert(0) += positions;
        }
        chosen.insert(*leaf, peer);
    }

    Ok(Assignment {
        chosen,
        workload,
        strategy: params.strategy,
        max_providers: params.max_providers,
        elapsed: pool_makespan(&probe_times, net.pool_size),
    })
}

/// Greedy provider resolving thresholds: objects of at most `alpha_bytes`
/// are assumed to live wholly on the top-hash host; `delta_ms` is the cost
/// of the host reporting that assumption wrong.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GprConfig {
    pub enabled: bool,
    pub alpha_bytes: u64,
    pub delta_ms: SimMs,
}

impl Default for GprConfig {
    fn default() -> Self {
        GprConfig {
            enabled: false,
            alpha_bytes: 4 << 20,
            delta_ms: 150.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GprResolution {
    pub assignment: Assignment,
    pub providers: HashMap<ContentId, Vec<PeerId>>,
    /// Extra virtual time beyond hash flattening: zero on a central-store
    /// hit, `delta + provider phase + probe phase` on a fallback.
    pub elapsed: SimMs,
    pub provider_rounds: u32,
    pub provider_lookups: u64,
    pub central_hit: bool,
}

/// Whether GPR applies: enabled, object size known from the root record and
/// at most alpha, and providers not already free from the cache.
pub fn gpr_applicable(cfg: &GprConfig, flat: &HashFlatten) -> bool {
    cfg.enabled
        && !flat.fully_cached
        && flat.top_host.is_some()
        && flat
            .root_meta
            .as_ref()
            .map_or(false, |m| m.total_size <= cfg.alpha_bytes)
}

/// Assign every leaf to the top-hash host, skipping all provider lookups.
/// If the host lacks any chunk it returns a control error after `delta_ms`
/// and the coordinator falls back to full provider resolution and normal
/// scheduling.
pub fn gpr_resolve(
    net: &Network,
    cache: &MinervaCache,
    cfg: &GprConfig,
    flat: &HashFlatten,
    params: SelectionParams,
    foreman: Option<&PeerId>,
    start: SimMs,
) -> Result<GprResolution> {
    let host = flat
        .top_host
        .clone()
        .ok_or_else(|| Error::SchedulingFailure("top-hash host unknown".into()))?;
    let host_peer = net.peer(&host)?;
    let has_all = {
        let store = host_peer.store.read().unwrap();
        flat.leaves.iter().all(|leaf| store.contains(leaf))
    };
    if has_all {
        let mut chosen = BTreeMap::new();
        let mut workload: BTreeMap<PeerId, u64> = BTreeMap::new();
        for leaf in &flat.leaves {
            chosen.insert(*leaf, host.clone());
            *workload.entry(host.clone()).or_insert(0) += 1;
        }
        return Ok(GprResolution {
            assignment: Assignment {
                chosen,
                workload,
                strategy: params.strategy,
                max_providers: params.max_providers,
                elapsed: 0.0,
            },
            providers: flat
                .leaves
                .iter()
                .map(|leaf| (*leaf, vec![host.clone()]))
                .collect(),
            elapsed: 0.0,
            provider_rounds: 0,
            provider_lookups: 0,
            central_hit: true,
        });
    }

    // The host discovered a missing chunk and returned a control error
    // after delta; resolve providers for real and reschedule.
    let (providers, provider_elapsed, provider_lookups, provider_rounds) =
        resolve_providers(net, flat)?;
    cache.meta_put(
        flat.top,
        meta_entry(&flat.leaves, &providers, flat.root_meta.clone()),
        start + flat.elapsed + cfg.delta_ms + provider_elapsed,
    );
    let full = FlattenResult {
        leaves: flat.leaves.clone(),
        providers: providers.clone(),
        rounds: flat.rounds + provider_rounds,
        lookups: flat.lookups + provider_lookups,
        elapsed: flat.elapsed + provider_elapsed,
        hash_elapsed: flat.elapsed,
        provider_elapsed,
        root_meta: flat.root_meta.clone(),
        top_host: flat.top_host.clone(),
        fully_cached: false,
    };
    let assignment = select_providers(net, &full, params, foreman)?;
    let elapsed = cfg.delta_ms + provider_elapsed + assignment.elapsed;
    Ok(GprResolution {
        assignment,
        providers,
        elapsed,
        provider_rounds,
        provider_lookups,
        central_hit: false,
    })
}

/// Wall-clock flatten: the same traversal driven by real threads with
/// injected sleeps instead of virtual-time composition. Lookup counts and
/// the leaf sequence match the virtual mode; `time_scale` compresses the
/// sampled milliseconds so tests stay fast.
pub fn flatten_hashes_wallclock(
    net: &Network,
    top: &ContentId,
    time_scale: f64,
) -> Result<HashFlatten> {
    let started = std::time::Instant::now();
    let mut resolved: HashMap<ContentId, Resolution> = HashMap::new();
    let mut lookups = 0u64;
    let mut rounds = 0u32;
    let mut root_meta = None;
    let mut top_host = None;

    let mut frontier = vec![*top];
    while !frontier.is_empty() {
        let mut to_lookup = Vec::new();
        let mut seen = HashSet::new();
        for cid in &frontier {
            if !resolved.contains_key(cid) && seen.insert(*cid) {
                to_lookup.push(*cid);
            }
        }
        if to_lookup.is_empty() {
            break;
        }
        rounds += 1;
        lookups += to_lookup.len() as u64;
        let outcomes: Vec<(ContentId, Option<RecordValue>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = to_lookup
                .iter()
                .map(|cid| {
                    let key = RecordKey::Node(*cid);
                    scope.spawn(move || {
                        let (record, sampled) = net.dht_lookup(&key);
                        std::thread::sleep(std::time::Duration::from_secs_f64(
                            sampled * time_scale / 1000.0,
                        ));
                        record.map(|r| r.value)
                    })
                })
                .collect();
            to_lookup
                .iter()
                .zip(handles)
                .map(|(cid, handle)| (*cid, handle.join().expect("lookup thread panicked")))
                .collect()
        });

        let mut next = Vec::new();
        for (cid, value) in outcomes {
            match value {
                Some(RecordValue::Node {
                    children,
                    leaf_children,
                    host,
                    meta,
                }) => {
                    if cid == *top {
                        root_meta = meta;
                        top_host = Some(host);
                    }
                    if children.is_empty() {
                        resolved.insert(cid, Resolution::Leaf);
                    } else if leaf_children {
                        for child in &children {
                            resolved.entry(*child).or_insert(Resolution::Leaf);
                        }
                        resolved.insert(cid, Resolution::Internal(children));
                    } else {
                        next.extend(children.iter().cloned());
                        resolved.insert(cid, Resolution::Internal(children));
                    }
                }
                _ => {
                    return Err(Error::FlattenFailure {
                        cid: cid.to_string(),
                    })
                }
            }
        }
        frontier = next;
    }

    let mut leaves = Vec::new();
    let mut stack = vec![*top];
    while let Some(cid) = stack.pop() {
        match resolved.get(&cid) {
            Some(Resolution::Leaf) => leaves.push(cid),
            Some(Resolution::Internal(children)) => {
                for child in children.iter().rev() {
                    stack.push(*child);
                }
            }
            _ => {
                return Err(Error::FlattenFailure {
                    cid: cid.to_string(),
                })
            }
        }
    }

    Ok(HashFlatten {
        top: *top,
        leaves,
        cached_providers: HashMap::new(),
        rounds,
        lookups,
        elapsed: started.elapsed().as_secs_f64() * 1000.0,
        root_meta,
        top_host,
        fully_cached: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::{CacheConfig, CacheMode};
    use crate::chunkstore::chunk_bytes;
    use crate::dhtnet::{LatencyDistribution, NetworkOptions, PlacementPolicy};
    use crate::merkle::{build_fat_tree, build_standard_tree, MerkleTree, TreeShape};
    use rand::SeedableRng;

    fn constant_net(peer_count: usize, c: f64, seed: u64) -> Network {
        Network::new(NetworkOptions {
            peer_count,
            latency: LatencyDistribution::constant(c).unwrap(),
            seed,
            ..NetworkOptions::default()
        })
        .unwrap()
    }

    fn publish(net: &Network, shape: TreeShape, n: usize, k: usize) -> MerkleTree {
        let data: Vec<u8> = (0..n * 4).map(|i| i as u8).collect();
        let chunks = chunk_bytes(&data, 4).unwrap();
        let tree = match shape {
            TreeShape::Standard => build_standard_tree(&chunks, k).unwrap(),
            TreeShape::Fat => build_fat_tree(&chunks, k).unwrap(),
        };
        let peers = net.peer_ids().to_vec();
        let placement = PlacementPolicy::All.assign(&tree.leaves, &peers);
        net.publish_object(&tree, &chunks, &placement, &peers[0], None)
            .unwrap();
        tree
    }

    #[test]
    fn standard_flatten_constant_latency_closed_form() {
        let net = constant_net(3, 10.0, 1);
        let tree = publish(&net, TreeShape::Standard, 16, 2);
        assert_eq!(tree.height, 5);
        let cache = MinervaCache::disabled();
        let flat = flatten(&net, &cache, &tree.root).unwrap();
        assert_eq!(flat.hash_elapsed, 5.0 * 10.0);
        assert_eq!(flat.elapsed, 6.0 * 10.0);
        assert_eq!(flat.rounds, 6);
        // 1 + 2 + 4 + 8 + 16 node lookups, then 16 provider lookups.
        assert_eq!(flat.lookups, 31 + 16);
        assert_eq!(flat.leaves, tree.leaves);
    }

    #[test]
    fn fat_flatten_constant_latency_closed_form() {
        let net = constant_net(3, 7.0, 2);
        let tree = publish(&net, TreeShape::Fat, 20, 4);
        let cache = MinervaCache::disabled();
        let flat = flatten(&net, &cache, &tree.root).unwrap();
        assert_eq!(flat.hash_elapsed, 2.0 * 7.0);
        assert_eq!(flat.elapsed, 3.0 * 7.0);
        assert_eq!(flat.rounds, 3);
        assert_eq!(flat.lookups, (1 + 5 + 20) as u64);
        assert_eq!(flat.leaves, tree.leaves);
    }

    #[test]
    fn two_level_fat_flatten_is_single_phase() {
        let net = constant_net(3, 7.0, 3);
        let tree = publish(&net, TreeShape::Fat, 3, 4);
        let cache = MinervaCache::disabled();
        let flat = flatten(&net, &cache, &tree.root).unwrap();
        assert_eq!(flat.hash_elapsed, 7.0);
        assert_eq!(flat.rounds, 2);
    }

    #[test]
    fn fully_cached_flatten_is_free() {
        let net = constant_net(3, 10.0, 4);
        let tree = publish(&net, TreeShape::Standard, 8, 2);
        let cache = MinervaCache::new(CacheMode::Both, CacheConfig::default());
        let cold = flatten(&net, &cache, &tree.root).unwrap();
        assert!(cold.lookups > 0);
        let warm = flatten(&net, &cache, &tree.root).unwrap();
        assert_eq!(warm.lookups, 0);
        assert_eq!(warm.elapsed, 0.0);
        assert_eq!(warm.rounds, 0);
        assert!(warm.fully_cached);
        assert_eq!(warm.leaves, cold.leaves);
        assert_eq!(warm.providers, cold.providers);
    }

    #[test]
    fn unpublished_cid_fails_after_costing_time() {
        let net = constant_net(2, 5.0, 5);
        let cache = MinervaCache::disabled();
        let missing = ContentId::of_bytes(b"never published");
        let before = net.lookup_count();
        let err = flatten(&net, &cache, &missing).unwrap_err();
        assert!(matches!(err, Error::FlattenFailure { .. }));
        assert_eq!(net.lookup_count(), before + 1);
    }

    #[test]
    fn random_strategy_single_candidate_and_determinism() {
        let a = PeerId::from_index(1);
        let b = PeerId::from_index(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(strategy_random(&[a.clone()], &mut rng).unwrap(), a);
        let mut r1 = ChaCha8Rng::seed_from_u64(10);
        let mut r2 = ChaCha8Rng::seed_from_u64(10);
        let list = [a, b];
        assert_eq!(
            strategy_random(&list, &mut r1).unwrap(),
            strategy_random(&list, &mut r2).unwrap()
        );
    }

    #[test]
    fn load_balance_argmin_and_ties() {
        let a = PeerId::from_text("aaaa");
        let b = PeerId::from_text("bbbb");
        let c = PeerId::from_text("cccc");
        let mut w = BTreeMap::from([(a.clone(), 2u64), (b.clone(), 0), (c.clone(), 1)]);
        let pick = strategy_load_balance(&[a.clone(), b.clone(), c.clone()], &mut w).unwrap();
        assert_eq!(pick, b);
        assert_eq!(w[&b], 1);

        let mut tied = BTreeMap::from([(a.clone(), 1u64), (b.clone(), 1)]);
        assert_eq!(
            strategy_load_balance(&[b.clone(), a.clone()], &mut tied).unwrap(),
            a,
            "tie breaks on lowest peer id"
        );
    }

    #[test]
    fn load_balance_nine_leaves_three_candidates() {
        let peers: Vec<PeerId> = (0..3).map(|i| PeerId::from_text(format!("p{i}"))).collect();
        let mut w = BTreeMap::new();
        for _ in 0..9 {
            strategy_load_balance(&peers, &mut w).unwrap();
        }
        assert!(w.values().all(|&count| count == 3), "workload {w:?}");
    }

    #[test]
    fn response_priority_prefers_local_then_earliest() {
        let net = constant_net(3, 5.0, 11);
        let ids = net.peer_ids().to_vec();
        let (pick, t) = strategy_response_priority(&ids, &net, Some(&ids[2])).unwrap();
        assert_eq!(pick, ids[2]);
        assert_eq!(t, 0.0);

        // Constant latency: every probe responds at the same instant, so the
        // lowest peer id wins.
        let mut sorted = ids.clone();
        sorted.sort();
        let (pick, t) = strategy_response_priority(&ids, &net, None).unwrap();
        assert_eq!(pick, sorted[0]);
        assert_eq!(t, 5.0);
    }

    #[test]
    fn response_priority_all_offline_is_scheduling_failure() {
        let net = constant_net(2, 5.0, 12);
        let ids = net.peer_ids().to_vec();
        for id in &ids {
            net.set_online(id, false).unwrap();
        }
        assert!(matches!(
            strategy_response_priority(&ids, &net, None),
            Err(Error::SchedulingFailure(_))
        ));
    }

    #[test]
    fn select_load_balance_is_even_under_universal_availability() {
        let net = constant_net(3, 1.0, 13);
        let tree = publish(&net, TreeShape::Fat, 6, 3);
        let cache = MinervaCache::disabled();
        let flat = flatten(&net, &cache, &tree.root).unwrap();
        let assignment = select_providers(
            &net,
            &flat,
            SelectionParams {
                strategy: Strategy::LoadBalance,
                max_providers: 3,
            },
            None,
        )
        .unwrap();
        let counts: Vec<u64> = assignment.workload.values().cloned().collect();
        assert_eq!(counts, vec![2, 2, 2]);
        for (leaf, peer) in &assignment.chosen {
            assert!(flat.providers[leaf].contains(peer));
        }
    }

    #[test]
    fn select_random_shares_are_concentrated() {
        let net = constant_net(3, 1.0, 14);
        let data: Vec<u8> = (0..1000u32).flat_map(|i| i.to_le_bytes()).collect();
        let chunks = chunk_bytes(&data, 4).unwrap();
        assert_eq!(chunks.len(), 1000);
        let tree = build_fat_tree(&chunks, 16).unwrap();
        let peers = net.peer_ids().to_vec();
        let placement = PlacementPolicy::All.assign(&tree.leaves, &peers);
        net.publish_object(&tree, &chunks, &placement, &peers[0], None)
            .unwrap();
        let cache = MinervaCache::disabled();
        let flat = flatten(&net, &cache, &tree.root).unwrap();
        let assignment = select_providers(
            &net,
            &flat,
            SelectionParams {
                strategy: Strategy::Random,
                max_providers: 3,
            },
            None,
        )
        .unwrap();
        // Binomial(1000, 1/3) concentration band.
        for (_, count) in &assignment.workload {
            assert!(
                (233..=433).contains(count),
                "provider share {count} outside binomial band"
            );
        }
    }

    #[test]
    fn gpr_central_hit_skips_provider_phase() {
        let net = constant_net(3, 10.0, 15);
        let data = vec![1u8; 2 << 20];
        let chunks = chunk_bytes(&data, 1 << 20).unwrap();
        let tree = build_fat_tree(&chunks, 16).unwrap();
        let peers = net.peer_ids().to_vec();
        let placement = PlacementPolicy::Single.assign(&tree.leaves, &peers);
        net.publish_object(&tree, &chunks, &placement, &peers[0], None)
            .unwrap();

        let cache = MinervaCache::disabled();
        let hash = flatten_hashes(&net, &cache, &tree.root, 0.0).unwrap();
        let cfg = GprConfig {
            enabled: true,
            alpha_bytes: 4 << 20,
            delta_ms: 150.0,
        };
        assert!(gpr_applicable(&cfg, &hash));
        let before = net.lookup_count();
        let res = gpr_resolve(
            &net,
            &cache,
            &cfg,
            &hash,
            SelectionParams::default(),
            None,
            0.0,
        )
        .unwrap();
        assert!(res.central_hit);
        assert_eq!(res.provider_rounds, 0);
        assert_eq!(res.elapsed, 0.0);
        assert_eq!(net.lookup_count(), before);
        assert!(res.assignment.chosen.values().all(|p| *p == peers[0]));
    }

    #[test]
    fn gpr_miss_costs_delta_plus_one_provider_phase() {
        let net = constant_net(3, 10.0, 16);
        let data: Vec<u8> = (0..2 << 20).map(|i| (i % 251) as u8).collect();
        let chunks = chunk_bytes(&data, 1 << 20).unwrap();
        let tree = build_fat_tree(&chunks, 16).unwrap();
        let peers = net.peer_ids().to_vec();
        // Host misses the second chunk.
        let mut placement = PlacementPolicy::Single.assign(&tree.leaves, &peers);
        placement.insert(
            tree.leaves[1],
            std::collections::BTreeSet::from([peers[1].clone()]),
        );
        net.publish_object(&tree, &chunks, &placement, &peers[0], None)
            .unwrap();

        let cache = MinervaCache::disabled();
        let hash = flatten_hashes(&net, &cache, &tree.root, 0.0).unwrap();
        let cfg = GprConfig {
            enabled: true,
            alpha_bytes: 4 << 20,
            delta_ms: 150.0,
        };
        let res = gpr_resolve(
            &net,
            &cache,
            &cfg,
            &hash,
            SelectionParams::default(),
            None,
            0.0,
        )
        .unwrap();
        assert!(!res.central_hit);
        assert_eq!(res.provider_rounds, 1);
        // delta + one parallel provider phase under constant latency.
        assert_eq!(res.elapsed, 150.0 + 10.0);
        assert_eq!(res.providers.len(), 2);
    }

    #[test]
    fn gpr_bypassed_above_alpha() {
        let net = constant_net(3, 10.0, 17);
        let data = vec![3u8; 2 << 20];
        let chunks = chunk_bytes(&data, 1 << 20).unwrap();
        let tree = build_fat_tree(&chunks, 16).unwrap();
        let peers = net.peer_ids().to_vec();
        let placement = PlacementPolicy::Single.assign(&tree.leaves, &peers);
        net.publish_object(&tree, &chunks, &placement, &peers[0], None)
            .unwrap();
        let cache = MinervaCache::disabled();
        let hash = flatten_hashes(&net, &cache, &tree.root, 0.0).unwrap();
        let cfg = GprConfig {
            enabled: true,
            alpha_bytes: 1 << 20,
            delta_ms: 150.0,
        };
        assert!(!gpr_applicable(&cfg, &hash));
    }

    #[test]
    fn wallclock_flatten_matches_virtual_observables() {
        let net = constant_net(3, 3.0, 18);
        let tree = publish(&net, TreeShape::Standard, 8, 2);
        let cache = MinervaCache::disabled();
        let virtual_flat = flatten_hashes(&net, &cache, &tree.root, 0.0).unwrap();
        let wall = flatten_hashes_wallclock(&net, &tree.root, 0.01).unwrap();
        assert_eq!(wall.leaves, virtual_flat.leaves);
        assert_eq!(wall.lookups, virtual_flat.lookups);
        assert_eq!(wall.rounds, virtual_flat.rounds);
    }
}

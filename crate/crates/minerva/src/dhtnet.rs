//! Simulated peer-to-peer network with a DHT whose every lookup costs an
//! iid latency sample.
//!
//! The DHT is a global record table; Kademlia hop-by-hop routing is not
//! simulated. Each lookup draws one latency sample from the network's
//! distribution, which is all the delay model downstream code relies on.
//! Virtual time is the default execution mode: parallel lookups compose by
//! max (or by list-scheduling makespan under a bounded pool) and sequential
//! phases by sum, so a fixed seed fixes every sample and the final clock
//! bit-exactly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chunkstore::{BlockStore, Chunk, ContentId};
use crate::error::{Error, Result};
use crate::merkle::{MerkleTree, TreeShape};

/// Simulated time in milliseconds.
pub type SimMs = f64;

/// Peer identifier in textual hash form.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PeerId(String);

impl PeerId {
    pub fn from_index(index: usize) -> Self {
        let digest = Sha256::digest(format!("minerva-peer-{index}").as_bytes());
        PeerId(hex::encode(&digest[..8]))
    }

    pub fn from_text(text: impl Into<String>) -> Self {
        PeerId(text.into())
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "peer:{}", &self.0[..self.0.len().min(8)])
    }
}

/// Per-lookup delay law. Samples are nonnegative and iid given the seeded
/// RNG stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LatencyDistribution {
    Constant { value_ms: f64 },
    Exponential { mean_ms: f64 },
    LogNormal { mu: f64, sigma: f64 },
    Empirical { samples: Vec<f64> },
}

impl LatencyDistribution {
    pub fn constant(value_ms: f64) -> Result<Self> {
        let dist = LatencyDistribution::Constant { value_ms };
        dist.validate()?;
        Ok(dist)
    }

    pub fn exponential(mean_ms: f64) -> Result<Self> {
        let dist = LatencyDistribution::Exponential { mean_ms };
        dist.validate()?;
        Ok(dist)
    }

    pub fn log_normal(mu: f64, sigma: f64) -> Result<Self> {
        let dist = LatencyDistribution::LogNormal { mu, sigma };
        dist.validate()?;
        Ok(dist)
    }

    pub fn empirical(samples: Vec<f64>) -> Result<Self> {
        let dist = LatencyDistribution::Empirical { samples };
        dist.validate()?;
        Ok(dist)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LatencyDistribution::Constant { value_ms } => {
                if !value_ms.is_finite() || *value_ms < 0.0 {
                    return Err(Error::invalid("constant latency must be >= 0"));
                }
            }
            LatencyDistribution::Exponential { mean_ms } => {
                if !mean_ms.is_finite() || *mean_ms <= 0.0 {
                    return Err(Error::invalid("exponential mean must be > 0"));
                }
            }
            LatencyDistribution::LogNormal { mu, sigma } => {
                if !mu.is_finite() || !sigma.is_finite() || *sigma <= 0.0 {
                    return Err(Error::invalid("lognormal sigma must be > 0"));
                }
            }
            LatencyDistribution::Empirical { samples } => {
                if samples.is_empty() {
                    return Err(Error::invalid("empirical distribution needs samples"));
                }
                if samples.iter().any(|s| !s.is_finite() || *s < 0.0) {
                    return Err(Error::invalid("empirical samples must be >= 0"));
                }
            }
        }
        Ok(())
    }

    /// Draw one lookup-delay sample. Deterministic given the RNG state.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> SimMs {
        match self {
            LatencyDistribution::Constant { value_ms } => *value_ms,
            LatencyDistribution::Exponential { mean_ms } => {
                rand_distr::Exp::new(1.0 / mean_ms).unwrap().sample(rng)
            }
            LatencyDistribution::LogNormal { mu, sigma } => {
                rand_distr::LogNormal::new(*mu, *sigma).unwrap().sample(rng)
            }
            LatencyDistribution::Empirical { samples } => {
                samples[rng.gen_range(0..samples.len())]
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            LatencyDistribution::Constant { value_ms } => *value_ms,
            LatencyDistribution::Exponential { mean_ms } => *mean_ms,
            LatencyDistribution::LogNormal { mu, sigma } => (mu + sigma * sigma / 2.0).exp(),
            LatencyDistribution::Empirical { samples } => {
                samples.iter().sum::<f64>() / samples.len() as f64
            }
        }
    }

    pub fn std_dev(&self) -> f64 {
        match self {
            LatencyDistribution::Constant { .. } => 0.0,
            LatencyDistribution::Exponential { mean_ms } => *mean_ms,
            LatencyDistribution::LogNormal { mu, sigma } => {
                let s2 = sigma * sigma;
                ((s2.exp() - 1.0) * (2.0 * mu + s2).exp()).sqrt()
            }
            LatencyDistribution::Empirical { samples } => {
                let mean = self.mean();
                let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
                    / samples.len() as f64;
                var.sqrt()
            }
        }
    }
}

impl FromStr for LatencyDistribution {
    type Err = Error;

    /// Compact form: `constant:10`, `exponential:50`, `lognormal:3.5,0.5`,
    /// `empirical:10,20,35`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let nums: Vec<f64> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|a| {
                    a.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad latency parameter {a:?}")))
                })
                .collect::<Result<_>>()?
        };
        match (kind, nums.as_slice()) {
            ("constant", [v]) => LatencyDistribution::constant(*v),
            ("exponential", [m]) => LatencyDistribution::exponential(*m),
            ("lognormal", [mu, sigma]) => LatencyDistribution::log_normal(*mu, *sigma),
            ("empirical", samples) if !samples.is_empty() => {
                LatencyDistribution::empirical(samples.to_vec())
            }
            _ => Err(Error::Config(format!("unrecognized latency spec {s:?}"))),
        }
    }
}

/// Object-level metadata carried on a root node record so a planner learns
/// it from the first lookup at no extra cost.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectMeta {
    pub total_size: u64,
    /// Header line for CSV objects; workers receive the schema through the
    /// plan instead of refetching chunk zero.
    pub csv_header: Option<String>,
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub enum RecordKey {
    /// Merkle node structure: cid -> ordered child cids.
    Node(ContentId),
    /// Provider record: cid -> peers advertising the chunk.
    Providers(ContentId),
    /// Peer-address record: peer id -> network address.
    PeerAddr(PeerId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RecordValue {
    Node {
        children: Vec<ContentId>,
        /// True when the protocol guarantees every child is a leaf (fat-tree
        /// middle nodes and two-level fat roots), so the reader can skip the
        /// per-child identity lookups.
        leaf_children: bool,
        /// Peer hosting this tree node (the object's publisher).
        host: PeerId,
        meta: Option<ObjectMeta>,
    },
    Providers(Vec<PeerId>),
    Address(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DhtRecord {
    pub key: RecordKey,
    pub value: RecordValue,
}

/// A simulated peer: block store, executor capability, compute speed.
#[derive(Debug)]
pub struct Peer {
    pub peer_id: PeerId,
    pub address: String,
    /// Peers without executor support can only serve raw chunk bytes.
    pub has_executor: bool,
    pub store: RwLock<BlockStore>,
    /// Per-record processing time, sim ms per row.
    pub compute_cost_ms_per_row: f64,
    online: AtomicBool,
}

impl Peer {
    pub fn is_online(&self) -> bool {
        self.online.load(Ordering::Relaxed)
    }
}

/// Network construction options; the plain-text config file maps onto this.
#[derive(Clone, Debug)]
pub struct NetworkOptions {
    pub peer_count: usize,
    pub latency: LatencyDistribution,
    pub seed: u64,
    /// Data transfer rate used by the executor, in bytes per sim ms.
    pub bytes_per_ms: f64,
    pub connect_timeout_ms: f64,
    /// Bound on simulated parallel width; 0 means unbounded.
    pub pool_size: usize,
    pub compute_cost_ms_per_row: f64,
    /// Peer indexes lacking Minerva executor support.
    pub no_executor: Vec<usize>,
}

impl Default for NetworkOptions {
    fn default() -> Self {
        NetworkOptions {
            peer_count: 4,
            latency: LatencyDistribution::Exponential { mean_ms: 50.0 },
            seed: 42,
            bytes_per_ms: 100_000.0,
            connect_timeout_ms: 3_000.0,
            pool_size: 0,
            compute_cost_ms_per_row: 0.01,
            no_executor: Vec::new(),
        }
    }
}

/// Outcome of a connect probe against a peer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProbeOutcome {
    Responded(SimMs),
    TimedOut(SimMs),
}

/// The simulated network: peers, global record table, latency law, virtual
/// clock. Reads are concurrent; mutations (publish, churn) serialize on the
/// inner locks.
pub struct Network {
    peers: BTreeMap<PeerId, Arc<Peer>>,
    by_index: Vec<PeerId>,
    records: RwLock<HashMap<RecordKey, RecordValue>>,
    latency: LatencyDistribution,
    rng: Mutex<ChaCha8Rng>,
    clock: Mutex<SimMs>,
    lookups: AtomicU64,
    probes: AtomicU64,
    pub bytes_per_ms: f64,
    pub connect_timeout_ms: f64,
    pub pool_size: usize,
    seed: u64,
}

impl Network {
    pub fn new(opts: NetworkOptions) -> Result<Self> {
        if opts.peer_count == 0 {
            return Err(Error::invalid("network needs at least one peer"));
        }
        opts.latency.validate()?;
        if !(opts.bytes_per_ms > 0.0) {
            return Err(Error::invalid("bytes_per_ms must be > 0"));
        }
        let mut peers = BTreeMap::new();
        let mut by_index = Vec::with_capacity(opts.peer_count);
        let mut records = HashMap::new();
        for index in 0..opts.peer_count {
            let peer_id = PeerId::from_index(index);
            let address = format!(
                "sim://10.{}.{}.{}:4001",
                (index >> 16) & 0xff,
                (index >> 8) & 0xff,
                index & 0xff
            );
            records.insert(
                RecordKey::PeerAddr(peer_id.clone()),
                RecordValue::Address(address.clone()),
            );
            let peer = Peer {
                peer_id: peer_id.clone(),
                address,
                has_executor: !opts.no_executor.contains(&index),
                store: RwLock::new(BlockStore::new(peer_id.clone())),
                compute_cost_ms_per_row: opts.compute_cost_ms_per_row,
                online: AtomicBool::new(true),
            };
            by_index.push(peer_id.clone());
            peers.insert(peer_id, Arc::new(peer));
        }
        Ok(Network {
            peers,
            by_index,
            records: RwLock::new(records),
            latency: opts.latency,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(opts.seed)),
            clock: Mutex::new(0.0),
            lookups: AtomicU64::new(0),
            probes: AtomicU64::new(0),
            bytes_per_ms: opts.bytes_per_ms,
            connect_timeout_ms: opts.connect_timeout_ms,
            pool_size: opts.pool_size,
            seed: opts.seed,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn latency(&self) -> &LatencyDistribution {
        &self.latency
    }

    /// Peer ids in construction order.
    pub fn peer_ids(&self) -> &[PeerId] {
        &self.by_index
    }

    pub fn peer(&self, id: &PeerId) -> Result<Arc<Peer>> {
        self.peers
            .get(id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("peer {id}")))
    }

    pub fn peer_count(&self) -> usize {
        self.peers.len()
    }

    pub fn set_online(&self, id: &PeerId, online: bool) -> Result<()> {
        self.peer(id)?.online.store(online, Ordering::Relaxed);
        Ok(())
    }

    /// Draw one latency sample from the network's seeded stream.
    pub fn sample_latency(&self) -> SimMs {
        let mut rng = self.rng.lock().unwrap();
        self.latency.sample(&mut rng)
    }

    /// Run `f` with the network RNG; used by scheduling strategies so the
    /// whole simulation consumes a single deterministic stream.
    pub fn with_rng<T>(&self, f: impl FnOnce(&mut ChaCha8Rng) -> T) -> T {
        let mut rng = self.rng.lock().unwrap();
        f(&mut rng)
    }

    /// Resolve one key. Returns the record (or absence for an unknown key)
    /// plus the latency this lookup cost; misses cost a full sample too.
    pub fn dht_lookup(&self, key: &RecordKey) -> (Option<DhtRecord>, SimMs) {
        let elapsed = self.sample_latency();
        self.lookups.fetch_add(1, Ordering::Relaxed);
        let value = self.records.read().unwrap().get(key).cloned();
        (
            value.map(|value| DhtRecord {
                key: key.clone(),
                value,
            }),
            elapsed,
        )
    }

    /// Resolve a batch of keys issued at the same virtual instant. Elapsed
    /// composes as the makespan of the per-key samples under the configured
    /// pool width (pure max when unbounded).
    pub fn dht_lookup_batch(&self, keys: &[RecordKey]) -> (Vec<Option<DhtRecord>>, SimMs) {
        let mut results = Vec::with_capacity(keys.len());
        let mut samples = Vec::with_capacity(keys.len());
        for key in keys {
            let (record, elapsed) = self.dht_lookup(key);
            results.push(record);
            samples.push(elapsed);
        }
        (results, pool_makespan(&samples, self.pool_size))
    }

    /// Probe a peer for liveness. An offline peer never answers, so the
    /// probe costs the full connect timeout.
    pub fn connect_probe(&self, id: &PeerId) -> ProbeOutcome {
        self.probes.fetch_add(1, Ordering::Relaxed);
        match self.peers.get(id) {
            Some(peer) if peer.is_online() => ProbeOutcome::Responded(self.sample_latency()),
            _ => ProbeOutcome::TimedOut(self.connect_timeout_ms),
        }
    }

    pub fn lookup_count(&self) -> u64 {
        self.lookups.load(Ordering::Relaxed)
    }

    pub fn probe_count(&self) -> u64 {
        self.probes.load(Ordering::Relaxed)
    }

    pub fn now(&self) -> SimMs {
        *self.clock.lock().unwrap()
    }

    /// Advance the monotone virtual clock to `t`; earlier instants are kept.
    pub fn advance_to(&self, t: SimMs) {
        let mut clock = self.clock.lock().unwrap();
        if t > *clock {
            *clock = t;
        }
    }

    pub fn advance_by(&self, dt: SimMs) -> SimMs {
        let mut clock = self.clock.lock().unwrap();
        *clock += dt.max(0.0);
        *clock
    }

    /// Publish an object: store chunks at their placement peers, write the
    /// Merkle node records, and write one provider record per distinct leaf.
    /// The publisher is recorded as the host of every tree node.
    pub fn publish_object(
        &self,
        tree: &MerkleTree,
        chunks: &[Chunk],
        placement: &BTreeMap<ContentId, BTreeSet<PeerId>>,
        publisher: &PeerId,
        csv_header: Option<String>,
    ) -> Result<()> {
        if !self.peers.contains_key(publisher) {
            return Err(Error::invalid(format!("publisher {publisher} not in network")));
        }
        if chunks.len() != tree.leaf_count {
            return Err(Error::invalid(format!(
                "tree has {} leaves but {} chunks were supplied",
                tree.leaf_count,
                chunks.len()
            )));
        }
        let mut shared: HashMap<ContentId, Arc<Chunk>> = HashMap::new();
        for chunk in chunks {
            shared.entry(chunk.cid).or_insert_with(|| Arc::new(chunk.clone()));
        }
        for cid in &tree.leaves {
            let peers = placement
                .get(cid)
                .filter(|set| !set.is_empty())
                .ok_or_else(|| Error::invalid(format!("leaf {cid} has no placement")))?;
            for peer_id in peers {
                let peer = self.peers.get(peer_id).ok_or_else(|| {
                    Error::invalid(format!("placement peer {peer_id} not in network"))
                })?;
                peer.store.write().unwrap().put(shared[cid].clone())?;
            }
        }
        let total_size: u64 = chunks.iter().map(|c| c.bytes.len() as u64).sum();
        let meta = ObjectMeta {
            total_size,
            csv_header,
        };
        let mut records = self.records.write().unwrap();
        for node in tree.nodes.values() {
            let leaf_children = tree.shape == TreeShape::Fat
                && !node.children.is_empty()
                && node
                    .children
                    .iter()
                    .all(|c| tree.nodes.get(c).map_or(false, |n| n.is_leaf));
            records.insert(
                RecordKey::Node(node.cid),
                RecordValue::Node {
                    children: node.children.clone(),
                    leaf_children,
                    host: publisher.clone(),
                    meta: (node.cid == tree.root).then(|| meta.clone()),
                },
            );
        }
        for (cid, peers) in placement {
            let mut merged: BTreeSet<PeerId> = peers.clone();
            if let Some(RecordValue::Providers(existing)) =
                records.get(&RecordKey::Providers(*cid))
            {
                merged.extend(existing.iter().cloned());
            }
            records.insert(
                RecordKey::Providers(*cid),
                RecordValue::Providers(merged.into_iter().collect()),
            );
        }
        Ok(())
    }

    /// Raw record-table read that bypasses latency accounting (used by
    /// snapshotting and tests).
    pub fn peek_record(&self, key: &RecordKey) -> Option<RecordValue> {
        self.records.read().unwrap().get(key).cloned()
    }
}

/// Completion time of `samples` run by `pool` parallel workers under greedy
/// list scheduling. `pool == 0` means unbounded, i.e. plain max.
pub fn pool_makespan(samples: &[SimMs], pool: usize) -> SimMs {
    if samples.is_empty() {
        return 0.0;
    }
    if pool == 0 || pool >= samples.len() {
        return samples.iter().cloned().fold(0.0, f64::max);
    }
    let mut workers = vec![0.0f64; pool];
    for &sample in samples {
        let earliest = workers
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        workers[earliest] += sample;
    }
    workers.iter().cloned().fold(0.0, f64::max)
}

/// How leaves are spread over peers at publish time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlacementPolicy {
    /// Everything on the first peer.
    Single,
    /// Leaf i on peer i mod w.
    RoundRobin,
    /// Leaf i on `replicas` consecutive peers starting at i mod w.
    Replicate(usize),
    /// Every leaf on every peer.
    All,
}

impl PlacementPolicy {
    pub fn assign(
        &self,
        leaves: &[ContentId],
        peers: &[PeerId],
    ) -> BTreeMap<ContentId, BTreeSet<PeerId>> {
        assert!(!peers.is_empty(), "placement needs at least one peer");
        let mut map: BTreeMap<ContentId, BTreeSet<PeerId>> = BTreeMap::new();
        for (i, cid) in leaves.iter().enumerate() {
            let set = map.entry(*cid).or_default();
            match self {
                PlacementPolicy::Single => {
                    set.insert(peers[0].clone());
                }
                PlacementPolicy::RoundRobin => {
                    set.insert(peers[i % peers.len()].clone());
                }
                PlacementPolicy::Replicate(replicas) => {
                    for r in 0..(*replicas).max(1).min(peers.len()) {
                        set.insert(peers[(i + r) % peers.len()].clone());
                    }
                }
                PlacementPolicy::All => {
                    set.extend(peers.iter().cloned());
                }
            }
        }
        map
    }
}

impl FromStr for PlacementPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(PlacementPolicy::Single),
            "round_robin" => Ok(PlacementPolicy::RoundRobin),
            "all" => Ok(PlacementPolicy::All),
            other => {
                if let Some(n) = other.strip_prefix("replicate:") {
                    let replicas = n
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad replica count {n:?}")))?;
                    if replicas == 0 {
                        return Err(Error::Config("replica count must be >= 1".into()));
                    }
                    Ok(PlacementPolicy::Replicate(replicas))
                } else {
                    Err(Error::Config(format!("unknown placement policy {other:?}")))
                }
            }
        }
    }
}

use rand::SeedableRng;

/// Serializable network state (chunk bytes are externalized through
/// [`Network::restore`]'s chunk source).
#[derive(Serialize, Deserialize)]
pub struct NetworkSnapshot {
    pub options: SnapshotOptions,
    pub records: Vec<(RecordKey, RecordValue)>,
    pub peer_blocks: Vec<(PeerId, Vec<ContentId>)>,
    pub offline: Vec<PeerId>,
    pub clock: SimMs,
    pub lookups: u64,
    pub probes: u64,
    pub rng: ChaCha8Rng,
}

#[derive(Clone, Serialize, Deserialize)]
pub struct SnapshotOptions {
    pub peer_count: usize,
    pub latency: LatencyDistribution,
    pub seed: u64,
    pub bytes_per_ms: f64,
    pub connect_timeout_ms: f64,
    pub pool_size: usize,
    pub compute_cost_ms_per_row: f64,
    pub no_executor: Vec<usize>,
}

impl Network {
    pub fn snapshot(&self) -> NetworkSnapshot {
        let mut records: Vec<(RecordKey, RecordValue)> = self
            .records
            .read()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        records.sort_by(|a, b| a.0.cmp(&b.0));
        let peer_blocks = self
            .by_index
            .iter()
            .map(|id| {
                let store = self.peers[id].store.read().unwrap();
                let mut cids: Vec<ContentId> = store.cids().cloned().collect();
                cids.sort();
                (id.clone(), cids)
            })
            .collect();
        let offline = self
            .by_index
            .iter()
            .filter(|id| !self.peers[*id].is_online())
            .cloned()
            .collect();
        let no_executor = self
            .by_index
            .iter()
            .enumerate()
            .filter(|(_, id)| !self.peers[*id].has_executor)
            .map(|(i, _)| i)
            .collect();
        NetworkSnapshot {
            options: SnapshotOptions {
                peer_count: self.peers.len(),
                latency: self.latency.clone(),
                seed: self.seed,
                bytes_per_ms: self.bytes_per_ms,
                connect_timeout_ms: self.connect_timeout_ms,
                pool_size: self.pool_size,
                compute_cost_ms_per_row: self
                    .by_index
                    .first()
                    .map(|id| self.peers[id].compute_cost_ms_per_row)
                    .unwrap_or(0.01),
                no_executor,
            },
            records,
            peer_blocks,
            offline,
            clock: self.now(),
            lookups: self.lookup_count(),
            probes: self.probe_count(),
            rng: self.rng.lock().unwrap().clone(),
        }
    }

    pub fn restore(
        snapshot: NetworkSnapshot,
        mut chunk_source: impl FnMut(&ContentId) -> Result<Chunk>,
    ) -> Result<Self> {
        let opts = NetworkOptions {
            peer_count: snapshot.options.peer_count,
            latency: snapshot.options.latency.clone(),
            seed: snapshot.options.seed,
            bytes_per_ms: snapshot.options.bytes_per_ms,
            connect_timeout_ms: snapshot.options.connect_timeout_ms,
            pool_size: snapshot.options.pool_size,
            compute_cost_ms_per_row: snapshot.options.compute_cost_ms_per_row,
            no_executor: snapshot.options.no_executor.clone(),
        };
        let net = Network::new(opts)?;
        {
            let mut records = net.records.write().unwrap();
            for (key, value) in snapshot.records {
                records.insert(key, value);
            }
        }
        let mut shared: HashMap<ContentId, Arc<Chunk>> = HashMap::new();
        for (peer_id, cids) in snapshot.peer_blocks {
            let peer = net.peer(&peer_id)?;
            let mut store = peer.store.write().unwrap();
            for cid in cids {
                let chunk = match shared.get(&cid) {
                    Some(chunk) => chunk.clone(),
                    None => {
                        let chunk = Arc::new(chunk_source(&cid)?);
                        shared.insert(cid, chunk.clone());
                        chunk
                    }
                };
                store.put(chunk)?;
            }
        }
        for id in snapshot.offline {
            net.set_online(&id, false)?;
        }
        net.advance_to(snapshot.clock);
        net.lookups.store(snapshot.lookups, Ordering::Relaxed);
        net.probes.store(snapshot.probes, Ordering::Relaxed);
        *net.rng.lock().unwrap() = snapshot.rng;
        Ok(net)
    }
}

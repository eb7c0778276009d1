//! MinervaCache: metadata cache (root cid -> leaf list + providers) and
//! peer-address cache, both LRU with TTL expiry.
//!
//! Expiry is lazy: checked on get, and expired entries are dropped first
//! when a put needs room. Cache operations cost zero sim time.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::chunkstore::ContentId;
use crate::dhtnet::{ObjectMeta, PeerId, SimMs};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CacheConfig {
    pub capacity: usize,
    pub ttl_ms: SimMs,
}

impl CacheConfig {
    pub fn new(capacity: usize, ttl_ms: SimMs) -> Result<Self> {
        if capacity < 1 {
            return Err(Error::invalid("cache capacity must be >= 1"));
        }
        if !(ttl_ms > 0.0) {
            return Err(Error::invalid("cache ttl must be > 0"));
        }
        Ok(CacheConfig { capacity, ttl_ms })
    }
}

impl Default for CacheConfig {
    fn default() -> Self {
        // Desk-scale experiments should never evict unintentionally.
        CacheConfig {
            capacity: 4096,
            ttl_ms: 600_000.0,
        }
    }
}

struct Entry<V> {
    value: V,
    inserted_at: SimMs,
    touch: u64,
}

/// Size-bounded LRU map with TTL. Recency is a strictly increasing counter,
/// so eviction order is total and deterministic.
pub struct LruTtlCache<K, V> {
    config: CacheConfig,
    map: HashMap<K, Entry<V>>,
    recency: BTreeMap<u64, K>,
    tick: u64,
}

impl<K: Eq + Hash + Clone, V: Clone> LruTtlCache<K, V> {
    pub fn new(config: CacheConfig) -> Self {
        LruTtlCache {
            config,
            map: HashMap::new(),
            recency: BTreeMap::new(),
            tick: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    fn next_tick(&mut self) -> u64 {
        self.tick += 1;
        self.tick
    }

    fn expired(entry_inserted: SimMs, now: SimMs, ttl: SimMs) -> bool {
        now - entry_inserted > ttl
    }

    /// Get a live value; a hit refreshes recency, an expired entry is
    /// evicted and reported as a miss. An entry is live through `ttl`
    /// inclusive.
    pub fn get(&mut self, key: &K, now: SimMs) -> Option<V> {
        let ttl = self.config.ttl_ms;
        match self.map.get_mut(key) {
            Some(entry) if !Self::expired(entry.inserted_at, now, ttl) => {
                let old = entry.touch;
                self.tick += 1;
                entry.touch = self.tick;
                let value = entry.value.clone();
                let tick = self.tick;
                self.recency.remove(&old);
                self.recency.insert(tick, key.clone());
                Some(value)
            }
            Some(_) => {
                self.remove(key);
                None
            }
            None => None,
        }
    }

    /// Insert or replace. Returns the key evicted to make room, if any.
    /// Expired entries are dropped before a live LRU victim is chosen.
    pub fn put(&mut self, key: K, value: V, now: SimMs) -> Option<K> {
        if let Some(entry) = self.map.get_mut(&key) {
            let old = entry.touch;
            let tick = self.tick + 1;
            self.tick = tick;
            entry.value = value;
            entry.inserted_at = now;
            entry.touch = tick;
            self.recency.remove(&old);
            self.recency.insert(tick, key);
            return None;
        }
        let mut evicted = None;
        if self.map.len() >= self.config.capacity {
            self.drop_expired(now);
            if self.map.len() >= self.config.capacity {
                if let Some((&oldest, _)) = self.recency.iter().next() {
                    let victim = self.recency.remove(&oldest).unwrap();
                    self.map.remove(&victim);
                    evicted = Some(victim);
                }
            }
        }
        let tick = self.next_tick();
        self.map.insert(
            key.clone(),
            Entry {
                value,
                inserted_at: now,
                touch: tick,
            },
        );
        self.recency.insert(tick, key);
        evicted
    }

    pub fn remove(&mut self, key: &K) {
        if let Some(entry) = self.map.remove(key) {
            self.recency.remove(&entry.touch);
        }
    }

    fn drop_expired(&mut self, now: SimMs) {
        let ttl = self.config.ttl_ms;
        let dead: Vec<K> = self
            .map
            .iter()
            .filter(|(_, e)| Self::expired(e.inserted_at, now, ttl))
            .map(|(k, _)| k.clone())
            .collect();
        for key in dead {
            self.remove(&key);
        }
    }
}

/// Flattened object metadata: the in-order leaf list plus each leaf's
/// provider set, exactly what a fresh DHT flattening would return. Root
/// object metadata rides along so a warm plan never refetches it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaEntry {
    pub leaves: Vec<ContentId>,
    pub providers: HashMap<ContentId, Vec<PeerId>>,
    pub meta: Option<ObjectMeta>,
}

/// Which of the two caches are live; mirrors the ablation modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CacheMode {
    Off,
    ProvidersOnly,
    PeersOnly,
    Both,
}

impl CacheMode {
    pub fn meta_enabled(self) -> bool {
        matches!(self, CacheMode::ProvidersOnly | CacheMode::Both)
    }

    pub fn peer_enabled(self) -> bool {
        matches!(self, CacheMode::PeersOnly | CacheMode::Both)
    }
}

impl std::str::FromStr for CacheMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(CacheMode::Off),
            "providers_only" => Ok(CacheMode::ProvidersOnly),
            "peers_only" => Ok(CacheMode::PeersOnly),
            "both" => Ok(CacheMode::Both),
            other => Err(Error::Config(format!("unknown cache mode {other:?}"))),
        }
    }
}

/// The two Minerva caches behind one handle. Disabled sides are inert:
/// gets miss and puts are dropped.
pub struct MinervaCache {
    meta: Option<Mutex<LruTtlCache<ContentId, Arc<MetaEntry>>>>,
    peer: Option<Mutex<LruTtlCache<PeerId, String>>>,
}

impl MinervaCache {
    pub fn new(mode: CacheMode, config: CacheConfig) -> Self {
        MinervaCache {
            meta: mode
                .meta_enabled()
                .then(|| Mutex::new(LruTtlCache::new(config))),
            peer: mode
                .peer_enabled()
                .then(|| Mutex::new(LruTtlCache::new(config))),
        }
    }

    pub fn disabled() -> Self {
        MinervaCache::new(CacheMode::Off, CacheConfig::default())
    }

    pub fn meta_get(&self, key: &ContentId, now: SimMs) -> Option<Arc<MetaEntry>> {
        self.meta.as_ref()?.lock().unwrap().get(key, now)
    }

    pub fn meta_put(&self, key: ContentId, entry: MetaEntry, now: SimMs) {
        if let Some(meta) = &self.meta {
            meta.lock().unwrap().put(key, Arc::new(entry), now);
        }
    }

    pub fn peer_get(&self, key: &PeerId, now: SimMs) -> Option<String> {
        self.peer.as_ref()?.lock().unwrap().get(key, now)
    }

    pub fn peer_put(&self, key: PeerId, address: String, now: SimMs) {
        if let Some(peer) = &self.peer {
            peer.lock().unwrap().put(key, address, now);
        }
    }

    /// Drop a peer-address entry after a failed connect, so the next plan
    /// re-resolves instead of timing out again.
    pub fn invalidate_peer(&self, key: &PeerId) {
        if let Some(peer) = &self.peer {
            peer.lock().unwrap().remove(key);
        }
    }

    pub fn meta_len(&self) -> usize {
        self.meta.as_ref().map_or(0, |m| m.lock().unwrap().len())
    }

    pub fn peer_len(&self) -> usize {
        self.peer.as_ref().map_or(0, |p| p.lock().unwrap().len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn cache(capacity: usize, ttl: f64) -> LruTtlCache<u32, u32> {
        LruTtlCache::new(CacheConfig::new(capacity, ttl).unwrap())
    }

    #[test]
    fn ttl_boundary_is_inclusive() {
        let mut c = cache(4, 100.0);
        c.put(1, 10, 0.0);
        assert_eq!(c.get(&1, 100.0), Some(10));
        assert_eq!(c.get(&1, 101.0), None);
        assert_eq!(c.len(), 0, "expired entry is evicted on get");
    }

    #[test]
    fn lru_eviction_order() {
        let mut c = cache(2, 1e9);
        assert_eq!(c.put(1, 1, 0.0), None);
        assert_eq!(c.put(2, 2, 1.0), None);
        assert_eq!(c.put(3, 3, 2.0), Some(1));
        assert_eq!(c.get(&1, 3.0), None);
    }

    #[test]
    fn get_refreshes_recency() {
        let mut c = cache(2, 1e9);
        c.put(1, 1, 0.0);
        c.put(2, 2, 1.0);
        assert_eq!(c.get(&1, 2.0), Some(1));
        assert_eq!(c.put(3, 3, 3.0), Some(2));
    }

    #[test]
    fn reput_replaces_without_eviction() {
        let mut c = cache(2, 100.0);
        c.put(1, 1, 0.0);
        c.put(2, 2, 0.0);
        assert_eq!(c.put(1, 11, 50.0), None);
        assert_eq!(c.len(), 2);
        // Timestamp was refreshed by the re-put.
        assert_eq!(c.get(&1, 140.0), Some(11));
    }

    #[test]
    fn expired_entries_yield_before_lru_victims() {
        let mut c = cache(2, 10.0);
        c.put(1, 1, 0.0);
        c.put(2, 2, 100.0);
        // Key 1 is expired at t=100; inserting must drop it, not evict key 2.
        assert_eq!(c.put(3, 3, 100.0), None);
        assert_eq!(c.get(&2, 100.0), Some(2));
        assert_eq!(c.get(&3, 100.0), Some(3));
    }

    #[test]
    fn never_inserted_key_misses() {
        let mut c = cache(2, 10.0);
        assert_eq!(c.get(&42, 0.0), None);
    }

    #[test]
    fn capacity_never_exceeded_and_matches_reference_model() {
        // Reference: a Vec ordered least-recent-first plus timestamps.
        struct RefModel {
            order: Vec<u32>,
            data: HashMap<u32, (u32, f64)>,
            capacity: usize,
            ttl: f64,
        }
        impl RefModel {
            fn get(&mut self, k: u32, now: f64) -> Option<u32> {
                let (v, at) = *self.data.get(&k)?;
                if now - at > self.ttl {
                    self.order.retain(|x| *x != k);
                    self.data.remove(&k);
                    return None;
                }
                self.order.retain(|x| *x != k);
                self.order.push(k);
                Some(v)
            }
            fn put(&mut self, k: u32, v: u32, now: f64) -> Option<u32> {
                if self.data.contains_key(&k) {
                    self.data.insert(k, (v, now));
                    self.order.retain(|x| *x != k);
                    self.order.push(k);
                    return None;
                }
                let mut evicted = None;
                if self.data.len() >= self.capacity {
                    let dead: Vec<u32> = self
                        .data
                        .iter()
                        .filter(|(_, (_, at))| now - at > self.ttl)
                        .map(|(k, _)| *k)
                        .collect();
                    for d in dead {
                        self.order.retain(|x| *x != d);
                        self.data.remove(&d);
                    }
                    if self.data.len() >= self.capacity {
                        let victim = self.order.remove(0);
                        self.data.remove(&victim);
                        evicted = Some(victim);
                    }
                }
                self.data.insert(k, (v, now));
                self.order.push(k);
                evicted
            }
        }

        let mut c = cache(8, 50.0);
        let mut model = RefModel {
            order: Vec::new(),
            data: HashMap::new(),
            capacity: 8,
            ttl: 50.0,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let mut now = 0.0f64;
        for _ in 0..10_000 {
            now += rng.gen_range(0.0..5.0);
            let key = rng.gen_range(0..24u32);
            if rng.gen_bool(0.5) {
                let value = rng.gen_range(0..1000);
                assert_eq!(c.put(key, value, now), model.put(key, value, now));
            } else {
                assert_eq!(c.get(&key, now), model.get(key, now));
            }
            assert!(c.len() <= 8);
            assert_eq!(c.len(), model.data.len());
        }
    }

    #[test]
    fn disabled_cache_is_inert() {
        let cache = MinervaCache::disabled();
        let cid = ContentId::of_bytes(b"x");
        cache.meta_put(
            cid,
            MetaEntry {
                leaves: vec![cid],
                providers: HashMap::new(),
                meta: None,
            },
            0.0,
        );
        assert!(cache.meta_get(&cid, 0.0).is_none());
        assert_eq!(cache.meta_len(), 0);
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(CacheConfig::new(0, 10.0).is_err());
        assert!(CacheConfig::new(4, 0.0).is_err());
    }
}

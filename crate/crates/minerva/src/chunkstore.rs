//! Byte-level chunking and per-node content-addressed block storage.
//!
//! Every chunk is identified by the SHA-256 digest of its bytes; identical
//! content always resolves to the same [`ContentId`], which is the universal
//! key of the whole system.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dhtnet::PeerId;
use crate::error::{Error, Result};

/// Default chunk size: 1 MiB.
pub const DEFAULT_CHUNK_SIZE: usize = 1 << 20;

/// Content identifier: a SHA-256 digest.
///
/// For a chunk this is the digest of the raw bytes; for a Merkle node it is
/// the digest of the ordered concatenation of the child digests.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContentId([u8; 32]);

impl ContentId {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        let digest = Sha256::digest(bytes);
        ContentId(digest.into())
    }

    /// Digest of the ordered concatenation of child ids (internal tree nodes).
    pub fn of_children(children: &[ContentId]) -> Self {
        let mut hasher = Sha256::new();
        for child in children {
            hasher.update(child.0);
        }
        ContentId(hasher.finalize().into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Canonical textual form: 64 lowercase hex characters.
    pub fn text(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_text(s: &str) -> Result<Self> {
        let raw = hex::decode(s).map_err(|_| Error::Path(format!("malformed cid {s:?}")))?;
        let arr: [u8; 32] = raw
            .try_into()
            .map_err(|_| Error::Path(format!("cid {s:?} is not a 256-bit digest")))?;
        Ok(ContentId(arr))
    }
}

impl fmt::Display for ContentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

impl fmt::Debug for ContentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cid:{}", &self.text()[..8])
    }
}

/// A contiguous slice of an object's bytes, addressed by its digest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Chunk {
    pub cid: ContentId,
    pub bytes: Vec<u8>,
}

impl Chunk {
    pub fn new(bytes: Vec<u8>) -> Self {
        Chunk {
            cid: ContentId::of_bytes(&bytes),
            bytes,
        }
    }

    pub fn size(&self) -> usize {
        self.bytes.len()
    }
}

/// Split `data` into chunks of `chunk_size` bytes; the last chunk may be
/// shorter. Empty input yields exactly one empty chunk so that every object,
/// including the empty one, has a ContentId.
pub fn chunk_bytes(data: &[u8], chunk_size: usize) -> Result<Vec<Chunk>> {
    if chunk_size == 0 {
        return Err(Error::invalid("chunk_size must be >= 1"));
    }
    if data.is_empty() {
        return Ok(vec![Chunk::new(Vec::new())]);
    }
    Ok(data
        .chunks(chunk_size)
        .map(|piece| Chunk::new(piece.to_vec()))
        .collect())
}

/// In-memory content-addressed block store owned by one peer.
#[derive(Debug)]
pub struct BlockStore {
    owner: PeerId,
    blocks: HashMap<ContentId, Arc<Chunk>>,
}

impl BlockStore {
    pub fn new(owner: PeerId) -> Self {
        BlockStore {
            owner,
            blocks: HashMap::new(),
        }
    }

    pub fn owner(&self) -> &PeerId {
        &self.owner
    }

    /// Store a chunk. Idempotent; rejects a chunk whose cid does not match
    /// its bytes.
    pub fn put(&mut self, chunk: Arc<Chunk>) -> Result<ContentId> {
        if ContentId::of_bytes(&chunk.bytes) != chunk.cid {
            return Err(Error::Integrity(format!(
                "chunk {} does not match its bytes",
                chunk.cid
            )));
        }
        let cid = chunk.cid;
        self.blocks.entry(cid).or_insert(chunk);
        Ok(cid)
    }

    pub fn get(&self, cid: &ContentId) -> Result<Arc<Chunk>> {
        self.blocks
            .get(cid)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("chunk {cid} not in store of {}", self.owner)))
    }

    pub fn contains(&self, cid: &ContentId) -> bool {
        self.blocks.contains_key(cid)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn cids(&self) -> impl Iterator<Item = &ContentId> {
        self.blocks.keys()
    }
}

//! Content-addressed object store. Chains carry 32-byte digests; the bytes
//! behind them live here. Default backend is an in-memory map; a directory
//! backend shards objects as `objects/<first-2-hex>/<digest-hex>`.

use crate::learning::ParamVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("object {0} not found")]
    NotFound(ContentHash),
    #[error("object {hash} is corrupt: {detail}")]
    Corrupt { hash: ContentHash, detail: String },
    #[error("malformed blob: {0}")]
    Malformed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// SHA-256 digest of an object's exact bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContentHash([u8; 32]);

impl ContentHash {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(64);
        for b in self.0 {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    pub fn from_hex(s: &str) -> Result<Self, StoreError> {
        if s.len() != 64 {
            return Err(StoreError::Malformed(format!("digest must be 64 hex chars, got {}", s.len())));
        }
        let mut out = [0u8; 32];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let hi = (chunk[0] as char).to_digit(16);
            let lo = (chunk[1] as char).to_digit(16);
            match (hi, lo) {
                (Some(h), Some(l)) => out[i] = (h * 16 + l) as u8,
                _ => return Err(StoreError::Malformed(format!("bad hex in digest: {s}"))),
            }
        }
        Ok(Self(out))
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({}..)", &self.to_hex()[..8])
    }
}

impl Serialize for ContentHash {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ContentHash {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ContentHash::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

pub fn hash_bytes(bytes: &[u8]) -> ContentHash {
    let mut h = Sha256::new();
    h.update(bytes);
    ContentHash(h.finalize().into())
}

pub trait ObjectStore {
    /// Stores the bytes and returns their digest. Re-putting identical bytes
    /// is a no-op returning the same digest.
    fn put(&mut self, bytes: &[u8]) -> Result<ContentHash, StoreError>;

    /// Fetches the exact bytes for a digest. Missing objects and objects
    /// whose bytes no longer match their digest are distinct errors.
    fn get(&self, hash: &ContentHash) -> Result<Vec<u8>, StoreError>;

    fn contains(&self, hash: &ContentHash) -> bool {
        self.get(hash).is_ok()
    }
}

fn verify_on_get(hash: &ContentHash, bytes: &[u8]) -> Result<(), StoreError> {
    // Recomputing digests on every read is debug-only; release builds trust
    // the backend.
    if cfg!(debug_assertions) && hash_bytes(bytes) != *hash {
        return Err(StoreError::Corrupt { hash: *hash, detail: "digest mismatch on read".into() });
    }
    Ok(())
}

#[derive(Debug, Default, Clone)]
pub struct MemoryStore {
    objects: BTreeMap<ContentHash, Vec<u8>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }
}

impl ObjectStore for MemoryStore {
    fn put(&mut self, bytes: &[u8]) -> Result<ContentHash, StoreError> {
        let hash = hash_bytes(bytes);
        self.objects.entry(hash).or_insert_with(|| bytes.to_vec());
        Ok(hash)
    }

    fn get(&self, hash: &ContentHash) -> Result<Vec<u8>, StoreError> {
        let bytes = self.objects.get(hash).ok_or(StoreError::NotFound(*hash))?;
        verify_on_get(hash, bytes)?;
        Ok(bytes.clone())
    }

    fn contains(&self, hash: &ContentHash) -> bool {
        self.objects.contains_key(hash)
    }
}

/// Filesystem backend: `<root>/objects/aa/aabb...` for digest `aabb...`.
#[derive(Debug)]
pub struct DirStore {
    root: PathBuf,
}

impl DirStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(root.join("objects"))?;
        Ok(Self { root })
    }

    fn path_for(&self, hash: &ContentHash) -> PathBuf {
        let hex = hash.to_hex();
        self.root.join("objects").join(&hex[..2]).join(hex)
    }
}

impl ObjectStore for DirStore {
    fn put(&mut self, bytes: &[u8]) -> Result<ContentHash, StoreError> {
        let hash = hash_bytes(bytes);
        let path = self.path_for(&hash);
        if !path.exists() {
            std::fs::create_dir_all(path.parent().unwrap())?;
            let mut f = std::fs::File::create(&path)?;
            f.write_all(bytes)?;
        }
        Ok(hash)
    }

    fn get(&self, hash: &ContentHash) -> Result<Vec<u8>, StoreError> {
        let path = self.path_for(hash);
        let mut f = std::fs::File::open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                StoreError::NotFound(*hash)
            } else {
                StoreError::Io(e)
            }
        })?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)?;
        if hash_bytes(&bytes) != *hash {
            return Err(StoreError::Corrupt { hash: *hash, detail: "file bytes do not match digest".into() });
        }
        Ok(bytes)
    }

    fn contains(&self, hash: &ContentHash) -> bool {
        self.path_for(hash).exists()
    }
}

/// Canonical parameter blob: little-endian `u64` length header followed by
/// the values as little-endian `f64` words. The round trip is bit-exact.
pub fn encode_params(w: &ParamVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * w.dim());
    out.extend_from_slice(&(w.dim() as u64).to_le_bytes());
    for v in w.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<ParamVector, StoreError> {
    if bytes.len() < 8 {
        return Err(StoreError::Malformed("blob shorter than header".into()));
    }
    let dim = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + 8 * dim {
        return Err(StoreError::Malformed(format!(
            "blob length {} does not match dim {dim}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ParamVector::new(values).map_err(|e| StoreError::Malformed(e.to_string()))
}

pub fn put_params(store: &mut impl ObjectStore, w: &ParamVector) -> Result<ContentHash, StoreError> {
    store.put(&encode_params(w))
}

pub fn get_params(store: &impl ObjectStore, hash: &ContentHash) -> Result<ParamVector, StoreError> {
    decode_params(&store.get(hash)?)
}

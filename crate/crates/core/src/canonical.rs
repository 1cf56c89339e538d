//! Canonical JSON encoding and content digests.
//!
//! Artifact blobs are stored as UTF-8 JSON with object keys sorted, so equal
//! values always produce equal bytes and equal digests.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Serialize `value` as compact JSON with sorted object keys.
pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    // serde_json's Value map is a BTreeMap unless `preserve_order` is enabled,
    // so a round trip through Value sorts every nested object.
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_vec(&v)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the canonical JSON encoding of `value`.
pub fn digest_of<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(sha256_hex(&to_canonical_json(value)?))
}

/// Derive a 64-bit RNG seed from a base seed and a list of labels.
pub fn derive_seed(base: u64, labels: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for l in labels {
        h.update((l.len() as u64).to_le_bytes());
        h.update(l.as_bytes());
    }
    let out = h.finalize();
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&out[..8]);
    u64::from_le_bytes(buf)
}

/// 64-bit FNV-1a. Stable across platforms and compiler versions.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Incremental fingerprint over a sequence of strings.
#[derive(Default)]
pub struct Fingerprint(Sha256);

impl Fingerprint {
    pub fn new() -> Self {
        Fingerprint(Sha256::new())
    }

    pub fn push(&mut self, s: &str) -> &mut Self {
        self.0.update((s.len() as u64).to_le_bytes());
        self.0.update(s.as_bytes());
        self
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

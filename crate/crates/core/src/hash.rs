//! Stable configuration digests.

use sha2::{Digest, Sha256};

/// SHA-256 over `key=value` lines sorted by key.
pub fn canonical_hash<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> [u8; 32] {
    let mut v: Vec<(&str, String)> = pairs.into_iter().collect();
    v.sort_by(|a, b| a.0.cmp(b.0));
    let mut h = Sha256::new();
    for (k, val) in v {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(val.as_bytes());
        h.update(b"\n");
    }
    h.finalize().into()
}

pub fn to_hex(digest: &[u8; 32]) -> String {
    hex::encode(digest)
}

pub fn from_hex(s: &str) -> Option<[u8; 32]> {
    let bytes = hex::decode(s).ok()?;
    bytes.try_into().ok()
}

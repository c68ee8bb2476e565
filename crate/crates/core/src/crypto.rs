//! Substring hashing.
//!
//! `CH` is SHA3-256. The keyed variant is HMAC-SHA3-256 evaluated by a
//! [`KeyProvider`], which models an enclave: callers can ask for
//! evaluations but never see the key.

use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use hmac::{Hmac, Mac};
use parking_lot::RwLock;
use rand::RngCore;
use sha3::{Digest as _, Sha3_256};

use crate::bits::BitString;
use crate::error::{Error, Result};

pub const DIGEST_LEN: usize = 32;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let mut out = [0u8; DIGEST_LEN];
        hex::decode_to_slice(s, &mut out)
            .map_err(|e| Error::Parse(format!("bad digest hex: {e}")))?;
        Ok(Self(out))
    }
}

// Feeds the raw bytes as one write so `DigestHasher` can use them directly.
impl Hash for Digest {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write(&self.0);
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Table hasher for digests: their bytes are already uniform, so the first
/// eight are the hash.
#[derive(Default, Clone, Copy)]
pub struct DigestHasher(u64);

impl Hasher for DigestHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        let mut buf = [0u8; 8];
        let take = bytes.len().min(8);
        buf[..take].copy_from_slice(&bytes[..take]);
        self.0 ^= u64::from_le_bytes(buf);
    }
}

pub type DigestBuildHasher = std::hash::BuildHasherDefault<DigestHasher>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HashMode {
    #[default]
    Plain,
    KeyedPrf,
}

impl FromStr for HashMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" | "plain_hash" => Ok(HashMode::Plain),
            "keyed" | "keyed_prf" | "prf" => Ok(HashMode::KeyedPrf),
            other => Err(Error::Parse(format!("unknown hash mode {other:?}"))),
        }
    }
}

impl fmt::Display for HashMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HashMode::Plain => "plain_hash",
            HashMode::KeyedPrf => "keyed_prf",
        })
    }
}

/// Canonical preimage: `[u32 LE index] || u32 LE k || MSB-first packed bits`.
/// The index is present only when `subset_index` is `Some`.
pub fn encode_preimage(subset_index: Option<u32>, w: &BitString) -> Vec<u8> {
    let mut out = Vec::new();
    encode_preimage_into(&mut out, subset_index, w.len(), &w.to_packed());
    out
}

pub(crate) fn encode_preimage_into(
    out: &mut Vec<u8>,
    subset_index: Option<u32>,
    k: usize,
    packed: &[u8],
) {
    out.clear();
    if let Some(i) = subset_index {
        out.extend_from_slice(&i.to_le_bytes());
    }
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(packed);
}

pub fn ch_hash(preimage: &[u8]) -> Digest {
    Digest(Sha3_256::digest(preimage).into())
}

/// A deterministic keyed function whose key stays inside the provider.
pub trait KeyProvider: Send + Sync {
    fn evaluate(&self, preimage: &[u8]) -> Result<Digest>;
}

type HmacSha3 = Hmac<Sha3_256>;

/// In-memory HMAC-SHA3-256 key holder. Provisioning takes the write lock;
/// evaluations share the read lock.
#[derive(Default)]
pub struct SealedKey {
    mac: RwLock<Option<HmacSha3>>,
}

impl SealedKey {
    pub fn unprovisioned() -> Self {
        Self::default()
    }

    pub fn from_key(key: [u8; 32]) -> Self {
        let sealed = Self::default();
        sealed.provision(key);
        sealed
    }

    /// Provisions a fresh key from the operating system's randomness.
    pub fn generate() -> Self {
        let mut key = [0u8; 32];
        rand::rng().fill_bytes(&mut key);
        Self::from_key(key)
    }

    pub fn provision(&self, key: [u8; 32]) {
        let mac = HmacSha3::new_from_slice(&key).expect("HMAC accepts any key length");
        *self.mac.write() = Some(mac);
    }

    pub fn is_provisioned(&self) -> bool {
        self.mac.read().is_some()
    }
}

impl KeyProvider for SealedKey {
    fn evaluate(&self, preimage: &[u8]) -> Result<Digest> {
        let guard = self.mac.read();
        let mut mac = guard
            .as_ref()
            .ok_or_else(|| Error::Key("PRF key not provisioned".into()))?
            .clone();
        mac.update(preimage);
        Ok(Digest(mac.finalize().into_bytes().into()))
    }
}

impl fmt::Debug for SealedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SealedKey")
            .field("provisioned", &self.is_provisioned())
            .finish_non_exhaustive()
    }
}

pub fn prf_eval(key: &dyn KeyProvider, preimage: &[u8]) -> Result<Digest> {
    key.evaluate(preimage)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn sha3_known_answers() {
        assert_eq!(
            ch_hash(b"").to_hex(),
            "a7ffc6f8bf1ed76651c14756a061d662f580ff4de43b49fa82d80a4b80f8434a"
        );
        assert_eq!(
            ch_hash(b"abc").to_hex(),
            "3a985da74fe225b2045c172d6bd390bd855f086e3e9d525b46bfe24511431532"
        );
        assert_eq!(ch_hash(b"abc"), ch_hash(b"abc"));
    }

    #[test]
    fn single_bit_change_changes_digest() {
        let a = encode_preimage(None, &"1011".parse().unwrap());
        let b = encode_preimage(None, &"1010".parse().unwrap());
        assert_ne!(ch_hash(&a), ch_hash(&b));
    }

    #[test]
    fn hmac_sha3_known_answers() {
        // NIST HMAC_SHA3-256 sample: 32-byte key 00..1f.
        let key: [u8; 32] = std::array::from_fn(|i| i as u8);
        let sealed = SealedKey::from_key(key);
        assert_eq!(
            prf_eval(&sealed, b"Sample message for keylen<blocklen")
                .unwrap()
                .to_hex(),
            "4fe8e202c4f058e8dddc23d8c34e467343e23555e24fc2f025d598f558f67205"
        );
    }

    #[test]
    fn prf_is_deterministic_and_key_dependent() {
        let a = SealedKey::from_key([1; 32]);
        let b = SealedKey::from_key([2; 32]);
        let x = prf_eval(&a, b"substring").unwrap();
        assert_eq!(x, prf_eval(&a, b"substring").unwrap());
        assert_ne!(x, prf_eval(&b, b"substring").unwrap());
        assert_ne!(x, ch_hash(b"substring"));
    }

    #[test]
    fn unprovisioned_key_errors() {
        let k = SealedKey::unprovisioned();
        assert!(matches!(prf_eval(&k, b"x"), Err(Error::Key(_))));
        k.provision([9; 32]);
        assert!(prf_eval(&k, b"x").is_ok());
        assert!(!format!("{k:?}").contains("09"));
    }

    #[test]
    fn preimage_layout() {
        let w: BitString = "10000001".parse().unwrap();
        assert_eq!(encode_preimage(None, &w), vec![8, 0, 0, 0, 0x81]);
        assert_eq!(
            encode_preimage(Some(1), &w),
            vec![1, 0, 0, 0, 8, 0, 0, 0, 0x81]
        );
        assert_ne!(encode_preimage(Some(0), &w), encode_preimage(Some(1), &w));
        let one: BitString = "0".parse().unwrap();
        assert_eq!(encode_preimage(None, &one).len(), 5);
    }

    #[test]
    fn preimage_is_injective_exhaustively() {
        for k in [1usize, 2, 3, 7, 8, 9, 12, 16] {
            let mut seen = HashSet::new();
            let indices = if k == 16 { 0..2 } else { 0..4 };
            for index in indices {
                for value in 0u32..(1 << k) {
                    let w = BitString::from_fn(k, |i| value >> i & 1 == 1);
                    assert!(seen.insert(encode_preimage(Some(index), &w)));
                }
            }
        }
    }

    #[test]
    fn hash_mode_parsing() {
        assert_eq!("plain".parse::<HashMode>().unwrap(), HashMode::Plain);
        assert_eq!("keyed_prf".parse::<HashMode>().unwrap(), HashMode::KeyedPrf);
        assert!("md5".parse::<HashMode>().is_err());
    }
}

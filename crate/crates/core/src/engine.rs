//! Enrollment and authentication over a sharded digest store.
//!
//! Each shard maps digests to the identities enrolled under them and holds at
//! most `capacity` identities. New identities go to the last shard until it
//! is full, then a new shard is opened. Authentication queries every shard
//! with the same `m` digests and merges the per-identity tallies.
//!
//! Locking: each shard sits behind its own reader/writer lock, so an
//! enrollment is visible either completely or not at all. Enrollments are
//! additionally serialized by a gate that owns shard selection and the
//! duplicate check.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rayon::prelude::*;

use crate::bits::BitString;
use crate::crypto::{
    ch_hash, encode_preimage_into, Digest, DigestBuildHasher, HashMode, KeyProvider, DIGEST_LEN,
};
use crate::error::{Error, Result};
use crate::population::IdentityId;
use crate::sampling::SubsetPlan;

pub const STORE_MAGIC: &[u8; 7] = b"SBADB1\0";
pub const STORE_VERSION: u32 = 1;
pub const DEFAULT_SHARD_CAPACITY: usize = 10_000;

/// Accounting size of one `(digest, id)` record: 256 + 32 bits.
pub const RECORD_BYTES: u64 = (DIGEST_LEN + 4) as u64;

pub fn storage_bytes_per_identity(m: usize) -> u64 {
    m as u64 * RECORD_BYTES
}

/// Packs the bits of `v` at `indices` MSB-first into `out`.
fn gather_packed(v: &BitString, indices: &[u16], out: &mut Vec<u8>) {
    out.clear();
    out.resize(indices.len().div_ceil(8), 0);
    let words = v.words();
    for (pos, &ix) in indices.iter().enumerate() {
        let ix = usize::from(ix);
        if words[ix / 64] >> (63 - ix % 64) & 1 == 1 {
            out[pos / 8] |= 0x80 >> (pos % 8);
        }
    }
}

/// Hashes every planned substring of `v`.
pub fn derive_digests(
    v: &BitString,
    plan: &SubsetPlan,
    mode: HashMode,
    domain_separation: bool,
    key: Option<&dyn KeyProvider>,
) -> Result<Vec<Digest>> {
    if v.len() != plan.n() {
        return Err(Error::LengthMismatch {
            expected: plan.n(),
            actual: v.len(),
        });
    }
    let key = match (mode, key) {
        (HashMode::KeyedPrf, None) => {
            return Err(Error::Key("keyed mode requires a key provider".into()))
        }
        (HashMode::KeyedPrf, Some(k)) => Some(k),
        (HashMode::Plain, _) => None,
    };
    let mut packed = Vec::with_capacity(plan.k().div_ceil(8));
    let mut preimage = Vec::with_capacity(8 + packed.capacity());
    plan.subsets()
        .enumerate()
        .map(|(i, subset)| {
            gather_packed(v, subset, &mut packed);
            let index = domain_separation.then_some(i as u32);
            encode_preimage_into(&mut preimage, index, plan.k(), &packed);
            match key {
                Some(k) => k.evaluate(&preimage),
                None => Ok(ch_hash(&preimage)),
            }
        })
        .collect()
}

/// A plan bound to a hashing configuration.
#[derive(Clone)]
pub struct SubstringHasher {
    plan: Arc<SubsetPlan>,
    mode: HashMode,
    domain_separation: bool,
    key: Option<Arc<dyn KeyProvider>>,
}

impl SubstringHasher {
    pub fn plain(plan: Arc<SubsetPlan>, domain_separation: bool) -> Self {
        Self {
            plan,
            mode: HashMode::Plain,
            domain_separation,
            key: None,
        }
    }

    pub fn keyed(
        plan: Arc<SubsetPlan>,
        domain_separation: bool,
        key: Arc<dyn KeyProvider>,
    ) -> Self {
        Self {
            plan,
            mode: HashMode::KeyedPrf,
            domain_separation,
            key: Some(key),
        }
    }

    pub fn new(
        plan: Arc<SubsetPlan>,
        mode: HashMode,
        domain_separation: bool,
        key: Option<Arc<dyn KeyProvider>>,
    ) -> Self {
        Self {
            plan,
            mode,
            domain_separation,
            key,
        }
    }

    pub fn plan(&self) -> &SubsetPlan {
        &self.plan
    }

    pub fn mode(&self) -> HashMode {
        self.mode
    }

    pub fn domain_separation(&self) -> bool {
        self.domain_separation
    }

    pub fn derive(&self, v: &BitString) -> Result<Vec<Digest>> {
        derive_digests(
            v,
            &self.plan,
            self.mode,
            self.domain_separation,
            self.key.as_deref(),
        )
    }
}

impl std::fmt::Debug for SubstringHasher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubstringHasher")
            .field("n", &self.plan.n())
            .field("k", &self.plan.k())
            .field("m", &self.plan.m())
            .field("mode", &self.mode)
            .field("domain_separation", &self.domain_separation)
            .finish()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Matched { id: IdentityId, count: u32 },
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchResult {
    pub outcome: Outcome,
    pub counts: HashMap<IdentityId, u32>,
    /// Digest lookups performed across all shards.
    pub lookups: u64,
}

impl MatchResult {
    pub fn matched_id(&self) -> Option<IdentityId> {
        match self.outcome {
            Outcome::Matched { id, .. } => Some(id),
            Outcome::Rejected => None,
        }
    }

    pub fn is_rejected(&self) -> bool {
        self.outcome == Outcome::Rejected
    }

    /// Highest tally over all candidates, 0 when nothing matched.
    pub fn best_count(&self) -> u32 {
        self.counts.values().copied().max().unwrap_or(0)
    }
}

/// Unique maximum wins if it reaches `tau`; ties at the maximum reject.
fn decide(counts: &HashMap<IdentityId, u32>, tau: usize) -> Outcome {
    let mut best: Option<(IdentityId, u32)> = None;
    let mut tied = false;
    for (&id, &c) in counts {
        match best {
            Some((_, b)) if c < b => {}
            Some((_, b)) if c == b => tied = true,
            _ => {
                best = Some((id, c));
                tied = false;
            }
        }
    }
    match best {
        Some((id, count)) if !tied && count as usize >= tau => Outcome::Matched { id, count },
        _ => Outcome::Rejected,
    }
}

#[derive(Clone, Debug)]
pub struct Shard {
    /// First identity stored under each digest.
    primary: HashMap<Digest, IdentityId, DigestBuildHasher>,
    /// Further identities for digests shared by several users.
    overflow: HashMap<Digest, Vec<IdentityId>, DigestBuildHasher>,
    enrolled: HashSet<IdentityId>,
    capacity: usize,
    records: u64,
}

impl Shard {
    fn new(capacity: usize) -> Self {
        Self {
            primary: HashMap::default(),
            overflow: HashMap::default(),
            enrolled: HashSet::new(),
            capacity,
            records: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn enrolled(&self) -> &HashSet<IdentityId> {
        &self.enrolled
    }

    pub fn record_count(&self) -> u64 {
        self.records
    }

    fn is_full(&self) -> bool {
        self.enrolled.len() >= self.capacity
    }

    /// Adds one record; repeated `(digest, id)` pairs are stored once.
    fn insert(&mut self, digest: Digest, id: IdentityId) {
        match self.primary.get(&digest) {
            None => {
                self.primary.insert(digest, id);
                self.records += 1;
            }
            Some(&first) if first == id => {}
            Some(_) => {
                let extra = self.overflow.entry(digest).or_default();
                if !extra.contains(&id) {
                    extra.push(id);
                    self.records += 1;
                }
            }
        }
    }

    fn tally(&self, digests: &[Digest], counts: &mut HashMap<IdentityId, u32>) {
        let shared = !self.overflow.is_empty();
        for d in digests {
            if let Some(&id) = self.primary.get(d) {
                *counts.entry(id).or_insert(0) += 1;
                if shared {
                    for &other in self.overflow.get(d).into_iter().flatten() {
                        *counts.entry(other).or_insert(0) += 1;
                    }
                }
            }
        }
    }

    fn remove(&mut self, id: IdentityId) {
        let mut removed = 0u64;
        self.overflow.retain(|_, ids| {
            let before = ids.len();
            ids.retain(|x| *x != id);
            removed += (before - ids.len()) as u64;
            !ids.is_empty()
        });
        let owned: Vec<Digest> = self
            .primary
            .iter()
            .filter(|(_, &v)| v == id)
            .map(|(d, _)| *d)
            .collect();
        for d in owned {
            removed += 1;
            match self.overflow.get_mut(&d) {
                Some(ids) => {
                    let promoted = ids.remove(0);
                    if ids.is_empty() {
                        self.overflow.remove(&d);
                    }
                    self.primary.insert(d, promoted);
                }
                None => {
                    self.primary.remove(&d);
                }
            }
        }
        self.records -= removed;
        self.enrolled.remove(&id);
    }

    /// Records in canonical order: by digest bytes, then id.
    pub fn sorted_records(&self) -> Vec<(Digest, IdentityId)> {
        let mut out: Vec<(Digest, IdentityId)> = self
            .primary
            .iter()
            .map(|(d, id)| (*d, *id))
            .chain(
                self.overflow
                    .iter()
                    .flat_map(|(d, ids)| ids.iter().map(move |id| (*d, *id))),
            )
            .collect();
        out.sort_unstable();
        out
    }

    pub fn records_for(&self, id: IdentityId) -> usize {
        self.primary.values().filter(|&&v| v == id).count()
            + self
                .overflow
                .values()
                .map(|ids| ids.iter().filter(|&&v| v == id).count())
                .sum::<usize>()
    }
}

pub type ShardSnapshot = (usize, Vec<IdentityId>, Vec<(Digest, IdentityId)>);

#[derive(Debug)]
pub struct ShardedStore {
    capacity: usize,
    shards: RwLock<Vec<Arc<RwLock<Shard>>>>,
    enroll_gate: Mutex<()>,
    lookups: AtomicU64,
}

impl Default for ShardedStore {
    fn default() -> Self {
        Self::new(DEFAULT_SHARD_CAPACITY)
    }
}

impl Clone for ShardedStore {
    fn clone(&self) -> Self {
        let shards = self
            .shards
            .read()
            .iter()
            .map(|s| Arc::new(RwLock::new(s.read().clone())))
            .collect();
        Self {
            capacity: self.capacity,
            shards: RwLock::new(shards),
            enroll_gate: Mutex::new(()),
            lookups: AtomicU64::new(0),
        }
    }
}

impl ShardedStore {
    /// # Panics
    /// If `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "shard capacity must be positive");
        Self {
            capacity,
            shards: RwLock::new(Vec::new()),
            enroll_gate: Mutex::new(()),
            lookups: AtomicU64::new(0),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn shard_handles(&self) -> Vec<Arc<RwLock<Shard>>> {
        self.shards.read().clone()
    }

    pub fn shard_count(&self) -> usize {
        self.shards.read().len()
    }

    pub fn enrolled_count(&self) -> usize {
        self.shard_handles()
            .iter()
            .map(|s| s.read().enrolled.len())
            .sum()
    }

    pub fn record_count(&self) -> u64 {
        self.shard_handles().iter().map(|s| s.read().records).sum()
    }

    /// Accounting payload: 36 bytes per record.
    pub fn payload_bytes(&self) -> u64 {
        self.record_count() * RECORD_BYTES
    }

    /// Total digest lookups since construction.
    pub fn lookup_count(&self) -> u64 {
        self.lookups.load(Ordering::Relaxed)
    }

    pub fn shard_of(&self, id: IdentityId) -> Option<usize> {
        self.shard_handles()
            .iter()
            .position(|s| s.read().enrolled.contains(&id))
    }

    pub fn contains(&self, id: IdentityId) -> bool {
        self.shard_of(id).is_some()
    }

    /// Records mapping to `id`, found by scanning every shard.
    pub fn records_for(&self, id: IdentityId) -> usize {
        self.shard_handles()
            .iter()
            .map(|s| s.read().records_for(id))
            .sum()
    }

    /// Stores `(digest, id)` for every digest in one visible step.
    pub fn enroll_digests(&self, id: IdentityId, digests: &[Digest]) -> Result<()> {
        if digests.is_empty() {
            return Err(Error::Params("enrollment needs at least one digest".into()));
        }
        let _gate = self.enroll_gate.lock();
        if self.contains(id) {
            return Err(Error::AlreadyEnrolled(id));
        }
        let target = {
            let mut shards = self.shards.write();
            match shards.last() {
                Some(last) if !last.read().is_full() => Arc::clone(last),
                _ => {
                    let fresh = Arc::new(RwLock::new(Shard::new(self.capacity)));
                    shards.push(Arc::clone(&fresh));
                    fresh
                }
            }
        };
        let mut shard = target.write();
        shard.primary.reserve(digests.len());
        for d in digests {
            shard.insert(*d, id);
        }
        shard.enrolled.insert(id);
        Ok(())
    }

    /// Looks up every digest in every shard and applies the threshold rule.
    pub fn authenticate_digests(&self, digests: &[Digest], tau: usize) -> MatchResult {
        let shards = self.shard_handles();
        let tally_one = |s: &Arc<RwLock<Shard>>| {
            let mut counts = HashMap::new();
            s.read().tally(digests, &mut counts);
            counts
        };
        let partials: Vec<HashMap<IdentityId, u32>> = if shards.len() > 1 {
            shards.par_iter().map(tally_one).collect()
        } else {
            shards.iter().map(tally_one).collect()
        };
        let lookups = (digests.len() * shards.len()) as u64;
        self.lookups.fetch_add(lookups, Ordering::Relaxed);
        // Identities live in exactly one shard, so the merge is a disjoint union.
        let mut counts = HashMap::new();
        for p in partials {
            counts.extend(p);
        }
        MatchResult {
            outcome: decide(&counts, tau),
            counts,
            lookups,
        }
    }

    pub fn revoke(&self, id: IdentityId) -> Result<()> {
        let _gate = self.enroll_gate.lock();
        let shards = self.shard_handles();
        let shard = shards
            .iter()
            .find(|s| s.read().enrolled.contains(&id))
            .ok_or(Error::UnknownIdentity(id))?;
        shard.write().remove(id);
        Ok(())
    }

    /// Per-shard `(capacity, enrolled ids sorted, canonical records)`.
    pub fn snapshot(&self) -> Vec<ShardSnapshot> {
        self.shard_handles()
            .iter()
            .map(|s| {
                let s = s.read();
                let mut ids: Vec<_> = s.enrolled.iter().copied().collect();
                ids.sort_unstable();
                (s.capacity, ids, s.sorted_records())
            })
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let snapshot = self.snapshot();
        w.write_all(STORE_MAGIC)?;
        w.write_all(&STORE_VERSION.to_le_bytes())?;
        w.write_all(&(snapshot.len() as u32).to_le_bytes())?;
        for (capacity, ids, records) in &snapshot {
            w.write_all(&(*capacity as u32).to_le_bytes())?;
            w.write_all(&(ids.len() as u32).to_le_bytes())?;
            w.write_all(&(records.len() as u64).to_le_bytes())?;
            for (d, id) in records {
                w.write_all(d.as_bytes())?;
                w.write_all(&id.0.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        fn take<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
            r.read_exact(buf)
                .map_err(|_| Error::Corrupt(format!("truncated {what}")))
        }
        let mut magic = [0u8; 7];
        take(&mut r, &mut magic, "magic")?;
        if &magic != STORE_MAGIC {
            return Err(Error::Corrupt("bad store magic".into()));
        }
        let mut b4 = [0u8; 4];
        take(&mut r, &mut b4, "version")?;
        let version = u32::from_le_bytes(b4);
        if version != STORE_VERSION {
            return Err(Error::Corrupt(format!(
                "unsupported store version {version}"
            )));
        }
        take(&mut r, &mut b4, "shard count")?;
        let shard_count = u32::from_le_bytes(b4) as usize;

        let mut shards = Vec::with_capacity(shard_count.min(1 << 16));
        let mut seen_ids = HashSet::new();
        let mut capacity = DEFAULT_SHARD_CAPACITY;
        let mut rec = [0u8; DIGEST_LEN + 4];
        for s in 0..shard_count {
            take(&mut r, &mut b4, "shard capacity")?;
            let cap = u32::from_le_bytes(b4) as usize;
            take(&mut r, &mut b4, "shard id count")?;
            let id_count = u32::from_le_bytes(b4) as usize;
            let mut b8 = [0u8; 8];
            take(&mut r, &mut b8, "shard record count")?;
            let record_count = u64::from_le_bytes(b8);
            if cap == 0 || id_count > cap {
                return Err(Error::Corrupt(format!(
                    "shard {s}: {id_count} ids exceed capacity {cap}"
                )));
            }
            let mut shard = Shard::new(cap);
            let mut prev: Option<(Digest, IdentityId)> = None;
            for _ in 0..record_count {
                take(&mut r, &mut rec, "record")?;
                let d = Digest(rec[..DIGEST_LEN].try_into().unwrap());
                let id = IdentityId(u32::from_le_bytes(rec[DIGEST_LEN..].try_into().unwrap()));
                if prev.is_some_and(|p| p >= (d, id)) {
                    return Err(Error::Corrupt(format!("shard {s}: records out of order")));
                }
                prev = Some((d, id));
                shard.insert(d, id);
                shard.enrolled.insert(id);
            }
            if shard.enrolled.len() != id_count {
                return Err(Error::Corrupt(format!(
                    "shard {s}: header declares {id_count} ids, records name {}",
                    shard.enrolled.len()
                )));
            }
            for id in &shard.enrolled {
                if !seen_ids.insert(*id) {
                    return Err(Error::Corrupt(format!(
                        "identity {id} appears in two shards"
                    )));
                }
            }
            capacity = cap;
            shards.push(Arc::new(RwLock::new(shard)));
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Corrupt("trailing bytes after last shard".into()));
        }
        Ok(Self {
            capacity,
            shards: RwLock::new(shards),
            enroll_gate: Mutex::new(()),
            lookups: AtomicU64::new(0),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

pub fn enroll(
    store: &ShardedStore,
    id: IdentityId,
    v: &BitString,
    hasher: &SubstringHasher,
) -> Result<()> {
    if store.contains(id) {
        return Err(Error::AlreadyEnrolled(id));
    }
    store.enroll_digests(id, &hasher.derive(v)?)
}

pub fn authenticate(
    store: &ShardedStore,
    v: &BitString,
    hasher: &SubstringHasher,
    tau: usize,
) -> Result<MatchResult> {
    Ok(store.authenticate_digests(&hasher.derive(v)?, tau))
}

pub fn revoke(store: &ShardedStore, id: IdentityId) -> Result<()> {
    store.revoke(id)
}

pub fn save_store(store: &ShardedStore, path: impl AsRef<Path>) -> Result<()> {
    store.save(path)
}

pub fn load_store(path: impl AsRef<Path>) -> Result<ShardedStore> {
    ShardedStore::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{encode_preimage, SealedKey};
    use crate::rng;
    use crate::sampling::{sample_subsets, BitWeights, SystemParams};
    use rand::Rng as _;

    fn plan(n: usize, k: usize, m: usize, seed: u64) -> Arc<SubsetPlan> {
        Arc::new(
            sample_subsets(&SystemParams::new(n, k, m), &BitWeights::uniform(n), seed).unwrap(),
        )
    }

    fn random_bits(n: usize, seed: u64) -> BitString {
        let mut r = rng::seeded(seed);
        BitString::from_fn(n, |_| r.random())
    }

    #[test]
    fn toy_plan_gives_three_digests() {
        let h = SubstringHasher::plain(plan(9, 7, 3, 0), true);
        let v: BitString = "101100111".parse().unwrap();
        let d = h.derive(&v).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d, h.derive(&v).unwrap());
    }

    #[test]
    fn digests_match_reference_encoding() {
        let p = plan(40, 10, 5, 1);
        let v = random_bits(40, 2);
        for ds in [true, false] {
            let d = derive_digests(&v, &p, HashMode::Plain, ds, None).unwrap();
            for (i, subset) in p.subsets().enumerate() {
                let idx: Vec<usize> = subset.iter().map(|&x| x as usize).collect();
                let w = v.select(&idx);
                let pre = encode_preimage(ds.then_some(i as u32), &w);
                assert_eq!(d[i], ch_hash(&pre));
            }
        }
    }

    #[test]
    fn bits_outside_every_subset_do_not_matter() {
        let p = Arc::new(
            SubsetPlan::from_subsets(6, 3, 0, &[vec![0, 1, 2], vec![1, 3, 4], vec![0, 2, 4]])
                .unwrap(),
        );
        let h = SubstringHasher::plain(p, true);
        let v: BitString = "010110".parse().unwrap();
        let mut w = v.clone();
        w.flip(5);
        assert_eq!(h.derive(&v).unwrap(), h.derive(&w).unwrap());
        w.flip(3);
        assert_ne!(h.derive(&v).unwrap(), h.derive(&w).unwrap());
    }

    #[test]
    fn derive_errors() {
        let p = plan(16, 4, 3, 0);
        let short = BitString::zeros(15);
        assert!(matches!(
            derive_digests(&short, &p, HashMode::Plain, true, None),
            Err(Error::LengthMismatch { .. })
        ));
        let v = BitString::zeros(16);
        assert!(matches!(
            derive_digests(&v, &p, HashMode::KeyedPrf, true, None),
            Err(Error::Key(_))
        ));
    }

    #[test]
    fn keyed_mode_round_trip() {
        let key: Arc<dyn KeyProvider> = Arc::new(SealedKey::from_key([7; 32]));
        let p = plan(64, 16, 20, 0);
        let keyed = SubstringHasher::keyed(Arc::clone(&p), true, key);
        let plain = SubstringHasher::plain(p, true);
        let v = random_bits(64, 1);
        assert_ne!(keyed.derive(&v).unwrap(), plain.derive(&v).unwrap());
        let store = ShardedStore::default();
        enroll(&store, IdentityId(1), &v, &keyed).unwrap();
        assert_eq!(
            authenticate(&store, &v, &keyed, 20).unwrap().matched_id(),
            Some(IdentityId(1))
        );
        assert!(authenticate(&store, &v, &plain, 1).unwrap().is_rejected());
    }

    #[test]
    fn exact_string_matches_with_full_count() {
        let m = 50;
        let h = SubstringHasher::plain(plan(128, 20, m, 3), true);
        let store = ShardedStore::default();
        let v = random_bits(128, 4);
        enroll(&store, IdentityId(9), &v, &h).unwrap();
        for tau in [1, 25, m] {
            let r = authenticate(&store, &v, &h, tau).unwrap();
            assert_eq!(
                r.outcome,
                Outcome::Matched {
                    id: IdentityId(9),
                    count: m as u32
                }
            );
        }
    }

    #[test]
    fn empty_store_rejects() {
        let h = SubstringHasher::plain(plan(32, 8, 10, 0), true);
        let store = ShardedStore::default();
        let r = authenticate(&store, &BitString::zeros(32), &h, 1).unwrap();
        assert!(r.is_rejected());
        assert_eq!(r.lookups, 0);
    }

    #[test]
    fn duplicate_enrollment_rejected() {
        let h = SubstringHasher::plain(plan(32, 8, 10, 0), true);
        let store = ShardedStore::default();
        enroll(&store, IdentityId(1), &random_bits(32, 0), &h).unwrap();
        assert!(matches!(
            enroll(&store, IdentityId(1), &random_bits(32, 1), &h),
            Err(Error::AlreadyEnrolled(IdentityId(1)))
        ));
        assert_eq!(store.record_count(), 10);
    }

    #[test]
    fn shards_open_when_full() {
        let store = ShardedStore::new(10_000);
        let digest = |i: u32| vec![ch_hash(&i.to_le_bytes())];
        store.enroll_digests(IdentityId(0), &digest(0)).unwrap();
        assert_eq!(store.shard_count(), 1);
        for i in 1..10_001u32 {
            store.enroll_digests(IdentityId(i), &digest(i)).unwrap();
        }
        assert_eq!(store.shard_count(), 2);
        assert_eq!(store.shard_of(IdentityId(10_000)), Some(1));
        assert_eq!(store.shard_of(IdentityId(9_999)), Some(0));
    }

    #[test]
    fn full_scale_single_identity_storage() {
        let m = 250_000;
        let h = SubstringHasher::plain(plan(4096, 110, m, 5), true);
        let store = ShardedStore::default();
        enroll(&store, IdentityId(0), &random_bits(4096, 6), &h).unwrap();
        assert_eq!(store.record_count(), 250_000);
        assert_eq!(store.payload_bytes(), 9_000_000);
        assert_eq!(storage_bytes_per_identity(m), 9_000_000);
    }

    #[test]
    fn lookups_are_m_per_shard() {
        let m = 30;
        let h = SubstringHasher::plain(plan(64, 8, m, 0), true);
        let store = ShardedStore::new(3);
        for i in 0..7 {
            enroll(&store, IdentityId(i), &random_bits(64, u64::from(i)), &h).unwrap();
        }
        assert_eq!(store.shard_count(), 3);
        let r = authenticate(&store, &random_bits(64, 100), &h, 1).unwrap();
        assert_eq!(r.lookups, (m * 3) as u64);
        assert_eq!(store.lookup_count(), (m * 3) as u64);
    }

    #[test]
    fn collision_lists_every_identity() {
        let store = ShardedStore::default();
        let shared = ch_hash(b"shared");
        let a = ch_hash(b"a");
        store.enroll_digests(IdentityId(1), &[shared, a]).unwrap();
        store.enroll_digests(IdentityId(2), &[shared]).unwrap();
        let r = store.authenticate_digests(&[shared, a], 1);
        assert_eq!(r.counts[&IdentityId(1)], 2);
        assert_eq!(r.counts[&IdentityId(2)], 1);
        assert_eq!(r.matched_id(), Some(IdentityId(1)));
        // Tie at the maximum rejects.
        let r = store.authenticate_digests(&[shared], 1);
        assert!(r.is_rejected());
        assert_eq!(r.best_count(), 1);
        // Revoking the primary holder promotes the other identity.
        store.revoke(IdentityId(1)).unwrap();
        let r = store.authenticate_digests(&[shared, a], 1);
        assert_eq!(r.matched_id(), Some(IdentityId(2)));
        assert_eq!(store.record_count(), 1);
        assert_eq!(store.records_for(IdentityId(1)), 0);
    }

    #[test]
    fn threshold_is_inclusive() {
        let store = ShardedStore::default();
        let ds: Vec<Digest> = (0..5u8).map(|i| ch_hash(&[i])).collect();
        store.enroll_digests(IdentityId(3), &ds).unwrap();
        let probe = &ds[..3];
        assert_eq!(
            store.authenticate_digests(probe, 3).matched_id(),
            Some(IdentityId(3))
        );
        assert!(store.authenticate_digests(probe, 4).is_rejected());
    }

    #[test]
    fn revoke_semantics() {
        let h = SubstringHasher::plain(plan(64, 16, 25, 2), true);
        let store = ShardedStore::default();
        let (a, b) = (random_bits(64, 1), random_bits(64, 2));
        enroll(&store, IdentityId(1), &a, &h).unwrap();
        enroll(&store, IdentityId(2), &b, &h).unwrap();
        revoke(&store, IdentityId(1)).unwrap();
        assert!(authenticate(&store, &a, &h, 1).unwrap().is_rejected());
        assert_eq!(store.records_for(IdentityId(1)), 0);
        assert_eq!(
            authenticate(&store, &b, &h, 1).unwrap().matched_id(),
            Some(IdentityId(2))
        );
        assert!(matches!(
            revoke(&store, IdentityId(1)),
            Err(Error::UnknownIdentity(_))
        ));

        let fresh = random_bits(64, 3);
        enroll(&store, IdentityId(1), &fresh, &h).unwrap();
        assert_eq!(
            authenticate(&store, &fresh, &h, 1).unwrap().matched_id(),
            Some(IdentityId(1))
        );
        assert!(authenticate(&store, &a, &h, 1).unwrap().is_rejected());
    }

    #[test]
    fn save_load_round_trip() {
        let h = SubstringHasher::plain(plan(64, 16, 12, 2), true);
        let store = ShardedStore::new(2);
        for i in 0..5 {
            enroll(&store, IdentityId(i), &random_bits(64, u64::from(i)), &h).unwrap();
        }
        store
            .enroll_digests(
                IdentityId(77),
                &[ch_hash(b"x"), h.derive(&random_bits(64, 0)).unwrap()[0]],
            )
            .unwrap();
        assert_eq!(store.shard_count(), 3);
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..7], b"SBADB1\0");
        assert_eq!(u32::from_le_bytes(buf[11..15].try_into().unwrap()), 3);
        let back = ShardedStore::read_from(&buf[..]).unwrap();
        assert_eq!(back.snapshot(), store.snapshot());
        assert_eq!(back.record_count(), store.record_count());
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(again, buf);

        assert!(matches!(
            ShardedStore::read_from(&buf[..buf.len() - 3]),
            Err(Error::Corrupt(_))
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            ShardedStore::read_from(&bad[..]),
            Err(Error::Corrupt(_))
        ));
    }

    #[test]
    fn empty_store_round_trip() {
        let mut buf = Vec::new();
        ShardedStore::default().write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 15);
        assert_eq!(ShardedStore::read_from(&buf[..]).unwrap().shard_count(), 0);
    }

    #[test]
    fn clone_is_deep() {
        let store = ShardedStore::default();
        store
            .enroll_digests(IdentityId(1), &[ch_hash(b"1")])
            .unwrap();
        let copy = store.clone();
        store.revoke(IdentityId(1)).unwrap();
        assert!(copy.contains(IdentityId(1)));
        assert!(!store.contains(IdentityId(1)));
    }
}

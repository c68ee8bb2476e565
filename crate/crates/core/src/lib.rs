//! Privacy-preserving one-to-many biometric identification.
//!
//! A biometric bit string `v` of length `n` is cut into `m` public
//! substrings of length `k`; each substring is hashed (SHA3-256 or a keyed
//! PRF) and the digests are stored against the user's identity in a sharded
//! hash map. A probe authenticates as the identity whose stored digests it
//! hits at least `tau` times. Only digests are ever stored.
//!
//! Modules, bottom-up:
//!
//! * [`population`]: synthetic identities and labeled dataset files
//! * [`lsh`]: random-hyperplane templates-to-bits and Hamming distance
//! * [`sampling`]: system parameters and the subset plan (uniform or
//!   mutual-information weighted)
//! * [`crypto`]: preimage encoding, SHA3-256, sealed HMAC-SHA3-256 keys
//! * [`engine`]: sharded store with enroll / authenticate / revoke
//! * [`entropy`]: min-entropy estimates of the hashed substrings
//! * [`bench`]: FNR/FPR, timing, storage and the linear-scan baseline
//! * [`service`]: length-prefixed text protocol over TCP
//! * [`cli`]: the `sba` command line

pub mod bench;
pub mod bits;
pub mod cli;
pub mod crypto;
pub mod engine;
pub mod entropy;
pub mod error;
pub mod lsh;
pub mod population;
pub mod rng;
pub mod sampling;
pub mod service;

pub use bits::BitString;
pub use crypto::{Digest, HashMode, KeyProvider, SealedKey};
pub use engine::{MatchResult, Outcome, ShardedStore, SubstringHasher};
pub use error::{Error, Result};
pub use population::{IdentityId, LabeledSample, PopulationConfig, Session, Template};
pub use sampling::{BitWeights, SubsetPlan, SystemParams};

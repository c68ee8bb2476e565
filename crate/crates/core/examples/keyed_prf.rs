// Keyed hashing: digests come from a sealed HMAC-SHA3-256 provider, so a
// leaked database cannot be brute-forced without the key.

use std::sync::Arc;

use sba::crypto::KeyProvider;
use sba::engine::{authenticate, enroll};
use sba::population::generate_population;
use sba::sampling::{sample_subsets, BitWeights};
use sba::{PopulationConfig, SealedKey, Session, ShardedStore, SubstringHasher, SystemParams};

pub fn run_example() -> sba::Result<()> {
    let n = 512;
    let plan = Arc::new(sample_subsets(
        &SystemParams::new(n, 16, 200),
        &BitWeights::uniform(n),
        1,
    )?);
    let key: Arc<dyn KeyProvider> = Arc::new(SealedKey::generate());
    let keyed = SubstringHasher::keyed(Arc::clone(&plan), true, key);
    let plain = SubstringHasher::plain(plan, true);

    let people = generate_population(&PopulationConfig::bit_level(20, n, 0.02, 2))?;
    let store = ShardedStore::default();
    for s in people.iter().filter(|s| s.session == Session::Enroll) {
        enroll(&store, s.id, s.bits().unwrap(), &keyed)?;
    }
    let probe = people[7].bits().unwrap();
    println!(
        "keyed probe -> {:?}",
        authenticate(&store, probe, &keyed, 1)?.outcome
    );
    println!(
        "unkeyed probe -> {:?}",
        authenticate(&store, probe, &plain, 1)?.outcome
    );

    let unprovisioned = SealedKey::unprovisioned();
    println!(
        "evaluating without a key: {}",
        unprovisioned.evaluate(b"x").unwrap_err()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> sba::Result<()> {
    run_example()
}

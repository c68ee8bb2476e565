// Enroll a handful of synthetic identities, authenticate a noisy probe,
// then revoke it.

use std::sync::Arc;

use sba::engine::{authenticate, enroll, revoke};
use sba::population::generate_population;
use sba::sampling::setup;
use sba::{PopulationConfig, Session, ShardedStore, SubstringHasher, SystemParams};

pub fn run_example() -> sba::Result<()> {
    let mut params = SystemParams::new(1024, 48, 500);
    params.zeta = 0.0;
    let (plan, _) = setup(&params, None, 7)?;
    let hasher = SubstringHasher::plain(Arc::new(plan), params.domain_separation);

    let people = generate_population(&PopulationConfig::bit_level(100, params.n, 0.02, 8))?;
    let store = ShardedStore::default();
    for s in people.iter().filter(|s| s.session == Session::Enroll) {
        enroll(&store, s.id, s.bits().unwrap(), &hasher)?;
    }
    println!(
        "enrolled {} identities, {} records",
        store.enrolled_count(),
        store.record_count()
    );

    let probe = &people[2 * 42 + 1];
    let result = authenticate(&store, probe.bits().unwrap(), &hasher, params.tau)?;
    println!("probe for {} -> {:?}", probe.id, result.outcome);

    revoke(&store, probe.id)?;
    let after = authenticate(&store, probe.bits().unwrap(), &hasher, params.tau)?;
    assert!(after.is_rejected());
    println!("after revocation -> {:?}", after.outcome);
    Ok(())
}

#[allow(dead_code)]
fn main() -> sba::Result<()> {
    run_example()
}

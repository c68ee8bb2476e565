// Real-valued templates through random hyperplanes into the protocol.

use std::sync::Arc;

use sba::lsh::build_bank;
use sba::population::generate_population;
use sba::sampling::{sample_subsets, BitWeights};
use sba::{PopulationConfig, Session, ShardedStore, SubstringHasher, SystemParams};

pub fn run_example() -> sba::Result<()> {
    let (d, n) = (128, 1024);
    let bank = build_bank(d, n, 1)?;
    let people = generate_population(&PopulationConfig::template_level(50, d, 0.2, 2))?;

    let a = bank.project(people[0].template().unwrap())?;
    let a2 = bank.project(people[1].template().unwrap())?;
    let b = bank.project(people[2].template().unwrap())?;
    println!(
        "same identity: {} of {n} bits differ, different identities: {}",
        a.hamming(&a2)?,
        a.hamming(&b)?
    );

    let plan = sample_subsets(&SystemParams::new(n, 24, 400), &BitWeights::uniform(n), 3)?;
    let hasher = SubstringHasher::plain(Arc::new(plan), true);
    let store = ShardedStore::default();
    for s in people.iter().filter(|s| s.session == Session::Enroll) {
        store.enroll_digests(s.id, &hasher.derive(&bank.project(s.template().unwrap())?)?)?;
    }
    let mut correct = 0;
    for s in people.iter().filter(|s| s.session == Session::Auth) {
        let r =
            store.authenticate_digests(&hasher.derive(&bank.project(s.template().unwrap())?)?, 1);
        correct += usize::from(r.matched_id() == Some(s.id));
    }
    println!("{correct} of 50 auth templates matched their own identity");
    Ok(())
}

#[allow(dead_code)]
fn main() -> sba::Result<()> {
    run_example()
}

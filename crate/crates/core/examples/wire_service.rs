// A scanner hashing locally and talking to the server over TCP.

use std::sync::Arc;

use sba::population::generate_population;
use sba::sampling::{sample_subsets, BitWeights};
use sba::service::{serve, Client, ServiceConfig};
use sba::{PopulationConfig, ShardedStore, SubstringHasher, SystemParams};

pub fn run_example() -> sba::Result<()> {
    let n = 512;
    let plan = sample_subsets(&SystemParams::new(n, 32, 100), &BitWeights::uniform(n), 5)?;
    let hasher = SubstringHasher::plain(Arc::new(plan), true);
    let server = serve(
        "127.0.0.1:0",
        Arc::new(ShardedStore::default()),
        hasher.clone(),
        ServiceConfig::default(),
    )?;
    println!("serving on {}", server.local_addr());

    let people = generate_population(&PopulationConfig::bit_level(10, n, 0.03, 6))?;
    let mut scanner = Client::connect(server.local_addr())?;
    for pair in people.chunks(2) {
        scanner.enroll_digests(pair[0].id, &hasher.derive(pair[0].bits().unwrap())?)?;
    }
    let r = scanner.authenticate_digests(&hasher.derive(people[9].bits().unwrap())?)?;
    println!(
        "auth over the wire -> {:?} after {} lookups",
        r.outcome, r.lookups
    );
    println!("{:?}", scanner.status()?);
    server.shutdown();
    Ok(())
}

#[allow(dead_code)]
fn main() -> sba::Result<()> {
    run_example()
}

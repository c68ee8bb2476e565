// Plan, dataset and store files written and read back.

use std::sync::Arc;

use sba::engine::{enroll, load_store, save_store};
use sba::population::{
    generate_population, load_dataset, save_dataset, DatasetFormat, LoadOptions,
};
use sba::sampling::{sample_subsets, BitWeights};
use sba::{PopulationConfig, Session, ShardedStore, SubsetPlan, SubstringHasher, SystemParams};

pub fn run_example() -> sba::Result<()> {
    let dir = std::env::temp_dir().join(format!("sba-persistence-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let n = 256;

    let plan = sample_subsets(&SystemParams::new(n, 32, 64), &BitWeights::uniform(n), 1)?;
    plan.save(dir.join("plan.bin"))?;
    let plan = SubsetPlan::load(dir.join("plan.bin"))?;

    let people = generate_population(&PopulationConfig::bit_level(30, n, 0.0, 2))?;
    save_dataset(dir.join("people.pop"), &people)?;
    let people = load_dataset(
        dir.join("people.pop"),
        DatasetFormat::BitLevel,
        &LoadOptions::default(),
    )?;

    let hasher = SubstringHasher::plain(Arc::new(plan), true);
    let store = ShardedStore::new(10);
    for s in people.iter().filter(|s| s.session == Session::Enroll) {
        enroll(&store, s.id, s.bits().unwrap(), &hasher)?;
    }
    save_store(&store, dir.join("store.db"))?;
    let reloaded = load_store(dir.join("store.db"))?;
    assert_eq!(reloaded.snapshot(), store.snapshot());
    println!(
        "{} identities in {} shards, {} bytes on disk",
        reloaded.enrolled_count(),
        reloaded.shard_count(),
        std::fs::metadata(dir.join("store.db"))?.len()
    );
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> sba::Result<()> {
    run_example()
}

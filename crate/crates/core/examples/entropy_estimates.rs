// Min-entropy estimates for iid and correlated bit strings.

use sba::entropy::{entropy_report, EntropyOptions};
use sba::population::generate_population;
use sba::sampling::{sample_subsets, BitWeights};
use sba::{PopulationConfig, SystemParams};

pub fn run_example() -> sba::Result<()> {
    let (n, k) = (192, 64);
    let plan = sample_subsets(&SystemParams::new(n, k, 50), &BitWeights::uniform(n), 1)?;
    for repeat in [1, 2, 4] {
        let pop =
            generate_population(&PopulationConfig::bit_level(500, n, 0.0, 2).with_repeat(repeat))?;
        let report = entropy_report(&plan, &pop, &EntropyOptions::default())?;
        println!(
            "each bit repeated {repeat}x: e in [{:.1}, {:.1}], mean {:.1} bits (k = {k})",
            report.min, report.max, report.mean
        );
    }
    let pop = generate_population(&PopulationConfig::bit_level(500, n, 0.0, 3))?;
    let csv = entropy_report(&plan, &pop, &EntropyOptions::default())?.to_csv();
    println!("{}", csv.lines().take(3).collect::<Vec<_>>().join("\n"));
    Ok(())
}

#[allow(dead_code)]
fn main() -> sba::Result<()> {
    run_example()
}

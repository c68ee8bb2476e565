// Mutual-information weighted subset sampling.
//
// Half of the bits in this population are stable per identity and half are
// pure noise; raising `zeta` steers subsets toward the stable half.

use sba::population::{generate_population, Payload};
use sba::sampling::{estimate_mutual_information, setup};
use sba::{BitString, LabeledSample, PopulationConfig, SystemParams};

pub fn run_example() -> sba::Result<()> {
    let n = 256;
    let noise = generate_population(&PopulationConfig::bit_level(300, n, 0.45, 1))?;
    let stable = generate_population(&PopulationConfig::bit_level(300, n, 0.0, 2))?;
    let training: Vec<LabeledSample> = stable
        .iter()
        .zip(&noise)
        .map(|(s, z)| {
            let (sb, zb) = (s.bits().unwrap(), z.bits().unwrap());
            LabeledSample {
                id: s.id,
                session: s.session,
                payload: Payload::Bits(BitString::from_fn(n, |i| {
                    if i < n / 2 {
                        sb.get(i)
                    } else {
                        zb.get(i)
                    }
                })),
            }
        })
        .collect();

    let mi = estimate_mutual_information(&training)?;
    let avg = |r: std::ops::Range<usize>| mi[r.clone()].iter().sum::<f64>() / r.len() as f64;
    println!(
        "mean mi: stable half {:.3}, noisy half {:.3}",
        avg(0..n / 2),
        avg(n / 2..n)
    );

    for zeta in [0.0, 1.0, 4.0] {
        let mut params = SystemParams::new(n, 32, 200);
        params.zeta = zeta;
        let (plan, _) = setup(&params, Some(&training), 3)?;
        let picked: usize = plan
            .subsets()
            .map(|s| s.iter().filter(|&&i| usize::from(i) < n / 2).count())
            .sum();
        println!(
            "zeta {zeta}: {:.1}% of sampled positions are stable bits",
            100.0 * picked as f64 / (plan.m() * plan.k()) as f64
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> sba::Result<()> {
    run_example()
}

// The linear-scan Euclidean baseline against the hashed-substring system on
// the same template populations.

use sba::bench::{run_insecure_baseline, run_secure_on_templates, ExperimentConfig};

pub fn run_example() -> sba::Result<()> {
    let cfg = ExperimentConfig {
        sizes: vec![200, 2_000],
        fn_probe_count: 100,
        fp_probe_count: 100,
        trials: 1,
        n: 1024,
        m: 400,
        k_grid: vec![32],
        dimension: 256,
        sigma: 0.2,
        baseline_threshold: 0.6,
        ..Default::default()
    };
    for r in run_insecure_baseline(&cfg)?
        .iter()
        .chain(&run_secure_on_templates(&cfg)?)
    {
        println!(
            "{:<16} N={:>5} fnr={:.3} fpr={:.3} auth={:.3} ms, {} bytes/id",
            r.experiment, r.enrolled, r.fnr, r.fpr, r.auth_ms, r.bytes_per_id
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> sba::Result<()> {
    run_example()
}

// FNR/FPR sweep over substring length and threshold, next to the
// closed-form false-negative rate.

use sba::bench::{average_trials, fnr_exact_uniform, run_error_experiment, ExperimentConfig};

pub fn run_example() -> sba::Result<()> {
    let cfg = ExperimentConfig {
        sizes: vec![200],
        fn_probe_count: 200,
        fp_probe_count: 200,
        trials: 2,
        n: 1024,
        m: 300,
        k_grid: vec![32, 64],
        tau_grid: vec![1, 2],
        p_same_grid: vec![0.05],
        ..Default::default()
    };
    let rows = average_trials(&run_error_experiment(&cfg)?);
    for r in &rows {
        println!(
            "k={:>3} tau={} fnr={:.4} (exact {:.4}) fpr={:.3} error={:.3}",
            r.k,
            r.tau,
            r.fnr,
            fnr_exact_uniform(cfg.n, r.k, cfg.m, r.p_same, r.tau),
            r.fpr,
            r.error_rate
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> sba::Result<()> {
    run_example()
}

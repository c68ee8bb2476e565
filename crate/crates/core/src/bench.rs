//! Error-rate, timing, storage and baseline experiments.
//!
//! Every trial derives its own seeds from the configured base seed, so a
//! config file fully determines the non-timing columns of the output.
//!
//! False negatives are counted over the auth samples of the first
//! `fn_probe_count` enrolled identities; false positives over
//! `fp_probe_count` fresh identities that were never enrolled.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng as _, RngCore};
use rand_distr::{Binomial, Distribution};

use crate::bits::BitString;
use crate::crypto::{Digest, HashMode, KeyProvider, SealedKey};
use crate::engine::{storage_bytes_per_identity, ShardedStore, SubstringHasher};
use crate::error::{Error, Result};
use crate::lsh::HyperplaneBank;
use crate::population::{
    generate_population, IdentityId, LabeledSample, PopulationConfig, Session,
};
use crate::rng;
use crate::sampling::{setup, SystemParams};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Enrolled database sizes.
    pub sizes: Vec<usize>,
    pub fn_probe_count: usize,
    pub fp_probe_count: usize,
    pub trials: usize,
    pub n: usize,
    pub m: usize,
    pub k_grid: Vec<usize>,
    pub zeta_grid: Vec<f64>,
    pub tau_grid: Vec<usize>,
    pub p_same_grid: Vec<f64>,
    pub seed: u64,
    pub hash_mode: HashMode,
    pub domain_separation: bool,
    pub shard_capacity: usize,
    /// Identities in the separate population used to estimate per-bit
    /// mutual information when `zeta > 0`.
    pub training_ids: usize,
    /// Probes timed per database size in the timing experiment.
    pub timing_probes: usize,
    /// Template dimension for the baseline comparison.
    pub dimension: usize,
    /// Template noise scale for the baseline comparison.
    pub sigma: f64,
    /// Euclidean acceptance threshold of the linear-scan baseline.
    pub baseline_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sizes: vec![1_000, 10_000],
            fn_probe_count: 1_000,
            fp_probe_count: 1_000,
            trials: 5,
            n: 1024,
            m: 1_000,
            k_grid: vec![64],
            zeta_grid: vec![0.0],
            tau_grid: vec![1],
            p_same_grid: vec![0.05],
            seed: 1,
            hash_mode: HashMode::Plain,
            domain_separation: true,
            shard_capacity: crate::engine::DEFAULT_SHARD_CAPACITY,
            training_ids: 1_000,
            timing_probes: 200,
            dimension: 1024,
            sigma: 0.3,
            baseline_threshold: 0.9,
        }
    }
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped;
/// `-` in keys is read as `_`.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", lineno + 1)))?;
        out.insert(key.trim().replace('-', "_"), value.trim().to_string());
    }
    Ok(out)
}

fn parse_one<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| parse_one(key, v.trim().replace('_', "").as_str()))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid boolean {value:?} for {key}"
        ))),
    }
}

impl ExperimentConfig {
    /// Applies one setting. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = value.replace('_', "");
        match key.replace('-', "_").as_str() {
            "sizes" | "population_sizes" => self.sizes = parse_list(key, value)?,
            "fn_probes" | "fn_probe_count" => self.fn_probe_count = parse_one(key, &num)?,
            "fp_probes" | "fp_probe_count" => self.fp_probe_count = parse_one(key, &num)?,
            "trials" => self.trials = parse_one(key, &num)?,
            "n" => self.n = parse_one(key, &num)?,
            "m" => self.m = parse_one(key, &num)?,
            "k" => self.k_grid = parse_list(key, value)?,
            "zeta" => self.zeta_grid = parse_list(key, value)?,
            "tau" => self.tau_grid = parse_list(key, value)?,
            "p_same" => self.p_same_grid = parse_list(key, value)?,
            "seed" => self.seed = parse_one(key, &num)?,
            "hash_mode" => self.hash_mode = value.parse()?,
            "domain_separation" => self.domain_separation = parse_bool(key, value)?,
            "shard_capacity" => self.shard_capacity = parse_one(key, &num)?,
            "training_ids" => self.training_ids = parse_one(key, &num)?,
            "timing_probes" => self.timing_probes = parse_one(key, &num)?,
            "dimension" | "d" => self.dimension = parse_one(key, &num)?,
            "sigma" => self.sigma = parse_one(key, value)?,
            "baseline_threshold" => self.baseline_threshold = parse_one(key, value)?,
            other => return Err(Error::Config(format!("unknown experiment key {other:?}"))),
        }
        Ok(())
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_kv_string(&self) -> String {
        fn join<T: ToString>(v: &[T]) -> String {
            v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
        }
        let mut out = String::new();
        let _ = writeln!(out, "sizes = {}", join(&self.sizes));
        let _ = writeln!(out, "fn_probes = {}", self.fn_probe_count);
        let _ = writeln!(out, "fp_probes = {}", self.fp_probe_count);
        let _ = writeln!(out, "trials = {}", self.trials);
        let _ = writeln!(out, "n = {}", self.n);
        let _ = writeln!(out, "m = {}", self.m);
        let _ = writeln!(out, "k = {}", join(&self.k_grid));
        let _ = writeln!(out, "zeta = {}", join(&self.zeta_grid));
        let _ = writeln!(out, "tau = {}", join(&self.tau_grid));
        let _ = writeln!(out, "p_same = {}", join(&self.p_same_grid));
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "hash_mode = {}", self.hash_mode);
        let _ = writeln!(out, "domain_separation = {}", self.domain_separation);
        let _ = writeln!(out, "shard_capacity = {}", self.shard_capacity);
        let _ = writeln!(out, "training_ids = {}", self.training_ids);
        let _ = writeln!(out, "timing_probes = {}", self.timing_probes);
        let _ = writeln!(out, "dimension = {}", self.dimension);
        let _ = writeln!(out, "sigma = {}", self.sigma);
        let _ = writeln!(out, "baseline_threshold = {}", self.baseline_threshold);
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return bad("sizes must be a non-empty list of positive counts".into());
        }
        if self.fn_probe_count > *self.sizes.iter().min().unwrap() {
            return bad(format!(
                "fn_probes = {} exceeds the smallest database size",
                self.fn_probe_count
            ));
        }
        if self.k_grid.is_empty()
            || self.zeta_grid.is_empty()
            || self.tau_grid.is_empty()
            || self.p_same_grid.is_empty()
        {
            return bad("parameter grids must be non-empty".into());
        }
        for &k in &self.k_grid {
            for &tau in &self.tau_grid {
                for &zeta in &self.zeta_grid {
                    let mut p = SystemParams::new(self.n, k, self.m);
                    p.tau = tau;
                    p.zeta = zeta;
                    p.validate().map_err(|e| Error::Config(e.to_string()))?;
                }
            }
        }
        if let Some(p) = self.p_same_grid.iter().find(|p| !(0.0..0.5).contains(*p)) {
            return bad(format!("p_same {p} outside [0, 0.5)"));
        }
        if self.shard_capacity == 0 {
            return bad("shard_capacity must be positive".into());
        }
        if self.zeta_grid.iter().any(|&z| z != 0.0) && self.training_ids < 2 {
            return bad("zeta > 0 needs at least 2 training identities".into());
        }
        if self.sigma.is_nan() || self.sigma < 0.0 || self.dimension == 0 {
            return bad("baseline needs sigma >= 0 and dimension >= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub experiment: String,
    /// Enrolled database size.
    pub enrolled: usize,
    pub k: usize,
    pub m: usize,
    pub tau: usize,
    pub zeta: f64,
    /// Bit-flip probability, or template noise scale for template runs.
    pub p_same: f64,
    pub trial: usize,
    pub fnr: f64,
    pub fpr: f64,
    pub error_rate: f64,
    pub enroll_ms: f64,
    pub auth_ms: f64,
    pub bytes_per_id: u64,
    pub fn_probes: usize,
    pub fp_probes: usize,
    pub false_negatives: usize,
    pub false_positives: usize,
    pub lookups_per_auth: f64,
}

#[derive(Clone, Copy)]
struct Tally {
    probes: usize,
    errors: usize,
}

impl Tally {
    fn rate(self) -> f64 {
        if self.probes == 0 {
            0.0
        } else {
            self.errors as f64 / self.probes as f64
        }
    }
}

fn ms(d: Duration, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        d.as_secs_f64() * 1e3 / count as f64
    }
}

struct Row<'a> {
    experiment: &'a str,
    enrolled: usize,
    k: usize,
    m: usize,
    tau: usize,
    zeta: f64,
    p_same: f64,
    trial: usize,
    fnr: Tally,
    fpr: Tally,
    enroll_ms: f64,
    auth_ms: f64,
    lookups_per_auth: f64,
}

impl Row<'_> {
    fn finish(self) -> BenchResult {
        let (fnr, fpr) = (self.fnr.rate(), self.fpr.rate());
        BenchResult {
            experiment: self.experiment.to_string(),
            enrolled: self.enrolled,
            k: self.k,
            m: self.m,
            tau: self.tau,
            zeta: self.zeta,
            p_same: self.p_same,
            trial: self.trial,
            fnr,
            fpr,
            error_rate: (fnr + fpr) / 2.0,
            enroll_ms: self.enroll_ms,
            auth_ms: self.auth_ms,
            bytes_per_id: storage_bytes_per_identity(self.m),
            fn_probes: self.fnr.probes,
            fp_probes: self.fpr.probes,
            false_negatives: self.fnr.errors,
            false_positives: self.fpr.errors,
            lookups_per_auth: self.lookups_per_auth,
        }
    }
}

fn trial_seed(cfg: &ExperimentConfig, trial: usize) -> u64 {
    rng::derive_seed(cfg.seed, trial as u64)
}

fn key_for(seed: u64) -> Arc<dyn KeyProvider> {
    let mut key = [0u8; 32];
    rng::seeded(rng::derive_seed(seed, 0x6b6579)).fill_bytes(&mut key);
    Arc::new(SealedKey::from_key(key))
}

fn hasher_for(
    cfg: &ExperimentConfig,
    params: &SystemParams,
    seed: u64,
    training_p_same: f64,
) -> Result<SubstringHasher> {
    let training = if params.zeta != 0.0 {
        Some(generate_population(
            &PopulationConfig::bit_level(
                cfg.training_ids,
                cfg.n,
                training_p_same,
                rng::derive_seed(seed, 3),
            )
            .with_first_id(u32::MAX - cfg.training_ids as u32),
        )?)
    } else {
        None
    };
    let (plan, _) = setup(params, training.as_deref(), rng::derive_seed(seed, 1))?;
    let key = (cfg.hash_mode == HashMode::KeyedPrf).then(|| key_for(seed));
    Ok(SubstringHasher::new(
        Arc::new(plan),
        cfg.hash_mode,
        cfg.domain_separation,
        key,
    ))
}

fn bits_of(samples: &[LabeledSample], id: usize, session: Session) -> &BitString {
    let s = &samples[2 * id + usize::from(session == Session::Auth)];
    debug_assert!(s.id.0 as usize == id && s.session == session);
    s.bits().expect("bit-level population")
}

struct Probed {
    /// Auth digests of the false-negative probes (enrolled ids, in order).
    fn_digests: Vec<Vec<Digest>>,
    fp_digests: Vec<Vec<Digest>>,
    enroll_time: Duration,
    /// Derivation plus lookup time at the first threshold.
    auth_time: Duration,
    lookups: u64,
}

/// Enrolls `enrolled` identities and derives every probe.
fn enroll_and_probe(
    hasher: &SubstringHasher,
    store: &ShardedStore,
    pop: &[LabeledSample],
    enrolled: usize,
    fn_probes: usize,
    fp_probes: usize,
    first_tau: usize,
) -> Result<Probed> {
    let start = Instant::now();
    for id in 0..enrolled {
        let digests = hasher.derive(bits_of(pop, id, Session::Enroll))?;
        store.enroll_digests(IdentityId(id as u32), &digests)?;
    }
    let enroll_time = start.elapsed();

    let mut auth_time = Duration::ZERO;
    let mut lookups = 0;
    let mut probe = |id: usize| -> Result<Vec<Digest>> {
        let start = Instant::now();
        let digests = hasher.derive(bits_of(pop, id, Session::Auth))?;
        let r = store.authenticate_digests(&digests, first_tau);
        auth_time += start.elapsed();
        lookups += r.lookups;
        Ok(digests)
    };
    let fn_digests = (0..fn_probes).map(&mut probe).collect::<Result<Vec<_>>>()?;
    let fp_digests = (enrolled..enrolled + fp_probes)
        .map(&mut probe)
        .collect::<Result<Vec<_>>>()?;
    Ok(Probed {
        fn_digests,
        fp_digests,
        enroll_time,
        auth_time,
        lookups,
    })
}

fn count_errors(store: &ShardedStore, probed: &Probed, tau: usize) -> (Tally, Tally) {
    let false_negatives = probed
        .fn_digests
        .iter()
        .enumerate()
        .filter(|(id, d)| {
            store.authenticate_digests(d, tau).matched_id() != Some(IdentityId(*id as u32))
        })
        .count();
    let false_positives = probed
        .fp_digests
        .iter()
        .filter(|d| !store.authenticate_digests(d, tau).is_rejected())
        .count();
    (
        Tally {
            probes: probed.fn_digests.len(),
            errors: false_negatives,
        },
        Tally {
            probes: probed.fp_digests.len(),
            errors: false_positives,
        },
    )
}

fn sweep(
    cfg: &ExperimentConfig,
    experiment: &str,
    fn_probes_for: impl Fn(usize) -> usize,
    fp_probes_for: impl Fn(usize) -> usize,
) -> Result<Vec<BenchResult>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for &p_same in &cfg.p_same_grid {
        for &k in &cfg.k_grid {
            for &zeta in &cfg.zeta_grid {
                for &enrolled in &cfg.sizes {
                    for trial in 0..cfg.trials {
                        let seed = trial_seed(cfg, trial);
                        let mut params = SystemParams::new(cfg.n, k, cfg.m);
                        params.zeta = zeta;
                        params.hash_mode = cfg.hash_mode;
                        params.domain_separation = cfg.domain_separation;
                        let hasher = hasher_for(cfg, &params, seed, p_same)?;
                        let (fn_probes, fp_probes) =
                            (fn_probes_for(enrolled), fp_probes_for(enrolled));
                        let pop = generate_population(&PopulationConfig::bit_level(
                            enrolled + fp_probes,
                            cfg.n,
                            p_same,
                            rng::derive_seed(seed, 2),
                        ))?;
                        let store = ShardedStore::new(cfg.shard_capacity);
                        let probed = enroll_and_probe(
                            &hasher,
                            &store,
                            &pop,
                            enrolled,
                            fn_probes,
                            fp_probes,
                            cfg.tau_grid[0],
                        )?;
                        let probe_total = fn_probes + fp_probes;
                        for &tau in &cfg.tau_grid {
                            let (fnr, fpr) = count_errors(&store, &probed, tau);
                            out.push(
                                Row {
                                    experiment,
                                    enrolled,
                                    k,
                                    m: cfg.m,
                                    tau,
                                    zeta,
                                    p_same,
                                    trial,
                                    fnr,
                                    fpr,
                                    enroll_ms: ms(probed.enroll_time, enrolled),
                                    auth_ms: ms(probed.auth_time, probe_total),
                                    lookups_per_auth: probed.lookups as f64
                                        / probe_total.max(1) as f64,
                                }
                                .finish(),
                            );
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// FNR/FPR over the full parameter grid, one row per point, size and trial.
pub fn run_error_experiment(cfg: &ExperimentConfig) -> Result<Vec<BenchResult>> {
    sweep(cfg, "error", |_| cfg.fn_probe_count, |_| cfg.fp_probe_count)
}

/// Mean per-user enrollment and authentication time at each database size,
/// with `timing_probes` enrolled and `timing_probes` fresh probes.
pub fn run_timing_experiment(cfg: &ExperimentConfig) -> Result<Vec<BenchResult>> {
    sweep(
        cfg,
        "timing",
        |enrolled| cfg.timing_probes.min(enrolled),
        |_| cfg.timing_probes,
    )
}

/// Probability that a uniform `k`-subset of `[n]` avoids `t_prime` fixed
/// positions: `C(n - t', k) / C(n, k)`.
pub fn subset_survival_oracle(n: usize, k: usize, t_prime: usize) -> f64 {
    if k > n || t_prime > n {
        return 0.0;
    }
    if k + t_prime > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, j| {
        acc * (n - t_prime - j) as f64 / (n - j) as f64
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleEstimate {
    pub fnr: f64,
    pub std_error: f64,
    pub replicates: usize,
}

/// Monte-Carlo false-negative rate for the bit-level model with uniform
/// subsets, simulated without any hashing: draw the enroll and auth flip
/// patterns, count differing positions, then draw how many of `m` uniform
/// subsets avoid all of them.
pub fn fnr_monte_carlo_oracle(
    n: usize,
    k: usize,
    m: usize,
    p_same: f64,
    tau: usize,
    replicates: usize,
    seed: u64,
) -> Result<OracleEstimate> {
    if replicates == 0 {
        return Err(Error::Params("oracle needs at least one replicate".into()));
    }
    let mut r = rng::seeded(seed);
    let mut failures = 0usize;
    for _ in 0..replicates {
        let differing = (0..n)
            .filter(|_| r.random_bool(p_same) != r.random_bool(p_same))
            .count();
        let survive = subset_survival_oracle(n, k, differing);
        let surviving = Binomial::new(m as u64, survive)
            .map_err(|e| Error::Params(e.to_string()))?
            .sample(&mut r);
        if (surviving as usize) < tau {
            failures += 1;
        }
    }
    let fnr = failures as f64 / replicates as f64;
    Ok(OracleEstimate {
        fnr,
        std_error: (fnr * (1.0 - fnr) / replicates as f64).sqrt(),
        replicates,
    })
}

/// Closed-form counterpart of [`fnr_monte_carlo_oracle`], summing over the
/// binomial number of differing positions.
pub fn fnr_exact_uniform(n: usize, k: usize, m: usize, p_same: f64, tau: usize) -> f64 {
    let q = 2.0 * p_same * (1.0 - p_same);
    let ln_fact: Vec<f64> = std::iter::once(0.0)
        .chain((1..=n.max(m)).scan(0.0, |acc, i| {
            *acc += (i as f64).ln();
            Some(*acc)
        }))
        .collect();
    let ln_choose = |a: usize, b: usize| ln_fact[a] - ln_fact[b] - ln_fact[a - b];
    let mut total = 0.0;
    for t in 0..=n {
        let ln_pt = ln_choose(n, t)
            + if t > 0 { t as f64 * q.ln() } else { 0.0 }
            + if n > t {
                (n - t) as f64 * (1.0 - q).ln()
            } else {
                0.0
            };
        if q == 0.0 && t > 0 {
            continue;
        }
        let s = subset_survival_oracle(n, k, t);
        let below_tau: f64 = (0..tau.min(m + 1))
            .map(|c| {
                if s == 0.0 {
                    return if c == 0 { 1.0 } else { 0.0 };
                }
                if s == 1.0 {
                    return if c == m { 1.0 } else { 0.0 };
                }
                (ln_choose(m, c) + c as f64 * s.ln() + (m - c) as f64 * (1.0 - s).ln()).exp()
            })
            .sum();
        total += ln_pt.exp() * below_tau;
    }
    total
}

/// Linear-scan Euclidean matcher over stored templates.
pub struct LinearScanBaseline {
    dim: usize,
    ids: Vec<IdentityId>,
    flat: Vec<f64>,
}

impl LinearScanBaseline {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            flat: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn enroll(&mut self, id: IdentityId, t: &crate::population::Template) -> Result<()> {
        if t.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: t.dim(),
            });
        }
        self.ids.push(id);
        self.flat.extend_from_slice(t.coords());
        Ok(())
    }

    /// Nearest stored identity if its distance is strictly below `threshold`.
    pub fn authenticate(
        &self,
        t: &crate::population::Template,
        threshold: f64,
    ) -> Result<Option<(IdentityId, f64)>> {
        if t.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: t.dim(),
            });
        }
        let probe = t.coords();
        let best = self
            .flat
            .chunks_exact(self.dim)
            .map(|row| {
                row.iter()
                    .zip(probe)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1));
        Ok(best.and_then(|(i, sq)| {
            let dist = sq.sqrt();
            (dist < threshold).then_some((self.ids[i], dist))
        }))
    }
}

fn template_population(
    cfg: &ExperimentConfig,
    enrolled: usize,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    generate_population(&PopulationConfig::template_level(
        enrolled + cfg.fp_probe_count,
        cfg.dimension,
        cfg.sigma,
        rng::derive_seed(seed, 5),
    ))
}

fn template_of(
    samples: &[LabeledSample],
    id: usize,
    session: Session,
) -> &crate::population::Template {
    samples[2 * id + usize::from(session == Session::Auth)]
        .template()
        .expect("template-level population")
}

/// The insecure linear-scan baseline at each database size.
pub fn run_insecure_baseline(cfg: &ExperimentConfig) -> Result<Vec<BenchResult>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for &enrolled in &cfg.sizes {
        for trial in 0..cfg.trials {
            let pop = template_population(cfg, enrolled, trial_seed(cfg, trial))?;
            let mut scan = LinearScanBaseline::new(cfg.dimension);
            let start = Instant::now();
            for id in 0..enrolled {
                scan.enroll(
                    IdentityId(id as u32),
                    template_of(&pop, id, Session::Enroll),
                )?;
            }
            let enroll_time = start.elapsed();
            let mut auth_time = Duration::ZERO;
            let mut run = |id: usize| -> Result<Option<IdentityId>> {
                let start = Instant::now();
                let r = scan
                    .authenticate(template_of(&pop, id, Session::Auth), cfg.baseline_threshold)?;
                auth_time += start.elapsed();
                Ok(r.map(|(id, _)| id))
            };
            let mut fnr = Tally {
                probes: cfg.fn_probe_count,
                errors: 0,
            };
            for id in 0..cfg.fn_probe_count {
                if run(id)? != Some(IdentityId(id as u32)) {
                    fnr.errors += 1;
                }
            }
            let mut fpr = Tally {
                probes: cfg.fp_probe_count,
                errors: 0,
            };
            for id in enrolled..enrolled + cfg.fp_probe_count {
                if run(id)?.is_some() {
                    fpr.errors += 1;
                }
            }
            let probes = cfg.fn_probe_count + cfg.fp_probe_count;
            let mut row = Row {
                experiment: "baseline",
                enrolled,
                k: 0,
                m: 0,
                tau: 0,
                zeta: 0.0,
                p_same: cfg.sigma,
                trial,
                fnr,
                fpr,
                enroll_ms: ms(enroll_time, enrolled),
                auth_ms: ms(auth_time, probes),
                lookups_per_auth: enrolled as f64,
            }
            .finish();
            row.bytes_per_id = (cfg.dimension * 8) as u64;
            out.push(row);
        }
    }
    Ok(out)
}

/// The secure system on the same template populations the baseline sees,
/// through a random-hyperplane bank of `n` bits. Uses the first entry of
/// each grid.
pub fn run_secure_on_templates(cfg: &ExperimentConfig) -> Result<Vec<BenchResult>> {
    cfg.validate()?;
    let (k, zeta, tau) = (cfg.k_grid[0], cfg.zeta_grid[0], cfg.tau_grid[0]);
    let mut out = Vec::new();
    for &enrolled in &cfg.sizes {
        for trial in 0..cfg.trials {
            let seed = trial_seed(cfg, trial);
            let pop = template_population(cfg, enrolled, seed)?;
            let bank = HyperplaneBank::new(cfg.dimension, cfg.n, rng::derive_seed(seed, 6))?;
            let bits: Vec<LabeledSample> = pop
                .iter()
                .map(|s| {
                    Ok(LabeledSample {
                        id: s.id,
                        session: s.session,
                        payload: crate::population::Payload::Bits(
                            bank.project(s.template().expect("template"))?,
                        ),
                    })
                })
                .collect::<Result<_>>()?;
            let mut params = SystemParams::new(cfg.n, k, cfg.m);
            params.zeta = zeta;
            params.tau = tau;
            let hasher = hasher_for(cfg, &params, seed, 0.0)?;
            let store = ShardedStore::new(cfg.shard_capacity);
            let probed = enroll_and_probe(
                &hasher,
                &store,
                &bits,
                enrolled,
                cfg.fn_probe_count,
                cfg.fp_probe_count,
                tau,
            )?;
            let (fnr, fpr) = count_errors(&store, &probed, tau);
            let probes = cfg.fn_probe_count + cfg.fp_probe_count;
            out.push(
                Row {
                    experiment: "secure_template",
                    enrolled,
                    k,
                    m: cfg.m,
                    tau,
                    zeta,
                    p_same: cfg.sigma,
                    trial,
                    fnr,
                    fpr,
                    enroll_ms: ms(probed.enroll_time, enrolled),
                    auth_ms: ms(probed.auth_time, probes),
                    lookups_per_auth: probed.lookups as f64 / probes.max(1) as f64,
                }
                .finish(),
            );
        }
    }
    Ok(out)
}

pub const CSV_HEADER: &str =
    "experiment,N,k,m,tau,zeta,p_same,trial,fnr,fpr,error_rate,enroll_ms,auth_ms,bytes_per_id";

/// Column positions of the wall-clock fields in [`CSV_HEADER`].
pub const TIMING_COLUMNS: [usize; 2] = [11, 12];

pub fn results_csv(results: &[BenchResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.experiment,
            r.enrolled,
            r.k,
            r.m,
            r.tau,
            r.zeta,
            r.p_same,
            r.trial,
            r.fnr,
            r.fpr,
            r.error_rate,
            r.enroll_ms,
            r.auth_ms,
            r.bytes_per_id
        );
    }
    out
}

/// The CSV with the timing columns dropped, for reproducibility checks.
pub fn strip_timing_columns(csv: &str) -> String {
    csv.lines()
        .map(|line| {
            line.split(',')
                .enumerate()
                .filter(|(i, _)| !TIMING_COLUMNS.contains(i))
                .map(|(_, f)| f)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn emit_results(results: &[BenchResult], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, results_csv(results))?;
    Ok(())
}

/// Means over trials, grouped by every non-trial parameter.
pub fn average_trials(results: &[BenchResult]) -> Vec<BenchResult> {
    let mut groups: Vec<(BenchResult, usize)> = Vec::new();
    for r in results {
        let key = |x: &BenchResult| {
            (
                x.experiment.clone(),
                x.enrolled,
                x.k,
                x.m,
                x.tau,
                x.zeta.to_bits(),
                x.p_same.to_bits(),
            )
        };
        match groups.iter_mut().find(|(g, _)| key(g) == key(r)) {
            Some((g, count)) => {
                g.fnr += r.fnr;
                g.fpr += r.fpr;
                g.enroll_ms += r.enroll_ms;
                g.auth_ms += r.auth_ms;
                g.fn_probes += r.fn_probes;
                g.fp_probes += r.fp_probes;
                g.false_negatives += r.false_negatives;
                g.false_positives += r.false_positives;
                g.lookups_per_auth += r.lookups_per_auth;
                *count += 1;
            }
            None => groups.push((r.clone(), 1)),
        }
    }
    groups
        .into_iter()
        .map(|(mut g, count)| {
            let c = count as f64;
            g.fnr /= c;
            g.fpr /= c;
            g.error_rate = (g.fnr + g.fpr) / 2.0;
            g.enroll_ms /= c;
            g.auth_ms /= c;
            g.lookups_per_auth /= c;
            g.trial = count;
            g
        })
        .collect()
}

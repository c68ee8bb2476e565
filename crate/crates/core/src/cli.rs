//! The `sba` command line.
//!
//! Exit status is 0 on success, [`EXIT_REJECT`] when authentication
//! returns no identity, and [`EXIT_FAILURE`] for any operational error.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{self, ExperimentConfig};
use crate::bits::BitString;
use crate::crypto::{HashMode, SealedKey};
use crate::engine::{Outcome, ShardedStore, SubstringHasher};
use crate::entropy::{entropy_report, EntropyOptions, DEFAULT_PAIR_BUDGET};
use crate::error::{Error, Result};
use crate::population::{
    generate_population, load_dataset, save_dataset, DatasetFormat, IdentityId, LabeledSample,
    LoadOptions, PopulationConfig, Session,
};
use crate::sampling::{setup, SubsetPlan, SystemParams};
use crate::service::{self, ServiceConfig};

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_REJECT: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "sba",
    version,
    about = "Hashed-substring one-to-many biometric identification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct ParamArgs {
    /// key = value file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    tau: Option<usize>,
    #[arg(long, global = true)]
    zeta: Option<f64>,
    /// plain_hash or keyed_prf.
    #[arg(long, global = true)]
    hash_mode: Option<String>,
    #[arg(long, global = true)]
    domain_separation: Option<bool>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a subset plan and write it to a file.
    Setup {
        #[arg(long)]
        out: PathBuf,
        /// Labeled bit-level dataset for mutual-information weights (zeta > 0).
        #[arg(long)]
        training: Option<PathBuf>,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Generate a synthetic labeled population.
    Genpop {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, value_enum, default_value_t = PopMode::Bit)]
        mode: PopMode,
        #[arg(long, default_value_t = 0.05)]
        p_same: f64,
        #[arg(long, default_value_t = 0.3)]
        sigma: f64,
        /// Template dimension (template mode).
        #[arg(long, default_value_t = 1024)]
        dim: usize,
        #[arg(long, default_value_t = 1)]
        repeat: usize,
        #[arg(long, default_value_t = 0)]
        first_id: u32,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Enroll one bit string, or every enroll sample of a dataset.
    Enroll {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[command(flatten)]
        probe: ProbeArgs,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Authenticate one bit string; prints the matched id or REJECT.
    Auth {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[command(flatten)]
        probe: ProbeArgs,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Remove an identity from the database.
    Revoke {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        id: u32,
    },
    /// Run experiments and write a results CSV.
    Bench {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Experiment::Error)]
        experiment: Experiment,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Per-subset min-entropy estimates as CSV.
    Entropy {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PAIR_BUDGET)]
        pair_budget: usize,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Serve enroll/auth/revoke/status over TCP until killed.
    Serve {
        #[arg(long)]
        plan: PathBuf,
        /// Loaded if it exists.
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
        /// Accept bit-string payloads and hash on the server.
        #[arg(long)]
        allow_bits: bool,
        /// Save to --db after every enroll and revoke.
        #[arg(long)]
        persist: bool,
        #[command(flatten)]
        params: ParamArgs,
    },
}

#[derive(Args, Debug)]
struct ProbeArgs {
    /// Identity to enroll, or to pick from --dataset.
    #[arg(long)]
    id: Option<u32>,
    /// `n` characters of 0/1, or packed hex.
    #[arg(long)]
    bits: Option<String>,
    /// Labeled bit-level dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PopMode {
    Bit,
    Template,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum Experiment {
    Error,
    Timing,
    Baseline,
    SecureTemplate,
    All,
}

impl ParamArgs {
    /// File entries overlaid with the flags that were given.
    fn resolved(&self) -> Result<BTreeMap<String, String>> {
        let mut kv = match &self.config {
            Some(path) => bench::parse_kv(&std::fs::read_to_string(path)?)?,
            None => BTreeMap::new(),
        };
        let flags = [
            ("n", self.n.map(|v| v.to_string())),
            ("k", self.k.map(|v| v.to_string())),
            ("m", self.m.map(|v| v.to_string())),
            ("tau", self.tau.map(|v| v.to_string())),
            ("zeta", self.zeta.map(|v| v.to_string())),
            ("hash_mode", self.hash_mode.clone()),
            (
                "domain_separation",
                self.domain_separation.map(|v| v.to_string()),
            ),
            ("seed", self.seed.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                kv.insert(key.to_string(), v);
            }
        }
        Ok(kv)
    }

    fn system(&self) -> Result<(SystemParams, u64)> {
        let kv = self.resolved()?;
        let mut p = SystemParams::default();
        let mut seed = 1;
        let mut scratch = ExperimentConfig::default();
        for (key, value) in &kv {
            let num = || value.replace('_', "");
            let bad = || Error::Config(format!("invalid value {value:?} for {key}"));
            match key.as_str() {
                "n" => p.n = num().parse().map_err(|_| bad())?,
                "k" => p.k = num().parse().map_err(|_| bad())?,
                "m" => p.m = num().parse().map_err(|_| bad())?,
                "tau" => p.tau = num().parse().map_err(|_| bad())?,
                "zeta" => p.zeta = value.parse().map_err(|_| bad())?,
                "hash_mode" => p.hash_mode = value.parse()?,
                "domain_separation" => p.domain_separation = value.parse().map_err(|_| bad())?,
                "seed" => seed = num().parse().map_err(|_| bad())?,
                // Experiment-only keys may share the file.
                other => scratch.set(other, value)?,
            }
        }
        p.validate()?;
        Ok((p, seed))
    }

    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        for (key, value) in self.resolved()? {
            cfg.set(&key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Entry point shared by the binary and the tests.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_FAILURE
            } else {
                EXIT_SUCCESS
            };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "sba: {e}");
            EXIT_FAILURE
        }
    }
}

fn read_bits(spec: &str, n: usize) -> Result<BitString> {
    if spec.len() == n && spec.bytes().all(|b| b == b'0' || b == b'1') {
        spec.parse()
    } else {
        BitString::from_hex(spec, n)
    }
}

fn load_bits(path: &Path, n: usize) -> Result<Vec<LabeledSample>> {
    load_dataset(
        path,
        DatasetFormat::BitLevel,
        &LoadOptions {
            expected_len: Some(n),
            ..Default::default()
        },
    )
}

fn open_store(db: &Path) -> Result<ShardedStore> {
    if db.exists() {
        ShardedStore::load(db)
    } else {
        Ok(ShardedStore::default())
    }
}

/// One-shot commands cannot keep a PRF key across invocations.
fn plain_hasher(plan: SubsetPlan, p: &SystemParams) -> Result<SubstringHasher> {
    if p.hash_mode == HashMode::KeyedPrf {
        return Err(Error::Config(
            "keyed_prf keys live only in a running process; use `serve` or `bench`".into(),
        ));
    }
    Ok(SubstringHasher::plain(Arc::new(plan), p.domain_separation))
}

fn load_plan(path: &Path, p: &SystemParams) -> Result<SubsetPlan> {
    let plan = SubsetPlan::load(path)?;
    p.validate_tau_for(plan.m())?;
    Ok(plan)
}

impl SystemParams {
    fn validate_tau_for(&self, m: usize) -> Result<()> {
        if !(1..=m).contains(&self.tau) {
            return Err(Error::Params(format!(
                "need 1 <= tau <= m, got tau={}, m={m}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// The sample named by `--bits`, or `--id`'s sample in `--dataset`.
fn single_probe(probe: &ProbeArgs, n: usize, session: Session) -> Result<BitString> {
    match (&probe.bits, &probe.dataset, probe.id) {
        (Some(bits), None, _) => read_bits(bits, n),
        (None, Some(path), Some(id)) => load_bits(path, n)?
            .into_iter()
            .find(|s| s.id == IdentityId(id) && s.session == session)
            .and_then(|s| s.bits().cloned())
            .ok_or_else(|| Error::Config(format!("dataset has no {session} sample for id {id}"))),
        _ => Err(Error::Config("give --bits, or --dataset with --id".into())),
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Setup {
            out: path,
            training,
            params,
        } => {
            let (p, seed) = params.system()?;
            let training = match &training {
                Some(path) => Some(load_bits(path, p.n)?),
                None => None,
            };
            if p.zeta != 0.0 && training.is_none() {
                writeln!(err, "sba: no --training data; using uniform weights")?;
            }
            let (plan, _) = setup(&p, training.as_deref(), seed)?;
            plan.save(&path)?;
            writeln!(
                out,
                "plan n={} k={} m={} seed={}",
                plan.n(),
                plan.k(),
                plan.m(),
                plan.seed()
            )?;
        }
        Command::Genpop {
            out: path,
            count,
            mode,
            p_same,
            sigma,
            dim,
            repeat,
            first_id,
            params,
        } => {
            let (p, seed) = params.system()?;
            let cfg = match mode {
                PopMode::Bit => {
                    PopulationConfig::bit_level(count, p.n, p_same, seed).with_repeat(repeat)
                }
                PopMode::Template => PopulationConfig::template_level(count, dim, sigma, seed),
            }
            .with_first_id(first_id);
            let samples = generate_population(&cfg)?;
            save_dataset(&path, &samples)?;
            writeln!(out, "wrote {} samples", samples.len())?;
        }
        Command::Enroll {
            plan,
            db,
            probe,
            params,
        } => {
            let (p, _) = params.system()?;
            let hasher = plain_hasher(load_plan(&plan, &p)?, &p)?;
            let store = open_store(&db)?;
            let n = hasher.plan().n();
            let enrolled = match (&probe.dataset, probe.id, &probe.bits) {
                (Some(path), None, None) => {
                    let samples = load_bits(path, n)?;
                    let mut count = 0;
                    for s in samples.iter().filter(|s| s.session == Session::Enroll) {
                        crate::engine::enroll(
                            &store,
                            s.id,
                            s.bits().expect("bit dataset"),
                            &hasher,
                        )?;
                        count += 1;
                    }
                    count
                }
                (_, Some(id), _) => {
                    let v = single_probe(&probe, n, Session::Enroll)?;
                    crate::engine::enroll(&store, IdentityId(id), &v, &hasher)?;
                    1
                }
                _ => return Err(Error::Config("give --dataset, or --id with --bits".into())),
            };
            store.save(&db)?;
            writeln!(out, "enrolled {enrolled}")?;
        }
        Command::Auth {
            plan,
            db,
            probe,
            params,
        } => {
            let (p, _) = params.system()?;
            let hasher = plain_hasher(load_plan(&plan, &p)?, &p)?;
            let store = open_store(&db)?;
            let v = single_probe(&probe, hasher.plan().n(), Session::Auth)?;
            let r = crate::engine::authenticate(&store, &v, &hasher, p.tau)?;
            return Ok(match r.outcome {
                Outcome::Matched { id, count } => {
                    writeln!(out, "{id} {count}")?;
                    EXIT_SUCCESS
                }
                Outcome::Rejected => {
                    writeln!(out, "REJECT")?;
                    EXIT_REJECT
                }
            });
        }
        Command::Revoke { db, id } => {
            let store = ShardedStore::load(&db)?;
            store.revoke(IdentityId(id))?;
            store.save(&db)?;
            writeln!(out, "revoked {id}")?;
        }
        Command::Bench {
            out: path,
            experiment,
            params,
        } => {
            let cfg = params.experiment()?;
            let mut rows = Vec::new();
            let all = experiment == Experiment::All;
            if all || experiment == Experiment::Error {
                rows.extend(bench::run_error_experiment(&cfg)?);
            }
            if all || experiment == Experiment::Timing {
                rows.extend(bench::run_timing_experiment(&cfg)?);
            }
            if all || experiment == Experiment::Baseline {
                rows.extend(bench::run_insecure_baseline(&cfg)?);
            }
            if all || experiment == Experiment::SecureTemplate {
                rows.extend(bench::run_secure_on_templates(&cfg)?);
            }
            bench::emit_results(&rows, &path)?;
            for r in bench::average_trials(&rows) {
                writeln!(
                    out,
                    "{} N={} k={} tau={} zeta={} p_same={} fnr={:.4} fpr={:.4} auth_ms={:.3}",
                    r.experiment, r.enrolled, r.k, r.tau, r.zeta, r.p_same, r.fnr, r.fpr, r.auth_ms
                )?;
            }
        }
        Command::Entropy {
            plan,
            dataset,
            out: path,
            pair_budget,
            params,
        } => {
            let (_, seed) = params.system()?;
            let plan = SubsetPlan::load(&plan)?;
            let samples = load_bits(&dataset, plan.n())?;
            let report = entropy_report(&plan, &samples, &EntropyOptions { pair_budget, seed })?;
            report.write_csv(&path)?;
            writeln!(
                out,
                "k={} min={:.2} mean={:.2} max={:.2}",
                report.k, report.min, report.mean, report.max
            )?;
        }
        Command::Serve {
            plan,
            db,
            bind,
            allow_bits,
            persist,
            params,
        } => {
            let (p, _) = params.system()?;
            let plan = Arc::new(load_plan(&plan, &p)?);
            let store = match &db {
                Some(path) => open_store(path)?,
                None => ShardedStore::default(),
            };
            let key = match p.hash_mode {
                HashMode::Plain => None,
                HashMode::KeyedPrf => {
                    if !allow_bits || store.enrolled_count() > 0 {
                        return Err(Error::Config(
                            "keyed_prf serving needs --allow-bits and an empty database".into(),
                        ));
                    }
                    Some(Arc::new(SealedKey::generate()) as Arc<dyn crate::crypto::KeyProvider>)
                }
            };
            let hasher = SubstringHasher::new(plan, p.hash_mode, p.domain_separation, key);
            if persist && db.is_none() {
                return Err(Error::Config("--persist needs --db".into()));
            }
            let cfg = ServiceConfig {
                tau: p.tau,
                digest_only: !allow_bits,
                persist_path: db.filter(|_| persist),
                ..Default::default()
            };
            let server = service::serve(bind.as_str(), Arc::new(store), hasher, cfg)?;
            writeln!(out, "listening on {}", server.local_addr())?;
            out.flush()?;
            server.join();
        }
    }
    Ok(EXIT_SUCCESS)
}

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::sync::Arc;

use sba::bench::strip_timing_columns;
use sba::engine::{authenticate, load_store};
use sba::population::{load_dataset, DatasetFormat, LoadOptions};
use sba::service::Client;
use sba::{IdentityId, Session, SubsetPlan, SubstringHasher};

fn sba(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sba"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn setup_at_full_scale() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.bin");
    let o = sba(&[
        "setup",
        "--n",
        "4096",
        "--k",
        "110",
        "--m",
        "250000",
        "--zeta",
        "1",
        "--out",
        p(&plan),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let plan = SubsetPlan::load(&plan).unwrap();
    assert_eq!((plan.n(), plan.k(), plan.m()), (4096, 110, 250_000));
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        let o = sba(&[
            "setup",
            "--n",
            "512",
            "--k",
            "32",
            "--m",
            "200",
            "--zeta",
            "0",
            "--seed",
            "4",
            "--out",
            &f.path("plan.bin"),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let o = sba(&[
            "genpop",
            "--n",
            "512",
            "--count",
            "30",
            "--p-same",
            "0.02",
            "--seed",
            "5",
            "--out",
            &f.path("pop.bin"),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        f
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_str().unwrap().to_string()
    }
}

#[test]
fn auth_on_empty_database_rejects() {
    let f = Fixture::new();
    let o = sba(&[
        "auth",
        "--plan",
        &f.path("plan.bin"),
        "--db",
        &f.path("none.db"),
        "--dataset",
        &f.path("pop.bin"),
        "--id",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stdout(&o).trim(), "REJECT");
}

#[test]
fn enroll_auth_revoke_round_trip() {
    let f = Fixture::new();
    let (plan, db, pop) = (&f.path("plan.bin"), &f.path("db.bin"), &f.path("pop.bin"));
    let o = sba(&["enroll", "--plan", plan, "--db", db, "--dataset", pop]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "enrolled 30");

    let o = sba(&[
        "auth",
        "--plan",
        plan,
        "--db",
        db,
        "--dataset",
        pop,
        "--id",
        "12",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cli_line = stdout(&o);

    // Same files through the library.
    let hasher = SubstringHasher::plain(Arc::new(SubsetPlan::load(plan).unwrap()), true);
    let store = load_store(db).unwrap();
    let samples = load_dataset(pop, DatasetFormat::BitLevel, &LoadOptions::default()).unwrap();
    let probe = samples
        .iter()
        .find(|s| s.id == IdentityId(12) && s.session == Session::Auth)
        .unwrap();
    let r = authenticate(&store, probe.bits().unwrap(), &hasher, 1).unwrap();
    assert_eq!(cli_line.trim(), format!("12 {}", r.best_count()));

    let o = sba(&["enroll", "--plan", plan, "--db", db, "--dataset", pop]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("already enrolled"));

    let o = sba(&["revoke", "--db", db, "--id", "12"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = sba(&[
        "auth",
        "--plan",
        plan,
        "--db",
        db,
        "--dataset",
        pop,
        "--id",
        "12",
    ]);
    assert_eq!(
        (o.status.code(), stdout(&o).trim().to_string()),
        (Some(2), "REJECT".into())
    );
    assert_eq!(load_store(db).unwrap().records_for(IdentityId(12)), 0);

    let o = sba(&["revoke", "--db", db, "--id", "12"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn enroll_single_bit_string() {
    let f = Fixture::new();
    let (plan, db) = (&f.path("plan.bin"), &f.path("db.bin"));
    let bits: String = (0..512)
        .map(|i| if i % 7 == 0 { '1' } else { '0' })
        .collect();
    let o = sba(&[
        "enroll", "--plan", plan, "--db", db, "--id", "99", "--bits", &bits,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = sba(&["auth", "--plan", plan, "--db", db, "--bits", &bits]);
    assert_eq!(stdout(&o).trim(), "99 200");
    let o = sba(&[
        "auth",
        "--plan",
        plan,
        "--db",
        db,
        "--bits",
        &bits,
        "--domain-separation",
        "false",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failures_are_one_line_with_exit_one() {
    let f = Fixture::new();
    for args in [
        vec!["frobnicate"],
        vec![
            "auth",
            "--plan",
            &f.path("missing.bin"),
            "--db",
            &f.path("db.bin"),
            "--bits",
            "00",
        ],
        vec![
            "enroll",
            "--plan",
            &f.path("plan.bin"),
            "--db",
            &f.path("db.bin"),
            "--dataset",
            &f.path("pop.bin"),
            "--hash-mode",
            "keyed_prf",
        ],
        vec![
            "setup",
            "--n",
            "64",
            "--k",
            "8",
            "--m",
            "10",
            "--tau",
            "11",
            "--out",
            &f.path("x.bin"),
        ],
        vec![
            "auth",
            "--plan",
            &f.path("plan.bin"),
            "--db",
            &f.path("db.bin"),
            "--bits",
            "0101",
        ],
    ] {
        let o = sba(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        if args[0] != "frobnicate" {
            let err = stderr(&o);
            assert_eq!(err.lines().count(), 1, "{args:?}: {err}");
            assert!(err.starts_with("sba: "));
        }
    }
}

#[test]
fn bench_reruns_are_identical() {
    let f = Fixture::new();
    let cfg = &f.path("bench.cfg");
    std::fs::write(
        cfg,
        "sizes = 50, 100\nfn_probes = 50\nfp_probes = 50\ntrials = 2\nn = 256\nm = 80\nk = 24, 32\ntau = 1, 2\nzeta = 0, 1\ntraining_ids = 50\nseed = 9\n",
    )
    .unwrap();
    let run = |out: &str| {
        let o = sba(&["bench", "--config", cfg, "--out", out]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read_to_string(out).unwrap()
    };
    let (a, b) = (run(&f.path("a.csv")), run(&f.path("b.csv")));
    assert_eq!(a.lines().count(), 1 + 2 * 2 * 2 * 2 * 2);
    assert_eq!(strip_timing_columns(&a), strip_timing_columns(&b));
    let c = sba(&[
        "bench",
        "--config",
        cfg,
        "--seed",
        "10",
        "--out",
        &f.path("c.csv"),
    ]);
    assert_eq!(c.status.code(), Some(0));
    assert_ne!(
        strip_timing_columns(&std::fs::read_to_string(f.path("c.csv")).unwrap()),
        strip_timing_columns(&a)
    );
}

#[test]
fn entropy_command_writes_csv() {
    let f = Fixture::new();
    let o = sba(&[
        "entropy",
        "--plan",
        &f.path("plan.bin"),
        "--dataset",
        &f.path("pop.bin"),
        "--out",
        &f.path("e.csv"),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(f.path("e.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 200 + 3);
    assert!(stdout(&o).starts_with("k=32 "));
}

#[test]
fn template_population_file() {
    let f = Fixture::new();
    let o = sba(&[
        "genpop",
        "--mode",
        "template",
        "--dim",
        "16",
        "--count",
        "5",
        "--out",
        &f.path("t.bin"),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = load_dataset(
        f.path("t.bin"),
        DatasetFormat::TemplateLevel,
        &LoadOptions::default(),
    )
    .unwrap();
    assert_eq!(t.len(), 10);
    assert_eq!(t[0].template().unwrap().dim(), 16);
}

#[test]
fn serve_answers_status_and_auth() {
    let f = Fixture::new();
    let (plan, db, pop) = (&f.path("plan.bin"), &f.path("db.bin"), &f.path("pop.bin"));
    assert_eq!(
        sba(&["enroll", "--plan", plan, "--db", db, "--dataset", pop])
            .status
            .code(),
        Some(0)
    );
    let mut child = Command::new(env!("CARGO_BIN_EXE_sba"))
        .args(["serve", "--plan", plan, "--db", db, "--bind", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .expect("listening line")
        .to_string();

    let mut client = Client::connect(&addr).unwrap();
    let status = client.status().unwrap();
    assert_eq!((status.enrolled, status.m, status.k), (30, 200, 32));
    let hasher = SubstringHasher::plain(Arc::new(SubsetPlan::load(plan).unwrap()), true);
    let samples = load_dataset(pop, DatasetFormat::BitLevel, &LoadOptions::default()).unwrap();
    let r = client
        .authenticate_digests(&hasher.derive(samples[9].bits().unwrap()).unwrap())
        .unwrap();
    assert_eq!(r.matched_id(), Some(IdentityId(4)));
    child.kill().unwrap();
    let _ = child.wait();
}

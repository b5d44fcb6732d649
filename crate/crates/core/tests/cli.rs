//! End-to-end checks of the `dpgs` binary: exit codes, row counts, config
//! files and byte-determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dpgs::{load_dataset, Format};
use tempfile::TempDir;

fn dpgs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpgs"))
        .current_dir(dir)
        .env_remove("DPGS_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const FIT: &[&str] = &[
    "fit", "--input", "planted.bin", "--out", "model.txt", "--k", "3", "--epsilon", "1", "--delta", "1e-5",
    "--kmeans-clip", "32", "--clip", "2", "--mean-clip", "6", "--lloyd-iterations", "4",
];

/// A workspace holding a planted two-class dataset and a model fitted on it.
fn fitted() -> TempDir {
    let dir = TempDir::new().unwrap();
    let out = dpgs(dir.path(), &["plant", "--out", "planted.bin", "--n-per-class", "6000", "--seed", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = dpgs(dir.path(), FIT);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

#[test]
fn fit_writes_model_and_prints_ledger() {
    let dir = fitted();
    let model = fs::read_to_string(dir.path().join("model.txt")).unwrap();
    assert!(model.contains("[class 0]") && model.contains("[class 1]"));
    assert!(model.contains("audit = ok"));
    let out = dpgs(dir.path(), FIT);
    let text = stdout(&out);
    assert!(text.contains("privacy ledger: declared (eps=1"));
    assert!(text.contains("OK"));
}

#[test]
fn invalid_budgets_are_usage_errors() {
    let dir = fitted();
    let base = ["fit", "--input", "planted.bin", "--out", "x.txt", "--k", "3"];
    let zero = [&base[..], &["--epsilon", "0", "--delta", "1e-5"]].concat();
    assert_eq!(code(&dpgs(dir.path(), &zero)), 64);
    let big_delta = [&base[..], &["--epsilon", "1", "--delta", "1.5"]].concat();
    assert_eq!(code(&dpgs(dir.path(), &big_delta)), 64);
    let missing = [&base[..], &["--epsilon", "1"]].concat();
    assert_eq!(code(&dpgs(dir.path(), &missing)), 64);
    assert!(!dir.path().join("x.txt").exists());
}

#[test]
fn unreadable_input_exits_3() {
    let dir = TempDir::new().unwrap();
    let out = dpgs(
        dir.path(),
        &["fit", "--input", "absent.bin", "--out", "m.txt", "--k", "2", "--non-private"],
    );
    assert_eq!(code(&out), 3);
}

#[test]
fn help_and_version_exit_0() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&dpgs(dir.path(), &["--help"])), 0);
    assert_eq!(code(&dpgs(dir.path(), &["--version"])), 0);
    assert_eq!(code(&dpgs(dir.path(), &["fit", "--bogus"])), 64);
}

#[test]
fn generate_writes_multiplier_times_m_rows_per_class() {
    let dir = fitted();
    let out = dpgs(dir.path(), &["generate", "--model", "model.txt", "-m", "100", "--out", "gen.csv"]);
    assert_eq!(code(&out), 0);
    let ds = load_dataset(&dir.path().join("gen.csv"), Format::Csv, true).unwrap();
    let labels = ds.labels().unwrap();
    assert_eq!(ds.len(), 1200);
    assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 600);
    assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 600);

    let out = dpgs(
        dir.path(),
        &["generate", "--model", "model.txt", "-m", "100", "--multiplier", "2.5", "--out", "gen.bin"],
    );
    assert_eq!(code(&out), 0);
    assert_eq!(load_dataset(&dir.path().join("gen.bin"), Format::Binary, true).unwrap().len(), 500);
}

#[test]
fn filter_requires_original() {
    let dir = fitted();
    let out = dpgs(dir.path(), &["generate", "--model", "model.txt", "-m", "100", "--out", "g.bin", "--filter"]);
    assert_eq!(code(&out), 64);
}

#[test]
fn filtering_spends_the_reserved_share() {
    let dir = fitted();
    let out = dpgs(
        dir.path(),
        &["generate", "--model", "model.txt", "-m", "300", "--out", "g.bin", "--filter", "--original", "planted.bin"],
    );
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("class 0/dp-filter-embedding"));
    assert!(!text.contains("dp-filter-embedding (reserved"));
    assert!(text.contains("composed (eps=1,"));
    let kept = load_dataset(&dir.path().join("g.bin"), Format::Binary, true).unwrap().len();
    assert!(kept > 0 && kept < 3600);
}

#[test]
fn overspent_model_ledger_exits_2() {
    let dir = fitted();
    let path = dir.path().join("model.txt");
    let text = fs::read_to_string(&path).unwrap();
    let tampered = text.replacen("entry = ", "entry = extra | sequential | 0.5,0\nentry = ", 1);
    fs::write(&path, tampered).unwrap();
    let out = dpgs(dir.path(), &["generate", "--model", "model.txt", "-m", "10", "--out", "g.bin"]);
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("g.bin").exists());
}

#[test]
fn same_seed_gives_identical_bytes() {
    let dir = fitted();
    let run = |seed: &str, out: &str| {
        let o = dpgs(
            dir.path(),
            &[
                "generate", "--model", "model.txt", "-m", "200", "--out", out, "--filter", "--original", "planted.bin",
                "--seed", seed, "--report", &format!("{out}.report"),
            ],
        );
        assert_eq!(code(&o), 0);
        (fs::read(dir.path().join(out)).unwrap(), fs::read(dir.path().join(format!("{out}.report"))).unwrap())
    };
    let a = run("11", "a.bin");
    let b = run("11", "b.bin");
    let c = run("12", "c.bin");
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);

    let first = fs::read(dir.path().join("model.txt")).unwrap();
    assert_eq!(code(&dpgs(dir.path(), FIT)), 0);
    assert_eq!(fs::read(dir.path().join("model.txt")).unwrap(), first);
}

#[test]
fn env_seed_is_the_fallback() {
    let dir = fitted();
    let gen = |envseed: &str, extra: &[&str], out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_dpgs"))
            .current_dir(dir.path())
            .env("DPGS_SEED", envseed)
            .args(["generate", "--model", "model.txt", "-m", "50", "--out", out])
            .args(extra)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0);
        fs::read(dir.path().join(out)).unwrap()
    };
    assert_eq!(gen("7", &[], "e.bin"), gen("0", &["--seed", "7"], "f.bin"));
    assert_ne!(gen("7", &[], "g.bin"), gen("8", &[], "h.bin"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = fitted();
    fs::write(
        dir.path().join("fit.cfg"),
        "# fit defaults\nk = 3\nepsilon = 1\ndelta = 1e-5\nkmeans_clip = 32\nclip = 2\nmean_clip = 6\nlloyd-iterations = 4\n",
    )
    .unwrap();
    let out = dpgs(dir.path(), &["fit", "--config", "fit.cfg", "--input", "planted.bin", "--out", "cfg.txt"]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(dir.path().join("cfg.txt")).unwrap(), fs::read(dir.path().join("model.txt")).unwrap());

    let out = dpgs(
        dir.path(),
        &["fit", "--config", "fit.cfg", "--input", "planted.bin", "--out", "cfg2.txt", "--epsilon", "2"],
    );
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("declared (eps=2"));

    fs::write(dir.path().join("bad.cfg"), "no_such_flag = 1\n").unwrap();
    let out = dpgs(dir.path(), &["fit", "--config", "bad.cfg", "--input", "planted.bin", "--out", "m.txt"]);
    assert_eq!(code(&out), 64);
}

#[test]
fn classifier_round_trip_through_files() {
    let dir = fitted();
    let out = dpgs(dir.path(), &["generate", "--model", "model.txt", "-m", "300", "--out", "syn.bin"]);
    assert_eq!(code(&out), 0);
    let out = dpgs(
        dir.path(),
        &["train-mlp", "--train", "syn.bin", "--out", "mlp.bin", "--epochs", "10", "--batch-size", "64"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = dpgs(dir.path(), &["eval", "--model", "mlp.bin", "--test", "planted.bin", "--out", "acc.txt"]);
    assert_eq!(code(&out), 0);
    let acc: f64 = fs::read_to_string(dir.path().join("acc.txt")).unwrap().lines().next().unwrap()
        ["accuracy = ".len()..]
        .parse()
        .unwrap();
    assert!(acc > 0.95, "accuracy {acc}");
    let out = dpgs(dir.path(), &["train-mlp", "--train", "syn.bin", "--out", "m.bin", "--dropout", "1.5"]);
    assert_eq!(code(&out), 64);
}

#[test]
fn standalone_filter_composes_classes_in_parallel() {
    let dir = fitted();
    assert_eq!(code(&dpgs(dir.path(), &["generate", "--model", "model.txt", "-m", "200", "--out", "g.bin"])), 0);
    let out = dpgs(
        dir.path(),
        &["filter", "--generated", "g.bin", "--original", "planted.bin", "--epsilon", "0.5", "--out", "f.bin"],
    );
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("composed (eps=0.5, delta=0): OK"));
    let out = dpgs(dir.path(), &["filter", "--generated", "g.bin", "--original", "planted.bin", "--out", "f.bin"]);
    assert_eq!(code(&out), 64);
}

#[test]
fn bench_default_grid_rows_and_verdicts() {
    let dir = TempDir::new().unwrap();
    let out = dpgs(dir.path(), &["bench", "--out", "t.tsv", "--seeds", "2", "--summary", "s.txt"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let table = fs::read_to_string(dir.path().join("t.tsv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 5 * 2);
    assert!(table.starts_with("k\tclip\tepsilon\tseed\tweight_l1"));
    assert!(fs::read_to_string(dir.path().join("s.txt")).unwrap().contains("acceptance: PASS"));

    let strict = [
        "bench", "--out", "t.tsv", "--ks", "3", "--seeds", "2", "--max-weight-l1", "0", "--max-mean-l2", "0",
        "--max-cov-rel", "0",
    ];
    let out = dpgs(dir.path(), &strict);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("acceptance: FAIL"));

    let out = dpgs(dir.path(), &["bench", "--out", "t.tsv", "--ks", "3", "--seeds", "1"]);
    assert!(stdout(&out).contains("medians are degenerate"));
}

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use arise::manifest::RunManifest;
use arise_core::env::seed_skills;
use arise_core::library::{ig_proxy, TwoTierLibrary};
use arise_core::policy::ToyPolicy;
use arise_core::reward::group_advantages;
use arise_core::trainer::TrainerConfig;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_arise");

fn arise(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("ARISE_SEED").output().unwrap()
}

fn arise_stdin(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(BIN)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const SMALL: &str = "steps = 40\nwarmup_steps = 10\nbatch_size = 2\ngroup_size = 4\nquery_buckets = 7\nsnapshot_interval = 15\n";

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn manifest(out: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn help_and_unknown_flags() {
    assert_eq!(code(&arise(&["--help"])), 0);
    assert_eq!(code(&arise(&["train", "--help"])), 0);
    assert_eq!(code(&arise(&["train", "--out", "x", "--bogus"])), 2);
    assert_eq!(code(&arise(&["no-such-command"])), 2);
}

#[test]
fn train_writes_all_artifacts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = arise(&["train", "--config", &cfg, "--seed", "7", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let metrics = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 40);
    assert_eq!(lines[9]["phase"], "I");
    assert_eq!(lines[10]["phase"], "II");

    let m = manifest(&out);
    assert_eq!((m.seed, m.steps_completed), (7, 40));
    assert_eq!(m.config_hash.len(), 64);
    assert_eq!(m.snapshots.len(), 3);
    assert!(m.snapshots[0].ends_with("library.step000015.snapshot"));
    assert!(m.snapshots[2].ends_with("library.snapshot"));
    for s in &m.snapshots {
        TwoTierLibrary::restore(&fs::read_to_string(s).unwrap()).unwrap();
    }
    let policy: ToyPolicy = serde_json::from_str(&fs::read_to_string(&m.policy).unwrap()).unwrap();
    assert!(policy.version > 0);
}

#[test]
fn training_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = arise(&["train", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        (fs::read(out.join("metrics.jsonl")).unwrap(), manifest(&out).config_hash)
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn phase2_only_and_step_override() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = arise(&["train", "--config", &cfg, "--phase2-only", "--steps", "5", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 5);
    assert!(metrics.lines().all(|l| l.contains("\"phase\":\"II\"")));
}

#[test]
fn seed_precedence_flag_over_env_over_file() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &format!("seed = 1\n{SMALL}"));
    let train = |extra: &[&str], env: Option<&str>, name: &str| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(BIN);
        cmd.args(["train", "--config", &cfg, "--steps", "1", "--out", out.to_str().unwrap()]).args(extra);
        match env {
            Some(v) => cmd.env("ARISE_SEED", v),
            None => cmd.env_remove("ARISE_SEED"),
        };
        let o = cmd.output().unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        manifest(&out).seed
    };
    assert_eq!(train(&[], None, "file"), 1);
    assert_eq!(train(&[], Some("5"), "env"), 5);
    assert_eq!(train(&["--seed", "9"], Some("5"), "flag"), 9);
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let missing = dir.path().join("missing.toml");
    let o = arise(&["train", "--config", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing.toml"));

    let bad = write_config(dir.path(), "delta_gate = 3.0\n");
    assert_eq!(code(&arise(&["train", "--config", &bad, "--out", out.to_str().unwrap()])), 2);
    let typo = write_config(dir.path(), "learning_rat = 0.1\n");
    assert_eq!(code(&arise(&["train", "--config", &typo, "--out", out.to_str().unwrap()])), 2);

    let good = write_config(dir.path(), SMALL);
    let o = Command::new(BIN)
        .args(["train", "--config", &good, "--out", out.to_str().unwrap()])
        .env("ARISE_SEED", "seven")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let dir = TempDir::new().unwrap();
    let file = dir.path().join("occupied");
    fs::write(&file, "x").unwrap();
    let o = arise(&["train", "--steps", "1", "--out", file.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
}

fn oracle_fixture(dir: &Path) -> (String, String) {
    let cfg = TrainerConfig::default();
    let policy = ToyPolicy::oracle(cfg.layout(), &cfg.env.answer_map(), 20.0);
    let p = dir.join("oracle.json");
    fs::write(&p, serde_json::to_string(&policy).unwrap()).unwrap();
    let l = dir.join("seeds.snapshot");
    fs::write(&l, cfg.initial_library().snapshot()).unwrap();
    (p.to_str().unwrap().to_string(), l.to_str().unwrap().to_string())
}

#[test]
fn eval_oracle_prints_one() {
    let dir = TempDir::new().unwrap();
    let (p, l) = oracle_fixture(dir.path());
    let o = arise(&["eval", "--policy", &p, "--library", &l, "--runs", "2", "--queries", "50"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o), "1.0000\n");
    let o = arise(&["eval", "--policy", &p, "--library", &l, "--runs", "1", "--queries", "10", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["pass_at_1"], 1.0);
    assert_eq!(v["runs"], 1);
}

#[test]
fn eval_is_reproducible_and_defaults_to_32_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = TrainerConfig::default();
    let p = dir.path().join("start.json");
    fs::write(&p, serde_json::to_string(&cfg.initial_policy()).unwrap()).unwrap();
    let l = dir.path().join("lib.snapshot");
    fs::write(&l, cfg.initial_library().snapshot()).unwrap();
    let (p, l) = (p.to_str().unwrap(), l.to_str().unwrap());
    let once = |extra: &[&str]| {
        let mut args = vec!["eval", "--policy", p, "--library", l, "--queries", "20", "--json"];
        args.extend_from_slice(extra);
        stdout(&arise(&args))
    };
    assert_eq!(once(&["--runs", "1", "--seed", "0"]), once(&["--runs", "1", "--seed", "0"]));
    let v: serde_json::Value = serde_json::from_str(&once(&[])).unwrap();
    assert_eq!(v["runs"], 32);
}

#[test]
fn eval_rejects_unreadable_artifacts() {
    let dir = TempDir::new().unwrap();
    let (p, l) = oracle_fixture(dir.path());
    assert_eq!(code(&arise(&["eval", "--policy", "/nonexistent.json", "--library", &l])), 2);
    let junk = dir.path().join("junk");
    fs::write(&junk, "not a snapshot").unwrap();
    assert_eq!(code(&arise(&["eval", "--policy", &p, "--library", junk.to_str().unwrap()])), 2);
    assert_eq!(code(&arise(&["eval", "--policy", junk.to_str().unwrap(), "--library", &l])), 2);
}

#[test]
fn inspect_seed_library() {
    let dir = TempDir::new().unwrap();
    let lib = TwoTierLibrary::with_seeds(10, 100, &seed_skills());
    let path = dir.path().join("seeds.snapshot");
    fs::write(&path, lib.snapshot()).unwrap();
    let o = arise(&["inspect-library", "--library", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.iter().filter(|r| r.starts_with("cache")).count(), 5);
    assert_eq!(rows.iter().filter(|r| r.starts_with("reservoir")).count(), 0);
    for (row, entry) in rows.iter().zip(&lib.cache) {
        let ig: f64 = row.split_whitespace().last().unwrap().parse().unwrap();
        assert!((ig - ig_proxy(entry, &lib)).abs() < 1e-4);
    }

    let o = arise(&["inspect-library", "--library", path.to_str().unwrap(), "--json"]);
    assert_eq!(stdout(&o), fs::read_to_string(&path).unwrap());
}

#[test]
fn inspect_trained_library_sorts_by_utility() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    assert_eq!(code(&arise(&["train", "--config", &cfg, "--out", out.to_str().unwrap()])), 0);
    let snap = out.join("library.snapshot");
    let lib = TwoTierLibrary::restore(&fs::read_to_string(&snap).unwrap()).unwrap();
    let text = stdout(&arise(&["inspect-library", "--library", snap.to_str().unwrap()]));
    let utilities = |tier: &str| -> Vec<f64> {
        text.lines().filter(|l| l.starts_with(tier)).map(|l| l.split_whitespace().nth(4).unwrap().parse().unwrap()).collect()
    };
    for tier in ["cache", "reservoir"] {
        let u = utilities(tier);
        assert!(u.windows(2).all(|w| w[0] >= w[1]), "{tier}: {u:?}");
    }
    assert_eq!(utilities("cache").len(), lib.cache.len());
    assert_eq!(utilities("reservoir").len(), lib.reservoir.len());
}

#[test]
fn validate_skill_exit_codes() {
    let valid = r#"{"skill_name":"common_base","problem_type":"algebra","key_insight":"Match bases, then equate exponents","method":["Rewrite both sides with one base","Equate exponents and solve"],"check":"Substitute back"}"#;
    let o = arise_stdin(&["validate-skill"], valid);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o), format!("{valid}\n"));

    let o = arise_stdin(&["validate-skill"], "not json");
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).is_empty());
    let o = arise_stdin(&["validate-skill", "--trace", "7 28 6"], "not json");
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("trace_abstract"));

    let long = r#"{
  "skill_name": "exponential_base_matching",
  "problem_type": "algebra",
  "key_insight": "When both sides of an equation can be expressed as powers of the same base, set exponents equal",
  "method": [
    "Rewrite each side with a common base",
    "Set the exponents equal and solve",
    "Verify the solution satisfies the original"
  ],
  "check": "Substitute back into the original equation"
}"#;
    let o = arise_stdin(&["validate-skill"], long);
    assert_eq!(code(&o), 4);
}

#[test]
fn advantage_profile_table() {
    let o = arise(&["advantage-profile", "--G", "8"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(rows.len(), 45);
    let row = |n: [&str; 3]| rows.iter().find(|r| r[..3] == n).unwrap().clone();
    let r = row(["1", "2", "5"]);
    assert!(r[6].starts_with('-'));
    assert_eq!(r[8], "-");
    let r = row(["0", "8", "0"]);
    assert_eq!(&r[3..], ["1.0000", "0.0000", "n/a", "0.0000", "n/a", "0"]);
}

#[test]
fn advantage_profile_json_matches_direct_computation() {
    let o = arise(&["advantage-profile", "--G", "6", "--eps", "0.001", "--json"]);
    assert_eq!(code(&o), 0);
    let rows: Vec<serde_json::Value> = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rows.len(), 28);
    for r in rows {
        let n: Vec<usize> = ["n0", "n1", "n2"].iter().map(|k| r[k].as_u64().unwrap() as usize).collect();
        let mut rewards = vec![0.0; n[0]];
        rewards.extend(vec![1.0; n[1]]);
        rewards.extend(vec![2.0; n[2]]);
        let direct = group_advantages(&rewards, 0.001);
        for (level, key) in ["a0", "a1", "a2"].iter().enumerate() {
            match rewards.iter().position(|x| *x == level as f64) {
                Some(i) => assert!((r[key].as_f64().unwrap() - direct[i]).abs() < 1e-12),
                None => assert!(r[key].is_null()),
            }
        }
    }
    assert_eq!(code(&arise(&["advantage-profile", "--G", "0"])), 2);
}

#[test]
fn bridge_ping_through_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &format!("[bridge]\ncommand = [{BIN:?}, \"bridge-echo\"]\n"));
    let o = arise(&["bridge-ping", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o), "ok\n");
    let none = write_config(dir.path(), "");
    assert_eq!(code(&arise(&["bridge-ping", "--config", &none])), 2);
}

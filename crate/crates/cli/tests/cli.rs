use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn imm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imm")).args(args).current_dir(dir).env_remove("IMM_SEED").output().expect("spawn imm")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn only_file(dir: &Path, ext: &str) -> PathBuf {
    let mut found: Vec<PathBuf> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|e| e == ext)).collect();
    assert_eq!(found.len(), 1, "expected one .{ext} in {}", dir.display());
    found.pop().unwrap()
}

#[test]
fn verify_passes_and_names_every_check() {
    let tmp = tempfile::tempdir().unwrap();
    let out = imm(&["verify"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let text = stdout(&out);
    for name in ["counterexample", "crosstalk", "exactness", "jensen", "consistency", "counts"] {
        assert!(text.contains(&format!("PASS {name}")), "missing {name}: {text}");
    }
}

#[test]
fn tampered_crosstalk_fails_verification() {
    let tmp = tempfile::tempdir().unwrap();
    let out = imm(&["verify", "--tamper-crosstalk"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL crosstalk"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("crosstalk"));
}

#[test]
fn bad_config_exits_2_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.toml"), "[logreg]\nlearning_rate = 2.0\n").unwrap();
    let out = imm(&["run", "logreg", "--config", "bad.toml", "--out", "res"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("res").exists());

    fs::write(tmp.path().join("neg.toml"), "[rl]\nlr = -1.0\n").unwrap();
    let out = imm(&["run", "rl", "--config", "neg.toml", "--out", "res"], tmp.path());
    assert_eq!(out.status.code(), Some(2));

    let out = imm(&["run", "logreg", "--n", "1", "--out", "res"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("res").exists());
}

#[test]
fn malformed_seed_env_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_imm"))
        .args(["run", "logreg", "--n", "5", "--runs", "2", "--out", "res"])
        .current_dir(tmp.path())
        .env("IMM_SEED", "abc")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["run", "logreg", "--n", "5", "--runs", "4", "--epochs", "50", "--seed", "3", "--out", "res"];
    assert_eq!(imm(&args, tmp.path()).status.code(), Some(0));
    let csv = only_file(&tmp.path().join("res/logreg"), "csv");
    let first = fs::read(&csv).unwrap();
    assert_eq!(imm(&args, tmp.path()).status.code(), Some(0));
    assert_eq!(first, fs::read(&csv).unwrap());
    assert!(String::from_utf8_lossy(&first).starts_with("run,x,method,metric,value\n"));
}

#[test]
fn seed_flag_beats_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |seed_env: &str, extra: &[&str], out: &str| {
        let mut args = vec!["run", "rl", "--runs", "2", "--epochs", "3", "--out", out];
        args.extend_from_slice(extra);
        let o = Command::new(env!("CARGO_BIN_EXE_imm")).args(&args).current_dir(tmp.path()).env("IMM_SEED", seed_env).output().unwrap();
        assert_eq!(o.status.code(), Some(0));
        fs::read(only_file(&tmp.path().join(out).join("rl"), "csv")).unwrap()
    };
    let flag = run("7", &["--seed", "1"], "a");
    let env_only = run("1", &[], "b");
    let other = run("7", &[], "c");
    assert_eq!(flag, env_only);
    assert_ne!(flag, other);
}

#[test]
fn manifest_reproduces_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = imm(&["run", "rl", "--runs", "2", "--epochs", "4", "--seed", "5", "--out", "first"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("first/rl");
    let manifest = only_file(&dir, "json");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(json["experiment"], "rl");
    assert_eq!(json["seed"], 5);
    assert_eq!(json["config"]["rl"]["runs"], 2);
    for f in json["outputs"].as_array().unwrap() {
        assert!(dir.join(f.as_str().unwrap()).exists(), "listed output {f} missing");
    }
    let m = manifest.to_str().unwrap();
    let again = imm(&["run", "rl", "--config", m, "--out", "second"], tmp.path());
    assert_eq!(again.status.code(), Some(0));
    let a = fs::read(only_file(&dir, "csv")).unwrap();
    let b_path = only_file(&tmp.path().join("second/rl"), "csv");
    assert_eq!(a, fs::read(&b_path).unwrap());
    assert_eq!(only_file(&dir, "csv").file_name(), b_path.file_name());
}

#[test]
fn toml_config_is_applied() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.toml"), "[lm]\nvocab_size = 4\ncorpus_len = 200\nruns = 2\nepochs = 1\n").unwrap();
    let out = imm(&["run", "lm", "--config", "c.toml", "--out", "res"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(only_file(&tmp.path().join("res/lm"), "csv")).unwrap();
    // 2 runs x 3 methods x 2 metrics plus the header.
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(1) == Some("200")));
}

#[test]
fn kn_fit_and_query_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("corpus.txt"), "a b a c\nb a b\n").unwrap();
    let out = imm(&["kn", "fit", "--corpus", "corpus.txt", "--out", "kn.txt"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let row = imm(&["kn", "query", "--model", "kn.txt", "--context", "a"], tmp.path());
    assert_eq!(row.status.code(), Some(0));
    let probs: Vec<f64> = stdout(&row).lines().map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(probs.len(), 4);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    // Token stream: a b a c </s> b a b </s>. Context "a" is followed by b
    // twice and c once. b has 2 distinct predecessors out of 6 bigram types,
    // so P(b|a) = (2 - 0.75)/3 + (2 * 0.75/3) * 2/6.
    let one = imm(&["kn", "query", "--model", "kn.txt", "--context", "a", "--next", "b"], tmp.path());
    let p: f64 = stdout(&one).trim().parse().unwrap();
    let expected = 1.25 / 3.0 + 0.5 * 2.0 / 6.0;
    assert!((p - expected).abs() < 1e-12, "{p} vs {expected}");

    let unknown = imm(&["kn", "query", "--model", "kn.txt", "--context", "zzz"], tmp.path());
    assert_eq!(unknown.status.code(), Some(2));
}

use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &["--iterations", "40", "--layers", "2", "--reflections", "3"];

fn ohnn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ohnn")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = ohnn(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn gen(cwd: &Path, name: &str, extra: &[&str]) {
    let mut args = vec!["gen-data", "--speakers", "10", "--utterances", "4", "--dim", "6", "--train-speakers", "5"];
    args.extend_from_slice(&["--enroll-per-speaker", "1", "-o", name]);
    args.extend_from_slice(extra);
    ok(&args, cwd);
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn gen_data_is_reproducible_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "a.emb", &[]);
    gen(dir.path(), "b.emb", &[]);
    gen(dir.path(), "c.emb", &["--seed", "8"]);
    let a = read(dir.path().join("a.emb"));
    assert_eq!(a, read(dir.path().join("b.emb")));
    assert_ne!(a, read(dir.path().join("c.emb")));
    assert_eq!(&a[..4], b"EMB1");
    assert_eq!(u32::from_le_bytes(a[6..10].try_into().unwrap()), 6);
    assert_eq!(u32::from_le_bytes(a[10..14].try_into().unwrap()), 40);

    gen(dir.path(), "p.csv", &[]);
    let csv = String::from_utf8(read(dir.path().join("p.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 41);
    assert!(csv.starts_with("speaker,utterance,split,v0,v1,v2,v3,v4,v5\n"));
}

#[test]
fn train_anonymize_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, "p.emb", &[]);
    let mut train = vec!["train", "--pool", "p.emb", "-o", "m1"];
    train.extend_from_slice(SMALL);
    ok(&train, d);
    train[4] = "m2";
    ok(&train, d);
    for f in ["model.ohnn", "model.json", "train_report.json"] {
        assert_eq!(read(d.join("m1").join(f)), read(d.join("m2").join(f)), "{f}");
    }
    let cfg = String::from_utf8(read(d.join("m1/effective_config.toml"))).unwrap();
    assert!(cfg.contains("iterations = 40") && cfg.contains("cycle_length = 40"), "{cfg}");

    ok(&["anonymize", "--model", "m1/model.ohnn", "--pool", "p.emb", "--side", "trials", "-o", "anon.emb"], d);
    let orig = ohnn::pool::load_pool(d.join("p.emb")).unwrap();
    let anon = ohnn::pool::load_pool(d.join("anon.emb")).unwrap();
    assert_eq!(orig.len(), anon.len());
    for (o, a) in orig.records().iter().zip(anon.records()) {
        assert_eq!(o.split == ohnn::pool::Split::Trial, o.vector != a.vector, "{}", o.utterance);
    }

    ok(&["evaluate", "--pool", "p.emb", "--model", "m1/model.ohnn", "-o", "ev"], d);
    for block in ["m_oo", "m_oa", "m_aa"] {
        let text = String::from_utf8(read(d.join("ev").join(format!("{block}.csv")))).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 6, "{block}");
        assert!(rows.iter().all(|r| r.split(',').count() == 6), "{block}");
    }
    let metrics: serde_json::Value = serde_json::from_slice(&read(d.join("ev/metrics.json"))).unwrap();
    assert!(metrics["g_vd_db"].as_f64().unwrap().is_finite(), "{metrics}");
}

#[test]
fn attack_sim_reports_every_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, "p.emb", &[]);
    gen(d, "q.emb", &["--seed", "9"]);
    let mut args = vec!["attack-sim", "--pool", "p.emb", "--pool", "q.emb", "--weights", "0.75,0.25", "-o", "out"];
    args.extend_from_slice(SMALL);
    let stdout = ok(&args, d);
    for s in ["unprotected", "ignorant", "lazy-informed", "semi-informed"] {
        assert!(stdout.contains(s), "{stdout}");
        for sub in ["0-p", "1-q"] {
            assert!(d.join("out").join(sub).join(format!("{s}.json")).exists());
            let scores = String::from_utf8(read(d.join("out").join(sub).join(format!("{s}_scores.csv")))).unwrap();
            assert!(scores.starts_with("enroll_id,test_id,score,target_flag\n"));
            assert_eq!(scores.lines().count(), 1 + 5 * 15);
        }
    }
    let summary_a = read(d.join("out/summary.json"));
    args[8] = "out2";
    ok(&args, d);
    assert_eq!(summary_a, read(d.join("out2/summary.json")));
    assert_eq!(read(d.join("out/0-p/lazy-informed.json")), read(d.join("out2/0-p/lazy-informed.json")));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, "p.emb", &[]);
    let code = |args: &[&str]| ohnn(args, d).status.code();

    assert_eq!(code(&["train", "--no-such-flag"]), Some(2));
    std::fs::write(d.join("bad.toml"), "[train]\nbogus = 1\n").unwrap();
    assert_eq!(code(&["train", "--config", "bad.toml", "--pool", "p.emb", "-o", "x"]), Some(2));
    assert_eq!(code(&["train", "--pool", "p.emb", "--batch-size", "3", "-o", "x"]), Some(2));
    assert_eq!(code(&["gen-data", "--speakers", "1", "-o", "x.emb"]), Some(2));
    assert_eq!(
        code(&["attack-sim", "--pool", "p.emb", "--user-seed", "5", "--attacker-seed", "5", "-o", "x"]),
        Some(2)
    );

    let out = ohnn(&["train", "--pool", "missing.emb", "-o", "x"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.emb"));
    std::fs::write(d.join("junk.emb"), b"EMB1\x01").unwrap();
    assert_eq!(code(&["train", "--pool", "junk.emb", "-o", "x"]), Some(1));

    ok(
        &[
            "gen-data",
            "--speakers",
            "6",
            "--utterances",
            "3",
            "--dim",
            "4",
            "--train-speakers",
            "6",
            "-o",
            "train_only.emb",
        ],
        d,
    );
    let mut args = vec!["attack-sim", "--pool", "train_only.emb", "-o", "y"];
    args.extend_from_slice(SMALL);
    let out = ohnn(&args, d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("split missing"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_file_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, "p.emb", &[]);
    std::fs::write(
        d.join("exp.toml"),
        "anonymizer = \"ohnn-loh\"\n[data]\npool = \"p.emb\"\n[stack]\nvariant = \"loh\"\nlayers = 1\nreflections_per_layer = 2\n\
         [train]\niterations = 20\ncycle_length = 20\n[attack]\nscenarios = [\"ignorant\"]\n",
    )
    .unwrap();
    let stdout = ok(&["attack-sim", "--config", "exp.toml", "-o", "run"], d);
    assert!(stdout.contains("ignorant") && !stdout.contains("lazy-informed"), "{stdout}");
    let effective = ohnn::config::ExperimentConfig::load(d.join("run/effective_config.toml")).unwrap();
    assert_eq!(effective.stack.layers, 1);
    assert_eq!(effective.anonymizer, ohnn::attack::AnonymizerKind::OhnnLoh);
}

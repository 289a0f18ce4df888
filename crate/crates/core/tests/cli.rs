use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn credlife(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_credlife"))
        .args(args)
        .env_remove("CREDLIFE_THREADS")
        .output()
        .expect("spawn credlife")
}

fn ok(args: &[&str]) -> Output {
    let out = credlife(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    panel: PathBuf,
    catalog: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let cfg = root.join("synth.cfg");
    std::fs::write(
        &cfg,
        "# small panel\nn_persons = 2500\nstart_year = 2004\nend_year = 2010\nvars_per_group = 1\nbase_hazard = 0-60:0.01,61-120:0.06\nsignal_strength = 1.0\n",
    )
    .unwrap();
    let panel = root.join("panel.csv");
    let catalog = root.join("catalog.csv");
    ok(&["synth", "--config", s(&cfg), "--out", s(&panel), "--catalog-out", s(&catalog)]);
    Fixture {
        _dir: dir,
        root,
        panel,
        catalog,
    }
}

fn first_line(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn synth_train_importance_evaluate() {
    let f = fixture();
    assert!(first_line(&f.panel).starts_with("# config_digest="));

    let lt = f.root.join("lifetable.csv");
    ok(&["lifetable", "--panel", s(&f.panel), "--catalog", s(&f.catalog), "--out", s(&lt)]);
    let text = std::fs::read_to_string(&lt).unwrap();
    assert!(text.starts_with("# config_digest="));
    assert_eq!(text.lines().nth(1).unwrap(), "age,deaths,at_risk,prob");

    let cfg = f.root.join("train.cfg");
    std::fs::write(&cfg, "gb_rounds = 15\nrf_trees = 6\n").unwrap();
    let cache = f.root.join("design.bin");
    let gb = f.root.join("gb.bin");
    let loss = f.root.join("loss.csv");
    ok(&[
        "train", "--model", "gb", "--year", "2010", "--panel", s(&f.panel), "--catalog", s(&f.catalog),
        "--config", s(&cfg), "--design-cache", s(&cache), "--out", s(&gb), "--loss-csv", s(&loss),
    ]);
    assert!(cache.exists());
    assert!(first_line(&loss).starts_with("# config_digest="));
    // the cache alone is enough for a second model
    let rf = f.root.join("rf.bin");
    ok(&["train", "--model", "rf", "--year", "2010", "--design-cache", s(&cache), "--config", s(&cfg), "--out", s(&rf)]);
    for kind in ["logit", "age", "uncond"] {
        let out = f.root.join(format!("{kind}.json"));
        ok(&["train", "--model", kind, "--year", "2010", "--design-cache", s(&cache), "--out", s(&out)]);
        let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert!(doc["config_digest"].is_string());
        assert!(doc["model_kind"].is_string());
    }

    let imp = f.root.join("imp");
    for by in ["group", "lag", "group_lag"] {
        ok(&["importance", "--model", s(&gb), "--by", by, "--top", "5", "--out", s(&imp)]);
        let path = imp.join(format!("importance_{by}.csv"));
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config_digest="));
        assert!(text.lines().count() <= 2 + 5, "{text}");
    }
    ok(&["importance", "--model", s(&rf), "--by", "group_cohort", "--design", s(&cache), "--out", s(&imp)]);
    assert!(imp.join("importance_group_cohort.csv").exists());
    let missing = credlife(&["importance", "--model", s(&rf), "--by", "group_cohort", "--out", s(&imp)]);
    assert_eq!(missing.status.code(), Some(1));

    let plan = f.root.join("plan.cfg");
    std::fs::write(&plan, "test_years = 2009-2010\nmodels = uncond,age,credit_gb,credit_rf\ncohorts = 18-60,61-120\ngb_rounds = 10\nrf_trees = 5\n").unwrap();
    let out = f.root.join("eval");
    ok(&["evaluate", "--plan", s(&plan), "--panel", s(&f.panel), "--catalog", s(&f.catalog), "--out", s(&out)]);
    let table = std::fs::read_to_string(out.join("auc_table.csv")).unwrap();
    assert!(table.starts_with("# config_digest="));
    assert_eq!(table.lines().count(), 2 + 2 * 2 * 4);
    assert!(out.join("calibration_table.csv").exists());
    assert!(out.join("delong.json").exists());
}

#[test]
fn thread_count_does_not_change_model_bytes() {
    let f = fixture();
    let cfg = f.root.join("train.cfg");
    std::fs::write(&cfg, "gb_rounds = 10\nrf_trees = 6\n").unwrap();
    for model in ["gb", "rf"] {
        let mut files = Vec::new();
        for threads in ["1", "3"] {
            let out = f.root.join(format!("{model}_{threads}.bin"));
            ok(&[
                "--threads", threads, "train", "--model", model, "--year", "2010", "--panel", s(&f.panel),
                "--catalog", s(&f.catalog), "--config", s(&cfg), "--out", s(&out),
            ]);
            files.push(std::fs::read(&out).unwrap());
        }
        assert_eq!(files[0], files[1], "{model}");
    }
}

#[test]
fn usage_and_input_errors_have_distinct_codes() {
    assert_eq!(credlife(&[]).status.code(), Some(2));
    assert_eq!(credlife(&["train", "--model", "svm", "--year", "2010", "--out", "x"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = credlife(&["lifetable", "--panel", s(&missing), "--catalog", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "n_persons = 10\nflavour = mint\n").unwrap();
    let out = credlife(&["synth", "--config", s(&bad), "--out", s(&dir.path().join("p.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("flavour"));
}

#[test]
fn help_exits_zero() {
    assert_eq!(credlife(&["--help"]).status.code(), Some(0));
}

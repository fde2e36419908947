use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sta::eval::{ExperimentConfig, MetricsReport};

fn sta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sta")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = sta(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn small_config(dir: &Path) -> String {
    let mut c = ExperimentConfig::desk(3);
    c.world.train_scenes = 12;
    c.world.test_scenes = 16;
    c.world.render.holdout_rate = 0.6;
    c.net.mlp_hidden = 16;
    c.net.disc_hidden = 16;
    c.pretrain.epochs = 1;
    c.pretrain.pairs_per_image = 8;
    c.finetune.epochs = 2;
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&c).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_data_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&["gen-data", "--out", d.to_str().unwrap(), "--seed", "7"]);
    }
    for f in ["train.scenes", "test.scenes"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(sta(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(sta(&["eval", "--out", "x", "--frob"]).status.code(), Some(2));
    assert_eq!(
        sta(&["ablate", "--out", "x", "--variant", "sta-xl"]).status.code(),
        Some(2)
    );
    assert_eq!(sta(&["gen-data"]).status.code(), Some(2));
}

#[test]
fn config_errors_exit_1_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let mut c = ExperimentConfig::desk(0);
    c.net.channels = 5;
    let path = tmp.path().join("bad.json");
    fs::write(&path, serde_json::to_string(&c).unwrap()).unwrap();
    let r = sta(&[
        "pretrain",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("net.channels"));

    fs::write(&path, r#"{"seed": 1, "colour": "red"}"#).unwrap();
    let r = sta(&[
        "eval",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("`colour`"));

    let r = sta(&["eval", "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("`checkpoint`"));
}

#[test]
fn stages_chain_through_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_str().unwrap().to_string();
    let config = small_config(tmp.path());
    let c: ExperimentConfig = serde_json::from_str(&fs::read_to_string(&config).unwrap()).unwrap();
    fs::write(p("world.json"), serde_json::to_string(&c.world).unwrap()).unwrap();
    ok(&["gen-data", "--config", &p("world.json"), "--out", &p("data")]);
    let common = ["--config", config.as_str(), "--data", &p("data")];
    ok(&[&["pretrain", "--out", &p("pre")], &common[..]].concat());
    ok(&[
        &["finetune", "--out", &p("ft"), "--checkpoint", &p("pre/pretrain.ckpt")],
        &common[..],
    ]
    .concat());
    ok(&[
        &["eval", "--out", &p("ev"), "--checkpoint", &p("ft/finetune.ckpt")],
        &common[..],
    ]
    .concat());
    let r = MetricsReport::read_dir(Path::new(&p("ev"))).unwrap();
    assert!(r.recall_at_100 >= r.recall_at_50);
    assert_eq!(r.meta.config_hash, c.hash().unwrap());
    for f in ["per_relation.csv", "bias_curve.csv"] {
        assert!(tmp.path().join("ev").join(f).is_file());
    }
}

#[test]
fn ablate_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_str().unwrap().to_string();
    let config = small_config(tmp.path());
    ok(&[
        "ablate",
        "--config",
        &config,
        "--setting",
        "zero-shot",
        "--out",
        &p("runs"),
    ]);
    let names: Vec<String> = fs::read_dir(p("runs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.len(), 5);
    for v in ["base", "base-oa", "sta-noft", "sta-nores", "sta"] {
        let r = MetricsReport::read_dir(&tmp.path().join("runs").join(v)).unwrap();
        assert_eq!(r.variant.as_deref(), Some(v));
        assert_eq!(r.setting.name(), "zero-shot");
    }
    ok(&["report", &p("runs"), "--out", &p("rep"), "--svg"]);
    let summary = fs::read_to_string(tmp.path().join("rep/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 6);
    assert!(summary
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("runs/base,base,zero-shot,3,"));
    assert!(tmp.path().join("rep/recall_at_50.svg").is_file());
    assert!(tmp.path().join("rep/runs_sta.bias_curve.svg").is_file());
}

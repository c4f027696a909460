use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn dvmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dvmatch")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dvmatch(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    dvmatch(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, patients: usize, seed: u64) -> PathBuf {
    ok(&["synth", "--out", s(dir), "--patients", &patients.to_string(), "--seed", &seed.to_string()]);
    dir.to_path_buf()
}

fn auc(summary: &Path) -> f64 {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(summary).unwrap()).unwrap();
    v["auc"].as_f64().unwrap()
}

/// Files under `dir` except the config snapshot, which records the output path.
fn dataset_files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "config.toml" {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_seed_deterministic() {
    let t = TempDir::new().unwrap();
    let a = synth(&t.path().join("a"), 4, 7);
    let b = synth(&t.path().join("b"), 4, 7);
    let c = synth(&t.path().join("c"), 4, 8);
    assert_eq!(dataset_files(&a), dataset_files(&b));
    assert_ne!(dataset_files(&a), dataset_files(&c));
    assert!(a.join("config.toml").exists());
}

#[test]
fn train_eval_finetune_pipeline_round() {
    let t = TempDir::new().unwrap();
    let data = synth(&t.path().join("data"), 10, 1);
    let manifest = data.join("manifest.json");
    let split = data.join("split.json");
    let model = t.path().join("model");
    let common = ["--manifest", s(&manifest), "--split", s(&split)];

    let mut train = vec!["train", "--out", s(&model), "--seed", "3", "--epochs", "1", "--members", "2"];
    train.extend(common);
    let stdout = ok(&train);
    assert!(stdout.contains("saved 2 members"), "{stdout}");
    for f in ["member0.dvmm", "member1.dvmm", "arch.json", "loss_member0.csv", "config.toml"] {
        assert!(model.join(f).exists(), "missing {f}");
    }

    let tuned = t.path().join("tuned");
    let mut ft = vec!["finetune", "--out", s(&tuned), "--seed", "4", "--epochs", "1", "--checkpoint", s(&model)];
    ft.extend(common);
    ok(&ft);
    let snap = fs::read_to_string(tuned.join("config.toml")).unwrap();
    assert!(snap.contains("freeze_preset = \"fine-tune\""), "{snap}");

    let ev = t.path().join("eval");
    let mut eval = vec!["eval", "--out", s(&ev), "--checkpoint", s(&tuned)];
    eval.extend(common);
    ok(&eval);
    let a = auc(&ev.join("summary.json"));
    assert!((0.0..=1.0).contains(&a));
    for f in ["roc.csv", "roc.svg", "scores.csv"] {
        assert!(ev.join(f).exists(), "missing {f}");
    }

    let nc = t.path().join("ncc");
    let mut ncc = vec!["ncc", "--out", s(&nc)];
    ncc.extend(common);
    ok(&ncc);
    assert!(fs::read_to_string(nc.join("ncc.csv")).unwrap().starts_with("raw,mapped,degenerate,label\n"));

    let pl = t.path().join("pipe");
    let mut pipe = vec!["pipeline", "--out", s(&pl), "--checkpoint", s(&model)];
    pipe.extend(common);
    ok(&pipe);
    for mode in ["include", "exclude"] {
        for f in ["roc.csv", "summary.json", "adjusted.csv", "fp_reduction.json"] {
            assert!(pl.join(mode).join(f).exists(), "missing {mode}/{f}");
        }
    }
}

#[test]
fn oracle_pipeline_is_perfect_without_standalones() {
    let t = TempDir::new().unwrap();
    let data = synth(&t.path().join("data"), 10, 2);
    let out = t.path().join("oracle");
    ok(&[
        "pipeline",
        "--manifest",
        s(&data.join("manifest.json")),
        "--out",
        s(&out),
        "--scorer",
        "oracle",
        "--standalone-mode",
        "exclude",
    ]);
    assert_eq!(auc(&out.join("exclude").join("summary.json")), 1.0);
    assert!(!out.join("include").exists());
}

#[test]
fn eval_of_score_file() {
    let t = TempDir::new().unwrap();
    let scores = t.path().join("s.csv");
    fs::write(&scores, "score,label\n0.9,1\n0.8,1\n0.2,0\n0.1,0\n").unwrap();
    let out = t.path().join("e");
    let stdout = ok(&["eval", "--scores", s(&scores), "--out", s(&out)]);
    assert!(stdout.contains("AUC 1.0000"), "{stdout}");
    assert_eq!(auc(&out.join("summary.json")), 1.0);

    fs::write(&scores, "score,label\n0.9,1\n0.8,1\n").unwrap();
    assert_eq!(code(&["eval", "--scores", s(&scores), "--out", s(&out)]), 6);
    fs::write(&scores, "score,label\nhigh,1\n").unwrap();
    assert_eq!(code(&["eval", "--scores", s(&scores), "--out", s(&out)]), 4);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let t = TempDir::new().unwrap();
    let data = synth(&t.path().join("data"), 6, 5);
    let cfg = t.path().join("run.toml");
    fs::write(
        &cfg,
        "manifest = \"data/manifest.json\"\nseed = 9\nout = \"from-file\"\n\n[train]\nepochs = 3\nlr = 0.002\nensemble_size = 1\n",
    )
    .unwrap();
    let out = t.path().join("from-flag");
    ok(&["train", "--config", s(&cfg), "--epochs", "1", "--out", s(&out)]);
    let snap: toml::Table = toml::from_str(&fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    let train = snap["train"].as_table().unwrap();
    assert_eq!(train["epochs"].as_integer(), Some(1));
    assert_eq!(train["lr"].as_float(), Some(0.002));
    assert_eq!(train["ensemble_size"].as_integer(), Some(1));
    assert_eq!(snap["seed"].as_integer(), Some(9));
    assert_eq!(snap["manifest"].as_str(), Some(s(&data.join("manifest.json"))));
    assert!(!t.path().join("from-file").exists());

    fs::write(&cfg, "epochs = 3\n").unwrap();
    assert_eq!(code(&["train", "--config", s(&cfg)]), 2);
}

#[test]
fn exit_codes_follow_error_category() {
    let t = TempDir::new().unwrap();
    let p = t.path();
    // bad flags and missing required values
    assert_eq!(code(&["train", "--bogus"]), 2);
    assert_eq!(code(&["train", "--out", s(&p.join("o"))]), 2);
    assert_eq!(code(&["eval", "--out", s(&p.join("o")), "--arch", "huge", "--checkpoint", s(p)]), 2);
    // missing input file
    assert_eq!(code(&["ncc", "--manifest", s(&p.join("none.json")), "--out", s(&p.join("o"))]), 3);
    // malformed manifest
    fs::write(p.join("bad.json"), "{").unwrap();
    assert_eq!(code(&["ncc", "--manifest", s(&p.join("bad.json")), "--out", s(&p.join("o"))]), 4);

    let data = synth(&p.join("data"), 6, 3);
    let model = p.join("model");
    ok(&[
        "train",
        "--manifest",
        s(&data.join("manifest.json")),
        "--out",
        s(&model),
        "--seed",
        "1",
        "--epochs",
        "1",
        "--members",
        "1",
    ]);
    let eval = |arch: &str| {
        code(&[
            "eval",
            "--manifest",
            s(&data.join("manifest.json")),
            "--checkpoint",
            s(&model),
            "--arch",
            arch,
            "--out",
            s(&p.join("ev")),
        ])
    };
    assert_eq!(eval("desk"), 0);
    assert_eq!(eval("full"), 5);
    fs::write(model.join("member0.dvmm"), b"DVMM junk").unwrap();
    assert_eq!(eval("desk"), 4);
}

#[test]
fn gradcheck_reports_per_layer() {
    let t = TempDir::new().unwrap();
    let out = t.path().join("gc");
    let stdout = ok(&["gradcheck", "--max-per-tensor", "4", "--out", s(&out)]);
    for layer in ["feature.conv1", "feature.conv5", "metric.fc3"] {
        assert!(stdout.contains(layer), "{stdout}");
    }
    assert!(!stdout.contains("FAIL"));
    assert!(out.join("gradcheck.json").exists());
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn emoser(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emoser"))
        .args(args)
        .env_remove("EMOSER_SEED")
        .output()
        .expect("spawn emoser")
}

fn ok(args: &[&str]) -> String {
    let out = emoser(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_SPEC: &str = r#"{"segments_per_class": 5, "duration_range": [0.6, 1.0], "n_speakers": 5, "n_sessions": 5, "seed": 3}"#;

fn small_dataset(dir: &Path) -> std::path::PathBuf {
    let spec = dir.join("spec.json");
    fs::write(&spec, SMALL_SPEC).unwrap();
    let data = dir.join("data");
    ok(&["synth", "--spec", p(&spec), "--out", p(&data)]);
    data.join("manifest.csv")
}

#[test]
fn synth_writes_manifest_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let text = fs::read_to_string(&manifest).unwrap();
    assert_eq!(text.lines().count(), 1 + 20);
    assert!(text.starts_with("id,path,label,session,speaker,duration"));

    let again = dir.path().join("again");
    ok(&["synth", "--spec", p(&dir.path().join("spec.json")), "--out", p(&again)]);
    for entry in fs::read_dir(manifest.parent().unwrap().join("wav")).unwrap() {
        let entry = entry.unwrap();
        let twin = again.join("wav").join(entry.file_name());
        assert_eq!(fs::read(entry.path()).unwrap(), fs::read(twin).unwrap());
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // I/O: the output path sits below a regular file.
    let file = dir.path().join("file");
    fs::write(&file, "x").unwrap();
    let out = emoser(&["synth", "--out", p(&file.join("sub"))]);
    assert_eq!(code(&out), 3);

    // Usage and configuration.
    assert_eq!(code(&emoser(&["train"])), 2);
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "train.epochs = lots\n").unwrap();
    let out = emoser(&["train", "--manifest", "m.csv", "--config", p(&bad), "--out", p(dir.path())]);
    assert_eq!(code(&out), 2);

    // Data validation: a row whose WAV does not exist.
    let manifest = dir.path().join("manifest.csv");
    fs::write(&manifest, "id,path,label,session,speaker,duration\na,missing.wav,sad,S1,p1,1.0\n").unwrap();
    let out = emoser(&["extract", "--manifest", p(&manifest), "--out", p(&dir.path().join("dumps"))]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.wav"));
}

#[test]
fn extract_and_augment() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let three = dir.path().join("three.csv");
    let text = fs::read_to_string(&manifest).unwrap();
    let head: Vec<&str> = text.lines().take(4).collect();
    let data = manifest.parent().unwrap();
    let rows: Vec<String> = head
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                l.to_string()
            } else {
                let mut cols: Vec<String> = l.split(',').map(String::from).collect();
                cols[1] = data.join(&cols[1]).display().to_string();
                cols.join(",")
            }
        })
        .collect();
    fs::write(&three, rows.join("\n") + "\n").unwrap();

    let dumps = dir.path().join("dumps");
    ok(&["extract", "--manifest", p(&three), "--out", p(&dumps), "--dump-format", "text"]);
    let files: Vec<_> = fs::read_dir(&dumps)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "txt") && !p.ends_with("config.txt"))
        .collect();
    assert_eq!(files.len(), 3);
    assert!(dumps.join("config.txt").exists());

    let input = &files[0];
    let none = dir.path().join("none.txt");
    ok(&["augment", "--in", p(input), "--policy", "none", "--out", p(&none)]);
    assert_eq!(fs::read(input).unwrap(), fs::read(&none).unwrap());

    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    ok(&["augment", "--in", p(input), "--policy", "conservative", "--seed", "9", "--out", p(&a)]);
    ok(&["augment", "--in", p(input), "--policy", "conservative", "--seed", "9", "--out", p(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a.txt.masks.json")).unwrap()).unwrap();
    assert_eq!(side["masks"].as_array().unwrap().len(), 4);

    let out = emoser(&["augment", "--in", p(input), "--policy", "wild"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_eval_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "seed = 5\nfrontend.n_mels = 32\ntrain.epochs = 1\ntrain.batch_size = 8\naugment.enabled = false\n",
    )
    .unwrap();

    let run_a = dir.path().join("run_a");
    let run_b = dir.path().join("run_b");
    for run in [&run_a, &run_b] {
        ok(&["train", "--manifest", p(&manifest), "--config", p(&cfg), "--out", p(run)]);
    }
    let metrics = fs::read(run_a.join("metrics.json")).unwrap();
    assert_eq!(metrics, fs::read(run_b.join("metrics.json")).unwrap());
    for i in 1..=5 {
        let fold = run_a.join(format!("fold{i}"));
        for f in ["model.ckpt", "predictions.csv", "history.csv", "confusion.csv"] {
            assert!(fold.join(f).exists(), "{}", fold.join(f).display());
        }
    }
    let preds = fs::read_to_string(run_a.join("fold1/predictions.csv")).unwrap();
    assert!(preds.starts_with("id,true,pred,logit_angry,logit_happy,logit_neutral,logit_sad"));

    // The snapshot replays to the same result.
    let run_c = dir.path().join("run_c");
    ok(&["train", "--manifest", p(&manifest), "--config", p(&run_a.join("config.txt")), "--out", p(&run_c)]);
    assert_eq!(metrics, fs::read(run_c.join("metrics.json")).unwrap());

    let report = ok(&["report", "--run", p(&run_a)]);
    assert!(report.contains("UA [%]") && report.contains("fold 5"));

    let eval_dir = dir.path().join("eval");
    ok(&["eval", "--ckpt", p(&run_a.join("fold1/model.ckpt")), "--manifest", p(&manifest), "--out", p(&eval_dir)]);
    assert!(eval_dir.join("predictions.csv").exists());
    assert!(eval_dir.join("metrics.json").exists());
}

#[test]
fn seed_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "seed = 5\nfrontend.n_mels = 32\ntrain.epochs = 1\ntrain.batch_size = 8\naugment.enabled = false\n").unwrap();
    let out_dir = dir.path().join("pre");
    let status = Command::new(env!("CARGO_BIN_EXE_emoser"))
        .args(["pretrain", "--manifest", p(&manifest), "--config", p(&cfg), "--out", p(&out_dir.join("speaker.ckpt"))])
        .env("EMOSER_SEED", "77")
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let snapshot = fs::read_to_string(out_dir.join("speaker.config.txt")).unwrap();
    assert!(snapshot.lines().any(|l| l == "seed = 77"));
    assert!(out_dir.join("speaker.ckpt").exists());
    assert!(out_dir.join("speaker.history.csv").exists());
}

#[test]
fn ablate_writes_eight_cells() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "frontend.n_mels = 32\ntrain.epochs = 1\ntrain.batch_size = 8\nfolds = 2\n").unwrap();
    let out = dir.path().join("ablation");
    let stdout = ok(&["ablate", "--manifest", p(&manifest), "--config", p(&cfg), "--out", p(&out)]);
    assert!(stdout.contains("TL Aug SP"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    let cells = report["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 8);
    assert!(cells.iter().all(|c| c["fold_wa"].as_array().unwrap().len() == 2));
    assert!(out.join("ablation.txt").exists() && out.join("pretrain.ckpt").exists());
    let rendered = ok(&["report", "--run", p(&out)]);
    assert!(rendered.contains("-TL -Aug -SP (mean_only)"));
}
